//! Layered run configuration: built-in defaults, then an optional TOML file,
//! then command-line flags.

use std::path::Path;

use melody_core::audio::{AudioError, LabelFormat};
use melody_core::cfp::CfpConfig;
use melody_core::dsp::{AutocorrParams, StftConfig};
use melody_core::models::{FrameClassifierConfig, QuantizerConfig};
use melody_core::training::{StudentConfig, TrainConfig, TrueLabelTerm};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct StftSection {
    pub window_size: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for StftSection {
    fn default() -> Self {
        let d = StftConfig::default();
        Self {
            window_size: d.window_size,
            hop: d.hop,
            fft_size: d.fft_size,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CfpSection {
    pub gamma: [f64; 3],
    pub freq_cutoff_hz: f64,
    pub quef_cutoff_s: f64,
    pub bins_per_octave: usize,
    pub log_f_low: f64,
    pub log_f_high: f64,
    /// FFT length of the CFP analysis; window and hop come from `[stft]`.
    pub fft_size: usize,
    pub patch_tolerance_cents: f64,
    pub nonvocal_rate: f64,
}

impl Default for CfpSection {
    fn default() -> Self {
        let d = CfpConfig::default();
        Self {
            gamma: d.gamma,
            freq_cutoff_hz: d.freq_cutoff_hz,
            quef_cutoff_s: d.quef_cutoff_s,
            bins_per_octave: d.log_bins_per_octave,
            log_f_low: d.log_f_low,
            log_f_high: d.log_f_high,
            fft_size: CfpConfig::analysis_stft().fft_size,
            patch_tolerance_cents: 50.0,
            nonvocal_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SpSection {
    pub f_min: f64,
    pub f_max: f64,
    pub voicing_threshold: f64,
}

impl Default for SpSection {
    fn default() -> Self {
        let d = AutocorrParams::default();
        Self {
            f_min: d.f_min,
            f_max: d.f_max,
            voicing_threshold: d.voicing_threshold,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerSection {
    pub f_min: f64,
    pub bins_per_semitone: usize,
    pub num_pitch_classes: usize,
}

impl Default for QuantizerSection {
    fn default() -> Self {
        let d = QuantizerConfig::default();
        Self {
            f_min: d.f_min,
            bins_per_semitone: d.bins_per_semitone,
            num_pitch_classes: d.num_pitch_classes,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FrameClassifierSection {
    pub context_frames: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
    pub hidden: usize,
}

impl Default for FrameClassifierSection {
    fn default() -> Self {
        let d = FrameClassifierConfig::default();
        Self {
            context_frames: d.context_frames,
            conv_filters: d.conv_filters,
            conv_width: d.conv_width,
            hidden: d.hidden,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            shuffle: d.shuffle,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrueLabelTermName {
    #[default]
    AsWritten,
    StudentPrediction,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct StudentSection {
    pub confidence_threshold: f64,
    pub true_label_term: TrueLabelTermName,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub tolerance_cents: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            tolerance_cents: melody_core::eval::DEFAULT_TOLERANCE_CENTS,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelFormatName {
    #[default]
    Hz,
    Midi,
    /// `time_sec,f0_hz` rows as written by `extract`.
    Csv,
}

impl std::str::FromStr for LabelFormatName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hz" => Ok(Self::Hz),
            "midi" => Ok(Self::Midi),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown label format {other:?} (expected hz, midi or csv)")),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LabelSection {
    pub format: LabelFormatName,
    pub hop_seconds: f64,
    pub start_seconds: f64,
}

impl Default for LabelSection {
    fn default() -> Self {
        Self {
            format: LabelFormatName::Hz,
            hop_seconds: 0.01,
            start_seconds: 0.0,
        }
    }
}

impl LabelSection {
    pub fn load(&self, path: &Path) -> Result<melody_core::PitchContour, AudioError> {
        use melody_core::audio;
        match self.format {
            LabelFormatName::Csv => audio::read_contour_csv(path, self.hop_seconds),
            LabelFormatName::Hz => {
                audio::load_pitch_labels_from(path, LabelFormat::Hz, self.hop_seconds, self.start_seconds)
            }
            LabelFormatName::Midi => audio::load_pitch_labels_from(
                path,
                LabelFormat::MidiSemitone,
                self.hop_seconds,
                self.start_seconds,
            ),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub stft: StftSection,
    pub cfp: CfpSection,
    pub sp: SpSection,
    pub quantizer: QuantizerSection,
    pub frame_classifier: FrameClassifierSection,
    pub train: TrainSection,
    pub student: StudentSection,
    pub eval: EvalSection,
    pub labels: LabelSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn stft(&self) -> StftConfig {
        StftConfig {
            window_size: self.stft.window_size,
            hop: self.stft.hop,
            sample_rate: melody_core::audio::ANALYSIS_RATE,
            fft_size: self.stft.fft_size,
        }
    }

    pub fn cfp_stft(&self) -> StftConfig {
        StftConfig {
            fft_size: self.cfp.fft_size,
            ..self.stft()
        }
    }

    pub fn cfp(&self) -> CfpConfig {
        CfpConfig {
            gamma: self.cfp.gamma,
            freq_cutoff_hz: self.cfp.freq_cutoff_hz,
            quef_cutoff_s: self.cfp.quef_cutoff_s,
            log_bins_per_octave: self.cfp.bins_per_octave,
            log_f_low: self.cfp.log_f_low,
            log_f_high: self.cfp.log_f_high,
        }
    }

    pub fn autocorr(&self) -> AutocorrParams {
        AutocorrParams {
            f_min: self.sp.f_min,
            f_max: self.sp.f_max,
            voicing_threshold: self.sp.voicing_threshold,
        }
    }

    pub fn quantizer(&self) -> QuantizerConfig {
        QuantizerConfig {
            f_min: self.quantizer.f_min,
            bins_per_semitone: self.quantizer.bins_per_semitone,
            num_pitch_classes: self.quantizer.num_pitch_classes,
        }
    }

    pub fn frame_classifier(&self) -> FrameClassifierConfig {
        let f = &self.frame_classifier;
        FrameClassifierConfig {
            context_frames: f.context_frames,
            input_bins: self.stft.fft_size / 2 + 1,
            conv_filters: f.conv_filters,
            conv_width: f.conv_width,
            hidden: f.hidden,
            num_classes: self.quantizer().num_classes(),
        }
    }

    pub fn train(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: t.seed,
            shuffle: t.shuffle,
        }
    }

    pub fn student(&self) -> StudentConfig {
        StudentConfig {
            train: self.train(),
            confidence_threshold: self.student.confidence_threshold,
            true_label_term: match self.student.true_label_term {
                TrueLabelTermName::AsWritten => TrueLabelTerm::AsWritten,
                TrueLabelTermName::StudentPrediction => TrueLabelTerm::StudentPrediction,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_core() {
        let c = RunConfig::default();
        assert_eq!(c.stft(), StftConfig::default());
        assert_eq!(c.cfp(), CfpConfig::default());
        assert_eq!(c.cfp_stft(), CfpConfig::analysis_stft());
        assert_eq!(c.quantizer(), QuantizerConfig::default());
        assert_eq!(c.frame_classifier(), FrameClassifierConfig::default());
        assert_eq!(c.train(), TrainConfig::default());
        assert_eq!(c.student(), StudentConfig::default());
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn file_values_override_defaults() {
        let c = RunConfig::from_toml(
            "[train]\nepochs = 2\nseed = 9\n[labels]\nformat = \"csv\"\n[student]\ntrue_label_term = \"student_prediction\"\n",
        )
        .unwrap();
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(c.labels.format, LabelFormatName::Csv);
        assert_eq!(c.student().true_label_term, TrueLabelTerm::StudentPrediction);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[train]\nepoch = 2\n").is_err());
        assert!(RunConfig::from_toml("[nonsense]\n").is_err());
        assert!(RunConfig::from_toml("top = 1\n").is_err());
    }
}
