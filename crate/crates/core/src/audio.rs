//! Audio and label I/O.
//!
//! Everything downstream works on mono 8 kHz clips. [`load_wav`] decodes a
//! RIFF/WAVE file and averages stereo to mono, [`resample_to_8k`] brings the
//! clip to the analysis rate, and the label / contour helpers move
//! [`PitchContour`]s in and out of text files.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Target rate of the analysis front end.
pub const ANALYSIS_RATE: u32 = 8000;

/// Lowest and highest frequency a voiced contour frame may carry.
pub const MIN_VOICED_HZ: f64 = 20.0;
pub const MAX_VOICED_HZ: f64 = 4000.0;

/// Low-pass cutoff of the resampler as a fraction of the target rate.
const RESAMPLER_CUTOFF: f64 = 0.45;
/// Half-length of the resampling kernel in output-rate periods.
const RESAMPLER_HALF_SPAN: f64 = 32.0;
/// Kaiser window shape; about 80 dB stop-band attenuation.
const RESAMPLER_KAISER_BETA: f64 = 8.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("malformed WAV header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("unsupported encoding in {path}: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid audio clip: {0}")]
    InvalidClip(String),
    #[error("refusing to upsample: input rate {0} Hz is below {ANALYSIS_RATE} Hz")]
    UpsamplingRefused(u32),
    #[error("{path}:{line}: not a number: {text:?}")]
    NonNumericLabel {
        path: PathBuf,
        line: usize,
        text: String,
    },
    #[error("{path}:{line}: pitch value {value} is outside the voiced range")]
    LabelOutOfRange {
        path: PathBuf,
        line: usize,
        value: f64,
    },
    #[error("label file {0} is empty")]
    EmptyLabels(PathBuf),
    #[error("invalid pitch contour: {0}")]
    InvalidContour(String),
    #[error("{path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

impl AudioError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            AudioError::NotFound(path.to_path_buf())
        } else {
            AudioError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

/// Mono sample sequence with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::InvalidClip("no samples".into()));
        }
        if sample_rate == 0 {
            return Err(AudioError::InvalidClip("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::InvalidClip(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Returns a copy with every sample multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Result<Self, AudioError> {
        Self::new(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate,
        )
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Per-frame fundamental frequency; `0.0` marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchContour {
    f0: Vec<f64>,
    hop_seconds: f64,
    start_seconds: f64,
}

impl PitchContour {
    pub fn new(f0: Vec<f64>, hop_seconds: f64, start_seconds: f64) -> Result<Self, AudioError> {
        if !(hop_seconds.is_finite() && hop_seconds > 0.0) {
            return Err(AudioError::InvalidContour(format!(
                "hop must be positive, got {hop_seconds}"
            )));
        }
        if !(start_seconds.is_finite() && start_seconds >= 0.0) {
            return Err(AudioError::InvalidContour(format!(
                "start must be non-negative, got {start_seconds}"
            )));
        }
        if let Some((i, v)) = f0.iter().enumerate().find(|(_, v)| !is_valid_f0(**v)) {
            return Err(AudioError::InvalidContour(format!(
                "frame {i} has f0 {v} outside {{0}} ∪ [{MIN_VOICED_HZ}, {MAX_VOICED_HZ}]"
            )));
        }
        Ok(Self {
            f0,
            hop_seconds,
            start_seconds,
        })
    }

    pub fn f0(&self) -> &[f64] {
        &self.f0
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_seconds
    }

    pub fn start_seconds(&self) -> f64 {
        self.start_seconds
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn time_at(&self, frame: usize) -> f64 {
        self.start_seconds + frame as f64 * self.hop_seconds
    }

    /// Index of the frame whose time is nearest to `t`, if `t` falls within
    /// half a hop of the contour.
    pub fn nearest_frame(&self, t: f64) -> Option<usize> {
        if self.f0.is_empty() {
            return None;
        }
        let pos = ((t - self.start_seconds) / self.hop_seconds).round();
        if pos < 0.0 || pos >= self.f0.len() as f64 {
            None
        } else {
            Some(pos as usize)
        }
    }

    /// f0 at the frame nearest to `t`; times outside the contour are unvoiced.
    pub fn f0_at_time(&self, t: f64) -> f64 {
        self.nearest_frame(t).map_or(0.0, |i| self.f0[i])
    }

    pub fn voiced_frames(&self) -> usize {
        self.f0.iter().filter(|&&f| f > 0.0).count()
    }
}

fn is_valid_f0(v: f64) -> bool {
    v == 0.0 || (v.is_finite() && (MIN_VOICED_HZ..=MAX_VOICED_HZ).contains(&v))
}

/// Decodes a PCM16 or float32 WAV file, averaging stereo channels to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(AudioError::NotFound(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| hound_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(AudioError::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: format!("{channels} channels (only mono and stereo are supported)"),
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| hound_error(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| (v as f64).clamp(-1.0, 1.0)))
            .collect::<Result<_, _>>()
            .map_err(|e| hound_error(path, e))?,
        (format, bits) => {
            return Err(AudioError::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: format!("{bits}-bit {format:?} samples"),
            })
        }
    };
    let mono: Vec<f64> = if channels == 2 {
        interleaved
            .chunks_exact(2)
            .map(|lr| (lr[0] + lr[1]) / 2.0)
            .collect()
    } else {
        interleaved
    };
    if mono.is_empty() {
        return Err(AudioError::MalformedHeader {
            path: path.to_path_buf(),
            reason: "data chunk holds no samples".into(),
        });
    }
    AudioClip::new(mono, spec.sample_rate)
}

fn hound_error(path: &Path, err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            AudioError::MalformedHeader {
                path: path.to_path_buf(),
                reason: "unexpected end of file".into(),
            }
        }
        hound::Error::IoError(e) => AudioError::io(path, e),
        hound::Error::FormatError(reason) => AudioError::MalformedHeader {
            path: path.to_path_buf(),
            reason: reason.into(),
        },
        hound::Error::Unsupported => AudioError::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: "format not supported by the decoder".into(),
        },
        other => AudioError::MalformedHeader {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Writes a mono clip as 16-bit PCM, the inverse of [`load_wav`]'s scaling.
pub fn write_wav_pcm16(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| hound_error(path, e))?;
    for &s in &clip.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| hound_error(path, e))?;
    }
    writer.finalize().map_err(|e| hound_error(path, e))
}

/// Resamples to 8 kHz with a Kaiser-windowed sinc low-pass.
///
/// Each output sample at time `n / 8000` is a weighted sum of the input
/// samples within ±32 output periods; the kernel is evaluated in continuous
/// time, so any input rate ≥ 8 kHz is handled without a rational
/// decomposition. Weights are normalised to unit DC gain.
pub fn resample_to_8k(clip: &AudioClip) -> Result<AudioClip, AudioError> {
    let in_rate = clip.sample_rate;
    if in_rate < ANALYSIS_RATE {
        return Err(AudioError::UpsamplingRefused(in_rate));
    }
    if in_rate == ANALYSIS_RATE {
        return Ok(clip.clone());
    }
    let fs_in = in_rate as f64;
    let fs_out = ANALYSIS_RATE as f64;
    let out_len = (clip.len() as f64 * fs_out / fs_in).round() as usize;
    let cutoff = RESAMPLER_CUTOFF * fs_out;
    // kernel half-width measured in input samples
    let half = RESAMPLER_HALF_SPAN * fs_in / fs_out;
    let i0_beta = bessel_i0(RESAMPLER_KAISER_BETA);
    let x = clip.samples();

    let mut out = Vec::with_capacity(out_len.max(1));
    let mut weights = Vec::new();
    for n in 0..out_len {
        let center = n as f64 * fs_in / fs_out;
        let lo = (center - half).ceil() as i64;
        let hi = (center + half).floor() as i64;
        weights.clear();
        let mut norm = 0.0;
        for k in lo..=hi {
            let offset = (k as f64 - center) / fs_in;
            let arg = 2.0 * cutoff * offset;
            let sinc = if arg.abs() < 1e-12 {
                1.0
            } else {
                (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
            };
            let r = (k as f64 - center) / half;
            let window = bessel_i0(RESAMPLER_KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
            let w = sinc * window;
            norm += w;
            weights.push(w);
        }
        let mut acc = 0.0;
        for (k, w) in (lo..=hi).zip(&weights) {
            if k >= 0 && (k as usize) < x.len() {
                acc += w * x[k as usize];
            }
        }
        out.push(acc / norm);
    }
    if out.is_empty() {
        out.push(0.0);
    }
    AudioClip::new(out, ANALYSIS_RATE)
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= half / k as f64;
        let t2 = term * term;
        sum += t2;
        if t2 < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Unit of the values in a pitch label file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelFormat {
    Hz,
    MidiSemitone,
}

impl std::str::FromStr for LabelFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hz" => Ok(LabelFormat::Hz),
            "midi" | "midi_semitone" => Ok(LabelFormat::MidiSemitone),
            other => Err(format!("unknown label format {other:?} (expected hz or midi)")),
        }
    }
}

pub fn midi_to_hz(m: f64) -> f64 {
    440.0 * 2f64.powf((m - 69.0) / 12.0)
}

/// Reads one pitch value per line. Zero is unvoiced in both formats.
pub fn load_pitch_labels(
    path: impl AsRef<Path>,
    format: LabelFormat,
    hop_seconds: f64,
) -> Result<PitchContour, AudioError> {
    load_pitch_labels_from(path, format, hop_seconds, 0.0)
}

/// Like [`load_pitch_labels`], with the time of the first label given.
pub fn load_pitch_labels_from(
    path: impl AsRef<Path>,
    format: LabelFormat,
    hop_seconds: f64,
    start_seconds: f64,
) -> Result<PitchContour, AudioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| AudioError::io(path, e))?;
    let body = text.trim_end();
    if body.trim().is_empty() {
        return Err(AudioError::EmptyLabels(path.to_path_buf()));
    }
    let mut f0 = Vec::new();
    for (i, raw) in body.lines().enumerate() {
        let line = i + 1;
        let token = raw.trim();
        let value: f64 = token
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| AudioError::NonNumericLabel {
                path: path.to_path_buf(),
                line,
                text: raw.to_string(),
            })?;
        let hz = match format {
            _ if value == 0.0 => 0.0,
            LabelFormat::Hz => value,
            LabelFormat::MidiSemitone if value > 0.0 => midi_to_hz(value),
            LabelFormat::MidiSemitone => value,
        };
        if !is_valid_f0(hz) {
            return Err(AudioError::LabelOutOfRange {
                path: path.to_path_buf(),
                line,
                value,
            });
        }
        f0.push(hz);
    }
    PitchContour::new(f0, hop_seconds, start_seconds)
}

/// Writes `time_sec,f0_hz` rows, one per frame.
pub fn write_contour_csv(contour: &PitchContour, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| AudioError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(contour_csv_string(contour).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| AudioError::io(path, e))
}

pub fn contour_csv_string(contour: &PitchContour) -> String {
    let mut out = String::from("time_sec,f0_hz\n");
    for (i, f) in contour.f0.iter().enumerate() {
        let _ = writeln!(out, "{:.6},{:.3}", contour.time_at(i), f);
    }
    out
}

/// Reads a contour CSV written by [`write_contour_csv`]. The start time is
/// taken from the first row; `hop_seconds` is supplied because the
/// six-decimal time column cannot recover it exactly.
pub fn read_contour_csv(
    path: impl AsRef<Path>,
    hop_seconds: f64,
) -> Result<PitchContour, AudioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| AudioError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "time_sec,f0_hz" => {}
        _ => {
            return Err(AudioError::InvalidContour(format!(
                "{}: missing time_sec,f0_hz header",
                path.display()
            )))
        }
    }
    let mut start = None;
    let mut f0 = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || AudioError::NonNumericLabel {
            path: path.to_path_buf(),
            line: i + 1,
            text: line.to_string(),
        };
        let (t, f) = line.split_once(',').ok_or_else(bad)?;
        let t: f64 = t.trim().parse().map_err(|_| bad())?;
        let f: f64 = f.trim().parse().map_err(|_| bad())?;
        start.get_or_insert(t);
        f0.push(f);
    }
    PitchContour::new(f0, hop_seconds, start.unwrap_or(0.0))
}

/// Role of a manifest entry in training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Labeled,
    Unlabeled,
    Eval,
}

impl std::str::FromStr for SplitTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "labeled" => Ok(SplitTag::Labeled),
            "unlabeled" => Ok(SplitTag::Unlabeled),
            "eval" => Ok(SplitTag::Eval),
            other => Err(format!(
                "invalid split tag {other:?} (expected labeled, unlabeled or eval)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub audio_path: PathBuf,
    /// `None` when the manifest holds `-` in the label column.
    pub label_path: Option<PathBuf>,
    pub split: SplitTag,
}

/// Line-oriented `audio_path<TAB>label_path<TAB>split_tag` listing.
///
/// Blank lines and lines starting with `#` are ignored. Relative paths are
/// resolved against the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, AudioError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| AudioError::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        Self::parse(&text, base, path)
    }

    pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self, AudioError> {
        let mut entries = Vec::new();
        let mut seen_audio = HashSet::new();
        let mut seen_labels = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |reason: String| AudioError::Manifest {
                path: origin.to_path_buf(),
                line: i + 1,
                reason,
            };
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(err(format!("expected 3 tab-separated columns, found {}", cols.len())));
            }
            let split: SplitTag = cols[2].parse().map_err(err)?;
            let audio_path = base.join(cols[0]);
            if !seen_audio.insert(audio_path.clone()) {
                return Err(err(format!("duplicate audio path {}", cols[0])));
            }
            let label_path = match cols[1] {
                "-" | "" => None,
                p => {
                    let p = base.join(p);
                    if !seen_labels.insert(p.clone()) {
                        return Err(err(format!("duplicate label path {}", cols[1])));
                    }
                    Some(p)
                }
            };
            entries.push(ManifestEntry {
                audio_path,
                label_path,
                split,
            });
        }
        Ok(Self { entries })
    }

    pub fn split(&self, tag: SplitTag) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == tag)
    }
}
