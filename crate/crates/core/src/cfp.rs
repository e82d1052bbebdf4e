//! Combined frequency and periodicity (CFP) representation.
//!
//! The chain is
//!
//! ```text
//! Z0 = σ0(W_f |X|)            compressed, high-passed magnitude spectrum
//! Z1 = σ1(W_t F⁻¹ Z0)         generalized cepstrum (periodicity)
//! Z2 = σ2(W_f F Z1)           generalized cepstrum of spectrogram
//! Y  = log(Z1) · log(Z2)      both mapped onto a shared log-frequency axis
//! ```
//!
//! with `σ_i(x) = max(x, 0)^γ_i`. Z1 carries sub-harmonic artifacts, Z2
//! harmonic ones; their product keeps the fundamental. Patches of 25×25
//! cells are then cut around each frame's peak of `Y`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::audio::{AudioClip, PitchContour};
use crate::dsp::{self, AxisKind, DspError, SpectrumScale, StftConfig, TimeFrequencyMap};

/// Side length of a patch.
pub const PATCH_SIZE: usize = 25;
const PATCH_HALF: isize = (PATCH_SIZE / 2) as isize;

#[derive(Debug, Error)]
pub enum CfpError {
    #[error("invalid CFP configuration: {0}")]
    InvalidConfig(String),
    #[error("expected a {expected:?} axis, got {found:?}")]
    AxisMismatch { expected: AxisKind, found: AxisKind },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("map has no frames")]
    NoFrames,
    #[error("map has {0} bins, patches need at least {PATCH_SIZE}")]
    TooFewBins(usize),
    #[error("subsampling rate {0} is outside (0, 1]")]
    InvalidRate(f64),
    #[error("patch at frame {0} has an unknown label")]
    UnknownLabel(usize),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

/// Filter cutoffs, compression exponents and the log-frequency axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CfpConfig {
    /// Exponents (γ0, γ1, γ2) of the rectified power nonlinearities.
    pub gamma: [f64; 3],
    /// Spectral bins below this frequency are zeroed (W_f).
    pub freq_cutoff_hz: f64,
    /// Cepstral bins below this quefrency are zeroed (W_t).
    pub quef_cutoff_s: f64,
    pub log_bins_per_octave: usize,
    pub log_f_low: f64,
    pub log_f_high: f64,
}

impl Default for CfpConfig {
    fn default() -> Self {
        Self {
            gamma: [0.24, 0.6, 1.0],
            freq_cutoff_hz: 32.7,
            quef_cutoff_s: 1.0 / 1760.0,
            log_bins_per_octave: 60,
            log_f_low: 73.416,
            log_f_high: 1760.0,
        }
    }
}

impl CfpConfig {
    /// Analysis frames used for CFP: 1024-sample Hann at 8 kHz, 80-sample
    /// hop, zero-padded to 8192 points so the spectral grid (≈0.98 Hz) is
    /// finer than a log bin over most of the range.
    pub fn analysis_stft() -> StftConfig {
        StftConfig {
            fft_size: 8192,
            ..StftConfig::default()
        }
    }

    pub fn validate(&self, sample_rate: f64) -> Result<(), CfpError> {
        let err = |m: String| Err(CfpError::InvalidConfig(m));
        if self.gamma.iter().any(|g| !(*g > 0.0)) {
            return err(format!("all exponents must be positive, got {:?}", self.gamma));
        }
        if !(self.freq_cutoff_hz > 0.0
            && self.freq_cutoff_hz < self.log_f_low
            && self.log_f_low < self.log_f_high
            && self.log_f_high <= sample_rate / 2.0)
        {
            return err(format!(
                "need 0 < freq_cutoff ({}) < log_f_low ({}) < log_f_high ({}) ≤ fs/2 ({})",
                self.freq_cutoff_hz,
                self.log_f_low,
                self.log_f_high,
                sample_rate / 2.0
            ));
        }
        if !(self.quef_cutoff_s > 0.0) {
            return err(format!("quefrency cutoff must be positive, got {}", self.quef_cutoff_s));
        }
        if self.log_bins_per_octave == 0 {
            return err("log_bins_per_octave must be at least 1".into());
        }
        Ok(())
    }

    /// Number of log-frequency bins, `ceil(bins_per_octave · log2(high/low))`.
    pub fn num_log_bins(&self) -> usize {
        let exact = self.log_bins_per_octave as f64 * (self.log_f_high / self.log_f_low).log2();
        (exact - 1e-9).ceil().max(1.0) as usize
    }

    /// Centre frequencies of the log bins.
    pub fn log_axis(&self) -> Vec<f64> {
        let bpo = self.log_bins_per_octave as f64;
        (0..self.num_log_bins())
            .map(|p| self.log_f_low * 2f64.powf(p as f64 / bpo))
            .collect()
    }
}

fn compress(x: f64, gamma: f64) -> f64 {
    if x > 0.0 {
        x.powf(gamma)
    } else {
        0.0
    }
}

fn expect_axis(map: &TimeFrequencyMap, expected: AxisKind) -> Result<(), CfpError> {
    if map.axis_kind() != expected {
        return Err(CfpError::AxisMismatch {
            expected,
            found: map.axis_kind(),
        });
    }
    Ok(())
}

/// Transform length implied by a half-spectrum (or half-cepstrum) map.
fn transform_len(map: &TimeFrequencyMap) -> Result<usize, CfpError> {
    let n = 2 * map.num_bins().saturating_sub(1);
    if n < 2 {
        return Err(CfpError::ShapeMismatch(format!(
            "{} bins do not describe a half spectrum",
            map.num_bins()
        )));
    }
    Ok(n)
}

/// Mirrors a half sequence `h[0..=n/2]` into a full even sequence of length `n`.
fn mirror(half: &[f64], n: usize, buf: &mut [Complex<f64>]) {
    for (k, b) in buf.iter_mut().enumerate().take(n) {
        let src = if k <= n / 2 { k } else { n - k };
        *b = Complex::new(half[src], 0.0);
    }
}

/// `Z0 = σ0(W_f X)`: zero bins below the frequency cutoff, then compress.
pub fn compressed_spectrum(
    magnitude: &TimeFrequencyMap,
    cfg: &CfpConfig,
) -> Result<TimeFrequencyMap, CfpError> {
    expect_axis(magnitude, AxisKind::LinearFrequency)?;
    let axis = magnitude.axis_values().to_vec();
    let frames = magnitude
        .frames()
        .map(|f| {
            f.iter()
                .zip(&axis)
                .map(|(&v, &hz)| if hz < cfg.freq_cutoff_hz { 0.0 } else { compress(v, cfg.gamma[0]) })
                .collect()
        })
        .collect();
    Ok(magnitude.with_frames(frames, AxisKind::LinearFrequency, axis)?)
}

/// `Z1 = σ1(W_t F⁻¹ Z0)`, the generalized cepstrum.
///
/// The half spectrum is mirrored to a full `N`-point even sequence, inverse
/// transformed (normalised by `1/N`), and quefrencies below the cutoff are
/// zeroed before the rectified power. With `γ = 1` and `z0 = |X|²` this is
/// the frame's circular autocorrelation.
pub fn generalized_cepstrum(
    z0: &TimeFrequencyMap,
    cfg: &CfpConfig,
) -> Result<TimeFrequencyMap, CfpError> {
    expect_axis(z0, AxisKind::LinearFrequency)?;
    let n = transform_len(z0)?;
    let fs = z0.sample_rate();
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let half = n / 2;
    let frames = z0
        .frames()
        .map(|f| {
            mirror(f, n, &mut buf);
            ifft.process(&mut buf);
            (0..=half)
                .map(|q| {
                    if (q as f64) / fs < cfg.quef_cutoff_s {
                        0.0
                    } else {
                        compress(buf[q].re / n as f64, cfg.gamma[1])
                    }
                })
                .collect()
        })
        .collect();
    let axis = (0..=half).map(|q| q as f64 / fs).collect();
    Ok(z0.with_frames(frames, AxisKind::Quefrency, axis)?)
}

/// `Z2 = σ2(W_f F Z1)`, the generalized cepstrum of spectrogram.
pub fn generalized_cepstrum_of_spectrogram(
    z1: &TimeFrequencyMap,
    cfg: &CfpConfig,
) -> Result<TimeFrequencyMap, CfpError> {
    expect_axis(z1, AxisKind::Quefrency)?;
    let n = transform_len(z1)?;
    let fs = z1.sample_rate();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let half = n / 2;
    let axis: Vec<f64> = (0..=half).map(|k| k as f64 * fs / n as f64).collect();
    let frames = z1
        .frames()
        .map(|f| {
            mirror(f, n, &mut buf);
            fft.process(&mut buf);
            (0..=half)
                .map(|k| {
                    if axis[k] < cfg.freq_cutoff_hz {
                        0.0
                    } else {
                        compress(buf[k].re, cfg.gamma[2])
                    }
                })
                .collect()
        })
        .collect();
    Ok(z1.with_frames(frames, AxisKind::LinearFrequency, axis)?)
}

#[derive(Debug, Clone)]
enum LogBinSource {
    /// Source bins whose frequency rounds to this log bin; output is their max.
    Max(Vec<usize>),
    /// No source bin lands here: linear interpolation at the bin centre.
    Interp(usize, f64),
    Outside,
}

/// Precomputed assignment of source bins to log-frequency bins.
#[derive(Debug, Clone)]
struct LogMapping {
    bins: Vec<LogBinSource>,
}

impl LogMapping {
    fn new(map: &TimeFrequencyMap, cfg: &CfpConfig) -> Result<Self, CfpError> {
        let kind = map.axis_kind();
        if kind == AxisKind::LogFrequency {
            return Err(CfpError::AxisMismatch {
                expected: AxisKind::LinearFrequency,
                found: kind,
            });
        }
        let centers = cfg.log_axis();
        let bpo = cfg.log_bins_per_octave as f64;
        let axis = map.axis_values();
        let hz_of = |i: usize| match kind {
            AxisKind::Quefrency if axis[i] > 0.0 => Some(1.0 / axis[i]),
            AxisKind::Quefrency => None,
            _ => Some(axis[i]),
        };
        let mut members = vec![Vec::new(); centers.len()];
        for i in 0..axis.len() {
            let Some(hz) = hz_of(i) else { continue };
            if hz <= 0.0 {
                continue;
            }
            let pos = (bpo * (hz / cfg.log_f_low).log2()).round();
            if pos >= 0.0 && (pos as usize) < centers.len() {
                members[pos as usize].push(i);
            }
        }
        // fractional source index of a frequency, for empty log bins
        let last = axis.len().saturating_sub(1) as f64;
        let step = if axis.len() > 1 { axis[1] - axis[0] } else { 1.0 };
        let frac_index = |hz: f64| -> Option<f64> {
            let idx = match kind {
                AxisKind::Quefrency => (1.0 / hz - axis[0]) / step,
                _ => (hz - axis[0]) / step,
            };
            (idx >= 0.0 && idx <= last).then_some(idx)
        };
        let bins = members
            .into_iter()
            .zip(&centers)
            .map(|(m, &c)| {
                if !m.is_empty() {
                    LogBinSource::Max(m)
                } else if let Some(idx) = frac_index(c) {
                    let lo = (idx.floor() as usize).min(axis.len() - 1);
                    LogBinSource::Interp(lo, idx - lo as f64)
                } else {
                    LogBinSource::Outside
                }
            })
            .collect();
        Ok(Self { bins })
    }

    fn apply(&self, frame: &[f64]) -> Vec<f64> {
        self.bins
            .iter()
            .map(|b| match b {
                LogBinSource::Max(src) => src.iter().map(|&i| frame[i]).fold(0.0, f64::max),
                LogBinSource::Interp(lo, t) => {
                    let hi = (*lo + 1).min(frame.len() - 1);
                    frame[*lo] * (1.0 - t) + frame[hi] * t
                }
                LogBinSource::Outside => 0.0,
            })
            .collect()
    }
}

/// Maps a linear-frequency or quefrency map onto the log-frequency axis.
///
/// Quefrency `q` is read as frequency `1/q`. Each log bin takes the maximum
/// of the source bins whose frequency rounds to it. Where the source grid is
/// coarser than the log grid (low frequencies of a spectrum, high
/// frequencies of a cepstrum) a bin may receive no source sample; it then
/// takes the source linearly interpolated at its centre frequency.
pub fn to_log_frequency(
    map: &TimeFrequencyMap,
    cfg: &CfpConfig,
) -> Result<TimeFrequencyMap, CfpError> {
    let mapping = LogMapping::new(map, cfg)?;
    let frames = map.frames().map(|f| mapping.apply(f)).collect();
    Ok(map.with_frames(frames, AxisKind::LogFrequency, cfg.log_axis())?)
}

/// `Y = Z̃1 ⊙ Z̃2`.
pub fn combine_cfp(
    z1_log: &TimeFrequencyMap,
    z2_log: &TimeFrequencyMap,
) -> Result<TimeFrequencyMap, CfpError> {
    expect_axis(z1_log, AxisKind::LogFrequency)?;
    expect_axis(z2_log, AxisKind::LogFrequency)?;
    if z1_log.axis_values() != z2_log.axis_values() || z1_log.num_frames() != z2_log.num_frames()
    {
        return Err(CfpError::ShapeMismatch(format!(
            "{}×{} vs {}×{}",
            z1_log.num_bins(),
            z1_log.num_frames(),
            z2_log.num_bins(),
            z2_log.num_frames()
        )));
    }
    let frames = z1_log
        .frames()
        .zip(z2_log.frames())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).collect())
        .collect();
    Ok(z1_log.with_frames(frames, AxisKind::LogFrequency, z1_log.axis_values().to_vec())?)
}

/// Every intermediate of the CFP chain.
#[derive(Debug, Clone)]
pub struct CfpLayers {
    pub z0: TimeFrequencyMap,
    pub z1: TimeFrequencyMap,
    pub z2: TimeFrequencyMap,
    pub z1_log: TimeFrequencyMap,
    pub z2_log: TimeFrequencyMap,
    pub y: TimeFrequencyMap,
}

pub fn cfp_layers(
    clip: &AudioClip,
    stft: &StftConfig,
    cfg: &CfpConfig,
) -> Result<CfpLayers, CfpError> {
    cfg.validate(stft.sample_rate as f64)?;
    let x = dsp::stft_magnitude(clip, stft, SpectrumScale::Magnitude)?;
    let z0 = compressed_spectrum(&x, cfg)?;
    let z1 = generalized_cepstrum(&z0, cfg)?;
    let z2 = generalized_cepstrum_of_spectrogram(&z1, cfg)?;
    let z1_log = to_log_frequency(&z1, cfg)?;
    let z2_log = to_log_frequency(&z2, cfg)?;
    let y = combine_cfp(&z1_log, &z2_log)?;
    Ok(CfpLayers {
        z0,
        z1,
        z2,
        z1_log,
        z2_log,
        y,
    })
}

/// The CFP map `Y` of a clip.
pub fn cfp_representation(
    clip: &AudioClip,
    stft: &StftConfig,
    cfg: &CfpConfig,
) -> Result<TimeFrequencyMap, CfpError> {
    Ok(cfp_layers(clip, stft, cfg)?.y)
}

/// `Y` as CSV: a header of log-axis frequencies, then one row per frame.
pub fn cfp_csv_string(y: &TimeFrequencyMap) -> String {
    let mut out = String::new();
    let header: Vec<String> = y.axis_values().iter().map(|hz| format!("{hz:.3}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for frame in y.frames() {
        let row: Vec<String> = frame.iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_cfp_csv(y: &TimeFrequencyMap, path: impl AsRef<Path>) -> Result<(), CfpError> {
    fs::write(path, cfp_csv_string(y))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchLabel {
    NonVocal,
    Vocal,
    Unknown,
}

/// A 25×25 window of `Y` around one frame's peak.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Row-major, rows are log bins `center_bin - 12 ..= center_bin + 12`,
    /// columns are frames `center_frame - 12 ..= center_frame + 12`.
    pub values: Vec<f64>,
    pub center_bin: usize,
    pub center_frame: usize,
    pub center_hz: f64,
    pub label: PatchLabel,
}

impl Patch {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * PATCH_SIZE + col]
    }
}

/// Cuts one patch per frame around the frame's argmax bin. Cells outside
/// the map are zero. With a reference contour, a patch is vocal when the
/// reference is voiced at the frame time and the patch centre lies within
/// `tolerance_cents` of it.
pub fn select_patches(
    y: &TimeFrequencyMap,
    truth: Option<&PitchContour>,
    tolerance_cents: f64,
) -> Result<Vec<Patch>, CfpError> {
    expect_axis(y, AxisKind::LogFrequency)?;
    if y.num_frames() == 0 {
        return Err(CfpError::NoFrames);
    }
    if y.num_bins() < PATCH_SIZE {
        return Err(CfpError::TooFewBins(y.num_bins()));
    }
    let bins = y.num_bins() as isize;
    let frames = y.num_frames() as isize;
    let patches = (0..y.num_frames())
        .map(|n| {
            let center_bin = y.frame_argmax(n);
            let mut values = vec![0.0; PATCH_SIZE * PATCH_SIZE];
            for dr in -PATCH_HALF..=PATCH_HALF {
                let b = center_bin as isize + dr;
                if b < 0 || b >= bins {
                    continue;
                }
                for dc in -PATCH_HALF..=PATCH_HALF {
                    let f = n as isize + dc;
                    if f < 0 || f >= frames {
                        continue;
                    }
                    let cell = (dr + PATCH_HALF) as usize * PATCH_SIZE + (dc + PATCH_HALF) as usize;
                    values[cell] = y.get(b as usize, f as usize);
                }
            }
            let center_hz = y.axis_values()[center_bin];
            let label = match truth {
                None => PatchLabel::Unknown,
                Some(t) => {
                    let f_ref = t.f0_at_time(y.frame_time(n));
                    if f_ref > 0.0 && (1200.0 * (center_hz / f_ref).log2()).abs() <= tolerance_cents {
                        PatchLabel::Vocal
                    } else {
                        PatchLabel::NonVocal
                    }
                }
            };
            Patch {
                values,
                center_bin,
                center_frame: n,
                center_hz,
                label,
            }
        })
        .collect();
    Ok(patches)
}

/// Keeps every vocal patch and each non-vocal patch with probability `rate`,
/// drawing from a ChaCha8 stream seeded with `seed` in patch order.
pub fn subsample_nonvocal(
    patches: &[Patch],
    rate: f64,
    seed: u64,
) -> Result<Vec<Patch>, CfpError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(CfpError::InvalidRate(rate));
    }
    if let Some(p) = patches.iter().find(|p| p.label == PatchLabel::Unknown) {
        return Err(CfpError::UnknownLabel(p.center_frame));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(patches
        .iter()
        .filter(|p| p.label == PatchLabel::Vocal || rng.random::<f64>() < rate)
        .cloned()
        .collect())
}
