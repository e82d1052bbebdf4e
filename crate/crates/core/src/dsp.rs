//! Spectral kernels: Hann window, STFT and the autocorrelation pitch tracker.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::audio::{AudioClip, AudioError, PitchContour, MAX_VOICED_HZ, MIN_VOICED_HZ};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("window length must be at least 2, got {0}")]
    WindowTooShort(usize),
    #[error("invalid STFT configuration: {0}")]
    InvalidConfig(String),
    #[error("clip of {len} samples is shorter than one {window}-sample window")]
    ClipTooShort { len: usize, window: usize },
    #[error("clip sample rate {clip} Hz does not match configured {config} Hz")]
    RateMismatch { clip: u32, config: u32 },
    #[error("invalid pitch search: {0}")]
    InvalidSearch(String),
    #[error("invalid time-frequency map: {0}")]
    InvalidMap(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Physical meaning of the first axis of a [`TimeFrequencyMap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisKind {
    /// Axis values in Hz, uniformly spaced from DC.
    LinearFrequency,
    /// Axis values in seconds of lag.
    Quefrency,
    /// Axis values in Hz, geometrically spaced.
    LogFrequency,
}

/// Real matrix indexed by (bin, frame) plus axis metadata.
///
/// Storage is frame-major so per-frame kernels see a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFrequencyMap {
    values: Vec<f64>,
    num_bins: usize,
    num_frames: usize,
    axis_kind: AxisKind,
    axis_values: Vec<f64>,
    hop_seconds: f64,
    start_seconds: f64,
    sample_rate: f64,
}

impl TimeFrequencyMap {
    /// Builds a map from per-frame columns. Every column must have one
    /// value per axis entry.
    pub fn from_frames(
        frames: Vec<Vec<f64>>,
        axis_kind: AxisKind,
        axis_values: Vec<f64>,
        hop_seconds: f64,
        start_seconds: f64,
        sample_rate: f64,
    ) -> Result<Self, DspError> {
        let num_bins = axis_values.len();
        let num_frames = frames.len();
        let mut values = Vec::with_capacity(num_bins * num_frames);
        for (n, f) in frames.into_iter().enumerate() {
            if f.len() != num_bins {
                return Err(DspError::InvalidMap(format!(
                    "frame {n} has {} bins, axis has {num_bins}",
                    f.len()
                )));
            }
            values.extend(f);
        }
        Self::from_raw(
            values,
            num_frames,
            axis_kind,
            axis_values,
            hop_seconds,
            start_seconds,
            sample_rate,
        )
    }

    fn from_raw(
        values: Vec<f64>,
        num_frames: usize,
        axis_kind: AxisKind,
        axis_values: Vec<f64>,
        hop_seconds: f64,
        start_seconds: f64,
        sample_rate: f64,
    ) -> Result<Self, DspError> {
        let num_bins = axis_values.len();
        if values.len() != num_bins * num_frames {
            return Err(DspError::InvalidMap("value count does not match shape".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DspError::InvalidMap("non-finite value".into()));
        }
        if axis_values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DspError::InvalidMap("axis values not strictly increasing".into()));
        }
        if !(hop_seconds > 0.0) || !(sample_rate > 0.0) {
            return Err(DspError::InvalidMap("hop and sample rate must be positive".into()));
        }
        Ok(Self {
            values,
            num_bins,
            num_frames,
            axis_kind,
            axis_values,
            hop_seconds,
            start_seconds,
            sample_rate,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn axis_kind(&self) -> AxisKind {
        self.axis_kind
    }

    pub fn axis_values(&self) -> &[f64] {
        &self.axis_values
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_seconds
    }

    /// Time of the centre of frame 0.
    pub fn start_seconds(&self) -> f64 {
        self.start_seconds
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn frame_time(&self, frame: usize) -> f64 {
        self.start_seconds + frame as f64 * self.hop_seconds
    }

    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[frame * self.num_bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.num_bins..(frame + 1) * self.num_bins]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.num_bins.max(1))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index of the largest value in a frame; ties resolve to the lowest bin.
    pub fn frame_argmax(&self, frame: usize) -> usize {
        argmax(self.frame(frame))
    }

    /// Same geometry and axis, new per-frame values.
    pub(crate) fn with_frames(
        &self,
        frames: Vec<Vec<f64>>,
        axis_kind: AxisKind,
        axis_values: Vec<f64>,
    ) -> Result<Self, DspError> {
        Self::from_frames(
            frames,
            axis_kind,
            axis_values,
            self.hop_seconds,
            self.start_seconds,
            self.sample_rate,
        )
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Frame geometry of the short-time Fourier transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
    /// Transform length; frames are zero-padded from `window_size` up to it.
    pub fft_size: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_size: 1024,
            hop: 80,
            sample_rate: 8000,
            fft_size: 1024,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if !self.window_size.is_power_of_two() || self.window_size < 2 {
            return Err(DspError::InvalidConfig(format!(
                "window size {} is not a power of two",
                self.window_size
            )));
        }
        if self.hop == 0 || self.hop > self.window_size {
            return Err(DspError::InvalidConfig(format!(
                "hop {} must be in 1..={}",
                self.hop, self.window_size
            )));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < self.window_size {
            return Err(DspError::InvalidConfig(format!(
                "fft size {} must be a power of two ≥ the window",
                self.fft_size
            )));
        }
        if self.sample_rate == 0 {
            return Err(DspError::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.window_size {
            0
        } else {
            1 + (len - self.window_size) / self.hop
        }
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    /// Time of the centre of the first frame.
    pub fn first_frame_center(&self) -> f64 {
        self.window_size as f64 / 2.0 / self.sample_rate as f64
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.fft_size as f64
    }

    fn check_clip(&self, clip: &AudioClip) -> Result<(), DspError> {
        self.validate()?;
        if clip.sample_rate() != self.sample_rate {
            return Err(DspError::RateMismatch {
                clip: clip.sample_rate(),
                config: self.sample_rate,
            });
        }
        if clip.len() < self.window_size {
            return Err(DspError::ClipTooShort {
                len: clip.len(),
                window: self.window_size,
            });
        }
        Ok(())
    }
}

/// Symmetric Hann window, `w[i] = 0.5 (1 - cos(2πi / (n-1)))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>, DspError> {
    if n < 2 {
        return Err(DspError::WindowTooShort(n));
    }
    let denom = (n - 1) as f64;
    Ok((0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / denom).cos()))
        .collect())
}

/// Output scaling of [`stft_magnitude`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumScale {
    Magnitude,
    /// `ln(1 + |X|)`
    LogMagnitude,
}

/// Complex spectra of every frame (full `fft_size` bins). No centring or
/// padding: frame `n` covers samples `n·hop .. n·hop + window`.
pub(crate) fn stft_complex(
    clip: &AudioClip,
    cfg: &StftConfig,
) -> Result<Vec<Vec<Complex<f64>>>, DspError> {
    cfg.check_clip(clip)?;
    let window = hann_window(cfg.window_size)?;
    let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
    let x = clip.samples();
    let frames = cfg.num_frames(x.len());
    let mut out = Vec::with_capacity(frames);
    for n in 0..frames {
        let start = n * cfg.hop;
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        for (i, (b, w)) in buf.iter_mut().zip(&window).enumerate() {
            b.re = x[start + i] * w;
        }
        fft.process(&mut buf);
        out.push(buf);
    }
    Ok(out)
}

/// Magnitude (or log-magnitude) spectrogram on a linear frequency axis with
/// `fft_size / 2 + 1` bins.
pub fn stft_magnitude(
    clip: &AudioClip,
    cfg: &StftConfig,
    scale: SpectrumScale,
) -> Result<TimeFrequencyMap, DspError> {
    let spectra = stft_complex(clip, cfg)?;
    let bins = cfg.fft_size / 2 + 1;
    let frames: Vec<Vec<f64>> = spectra
        .into_iter()
        .map(|s| {
            s[..bins]
                .iter()
                .map(|c| {
                    let m = c.norm();
                    match scale {
                        SpectrumScale::Magnitude => m,
                        SpectrumScale::LogMagnitude => m.ln_1p(),
                    }
                })
                .collect()
        })
        .collect();
    let axis = (0..bins).map(|k| k as f64 * cfg.bin_hz()).collect();
    TimeFrequencyMap::from_frames(
        frames,
        AxisKind::LinearFrequency,
        axis,
        cfg.hop_seconds(),
        cfg.first_frame_center(),
        cfg.sample_rate as f64,
    )
}

/// Search range and voicing threshold of [`autocorr_pitch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutocorrParams {
    pub f_min: f64,
    pub f_max: f64,
    pub voicing_threshold: f64,
}

impl Default for AutocorrParams {
    fn default() -> Self {
        Self {
            f_min: 73.416,
            f_max: 1760.0,
            voicing_threshold: 0.4,
        }
    }
}

/// A lag peak is accepted as the period when its interpolated height is at
/// least this fraction of the tallest in-range peak.
const FIRST_PEAK_RATIO: f64 = 0.9;

/// Frame-wise autocorrelation pitch tracker.
///
/// Each Hann-windowed frame's autocorrelation is obtained as the inverse
/// transform of its power spectrum (zero-padded to avoid circular wrap).
/// The period is the first local maximum of `r(τ)` inside
/// `[fs/f_max, fs/f_min]` that reaches [`FIRST_PEAK_RATIO`] of the best
/// in-range peak, refined by parabolic interpolation. A frame is voiced when
/// `r(τ*) / r(0)` reaches the threshold; silent frames (`r(0) = 0`) are
/// unvoiced.
pub fn autocorr_pitch(
    clip: &AudioClip,
    cfg: &StftConfig,
    params: &AutocorrParams,
) -> Result<PitchContour, DspError> {
    cfg.check_clip(clip)?;
    let fs = cfg.sample_rate as f64;
    let AutocorrParams {
        f_min,
        f_max,
        voicing_threshold,
    } = *params;
    if !(f_min > 0.0 && f_min < f_max && f_max <= fs / 2.0) {
        return Err(DspError::InvalidSearch(format!(
            "need 0 < f_min < f_max ≤ fs/2, got {f_min}..{f_max} at {fs} Hz"
        )));
    }
    if !(voicing_threshold > 0.0 && voicing_threshold < 1.0) {
        return Err(DspError::InvalidSearch(format!(
            "voicing threshold {voicing_threshold} is outside (0, 1)"
        )));
    }
    let lag_lo = ((fs / f_max).floor() as usize).max(1);
    let lag_hi = (fs / f_min).ceil() as usize;
    if lag_hi + 1 >= cfg.window_size || lag_lo > lag_hi {
        return Err(DspError::InvalidSearch(format!(
            "lag range {lag_lo}..={lag_hi} does not fit a {}-sample window",
            cfg.window_size
        )));
    }

    let n = (2 * cfg.window_size).next_power_of_two();
    let window = hann_window(cfg.window_size)?;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let x = clip.samples();
    let frames = cfg.num_frames(x.len());
    let mut f0 = Vec::with_capacity(frames);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for frame in 0..frames {
        let start = frame * cfg.hop;
        buf.fill(Complex::new(0.0, 0.0));
        for (i, w) in window.iter().enumerate() {
            buf[i].re = x[start + i] * w;
        }
        let r = autocorrelation(&mut buf, &fwd, &inv);
        let hz = pick_period(&r, lag_lo, lag_hi, voicing_threshold).map_or(0.0, |lag| fs / lag);
        f0.push(if (MIN_VOICED_HZ..=MAX_VOICED_HZ).contains(&hz) { hz } else { 0.0 });
    }
    Ok(PitchContour::new(f0, cfg.hop_seconds(), cfg.first_frame_center())?)
}

/// Linear autocorrelation of the zero-padded frame in `buf` (Wiener–Khinchin).
fn autocorrelation(
    buf: &mut [Complex<f64>],
    fwd: &Arc<dyn Fft<f64>>,
    inv: &Arc<dyn Fft<f64>>,
) -> Vec<f64> {
    let n = buf.len() as f64;
    fwd.process(buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    inv.process(buf);
    buf.iter().map(|c| c.re / n).collect()
}

fn parabolic_peak(y0: f64, y1: f64, y2: f64) -> (f64, f64) {
    let denom = y0 - 2.0 * y1 + y2;
    if denom.abs() < f64::EPSILON * (y0.abs() + y1.abs() + y2.abs()) || denom >= 0.0 {
        return (0.0, y1);
    }
    let delta = (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5);
    (delta, y1 - 0.25 * (y0 - y2) * delta)
}

/// Returns the fractional period in samples, or `None` for unvoiced.
fn pick_period(r: &[f64], lag_lo: usize, lag_hi: usize, threshold: f64) -> Option<f64> {
    let r0 = r[0];
    if !(r0 > 0.0) {
        return None;
    }
    let peaks: Vec<(usize, f64, f64)> = (lag_lo.max(1)..=lag_hi)
        .filter(|&t| r[t] > 0.0 && r[t] >= r[t - 1] && r[t] >= r[t + 1])
        .map(|t| {
            let (delta, height) = parabolic_peak(r[t - 1], r[t], r[t + 1]);
            (t, delta, height)
        })
        .collect();
    let best = peaks.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let &(lag, delta, _) = peaks.iter().find(|p| p.2 >= FIRST_PEAK_RATIO * best)?;
    if r[lag] / r0 >= threshold {
        Some(lag as f64 + delta)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f64, amp: f64, n: usize) -> AudioClip {
        AudioClip::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / 8000.0).sin())
                .collect(),
            8000,
        )
        .unwrap()
    }

    #[test]
    fn hann_closed_form() {
        let w = hann_window(4).unwrap();
        let expect = [0.0, 0.75, 0.75, 0.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let w = hann_window(9).unwrap();
        assert!((w[4] - 1.0).abs() < 1e-15);
        for n in [2, 5, 64, 1024] {
            let w = hann_window(n).unwrap();
            for i in 0..n {
                assert!((w[i] - w[n - 1 - i]).abs() < 1e-12);
            }
            assert_eq!(w[0], 0.0);
        }
        assert!(matches!(hann_window(1), Err(DspError::WindowTooShort(1))));
    }

    #[test]
    fn tone_peaks_at_expected_bin() {
        let clip = sine(440.0, 1.0, 8000);
        let map = stft_magnitude(&clip, &StftConfig::default(), SpectrumScale::Magnitude).unwrap();
        assert_eq!(map.num_bins(), 513);
        for n in 0..map.num_frames() {
            assert_eq!(map.frame_argmax(n), 56);
        }
    }

    #[test]
    fn frame_count_and_silence() {
        let clip = AudioClip::new(vec![0.0; 1024 + 80], 8000).unwrap();
        let map = stft_magnitude(&clip, &StftConfig::default(), SpectrumScale::Magnitude).unwrap();
        assert_eq!(map.num_frames(), 2);
        assert!(map.values().iter().all(|&v| v == 0.0));
        assert!((map.start_seconds() - 0.064).abs() < 1e-12);
        assert!((map.hop_seconds() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn short_clip_rejected() {
        let clip = AudioClip::new(vec![0.0; 1000], 8000).unwrap();
        assert!(matches!(
            stft_magnitude(&clip, &StftConfig::default(), SpectrumScale::Magnitude),
            Err(DspError::ClipTooShort { .. })
        ));
    }

    #[test]
    fn log_magnitude_is_ln1p() {
        let clip = sine(300.0, 0.5, 2048);
        let cfg = StftConfig::default();
        let lin = stft_magnitude(&clip, &cfg, SpectrumScale::Magnitude).unwrap();
        let log = stft_magnitude(&clip, &cfg, SpectrumScale::LogMagnitude).unwrap();
        for (a, b) in lin.values().iter().zip(log.values()) {
            assert!((a.ln_1p() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_per_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let clip = AudioClip::new(x.clone(), 8000).unwrap();
        for cfg in [
            StftConfig::default(),
            StftConfig {
                fft_size: 4096,
                ..StftConfig::default()
            },
        ] {
            let spectra = stft_complex(&clip, &cfg).unwrap();
            let w = hann_window(cfg.window_size).unwrap();
            for (n, s) in spectra.iter().enumerate() {
                let lhs: f64 = s.iter().map(|c| c.norm_sqr()).sum();
                let rhs: f64 = (0..cfg.window_size)
                    .map(|i| (x[n * cfg.hop + i] * w[i]).powi(2))
                    .sum::<f64>()
                    * cfg.fft_size as f64;
                assert!((lhs - rhs).abs() / rhs < 1e-6);
            }
            // magnitudes are non-negative by construction
            let map = stft_magnitude(&clip, &cfg, SpectrumScale::Magnitude).unwrap();
            assert!(map.values().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn autocorr_tracks_200hz() {
        let clip = sine(200.0, 0.8, 8000);
        let c = autocorr_pitch(&clip, &StftConfig::default(), &AutocorrParams::default()).unwrap();
        assert!(c.voiced_frames() > 0);
        for &f in c.f0() {
            assert!(f == 0.0 || (f - 200.0).abs() < 1.0, "{f}");
        }
        assert_eq!(c.voiced_frames(), c.len());
    }

    #[test]
    fn autocorr_silence_is_unvoiced() {
        let clip = AudioClip::new(vec![0.0; 4000], 8000).unwrap();
        let c = autocorr_pitch(&clip, &StftConfig::default(), &AutocorrParams::default()).unwrap();
        assert!(c.f0().iter().all(|&f| f == 0.0));
    }

    #[test]
    fn autocorr_white_noise_unvoiced() {
        let params = AutocorrParams {
            voicing_threshold: 0.5,
            ..AutocorrParams::default()
        };
        let mut unvoiced = 0;
        let mut total = 0;
        for trial in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let x: Vec<f64> = (0..1024 + 4 * 80)
                .map(|_| rng.random_range(-0.5..0.5))
                .collect();
            let clip = AudioClip::new(x, 8000).unwrap();
            let c = autocorr_pitch(&clip, &StftConfig::default(), &params).unwrap();
            unvoiced += c.f0().iter().filter(|&&f| f == 0.0).count();
            total += c.len();
        }
        assert!(unvoiced as f64 >= 0.9 * total as f64, "{unvoiced}/{total}");
    }

    #[test]
    fn autocorr_log_grid_within_50_cents() {
        let p = AutocorrParams::default();
        for i in 0..20 {
            let f = p.f_min * (p.f_max / p.f_min).powf(i as f64 / 19.0);
            let c = autocorr_pitch(&sine(f, 0.5, 4000), &StftConfig::default(), &p).unwrap();
            for &est in c.f0() {
                assert!(est > 0.0, "{f} Hz frame unvoiced");
                let cents = 1200.0 * (est / f).log2();
                assert!(cents.abs() <= 50.0, "{f} Hz → {est} Hz ({cents:.1} cents)");
            }
        }
    }

    #[test]
    fn autocorr_amplitude_invariant() {
        let clip = sine(310.0, 0.3, 4000);
        let cfg = StftConfig::default();
        let p = AutocorrParams::default();
        let base = autocorr_pitch(&clip, &cfg, &p).unwrap();
        for gain in [0.25, 2.0] {
            let scaled = autocorr_pitch(&clip.scaled(gain).unwrap(), &cfg, &p).unwrap();
            assert_eq!(scaled.f0(), base.f0());
        }
        let scaled = autocorr_pitch(&clip.scaled(0.37).unwrap(), &cfg, &p).unwrap();
        for (a, b) in scaled.f0().iter().zip(base.f0()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn autocorr_rejects_bad_ranges() {
        let clip = sine(200.0, 0.5, 2000);
        let cfg = StftConfig::default();
        let bad = AutocorrParams {
            f_min: 500.0,
            f_max: 400.0,
            ..AutocorrParams::default()
        };
        assert!(matches!(
            autocorr_pitch(&clip, &cfg, &bad),
            Err(DspError::InvalidSearch(_))
        ));
        let too_low = AutocorrParams {
            f_min: 5.0,
            ..AutocorrParams::default()
        };
        assert!(autocorr_pitch(&clip, &cfg, &too_low).is_err());
        let above_nyquist = AutocorrParams {
            f_max: 5000.0,
            ..AutocorrParams::default()
        };
        assert!(autocorr_pitch(&clip, &cfg, &above_nyquist).is_err());
    }
}
