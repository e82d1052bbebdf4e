//! Deterministic synthetic signals with known pitch.
//!
//! Used to exercise the pipeline end to end where real annotated recordings
//! are unavailable: harmonic tones with optional vibrato, white noise, and a
//! small "vocal" corpus of note sequences over a noise floor.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{AudioClip, AudioError, PitchContour};

/// Partials above this fraction of the sample rate are not synthesised.
const MAX_PARTIAL_FRACTION: f64 = 0.45;
const VIBRATO_HZ: f64 = 5.5;

fn vibrato_factor(t: f64, vibrato_cents: f64) -> f64 {
    2f64.powf(vibrato_cents / 1200.0 * (2.0 * PI * VIBRATO_HZ * t).sin())
}

/// Sum of harmonics `amps[h-1] · sin(h·φ(t))` where `φ` follows `f0` with
/// sinusoidal vibrato of ±`vibrato_cents`. Peak-normalised to 0.8.
pub fn harmonic_tone(
    f0: f64,
    amps: &[f64],
    seconds: f64,
    sample_rate: u32,
    vibrato_cents: f64,
) -> Result<AudioClip, AudioError> {
    let n = (seconds * sample_rate as f64).round() as usize;
    let mut out = vec![0.0; n];
    render_note(&mut out, 0, n, f0, amps, sample_rate, vibrato_cents, 0.0);
    normalize_peak(&mut out, 0.8);
    AudioClip::new(out, sample_rate)
}

/// Adds a note into `buf[start..end]`.
#[allow(clippy::too_many_arguments)]
fn render_note(
    buf: &mut [f64],
    start: usize,
    end: usize,
    f0: f64,
    amps: &[f64],
    sample_rate: u32,
    vibrato_cents: f64,
    phase0: f64,
) {
    let fs = sample_rate as f64;
    let mut phase = phase0;
    for i in start..end {
        let t = i as f64 / fs;
        let f = f0 * vibrato_factor(t, vibrato_cents);
        let mut v = 0.0;
        for (h, a) in amps.iter().enumerate() {
            let partial = (h + 1) as f64;
            if partial * f >= MAX_PARTIAL_FRACTION * fs {
                break;
            }
            v += a * (partial * phase).sin();
        }
        buf[i] += v;
        phase += 2.0 * PI * f / fs;
    }
}

fn normalize_peak(buf: &mut [f64], peak: f64) {
    let max = buf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        let g = peak / max;
        buf.iter_mut().for_each(|v| *v *= g);
    }
}

/// Uniform white noise with the given RMS.
pub fn white_noise(n: usize, rms: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // uniform on [-a, a] has rms a/√3
    let a = rms * 3f64.sqrt();
    (0..n).map(|_| rng.random_range(-a..=a)).collect()
}

/// Nearest equal-tempered pitch to `f`, moved one semitone inwards if that
/// leaves `[lo, hi]`.
fn snap_to_semitone(f: f64, lo: f64, hi: f64) -> f64 {
    let pitch = |m: f64| 440.0 * 2f64.powf(m / 12.0);
    let m = (12.0 * (f / 440.0).log2()).round();
    if pitch(m) < lo {
        pitch(m + 1.0)
    } else if pitch(m) > hi {
        pitch(m - 1.0)
    } else {
        pitch(m)
    }
}

/// Parameters of the synthetic vocal corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub sample_rate: u32,
    pub f0_min: f64,
    pub f0_max: f64,
    pub min_harmonics: usize,
    pub max_harmonics: usize,
    pub vibrato_cents: f64,
    /// Snap note pitches to the equal-tempered grid (A4 = 440 Hz).
    pub semitone_grid: bool,
    /// Noise floor relative to the melody RMS.
    pub noise_db: f64,
    pub truth_hop_seconds: f64,
    pub truth_start_seconds: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            f0_min: 100.0,
            f0_max: 800.0,
            min_harmonics: 3,
            max_harmonics: 6,
            vibrato_cents: 20.0,
            semitone_grid: false,
            noise_db: -20.0,
            truth_hop_seconds: 0.01,
            truth_start_seconds: 0.064,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub clip: AudioClip,
    pub truth: PitchContour,
}

/// One corpus clip: noise lead-in, two notes separated by a short gap,
/// noise tail. Pitch, timbre and timing are drawn from `seed`.
pub fn vocal_clip(seed: u64, cfg: &CorpusConfig) -> Result<SyntheticClip, AudioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = cfg.sample_rate as f64;
    let lead = rng.random_range(0.10..0.20);
    let note1 = rng.random_range(0.30..0.50);
    let gap = rng.random_range(0.05..0.15);
    let note2 = rng.random_range(0.30..0.50);
    let tail = rng.random_range(0.10..0.20);
    let total = lead + note1 + gap + note2 + tail;
    let n = (total * fs).round() as usize;

    let mut notes = Vec::new();
    let mut t = lead;
    for dur in [note1, note2] {
        let mut f0 = cfg.f0_min * (cfg.f0_max / cfg.f0_min).powf(rng.random::<f64>());
        if cfg.semitone_grid {
            f0 = snap_to_semitone(f0, cfg.f0_min, cfg.f0_max);
        }
        let harmonics = rng.random_range(cfg.min_harmonics..=cfg.max_harmonics);
        let amps: Vec<f64> = (0..harmonics)
            .map(|h| if h == 0 { 1.0 } else { rng.random_range(0.2..1.2) })
            .collect();
        notes.push((t, t + dur, f0, amps));
        t += dur + gap;
    }

    let mut melody = vec![0.0; n];
    for (start, end, f0, amps) in &notes {
        let s = (start * fs).round() as usize;
        let e = ((end * fs).round() as usize).min(n);
        let phase0 = rng.random_range(0.0..2.0 * PI);
        render_note(&mut melody, s, e, *f0, amps, cfg.sample_rate, cfg.vibrato_cents, phase0);
    }
    let voiced: Vec<f64> = notes
        .iter()
        .flat_map(|(s, e, _, _)| {
            let a = (s * fs).round() as usize;
            let b = ((e * fs).round() as usize).min(n);
            melody[a..b].to_vec()
        })
        .collect();
    let melody_rms = (voiced.iter().map(|v| v * v).sum::<f64>() / voiced.len().max(1) as f64).sqrt();
    let noise = white_noise(n, melody_rms * 10f64.powf(cfg.noise_db / 20.0), rng.random());
    let mut mix: Vec<f64> = melody.iter().zip(&noise).map(|(m, z)| m + z).collect();
    normalize_peak(&mut mix, 0.8);

    let frames = ((total - cfg.truth_start_seconds) / cfg.truth_hop_seconds).floor().max(0.0) as usize + 1;
    let f0: Vec<f64> = (0..frames)
        .map(|i| {
            let t = cfg.truth_start_seconds + i as f64 * cfg.truth_hop_seconds;
            notes
                .iter()
                .find(|(s, e, _, _)| t >= *s && t < *e)
                .map_or(0.0, |(_, _, f0, _)| f0 * vibrato_factor(t, cfg.vibrato_cents))
        })
        .collect();
    Ok(SyntheticClip {
        clip: AudioClip::new(mix, cfg.sample_rate)?,
        truth: PitchContour::new(f0, cfg.truth_hop_seconds, cfg.truth_start_seconds)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tone_is_normalised_and_deterministic() {
        let a = harmonic_tone(220.0, &[1.0, 0.5], 0.1, 8000, 0.0).unwrap();
        let b = harmonic_tone(220.0, &[1.0, 0.5], 0.1, 8000, 0.0).unwrap();
        assert_eq!(a, b);
        let peak = a.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.8).abs() < 1e-12);
        assert_eq!(a.len(), 800);
    }

    #[test]
    fn noise_rms() {
        let x = white_noise(100_000, 0.1, 5);
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        assert!((rms - 0.1).abs() < 0.002);
    }

    #[test]
    fn corpus_clip_has_voiced_and_unvoiced_truth() {
        let c = vocal_clip(11, &CorpusConfig::default()).unwrap();
        assert!(c.truth.voiced_frames() > 40);
        assert!(c.truth.voiced_frames() < c.truth.len());
        assert!(c.truth.f0().iter().all(|&f| f == 0.0 || (95.0..=850.0).contains(&f)));
        let again = vocal_clip(11, &CorpusConfig::default()).unwrap();
        assert_eq!(c.clip, again.clip);
    }

    #[test]
    fn semitone_grid_notes() {
        let cfg = CorpusConfig {
            semitone_grid: true,
            vibrato_cents: 0.0,
            ..CorpusConfig::default()
        };
        for seed in 0..20 {
            let c = vocal_clip(seed, &cfg).unwrap();
            for &f in c.truth.f0().iter().filter(|&&f| f > 0.0) {
                let m = 12.0 * (f / 440.0).log2();
                assert!((m - m.round()).abs() < 1e-9);
                assert!((100.0..=800.0).contains(&f));
            }
        }
        assert!((snap_to_semitone(99.0, 100.0, 800.0) - 103.826).abs() < 1e-3);
    }
}
