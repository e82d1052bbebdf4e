//! Raw pitch accuracy (RPA) and raw chroma accuracy (RCA).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::audio::PitchContour;

/// Octave shifts tried by RCA run over `-OCTAVE_SEARCH..=OCTAVE_SEARCH`.
pub const OCTAVE_SEARCH: i32 = 5;
pub const DEFAULT_TOLERANCE_CENTS: f64 = 50.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("frequencies must be positive (got {0} and {1})")]
    NonPositiveFrequency(f64, f64),
    #[error("reference contour is empty")]
    EmptyTruth,
    #[error("reference contour has no voiced frames")]
    NoVoicedFrames,
    #[error("tolerance {0} cents must be positive and finite")]
    InvalidTolerance(f64),
    #[error("no clips to summarise")]
    NoClips,
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
}

pub fn cents_difference(f_est: f64, f_ref: f64) -> Result<f64, EvalError> {
    if !(f_est > 0.0 && f_ref > 0.0) || !f_est.is_finite() || !f_ref.is_finite() {
        return Err(EvalError::NonPositiveFrequency(f_est, f_ref));
    }
    Ok(1200.0 * (f_est / f_ref).log2())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rpa: f64,
    pub rca: f64,
    /// Frames voiced in the reference.
    pub voiced_frames: usize,
    pub total_frames: usize,
    pub tolerance_cents: f64,
    pub pitch_correct: usize,
    pub chroma_correct: usize,
}

/// Distance in cents after the best octave shift within the search range.
fn chroma_distance(cents: f64) -> f64 {
    let k = (-(cents / 1200.0).round()).clamp(-OCTAVE_SEARCH as f64, OCTAVE_SEARCH as f64);
    (cents + 1200.0 * k).abs()
}

/// Scores `est` against `truth` on the truth's frame grid; each truth frame
/// takes the estimate of the nearest-in-time estimated frame (unvoiced if
/// none). Only truth-voiced frames count, and an unvoiced estimate on such
/// a frame is wrong.
pub fn evaluate(
    est: &PitchContour,
    truth: &PitchContour,
    tolerance_cents: f64,
) -> Result<MetricsReport, EvalError> {
    if !(tolerance_cents.is_finite() && tolerance_cents > 0.0) {
        return Err(EvalError::InvalidTolerance(tolerance_cents));
    }
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    let (mut voiced, mut pitch, mut chroma) = (0usize, 0usize, 0usize);
    for (i, &f_ref) in truth.f0().iter().enumerate() {
        if f_ref <= 0.0 {
            continue;
        }
        voiced += 1;
        let f_est = est.f0_at_time(truth.time_at(i));
        if f_est <= 0.0 {
            continue;
        }
        let c = cents_difference(f_est, f_ref)?;
        if c.abs() <= tolerance_cents {
            pitch += 1;
        }
        if chroma_distance(c) <= tolerance_cents {
            chroma += 1;
        }
    }
    if voiced == 0 {
        return Err(EvalError::NoVoicedFrames);
    }
    Ok(MetricsReport {
        rpa: pitch as f64 / voiced as f64,
        rca: chroma as f64 / voiced as f64,
        voiced_frames: voiced,
        total_frames: truth.len(),
        tolerance_cents,
        pitch_correct: pitch,
        chroma_correct: chroma,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipMetrics {
    pub clip_id: String,
    pub report: MetricsReport,
}

/// Unweighted mean of per-clip ratios; frame counts are summed.
pub fn mean_report(rows: &[ClipMetrics]) -> Result<MetricsReport, EvalError> {
    let first = rows.first().ok_or(EvalError::NoClips)?;
    let n = rows.len() as f64;
    Ok(MetricsReport {
        rpa: rows.iter().map(|r| r.report.rpa).sum::<f64>() / n,
        rca: rows.iter().map(|r| r.report.rca).sum::<f64>() / n,
        voiced_frames: rows.iter().map(|r| r.report.voiced_frames).sum(),
        total_frames: rows.iter().map(|r| r.report.total_frames).sum(),
        tolerance_cents: first.report.tolerance_cents,
        pitch_correct: rows.iter().map(|r| r.report.pitch_correct).sum(),
        chroma_correct: rows.iter().map(|r| r.report.chroma_correct).sum(),
    })
}

/// `clip_id,rpa,rca,voiced_frames,total_frames`, one row per clip and a
/// final `mean` row.
pub fn report_csv(rows: &[ClipMetrics]) -> Result<String, EvalError> {
    let mean = mean_report(rows)?;
    let mut out = String::from("clip_id,rpa,rca,voiced_frames,total_frames\n");
    let mut row = |id: &str, r: &MetricsReport| {
        let _ = writeln!(out, "{id},{:.6},{:.6},{},{}", r.rpa, r.rca, r.voiced_frames, r.total_frames);
    };
    for r in rows {
        row(&r.clip_id, &r.report);
    }
    row("mean", &mean);
    Ok(out)
}

pub fn write_report_csv(rows: &[ClipMetrics], path: impl AsRef<Path>) -> Result<(), EvalError> {
    fs::write(path, report_csv(rows)?)?;
    Ok(())
}

/// `RPA/RCA: xx.xx/yy.yy` in percent.
pub fn format_summary(report: &MetricsReport) -> String {
    format!("RPA/RCA: {:.2}/{:.2}", 100.0 * report.rpa, 100.0 * report.rca)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn contour(f0: &[f64]) -> PitchContour {
        PitchContour::new(f0.to_vec(), 0.01, 0.0).unwrap()
    }

    /// Independent oracle: same-grid frames, explicit loop over shifts.
    fn oracle(est: &[f64], truth: &[f64], tol: f64) -> (usize, usize, usize) {
        let (mut v, mut p, mut c) = (0, 0, 0);
        for (e, t) in est.iter().zip(truth) {
            if *t <= 0.0 {
                continue;
            }
            v += 1;
            if *e <= 0.0 {
                continue;
            }
            let d = 1200.0 * (e / t).log2();
            if d.abs() <= tol {
                p += 1;
            }
            if (-5..=5).any(|k| (d + 1200.0 * k as f64).abs() <= tol) {
                c += 1;
            }
        }
        (v, p, c)
    }

    #[test]
    fn cents_examples() {
        assert_eq!(cents_difference(220.0, 220.0).unwrap(), 0.0);
        assert!((cents_difference(440.0, 220.0).unwrap() - 1200.0).abs() < 1e-9);
        assert!((cents_difference(222.0, 220.0).unwrap() - 15.667).abs() < 1e-3);
        assert!(cents_difference(0.0, 220.0).is_err());
        assert!(cents_difference(220.0, -1.0).is_err());
    }

    #[test]
    fn hand_computed_example() {
        let r = evaluate(&contour(&[221.0, 440.0, 100.0]), &contour(&[220.0, 220.0, 330.0]), 50.0).unwrap();
        assert_eq!(r.rpa, 1.0 / 3.0);
        assert_eq!(r.rca, 2.0 / 3.0);
        assert_eq!((r.voiced_frames, r.total_frames), (3, 3));
    }

    #[test]
    fn identity_and_unvoiced() {
        let t = contour(&[0.0, 220.0, 230.0, 0.0]);
        let r = evaluate(&t, &t, 50.0).unwrap();
        assert_eq!((r.rpa, r.rca), (1.0, 1.0));
        let r = evaluate(&contour(&[0.0; 4]), &t, 50.0).unwrap();
        assert_eq!((r.rpa, r.rca), (0.0, 0.0));
    }

    #[test]
    fn errors() {
        let empty = PitchContour::new(vec![], 0.01, 0.0).unwrap();
        assert!(matches!(evaluate(&empty, &empty, 50.0), Err(EvalError::EmptyTruth)));
        let silent = contour(&[0.0, 0.0]);
        assert!(matches!(evaluate(&silent, &silent, 50.0), Err(EvalError::NoVoicedFrames)));
        assert!(evaluate(&silent, &silent, 0.0).is_err());
    }

    #[test]
    fn aligns_by_nearest_time() {
        // estimate at half the truth hop, starting one estimate frame earlier
        let truth = PitchContour::new(vec![200.0, 300.0], 0.02, 0.01).unwrap();
        let est = PitchContour::new(vec![0.0, 0.0, 0.0, 300.0, 0.0], 0.01, 0.0).unwrap();
        let r = evaluate(&est, &truth, 50.0).unwrap();
        assert_eq!(r.pitch_correct, 1);
    }

    #[test]
    fn csv_report() {
        let t = contour(&[220.0, 0.0]);
        let rows = vec![
            ClipMetrics {
                clip_id: "a".into(),
                report: evaluate(&t, &t, 50.0).unwrap(),
            },
            ClipMetrics {
                clip_id: "b".into(),
                report: evaluate(&contour(&[0.0, 0.0]), &t, 50.0).unwrap(),
            },
        ];
        let csv = report_csv(&rows).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), rows.len() + 2);
        assert_eq!(lines[0], "clip_id,rpa,rca,voiced_frames,total_frames");
        assert_eq!(lines[3], "mean,0.500000,0.500000,2,4");
        assert_eq!(format_summary(&mean_report(&rows).unwrap()), "RPA/RCA: 50.00/50.00");
        assert!(report_csv(&[]).is_err());
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..40).prop_flat_map(|n| {
            let f = prop_oneof![1 => Just(0.0), 4 => 50.0f64..2000.0];
            (prop::collection::vec(f.clone(), n), prop::collection::vec(f, n))
        })
    }

    proptest! {
        #[test]
        fn matches_oracle((est, truth) in pair(), tol in 10.0f64..120.0) {
            let (v, p, c) = oracle(&est, &truth, tol);
            match evaluate(&contour(&est), &contour(&truth), tol) {
                Ok(r) => {
                    prop_assert_eq!((r.voiced_frames, r.pitch_correct, r.chroma_correct), (v, p, c));
                    prop_assert!(r.rca >= r.rpa);
                }
                Err(EvalError::NoVoicedFrames) => prop_assert_eq!(v, 0),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn ignores_truth_unvoiced_frames((est, truth) in pair(), junk in 60.0f64..900.0) {
            let mut other = est.clone();
            for (o, t) in other.iter_mut().zip(&truth) {
                if *t == 0.0 {
                    *o = junk;
                }
            }
            let a = evaluate(&contour(&est), &contour(&truth), 50.0);
            let b = evaluate(&contour(&other), &contour(&truth), 50.0);
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert_eq!(a, b);
            }
        }
    }
}
