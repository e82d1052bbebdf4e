//! Supervised training and teacher-student distillation.
//!
//! The student objective per batch of `M` unlabeled examples is
//! `L_b = (1/M) Σ [H(y_u, p(y|x_u; Θ_s)) + H(y_u, y_t)]` where `y_u` is the
//! teacher's hard pseudo label and `y_t` an optional true label. The second
//! term does not depend on the student's parameters; it is reported but
//! contributes no gradient. [`TrueLabelTerm::StudentPrediction`] swaps it for
//! `H(y_t, p(y|x_u; Θ_s))`, which does train.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::neural::{cross_entropy, softmax, Adam, Gradients, Network, NnError, Target, Tensor, BCE_EPSILON};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("example {index}: label {label} out of range for {classes} classes")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("{found} pseudo labels for {expected} inputs")]
    MissingPseudoLabels { expected: usize, found: usize },
    #[error("{found} true labels for {expected} inputs")]
    TrueLabelMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if self.epochs == 0 {
            return Err(TrainingError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainingError::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainingError::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One labelled network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Tensor,
    pub label: usize,
}

/// Per-epoch means over all examples seen in the epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: Vec<f64>,
    pub h1: Vec<f64>,
    /// Second loss term; `None` when it was not computed.
    pub h2: Option<Vec<f64>>,
    /// Batch size `M`.
    pub batch_size: usize,
}

impl LossReport {
    /// `epoch<TAB>loss<TAB>h1<TAB>h2` lines; `h2` is `-` when absent.
    pub fn to_log(&self) -> String {
        let mut out = String::from("epoch\tloss\th1\th2\n");
        for (i, (l, h1)) in self.loss.iter().zip(&self.h1).enumerate() {
            let h2 = self
                .h2
                .as_ref()
                .map_or_else(|| "-".to_string(), |v| format!("{:.9}", v[i]));
            let _ = writeln!(out, "{}\t{l:.9}\t{h1:.9}\t{h2}", i + 1);
        }
        out
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss.last().copied()
    }
}

fn output_classes(net: &Network, probe: &Tensor) -> Result<usize, TrainingError> {
    Ok(net.forward(probe)?.len())
}

fn check_labels(labels: impl Iterator<Item = usize>, classes: usize) -> Result<(), TrainingError> {
    for (index, label) in labels.enumerate() {
        if label >= classes {
            return Err(TrainingError::LabelOutOfRange { index, label, classes });
        }
    }
    Ok(())
}

/// Runs `epochs` passes of seeded-shuffle mini-batch Adam. `step` receives
/// one example index, accumulates its gradient and returns its per-term
/// losses `(h1, h2)`.
fn run_epochs<F>(
    net: &mut Network,
    n: usize,
    cfg: &TrainConfig,
    mut step: F,
) -> Result<(Vec<f64>, Vec<f64>), TrainingError>
where
    F: FnMut(&Network, usize, &mut Gradients) -> Result<(f64, f64), TrainingError>,
{
    let adam = Adam::with_learning_rate(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut h1_epochs = Vec::with_capacity(cfg.epochs);
    let mut h2_epochs = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut h1_sum, mut h2_sum) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::default();
            for &i in batch {
                let (h1, h2) = step(net, i, &mut grads)?;
                h1_sum += h1;
                h2_sum += h2;
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(net.params_mut(), &grads)?;
        }
        h1_epochs.push(h1_sum / n as f64);
        h2_epochs.push(h2_sum / n as f64);
    }
    Ok((h1_epochs, h2_epochs))
}

/// Mini-batch training with softmax cross-entropy on hard labels.
pub fn train_supervised(
    net: &mut Network,
    data: &[Example],
    cfg: &TrainConfig,
) -> Result<LossReport, TrainingError> {
    cfg.validate()?;
    let first = data.first().ok_or(TrainingError::EmptyDataset)?;
    let classes = output_classes(net, &first.input)?;
    check_labels(data.iter().map(|e| e.label), classes)?;
    let (h1, _) = run_epochs(net, data.len(), cfg, |net, i, grads| {
        let cache = net.forward_cached(&data[i].input)?;
        let (loss, upstream) = cross_entropy(cache.output(), Target::Class(data[i].label))?;
        net.backward_accumulate(&cache, &upstream, grads)?;
        Ok((loss, 0.0))
    })?;
    Ok(LossReport {
        loss: h1.clone(),
        h1,
        h2: None,
        batch_size: cfg.batch_size,
    })
}

/// Teacher predictions on unlabeled inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub labels: Vec<usize>,
    /// Teacher softmax probability of each chosen label.
    pub confidence: Vec<f64>,
    /// Identifies the teacher, e.g. its checkpoint path.
    pub source: String,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Hard label = argmax of the teacher output (lowest index on ties),
/// confidence = the largest softmax probability.
pub fn generate_pseudo_labels(
    teacher: &Network,
    inputs: &[Tensor],
    source: &str,
) -> Result<PseudoLabelSet, TrainingError> {
    let mut labels = Vec::with_capacity(inputs.len());
    let mut confidence = Vec::with_capacity(inputs.len());
    for x in inputs {
        let p = softmax(&teacher.forward(x)?);
        let k = p.argmax();
        labels.push(k);
        confidence.push(p.data()[k]);
    }
    Ok(PseudoLabelSet {
        labels,
        confidence,
        source: source.to_string(),
    })
}

/// What the second loss term compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrueLabelTerm {
    /// `H(y_u, y_t)` between the pseudo label and the true label. Constant
    /// in the student's parameters.
    #[default]
    AsWritten,
    /// `H(y_t, p(y|x_u; Θ_s))`, a supervised term on the student.
    StudentPrediction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentConfig {
    pub train: TrainConfig,
    /// Pseudo labels with lower teacher confidence are dropped.
    pub confidence_threshold: f64,
    pub true_label_term: TrueLabelTerm,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            confidence_threshold: 0.0,
            true_label_term: TrueLabelTerm::AsWritten,
        }
    }
}

/// Cross-entropy between two one-hot distributions, with the second
/// clamped below at the BCE epsilon: 0 when the labels agree, `−ln ε`
/// otherwise.
pub fn one_hot_cross_entropy(y_u: usize, y_t: usize) -> f64 {
    if y_u == y_t {
        0.0
    } else {
        -BCE_EPSILON.ln()
    }
}

/// The two per-example terms of the student objective at the current
/// parameters, without training.
pub fn student_loss_terms(
    student: &Network,
    input: &Tensor,
    y_u: usize,
    y_t: Option<usize>,
    term: TrueLabelTerm,
) -> Result<(f64, f64), TrainingError> {
    let logits = student.forward(input)?;
    let (h1, _) = cross_entropy(&logits, Target::Class(y_u))?;
    let h2 = match (y_t, term) {
        (None, _) => 0.0,
        (Some(t), TrueLabelTerm::AsWritten) => one_hot_cross_entropy(y_u, t),
        (Some(t), TrueLabelTerm::StudentPrediction) => cross_entropy(&logits, Target::Class(t))?.0,
    };
    Ok((h1, h2))
}

/// Trains `student` on teacher pseudo labels, optionally alongside true
/// labels for the same inputs.
pub fn train_student(
    student: &mut Network,
    inputs: &[Tensor],
    pseudo: &PseudoLabelSet,
    true_labels: Option<&[usize]>,
    cfg: &StudentConfig,
) -> Result<LossReport, TrainingError> {
    cfg.train.validate()?;
    if !(0.0..=1.0).contains(&cfg.confidence_threshold) {
        return Err(TrainingError::InvalidConfig(format!(
            "confidence threshold {} outside [0, 1]",
            cfg.confidence_threshold
        )));
    }
    if pseudo.labels.len() != inputs.len() || pseudo.confidence.len() != inputs.len() {
        return Err(TrainingError::MissingPseudoLabels {
            expected: inputs.len(),
            found: pseudo.labels.len().min(pseudo.confidence.len()),
        });
    }
    if let Some(t) = true_labels {
        if t.len() != inputs.len() {
            return Err(TrainingError::TrueLabelMismatch {
                expected: inputs.len(),
                found: t.len(),
            });
        }
    }
    let kept: Vec<usize> = (0..inputs.len())
        .filter(|&i| pseudo.confidence[i] >= cfg.confidence_threshold)
        .collect();
    let first = kept.first().ok_or(TrainingError::EmptyDataset)?;
    let classes = output_classes(student, &inputs[*first])?;
    check_labels(kept.iter().map(|&i| pseudo.labels[i]), classes)?;
    if let Some(t) = true_labels {
        check_labels(kept.iter().map(|&i| t[i]), classes)?;
    }

    let term = cfg.true_label_term;
    let (h1, h2) = run_epochs(student, kept.len(), &cfg.train, |net, k, grads| {
        let i = kept[k];
        let y_u = pseudo.labels[i];
        let cache = net.forward_cached(&inputs[i])?;
        let (h1, mut upstream) = cross_entropy(cache.output(), Target::Class(y_u))?;
        let h2 = match (true_labels.map(|t| t[i]), term) {
            (None, _) => 0.0,
            (Some(y_t), TrueLabelTerm::AsWritten) => one_hot_cross_entropy(y_u, y_t),
            (Some(y_t), TrueLabelTerm::StudentPrediction) => {
                let (h2, g2) = cross_entropy(cache.output(), Target::Class(y_t))?;
                upstream
                    .data_mut()
                    .iter_mut()
                    .zip(g2.data())
                    .for_each(|(a, b)| *a += b);
                h2
            }
        };
        net.backward_accumulate(&cache, &upstream, grads)?;
        Ok((h1, h2))
    })?;
    let loss = h1.iter().zip(&h2).map(|(a, b)| a + b).collect();
    Ok(LossReport {
        loss,
        h1,
        h2: true_labels.map(|_| h2),
        batch_size: cfg.train.batch_size,
    })
}

/// Fraction of inputs on which two networks' argmax outputs agree.
pub fn argmax_agreement(a: &Network, b: &Network, inputs: &[Tensor]) -> Result<f64, TrainingError> {
    if inputs.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    let mut agree = 0usize;
    for x in inputs {
        if a.forward(x)?.argmax() == b.forward(x)?.argmax() {
            agree += 1;
        }
    }
    Ok(agree as f64 / inputs.len() as f64)
}
