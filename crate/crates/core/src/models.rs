//! The patch CNN, the frame classifier and pitch-label quantization.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::{AudioClip, PitchContour};
use crate::cfp::{self, CfpConfig, CfpError, Patch, PatchLabel, PATCH_SIZE};
use crate::dsp::{self, DspError, SpectrumScale, StftConfig, TimeFrequencyMap};
use crate::training::Example;
use crate::neural::{
    glorot_uniform, load_checkpoint, save_checkpoint, softmax, Layer, ModelParameters, Network,
    NnError, Tensor,
};

pub const PATCH_CNN_KIND: &str = "patch_cnn";
pub const FRAME_CLASSIFIER_KIND: &str = "frame_classifier";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("frequency {0} Hz is negative or not finite")]
    InvalidFrequency(f64),
    #[error("label {label} out of range (max {max})")]
    LabelOutOfRange { label: usize, max: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint holds a {found:?} model, expected {expected:?}")]
    WrongKind { expected: String, found: String },
    #[error("context window has {found} frames, expected {expected}")]
    WrongFrameCount { expected: usize, found: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Cfp(#[from] CfpError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

/// Pitch classes on a 1/8-semitone grid above `f_min`; class 0 is unvoiced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerConfig {
    pub f_min: f64,
    pub bins_per_semitone: usize,
    pub num_pitch_classes: usize,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            f_min: 73.416,
            bins_per_semitone: 8,
            num_pitch_classes: 441,
        }
    }
}

impl QuantizerConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.f_min.is_finite() && self.f_min > 0.0) {
            return Err(ModelError::InvalidConfig(format!("f_min {} must be positive", self.f_min)));
        }
        if self.bins_per_semitone == 0 || self.num_pitch_classes == 0 {
            return Err(ModelError::InvalidConfig("quantizer needs at least one bin".into()));
        }
        Ok(())
    }

    pub fn bins_per_octave(&self) -> f64 {
        (12 * self.bins_per_semitone) as f64
    }

    /// Voiced classes plus the unvoiced class.
    pub fn num_classes(&self) -> usize {
        self.num_pitch_classes + 1
    }

    /// Centre frequency of the highest class.
    pub fn f_max(&self) -> f64 {
        self.f_min * 2f64.powf((self.num_pitch_classes - 1) as f64 / self.bins_per_octave())
    }
}

/// `0` for `f = 0`, otherwise `clamp(round(b·log2(f/f_min)) + 1, 1, K)`.
pub fn hz_to_label(f: f64, q: &QuantizerConfig) -> Result<usize, ModelError> {
    if !f.is_finite() || f < 0.0 {
        return Err(ModelError::InvalidFrequency(f));
    }
    if f == 0.0 {
        return Ok(0);
    }
    let raw = (q.bins_per_octave() * (f / q.f_min).log2()).round() + 1.0;
    Ok(raw.clamp(1.0, q.num_pitch_classes as f64) as usize)
}

pub fn label_to_hz(label: usize, q: &QuantizerConfig) -> Result<f64, ModelError> {
    if label > q.num_pitch_classes {
        return Err(ModelError::LabelOutOfRange {
            label,
            max: q.num_pitch_classes,
        });
    }
    if label == 0 {
        return Ok(0.0);
    }
    Ok(q.f_min * 2f64.powf((label - 1) as f64 / q.bins_per_octave()))
}

fn expect_kind(expected: &str, found: &str) -> Result<(), ModelError> {
    if expected != found {
        return Err(ModelError::WrongKind {
            expected: expected.into(),
            found: found.into(),
        });
    }
    Ok(())
}

fn param_shape<'a>(p: &'a ModelParameters, name: &str) -> Result<&'a [usize], ModelError> {
    Ok(p.get(name).ok_or_else(|| NnError::UnknownParameter(name.into()))?.shape())
}

/// Scales `values` so the largest magnitude is 1; an all-zero input is
/// returned unchanged.
fn normalise_peak(values: &mut [f64]) {
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        values.iter_mut().for_each(|v| *v /= peak);
    }
}

/// Two convolutions (8@5×5, 16@3×3) and three dense layers (128, 64, 2)
/// over a 25×25 CFP patch. Class 1 is "vocal melody".
#[derive(Debug, Clone, PartialEq)]
pub struct PatchCnn {
    network: Network,
    pub decision_threshold: f64,
}

impl PatchCnn {
    pub const CONV1_FILTERS: usize = 8;
    pub const CONV2_FILTERS: usize = 16;
    pub const HIDDEN: [usize; 2] = [128, 64];

    fn layers() -> Vec<Layer> {
        vec![
            Layer::conv2d("conv1"),
            Layer::Relu,
            Layer::conv2d("conv2"),
            Layer::Relu,
            Layer::Flatten,
            Layer::dense("fc1"),
            Layer::Relu,
            Layer::dense("fc2"),
            Layer::Relu,
            Layer::dense("fc3"),
        ]
    }

    /// Glorot-initialised model; biases start at zero.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f1, f2) = (Self::CONV1_FILTERS, Self::CONV2_FILTERS);
        let side = PATCH_SIZE - 4 - 2;
        let flat = f2 * side * side;
        let [h1, h2] = Self::HIDDEN;
        let mut p = ModelParameters::new();
        p.insert("conv1.kernels", glorot_uniform(&[f1, 1, 5, 5], 25, f1 * 25, &mut rng));
        p.insert("conv1.bias", Tensor::zeros(&[f1]));
        p.insert("conv2.kernels", glorot_uniform(&[f2, f1, 3, 3], f1 * 9, f2 * 9, &mut rng));
        p.insert("conv2.bias", Tensor::zeros(&[f2]));
        p.insert("fc1.weights", glorot_uniform(&[h1, flat], flat, h1, &mut rng));
        p.insert("fc1.bias", Tensor::zeros(&[h1]));
        p.insert("fc2.weights", glorot_uniform(&[h2, h1], h1, h2, &mut rng));
        p.insert("fc2.bias", Tensor::zeros(&[h2]));
        p.insert("fc3.weights", glorot_uniform(&[2, h2], h2, 2, &mut rng));
        p.insert("fc3.bias", Tensor::zeros(&[2]));
        Self {
            network: Network::new(Self::layers(), p).expect("all parameters inserted"),
            decision_threshold: 0.5,
        }
    }

    pub fn from_params(params: ModelParameters) -> Result<Self, ModelError> {
        let network = Network::new(Self::layers(), params)?;
        let logits = network.forward(&Tensor::zeros(&[1, PATCH_SIZE, PATCH_SIZE]))?;
        if logits.shape() != [2] {
            return Err(ModelError::InvalidConfig(format!(
                "patch CNN head has {} outputs",
                logits.len()
            )));
        }
        Ok(Self {
            network,
            decision_threshold: 0.5,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    /// Network input for `patch`: shape `[1, 25, 25]`, peak-normalised.
    pub fn input(patch: &Patch) -> Result<Tensor, ModelError> {
        let mut v = patch.values.clone();
        normalise_peak(&mut v);
        Ok(Tensor::new(vec![1, PATCH_SIZE, PATCH_SIZE], v)?)
    }

    /// `[p(non-vocal), p(vocal)]` for a prepared input tensor.
    pub fn probabilities(&self, input: &Tensor) -> Result<[f64; 2], ModelError> {
        let p = softmax(&self.network.forward(input)?);
        Ok([p.data()[0], p.data()[1]])
    }

    /// Probability that `patch` is vocal melody.
    pub fn predict(&self, patch: &Patch) -> Result<f64, ModelError> {
        Ok(self.probabilities(&Self::input(patch)?)?[1])
    }

    pub fn is_vocal(&self, probability: f64) -> bool {
        probability > self.decision_threshold
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(save_checkpoint(path, PATCH_CNN_KIND, self.network.params())?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (kind, params) = load_checkpoint(path)?;
        expect_kind(PATCH_CNN_KIND, &kind)?;
        Self::from_params(params)
    }
}

/// Per frame: build `Y`, classify the patch around the frame's peak, and
/// report the patch centre frequency when it is judged vocal. Frames whose
/// `Y` column is entirely zero are unvoiced without consulting the model.
pub fn extract_melody_patchcnn(
    clip: &AudioClip,
    model: &PatchCnn,
    stft: &StftConfig,
    cfg: &CfpConfig,
) -> Result<PitchContour, ModelError> {
    let y = cfp::cfp_representation(clip, stft, cfg)?;
    let patches = cfp::select_patches(&y, None, 0.0)?;
    let f0 = patches
        .iter()
        .map(|p| {
            if y.frame(p.center_frame).iter().all(|&v| v == 0.0) {
                return Ok(0.0);
            }
            let prob = model.predict(p)?;
            Ok(if model.is_vocal(prob) { p.center_hz } else { 0.0 })
        })
        .collect::<Result<Vec<f64>, ModelError>>()?;
    let contour = PitchContour::new(f0, y.hop_seconds(), y.start_seconds());
    Ok(contour.map_err(|e| ModelError::InvalidConfig(e.to_string()))?)
}

/// Shape of a [`FrameClassifier`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameClassifierConfig {
    pub context_frames: usize,
    pub input_bins: usize,
    pub conv_filters: usize,
    /// Frequency extent of each convolution kernel; the time extent always
    /// spans the whole context.
    pub conv_width: usize,
    pub hidden: usize,
    pub num_classes: usize,
}

impl Default for FrameClassifierConfig {
    fn default() -> Self {
        Self {
            context_frames: 31,
            input_bins: 513,
            conv_filters: 8,
            conv_width: 3,
            hidden: 64,
            num_classes: 442,
        }
    }
}

impl FrameClassifierConfig {
    fn flat_len(&self) -> usize {
        self.conv_filters * (self.input_bins + 1 - self.conv_width)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.context_frames == 0 || self.conv_filters == 0 || self.hidden == 0 {
            return Err(ModelError::InvalidConfig("frame classifier sizes must be positive".into()));
        }
        if self.conv_width == 0 || self.conv_width > self.input_bins {
            return Err(ModelError::InvalidConfig(format!(
                "conv width {} incompatible with {} bins",
                self.conv_width, self.input_bins
            )));
        }
        if self.num_classes < 2 {
            return Err(ModelError::InvalidConfig("need at least two classes".into()));
        }
        Ok(())
    }
}

/// Convolution across a context of spectrogram frames followed by two dense
/// layers, producing one logit per pitch class (class 0 = unvoiced).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameClassifier {
    network: Network,
    config: FrameClassifierConfig,
}

impl FrameClassifier {
    fn layers() -> Vec<Layer> {
        vec![
            Layer::conv2d("conv"),
            Layer::Relu,
            Layer::Flatten,
            Layer::dense("fc1"),
            Layer::Relu,
            Layer::dense("fc2"),
        ]
    }

    pub fn new(config: FrameClassifierConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config;
        let receptive = c.context_frames * c.conv_width;
        let mut p = ModelParameters::new();
        p.insert(
            "conv.kernels",
            glorot_uniform(&[c.conv_filters, 1, c.context_frames, c.conv_width], receptive, c.conv_filters * receptive, &mut rng),
        );
        p.insert("conv.bias", Tensor::zeros(&[c.conv_filters]));
        p.insert("fc1.weights", glorot_uniform(&[c.hidden, c.flat_len()], c.flat_len(), c.hidden, &mut rng));
        p.insert("fc1.bias", Tensor::zeros(&[c.hidden]));
        p.insert("fc2.weights", glorot_uniform(&[c.num_classes, c.hidden], c.hidden, c.num_classes, &mut rng));
        p.insert("fc2.bias", Tensor::zeros(&[c.num_classes]));
        Ok(Self {
            network: Network::new(Self::layers(), p)?,
            config,
        })
    }

    /// Rebuilds a model from stored parameters, inferring its shape.
    pub fn from_params(params: ModelParameters) -> Result<Self, ModelError> {
        let bad = |what: &str| ModelError::InvalidConfig(format!("frame classifier: {what}"));
        let (filters, ctx, width) = match *param_shape(&params, "conv.kernels")? {
            [f, 1, t, w] => (f, t, w),
            _ => return Err(bad("conv kernels must be [F, 1, T, W]")),
        };
        let (hidden, flat) = match *param_shape(&params, "fc1.weights")? {
            [h, n] => (h, n),
            _ => return Err(bad("fc1 weights must be 2-D")),
        };
        let classes = match *param_shape(&params, "fc2.weights")? {
            [k, h] if h == hidden => k,
            _ => return Err(bad("fc2 weights do not match fc1")),
        };
        if filters == 0 || flat % filters != 0 {
            return Err(bad("fc1 width is not a multiple of the filter count"));
        }
        let config = FrameClassifierConfig {
            context_frames: ctx,
            input_bins: flat / filters + width - 1,
            conv_filters: filters,
            conv_width: width,
            hidden,
            num_classes: classes,
        };
        config.validate()?;
        let network = Network::new(Self::layers(), params)?;
        let out = network.forward(&Tensor::zeros(&[1, ctx, config.input_bins]))?;
        if out.len() != classes {
            return Err(bad("output width mismatch"));
        }
        Ok(Self { network, config })
    }

    pub fn config(&self) -> &FrameClassifierConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    /// Logits for a context window shaped `[context_frames, input_bins]` or
    /// `[1, context_frames, input_bins]`.
    pub fn predict_logits(&self, window: &Tensor) -> Result<Tensor, ModelError> {
        let c = &self.config;
        let (frames, bins) = match *window.shape() {
            [t, b] | [1, t, b] => (t, b),
            _ => return Err(ModelError::Nn(crate::neural::NnError::ShapeMismatch {
                context: "frame classifier window".into(),
                expected: vec![1, c.context_frames, c.input_bins],
                found: window.shape().to_vec(),
            })),
        };
        if frames != c.context_frames {
            return Err(ModelError::WrongFrameCount {
                expected: c.context_frames,
                found: frames,
            });
        }
        let x = window.clone().reshape(vec![1, frames, bins])?;
        Ok(self.network.forward(&x)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(save_checkpoint(path, FRAME_CLASSIFIER_KIND, self.network.params())?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (kind, params) = load_checkpoint(path)?;
        expect_kind(FRAME_CLASSIFIER_KIND, &kind)?;
        Self::from_params(params)
    }
}

/// Log-magnitude STFT used as frame-classifier input.
pub fn frame_features(clip: &AudioClip, stft: &StftConfig) -> Result<TimeFrequencyMap, ModelError> {
    Ok(dsp::stft_magnitude(clip, stft, SpectrumScale::LogMagnitude)?)
}

/// The `context`-frame window centred on `frame`, shaped `[1, context, bins]`.
/// Frames beyond either edge repeat the first or last frame. The window is
/// scaled so its peak is 1.
pub fn context_window(features: &TimeFrequencyMap, frame: usize, context: usize) -> Result<Tensor, ModelError> {
    let n = features.num_frames();
    if n == 0 || frame >= n {
        return Err(ModelError::InvalidConfig(format!("frame {frame} outside {n} frames")));
    }
    let half = (context / 2) as isize;
    let bins = features.num_bins();
    let mut data = Vec::with_capacity(context * bins);
    for k in 0..context as isize {
        let idx = (frame as isize + k - half).clamp(0, n as isize - 1) as usize;
        data.extend_from_slice(features.frame(idx));
    }
    normalise_peak(&mut data);
    Ok(Tensor::new(vec![1, context, bins], data)?)
}

/// Decodes each frame as `label_to_hz(argmax logits)`.
pub fn extract_melody_frame_classifier(
    clip: &AudioClip,
    model: &FrameClassifier,
    stft: &StftConfig,
    q: &QuantizerConfig,
) -> Result<PitchContour, ModelError> {
    q.validate()?;
    if q.num_classes() != model.config().num_classes {
        return Err(ModelError::InvalidConfig(format!(
            "quantizer has {} classes, model has {}",
            q.num_classes(),
            model.config().num_classes
        )));
    }
    let features = frame_features(clip, stft)?;
    if features.num_bins() != model.config().input_bins {
        return Err(ModelError::InvalidConfig(format!(
            "STFT gives {} bins, model expects {}",
            features.num_bins(),
            model.config().input_bins
        )));
    }
    let f0 = (0..features.num_frames())
        .map(|n| {
            let w = context_window(&features, n, model.config().context_frames)?;
            label_to_hz(model.predict_logits(&w)?.argmax(), q)
        })
        .collect::<Result<Vec<f64>, ModelError>>()?;
    PitchContour::new(f0, features.hop_seconds(), features.start_seconds())
        .map_err(|e| ModelError::InvalidConfig(e.to_string()))
}

/// Labelled patches of one clip for patch-CNN training: every vocal patch
/// and a seeded `nonvocal_rate` fraction of the others. Class 1 is vocal.
pub fn patch_training_examples(
    clip: &AudioClip,
    truth: &PitchContour,
    stft: &StftConfig,
    cfg: &CfpConfig,
    tolerance_cents: f64,
    nonvocal_rate: f64,
    seed: u64,
) -> Result<Vec<Example>, ModelError> {
    let y = cfp::cfp_representation(clip, stft, cfg)?;
    let patches = cfp::select_patches(&y, Some(truth), tolerance_cents)?;
    let kept = cfp::subsample_nonvocal(&patches, nonvocal_rate, seed)?;
    kept.iter()
        .map(|p| {
            Ok(Example {
                input: PatchCnn::input(p)?,
                label: usize::from(p.label == PatchLabel::Vocal),
            })
        })
        .collect()
}

/// One example per STFT frame, labelled with the quantized reference pitch
/// at the frame time.
pub fn frame_training_examples(
    clip: &AudioClip,
    truth: &PitchContour,
    stft: &StftConfig,
    q: &QuantizerConfig,
    context_frames: usize,
) -> Result<Vec<Example>, ModelError> {
    let features = frame_features(clip, stft)?;
    (0..features.num_frames())
        .map(|n| {
            Ok(Example {
                input: context_window(&features, n, context_frames)?,
                label: hz_to_label(truth.f0_at_time(features.frame_time(n)), q)?,
            })
        })
        .collect()
}

/// Either kind of model, as read from a checkpoint.
#[derive(Debug, Clone)]
pub enum AnyModel {
    PatchCnn(PatchCnn),
    FrameClassifier(FrameClassifier),
}

impl AnyModel {
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (kind, params) = load_checkpoint(path)?;
        match kind.as_str() {
            PATCH_CNN_KIND => Ok(Self::PatchCnn(PatchCnn::from_params(params)?)),
            FRAME_CLASSIFIER_KIND => Ok(Self::FrameClassifier(FrameClassifier::from_params(params)?)),
            other => Err(ModelError::WrongKind {
                expected: format!("{PATCH_CNN_KIND} or {FRAME_CLASSIFIER_KIND}"),
                found: other.into(),
            }),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::PatchCnn(_) => PATCH_CNN_KIND,
            Self::FrameClassifier(_) => FRAME_CLASSIFIER_KIND,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn cents(a: f64, b: f64) -> f64 {
        1200.0 * (a / b).log2()
    }

    #[test]
    fn quantizer_examples() {
        let q = QuantizerConfig::default();
        assert_eq!(hz_to_label(0.0, &q).unwrap(), 0);
        assert_eq!(hz_to_label(q.f_min, &q).unwrap(), 1);
        assert_eq!(hz_to_label(2.0 * q.f_min, &q).unwrap(), 97);
        assert_eq!(hz_to_label(440.0, &q).unwrap(), 249);
        assert_eq!(hz_to_label(10.0, &q).unwrap(), 1);
        assert_eq!(hz_to_label(5000.0, &q).unwrap(), 441);
        assert!(hz_to_label(-1.0, &q).is_err());
        assert!(hz_to_label(f64::NAN, &q).is_err());
        assert_eq!(label_to_hz(0, &q).unwrap(), 0.0);
        assert_eq!(label_to_hz(1, &q).unwrap(), q.f_min);
        assert!(label_to_hz(442, &q).is_err());
        assert_eq!(q.num_classes(), 442);
        assert!((q.f_max() - 1760.0).abs() < 1.0);
    }

    #[test]
    fn labels_round_trip_through_frequencies() {
        let q = QuantizerConfig::default();
        for l in 0..q.num_classes() {
            assert_eq!(hz_to_label(label_to_hz(l, &q).unwrap(), &q).unwrap(), l);
        }
    }

    proptest! {
        #[test]
        fn round_trip_within_half_bin(u in 0.0f64..1.0) {
            let q = QuantizerConfig::default();
            let f = q.f_min * 2f64.powf(u * 440.0 / 96.0);
            let back = label_to_hz(hz_to_label(f, &q).unwrap(), &q).unwrap();
            prop_assert!(cents(back, f).abs() <= 6.25 + 1e-9);
        }

        #[test]
        fn monotone_and_step_of_one(u in 0.01f64..0.99, v in 0.0f64..1.0) {
            let q = QuantizerConfig::default();
            let f = q.f_min * 2f64.powf(u * 430.0 / 96.0);
            let g = q.f_min * 2f64.powf(v * 440.0 / 96.0);
            let (lf, lg) = (hz_to_label(f, &q).unwrap(), hz_to_label(g, &q).unwrap());
            prop_assert_eq!(f <= g, lf <= lg || f == g);
            let up = hz_to_label(f * 2f64.powf(1.0 / 96.0), &q).unwrap();
            prop_assert_eq!(up, lf + 1);
        }
    }

    fn random_patch(seed: u64) -> Patch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Patch {
            values: (0..PATCH_SIZE * PATCH_SIZE).map(|_| rng.random::<f64>()).collect(),
            center_bin: 12,
            center_frame: 0,
            center_hz: 200.0,
            label: PatchLabel::Unknown,
        }
    }

    #[test]
    fn patch_cnn_probabilities() {
        let m = PatchCnn::new(1);
        assert_eq!(m.network().params().num_scalars(), 8 * 25 + 8 + 16 * 72 + 16 + 5776 * 128 + 128 + 128 * 64 + 64 + 64 * 2 + 2);
        for s in 0..10 {
            let x = PatchCnn::input(&random_patch(s)).unwrap();
            let [a, b] = m.probabilities(&x).unwrap();
            assert!((a + b - 1.0).abs() < 1e-9);
        }
        let mut zero = random_patch(0);
        zero.values.fill(0.0);
        let p = m.predict(&zero).unwrap();
        assert!(p.is_finite() && p > 0.0 && p < 1.0);
        assert!(!m.is_vocal(0.5));
        assert!(m.is_vocal(0.5000001));
    }

    #[test]
    fn patch_input_is_peak_normalised() {
        let mut p = random_patch(3);
        p.values.iter_mut().for_each(|v| *v *= 40.0);
        let x = PatchCnn::input(&p).unwrap();
        let peak = x.data().iter().fold(0.0f64, |m, v| m.max(*v));
        assert!((peak - 1.0).abs() < 1e-15);
    }

    #[test]
    fn patch_cnn_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.melo");
        let m = PatchCnn::new(7);
        m.save(&path).unwrap();
        let back = PatchCnn::load(&path).unwrap();
        assert_eq!(back.network().params(), m.network().params());
        assert!(matches!(FrameClassifier::load(&path), Err(ModelError::WrongKind { .. })));
        assert_eq!(AnyModel::load(&path).unwrap().kind(), PATCH_CNN_KIND);
    }

    #[test]
    fn silence_extracts_unvoiced() {
        let clip = AudioClip::new(vec![0.0; 8000], 8000).unwrap();
        let m = PatchCnn::new(0);
        let c = extract_melody_patchcnn(&clip, &m, &CfpConfig::analysis_stft(), &CfpConfig::default()).unwrap();
        assert_eq!(c.len(), CfpConfig::analysis_stft().num_frames(8000));
        assert_eq!(c.voiced_frames(), 0);
        let short = AudioClip::new(vec![0.0; 100], 8000).unwrap();
        assert!(extract_melody_patchcnn(&short, &m, &CfpConfig::analysis_stft(), &CfpConfig::default()).is_err());
    }

    fn small_config() -> FrameClassifierConfig {
        FrameClassifierConfig {
            context_frames: 5,
            input_bins: 20,
            conv_filters: 2,
            conv_width: 3,
            hidden: 6,
            num_classes: 442,
        }
    }

    #[test]
    fn frame_classifier_contract() {
        let m = FrameClassifier::new(small_config(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = Tensor::new(vec![5, 20], (0..100).map(|_| rng.random::<f64>()).collect()).unwrap();
        let logits = m.predict_logits(&w).unwrap();
        assert_eq!(logits.len(), 442);
        assert!(logits.data().iter().all(|v| v.is_finite()));
        let c = Tensor::new(vec![5, 20], vec![0.3; 100]).unwrap();
        assert_eq!(m.predict_logits(&c).unwrap(), m.predict_logits(&c).unwrap());
        assert!(matches!(
            m.predict_logits(&Tensor::zeros(&[4, 20])),
            Err(ModelError::WrongFrameCount { expected: 5, found: 4 })
        ));
        let default = FrameClassifier::new(FrameClassifierConfig::default(), 0).unwrap();
        assert_eq!(default.config().num_classes, 442);
        assert_eq!(default.config().context_frames, 31);
    }

    #[test]
    fn frame_classifier_shape_inferred_from_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.melo");
        let m = FrameClassifier::new(small_config(), 4).unwrap();
        m.save(&path).unwrap();
        let back = FrameClassifier::load(&path).unwrap();
        assert_eq!(back.config(), &small_config());
        assert_eq!(back, m);
    }

    #[test]
    fn context_window_replicates_edges() {
        let frames: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 + 1.0; 3]).collect();
        let map = TimeFrequencyMap::from_frames(
            frames,
            dsp::AxisKind::LinearFrequency,
            vec![0.0, 1.0, 2.0],
            0.01,
            0.0,
            8000.0,
        )
        .unwrap();
        let w = context_window(&map, 0, 5).unwrap();
        assert_eq!(w.shape(), &[1, 5, 3]);
        let rows: Vec<f64> = w.data().chunks(3).map(|r| r[0]).collect();
        assert_eq!(rows, vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        let w = context_window(&map, 3, 5).unwrap();
        let rows: Vec<f64> = w.data().chunks(3).map(|r| r[0]).collect();
        assert_eq!(rows, vec![0.5, 0.75, 1.0, 1.0, 1.0]);
        assert!(context_window(&map, 4, 5).is_err());
    }

    #[test]
    fn frame_classifier_extraction_shape() {
        let m = FrameClassifier::new(FrameClassifierConfig::default(), 0).unwrap();
        let clip = AudioClip::new(vec![0.0; 4000], 8000).unwrap();
        let stft = StftConfig::default();
        let c = extract_melody_frame_classifier(&clip, &m, &stft, &QuantizerConfig::default()).unwrap();
        assert_eq!(c.len(), stft.num_frames(4000));
        assert!((c.start_seconds() - 0.064).abs() < 1e-12);
    }
}
