use std::fs;
use std::path::{Path, PathBuf};

use melody_core::audio::{self, AudioClip, DatasetManifest, ManifestEntry, PitchContour, SplitTag};
use melody_core::cfp::{self, PatchLabel};
use melody_core::dsp;
use melody_core::eval::{self, ClipMetrics};
use melody_core::models::{
    self, AnyModel, FrameClassifier, PatchCnn, FRAME_CLASSIFIER_KIND, PATCH_CNN_KIND,
};
use melody_core::neural::{Network, Tensor};
use melody_core::training::{self, Example, LossReport};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    /// Autocorrelation pitch tracker.
    #[value(name = "sp")]
    Sp,
    #[value(name = "patch_cnn")]
    PatchCnn,
    #[value(name = "frame_classifier")]
    FrameClassifier,
}

impl Method {
    pub fn needs_checkpoint(self) -> bool {
        self != Method::Sp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelKind {
    #[value(name = "patch_cnn")]
    PatchCnn,
    #[value(name = "frame_classifier")]
    FrameClassifier,
}

impl ModelKind {
    fn tag(self) -> &'static str {
        match self {
            ModelKind::PatchCnn => PATCH_CNN_KIND,
            ModelKind::FrameClassifier => FRAME_CLASSIFIER_KIND,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Teacher,
    Student,
}

fn load_clip(path: &Path) -> Result<AudioClip, CliError> {
    let clip = audio::load_wav(path)?;
    Ok(audio::resample_to_8k(&clip)?)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// A ready-to-run extractor.
enum Extractor {
    Sp,
    PatchCnn(PatchCnn),
    FrameClassifier(FrameClassifier),
}

impl Extractor {
    fn new(method: Method, checkpoint: Option<&Path>) -> Result<Self, CliError> {
        let loaded = match (method, checkpoint) {
            (Method::Sp, _) => return Ok(Extractor::Sp),
            (_, None) => {
                return Err(CliError::Usage(
                    "--checkpoint is required for neural methods".into(),
                ))
            }
            (_, Some(p)) => AnyModel::load(p)?,
        };
        match (method, loaded) {
            (Method::PatchCnn, AnyModel::PatchCnn(m)) => Ok(Extractor::PatchCnn(m)),
            (Method::FrameClassifier, AnyModel::FrameClassifier(m)) => Ok(Extractor::FrameClassifier(m)),
            (_, other) => Err(CliError::Model(format!(
                "checkpoint holds a {} model, which cannot run this method",
                other.kind()
            ))),
        }
    }

    fn run(&self, clip: &AudioClip, cfg: &RunConfig) -> Result<PitchContour, CliError> {
        Ok(match self {
            Extractor::Sp => dsp::autocorr_pitch(clip, &cfg.stft(), &cfg.autocorr())?,
            Extractor::PatchCnn(m) => models::extract_melody_patchcnn(clip, m, &cfg.cfp_stft(), &cfg.cfp())?,
            Extractor::FrameClassifier(m) => {
                models::extract_melody_frame_classifier(clip, m, &cfg.stft(), &cfg.quantizer())?
            }
        })
    }
}

pub fn extract(
    cfg: &RunConfig,
    method: Method,
    checkpoint: Option<&Path>,
    audio_path: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let extractor = Extractor::new(method, checkpoint)?;
    let clip = load_clip(audio_path)?;
    let contour = extractor.run(&clip, cfg)?;
    Ok(audio::write_contour_csv(&contour, out)?)
}

pub fn cfp_dump(cfg: &RunConfig, audio_path: &Path, out: &Path) -> Result<(), CliError> {
    let clip = load_clip(audio_path)?;
    let y = cfp::cfp_representation(&clip, &cfg.cfp_stft(), &cfg.cfp())?;
    Ok(cfp::write_cfp_csv(&y, out)?)
}

fn truth_for(entry: &ManifestEntry, cfg: &RunConfig) -> Result<Option<PitchContour>, CliError> {
    entry
        .label_path
        .as_deref()
        .map(|p| cfg.labels.load(p).map_err(CliError::from))
        .transpose()
}

fn split_entries(manifest: &DatasetManifest, tag: SplitTag, name: &str) -> Result<Vec<ManifestEntry>, CliError> {
    let entries: Vec<ManifestEntry> = manifest.split(tag).cloned().collect();
    if entries.is_empty() {
        return Err(CliError::Usage(format!("manifest has no {name} entries")));
    }
    Ok(entries)
}

fn supervised_examples(kind: ModelKind, entries: &[ManifestEntry], cfg: &RunConfig, seed: u64) -> Result<Vec<Example>, CliError> {
    let mut data = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        let truth = truth_for(entry, cfg)?.ok_or_else(|| {
            CliError::Usage(format!("labeled entry {} has no label file", entry.audio_path.display()))
        })?;
        let clip = load_clip(&entry.audio_path)?;
        let examples = match kind {
            ModelKind::PatchCnn => models::patch_training_examples(
                &clip,
                &truth,
                &cfg.cfp_stft(),
                &cfg.cfp(),
                cfg.cfp.patch_tolerance_cents,
                cfg.cfp.nonvocal_rate,
                seed.wrapping_add(i as u64),
            )?,
            ModelKind::FrameClassifier => models::frame_training_examples(
                &clip,
                &truth,
                &cfg.stft(),
                &cfg.quantizer(),
                cfg.frame_classifier.context_frames,
            )?,
        };
        data.extend(examples);
    }
    Ok(data)
}

/// Every network input of the unlabeled clips, with true labels when every
/// clip has a label file.
fn unlabeled_inputs(
    kind: ModelKind,
    entries: &[ManifestEntry],
    cfg: &RunConfig,
    context_frames: usize,
) -> Result<(Vec<Tensor>, Option<Vec<usize>>), CliError> {
    let mut inputs = Vec::new();
    let mut labels = Some(Vec::new());
    for entry in entries {
        let clip = load_clip(&entry.audio_path)?;
        let truth = truth_for(entry, cfg)?;
        match kind {
            ModelKind::PatchCnn => {
                let y = cfp::cfp_representation(&clip, &cfg.cfp_stft(), &cfg.cfp())?;
                let patches = cfp::select_patches(&y, truth.as_ref(), cfg.cfp.patch_tolerance_cents)?;
                for p in &patches {
                    inputs.push(PatchCnn::input(p)?);
                    if let (Some(l), Some(_)) = (labels.as_mut(), &truth) {
                        l.push(usize::from(p.label == PatchLabel::Vocal));
                    }
                }
            }
            ModelKind::FrameClassifier => {
                let features = models::frame_features(&clip, &cfg.stft())?;
                let q = cfg.quantizer();
                for n in 0..features.num_frames() {
                    inputs.push(models::context_window(&features, n, context_frames)?);
                    if let (Some(l), Some(t)) = (labels.as_mut(), &truth) {
                        l.push(models::hz_to_label(t.f0_at_time(features.frame_time(n)), &q)?);
                    }
                }
            }
        }
        if truth.is_none() {
            labels = None;
        }
    }
    Ok((inputs, labels))
}

fn fresh_network(kind: ModelKind, cfg: &RunConfig, seed: u64) -> Result<Network, CliError> {
    Ok(match kind {
        ModelKind::PatchCnn => PatchCnn::new(seed).network().clone(),
        ModelKind::FrameClassifier => FrameClassifier::new(cfg.frame_classifier(), seed)?.network().clone(),
    })
}

fn save_network(kind: ModelKind, net: Network, out: &Path) -> Result<(), CliError> {
    let params = net.into_params();
    match kind {
        ModelKind::PatchCnn => PatchCnn::from_params(params)?.save(out)?,
        ModelKind::FrameClassifier => FrameClassifier::from_params(params)?.save(out)?,
    }
    Ok(())
}

pub struct TrainArgs<'a> {
    pub kind: ModelKind,
    pub mode: Mode,
    pub teacher: Option<&'a Path>,
    pub manifest: &'a Path,
    pub out: &'a Path,
    pub log: Option<PathBuf>,
}

pub fn train(cfg: &RunConfig, args: TrainArgs<'_>) -> Result<LossReport, CliError> {
    if args.mode == Mode::Student && args.teacher.is_none() {
        return Err(CliError::Usage("student mode requires --teacher".into()));
    }
    let manifest = DatasetManifest::load(args.manifest)?;
    let seed = cfg.train.seed;
    let report = match args.mode {
        Mode::Teacher => {
            let entries = split_entries(&manifest, SplitTag::Labeled, "labeled")?;
            let data = supervised_examples(args.kind, &entries, cfg, seed)?;
            let mut net = fresh_network(args.kind, cfg, seed)?;
            let report = training::train_supervised(&mut net, &data, &cfg.train())?;
            save_network(args.kind, net, args.out)?;
            report
        }
        Mode::Student => {
            let teacher_path = args.teacher.expect("checked above");
            let teacher = AnyModel::load(teacher_path)?;
            if teacher.kind() != args.kind.tag() {
                return Err(CliError::Model(format!(
                    "teacher is a {} model but --model is {}",
                    teacher.kind(),
                    args.kind.tag()
                )));
            }
            let (teacher_net, mut student, context) = match &teacher {
                AnyModel::PatchCnn(m) => (m.network(), PatchCnn::new(seed).network().clone(), 0),
                AnyModel::FrameClassifier(m) => (
                    m.network(),
                    FrameClassifier::new(*m.config(), seed)?.network().clone(),
                    m.config().context_frames,
                ),
            };
            let entries = split_entries(&manifest, SplitTag::Unlabeled, "unlabeled")?;
            let (inputs, true_labels) = unlabeled_inputs(args.kind, &entries, cfg, context)?;
            let pseudo = training::generate_pseudo_labels(teacher_net, &inputs, &teacher_path.display().to_string())?;
            let report = training::train_student(&mut student, &inputs, &pseudo, true_labels.as_deref(), &cfg.student())?;
            save_network(args.kind, student, args.out)?;
            report
        }
    };
    let log_path = args.log.unwrap_or_else(|| {
        let mut p = args.out.as_os_str().to_owned();
        p.push(".log");
        PathBuf::from(p)
    });
    write_text(&log_path, &report.to_log())?;
    Ok(report)
}

fn clip_id(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Writes the per-clip report and returns the stdout summary line.
pub fn evaluate(
    cfg: &RunConfig,
    method: Method,
    checkpoint: Option<&Path>,
    manifest: &Path,
    report: &Path,
) -> Result<String, CliError> {
    let extractor = Extractor::new(method, checkpoint)?;
    let manifest = DatasetManifest::load(manifest)?;
    let entries = split_entries(&manifest, SplitTag::Eval, "eval")?;
    if let Some(e) = entries.iter().find(|e| e.label_path.is_none()) {
        return Err(CliError::Usage(format!(
            "eval entry {} has no label file",
            e.audio_path.display()
        )));
    }
    let mut rows = Vec::with_capacity(entries.len());
    for entry in &entries {
        let truth = truth_for(entry, cfg)?.expect("checked above");
        let clip = load_clip(&entry.audio_path)?;
        let est = extractor.run(&clip, cfg)?;
        rows.push(ClipMetrics {
            clip_id: clip_id(&entry.audio_path),
            report: eval::evaluate(&est, &truth, cfg.eval.tolerance_cents)?,
        });
    }
    eval::write_report_csv(&rows, report)?;
    Ok(eval::format_summary(&eval::mean_report(&rows)?))
}
