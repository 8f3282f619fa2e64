//! ROC/AUC, confusion matrices, the repetition-wise k-fold protocol and the
//! experiment runner tying extractors and open-set detection together.

mod confusion;
mod folds;
mod report;
mod roc;

pub use confusion::{confusion, ConfusionMatrix, TrueClass};
pub use folds::{kfold_by_repetition, split_repetitions, FoldSplit};
pub use report::{render_roc_svg, write_report_dir, REPORT_FILES};
pub use roc::{auc, roc_curve, roc_curve_correct_label, RocCurve, RocPoint};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::extractors::{CpnArchitecture, CpnModel, EpochStats, ExtractorModel, LdaModel, TrainConfig};
use crate::openset::{acceptance_rate, DetectionOutcome, Detector};
use crate::rng::Rng;
use crate::signal::{recording_feature_maps, FeatureMap, WindowConfig};
use crate::spdmetric::MetricKind;
use crate::synthdata::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    CpnSled,
    CpnEd,
    LdaSled,
    LdaEd,
    LdaMd,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::CpnSled, Method::CpnEd, Method::LdaSled, Method::LdaEd, Method::LdaMd];

    pub fn name(self) -> &'static str {
        match self {
            Method::CpnSled => "cpn-sled",
            Method::CpnEd => "cpn-ed",
            Method::LdaSled => "lda-sled",
            Method::LdaEd => "lda-ed",
            Method::LdaMd => "lda-md",
        }
    }

    pub fn metric(self) -> MetricKind {
        match self {
            Method::CpnSled | Method::LdaSled => MetricKind::Sled,
            Method::CpnEd | Method::LdaEd => MetricKind::Ed,
            Method::LdaMd => MetricKind::Md,
        }
    }

    pub fn is_cpn(self) -> bool {
        matches!(self, Method::CpnSled | Method::CpnEd)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub tpr_goal: f64,
    /// Seeds the fold split and the calibration hold-out.
    pub seed: u64,
    /// Share of each training fold's target repetitions held out to calibrate T.
    pub calibration_fraction: f64,
    pub window: WindowConfig,
    pub train: TrainConfig,
    pub arch: CpnArchitecture,
}

impl ExperimentConfig {
    pub fn for_method(method: Method) -> Self {
        Self {
            folds: 5,
            tpr_goal: 0.9,
            seed: 0,
            calibration_fraction: 0.2,
            window: WindowConfig::default(),
            train: TrainConfig::for_metric(method.metric()),
            arch: CpnArchitecture::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tpr_goal > 0.0 && self.tpr_goal < 1.0) {
            return Err(Error::InvalidConfig(format!("tpr goal must be in (0, 1), got {}", self.tpr_goal)));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(Error::InvalidConfig("calibration fraction must be in (0, 1)".into()));
        }
        self.window.validate()?;
        self.train.validate()?;
        self.arch.validate()
    }
}

/// A trained extractor plus its training summary.
#[derive(Debug, Clone)]
pub struct TrainedExtractor {
    pub model: ExtractorModel,
    /// Per-epoch loss and accuracy (CPN only).
    pub history: Vec<EpochStats>,
    /// Nearest-prototype accuracy on the training maps.
    pub accuracy: f64,
}

/// Fits the extractor of `method` on labelled target maps.
pub fn train_extractor(
    method: Method,
    maps: &[FeatureMap],
    labels: &[usize],
    classes: usize,
    train: &TrainConfig,
    arch: CpnArchitecture,
) -> Result<TrainedExtractor> {
    if maps.is_empty() {
        return Err(Error::EmptyInput("training maps"));
    }
    if method.is_cpn() {
        let out = CpnModel::train_on_maps(maps, labels, classes, method.metric(), arch, train)?;
        Ok(TrainedExtractor { model: ExtractorModel::Cpn(out.model), history: out.history, accuracy: out.final_accuracy })
    } else {
        let flat: Vec<Vec<f64>> = maps.iter().map(FeatureMap::flatten).collect();
        let model = ExtractorModel::Lda(LdaModel::fit(&flat, labels, classes)?);
        let det = Detector::new(model, method.metric(), 0.0)?;
        let feats = det.extractor.extract_all(maps);
        let mut correct = 0;
        for (f, &y) in feats.iter().zip(labels) {
            if det.nearest(f)?.0 == y {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / maps.len() as f64;
        Ok(TrainedExtractor { model: det.extractor, history: Vec::new(), accuracy })
    }
}

/// Feature maps of every recording, in recording order.
pub fn dataset_feature_maps(dataset: &Dataset, window: &WindowConfig) -> Result<Vec<Vec<FeatureMap>>> {
    dataset.recordings.par_iter().map(|r| recording_feature_maps(r, window)).collect()
}

/// Target-motion maps (optionally restricted to some repetitions) with class
/// labels given by the position of the motion in [`Dataset::target_ids`].
pub fn labelled_target_maps(
    dataset: &Dataset,
    maps: &[Vec<FeatureMap>],
    reps: Option<&[u32]>,
) -> (Vec<FeatureMap>, Vec<usize>) {
    let targets = dataset.target_ids();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (rec, rec_maps) in dataset.recordings.iter().zip(maps) {
        let Some(label) = targets.iter().position(|&id| id == rec.motion_id) else { continue };
        if reps.is_some_and(|r| !r.contains(&rec.repetition)) {
            continue;
        }
        xs.extend(rec_maps.iter().cloned());
        ys.extend(std::iter::repeat_n(label, rec_maps.len()));
    }
    (xs, ys)
}

#[derive(Debug, Clone)]
pub struct FoldReport {
    pub fold: usize,
    pub test_repetitions: Vec<u32>,
    pub calibration_repetitions: Vec<u32>,
    pub auc: f64,
    pub auc_correct_label: f64,
    /// Closed-set nearest-prototype accuracy on test target windows.
    pub target_accuracy: f64,
    pub threshold: f64,
    /// Fraction of test target windows accepted at `threshold`.
    pub tpr_at_threshold: f64,
    /// Fraction of test target windows accepted with the correct label.
    pub tpr_correct_at_threshold: f64,
    /// Fraction of novel windows rejected at `threshold`.
    pub novel_detection: f64,
    pub per_novel_detection: Vec<f64>,
    pub roc: RocCurve,
    pub target_distances: Vec<f64>,
    pub novel_distances: Vec<f64>,
    pub confusion: ConfusionMatrix,
    pub train_history: Vec<EpochStats>,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub method: Method,
    pub tpr_goal: f64,
    pub target_names: Vec<String>,
    pub novel_names: Vec<String>,
    pub folds: Vec<FoldReport>,
    pub auc: f64,
    pub auc_correct_label: f64,
    pub target_accuracy: f64,
    pub tpr_at_threshold: f64,
    pub novel_detection: f64,
    pub per_novel_detection: Vec<f64>,
    /// Counts summed over folds.
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    /// ROC over the distances of all folds together.
    pub fn pooled_roc(&self) -> Result<RocCurve> {
        let t: Vec<f64> = self.folds.iter().flat_map(|f| f.target_distances.iter().copied()).collect();
        let n: Vec<f64> = self.folds.iter().flat_map(|f| f.novel_distances.iter().copied()).collect();
        roc_curve(&t, &n)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Runs the k-fold open-set protocol for one method.
pub fn run_experiment(dataset: &Dataset, method: Method, cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let targets = dataset.target_ids();
    let novels = dataset.novel_ids();
    if targets.len() < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 target motions, found {}", targets.len())));
    }
    if novels.is_empty() {
        return Err(Error::InvalidConfig("need at least 1 novel motion".into()));
    }
    let split = kfold_by_repetition(dataset, cfg.folds, cfg.seed)?;
    let maps = dataset_feature_maps(dataset, &cfg.window)?;
    let folds: Vec<FoldReport> = (0..split.k())
        .into_par_iter()
        .map(|f| run_fold(dataset, &maps, &split, f, method, cfg))
        .collect::<Result<_>>()?;

    let mut confusion = ConfusionMatrix::new(targets.len(), novels.len());
    for f in &folds {
        confusion.merge(&f.confusion)?;
    }
    let name = |id: &u32| dataset.motion(*id).map_or_else(|| id.to_string(), |m| m.name.clone());
    Ok(EvalReport {
        method,
        tpr_goal: cfg.tpr_goal,
        target_names: targets.iter().map(name).collect(),
        novel_names: novels.iter().map(name).collect(),
        auc: mean(folds.iter().map(|f| f.auc)),
        auc_correct_label: mean(folds.iter().map(|f| f.auc_correct_label)),
        target_accuracy: mean(folds.iter().map(|f| f.target_accuracy)),
        tpr_at_threshold: mean(folds.iter().map(|f| f.tpr_at_threshold)),
        novel_detection: mean(folds.iter().map(|f| f.novel_detection)),
        per_novel_detection: (0..novels.len()).map(|c| mean(folds.iter().map(|f| f.per_novel_detection[c]))).collect(),
        confusion,
        folds,
    })
}

fn run_fold(
    dataset: &Dataset,
    maps: &[Vec<FeatureMap>],
    split: &FoldSplit,
    fold: usize,
    method: Method,
    cfg: &ExperimentConfig,
) -> Result<FoldReport> {
    let targets = dataset.target_ids();
    let novels = dataset.novel_ids();
    let mut train_reps = split.train(fold);
    let n_cal = ((cfg.calibration_fraction * train_reps.len() as f64).round() as usize).max(1);
    if n_cal >= train_reps.len() {
        return Err(Error::InvalidConfig("too few training repetitions to hold out a calibration set".into()));
    }
    Rng::new(cfg.seed.wrapping_add(fold as u64 + 1)).shuffle(&mut train_reps);
    let mut cal_reps = train_reps.split_off(train_reps.len() - n_cal);
    cal_reps.sort_unstable();
    train_reps.sort_unstable();

    let (fit_maps, fit_labels) = labelled_target_maps(dataset, maps, Some(&train_reps));
    let train_cfg = TrainConfig { seed: cfg.train.seed.wrapping_add(fold as u64), ..cfg.train.clone() };
    let trained = train_extractor(method, &fit_maps, &fit_labels, targets.len(), &train_cfg, cfg.arch)?;
    let mut det = Detector::new(trained.model, method.metric(), 0.0)?;
    let (cal_maps, _) = labelled_target_maps(dataset, maps, Some(&cal_reps));
    let threshold = det.calibrate(&cal_maps, cfg.tpr_goal)?;

    let (test_maps, test_labels) = labelled_target_maps(dataset, maps, Some(&split.test[fold]));
    let mut target_distances = Vec::with_capacity(test_maps.len());
    let mut correct = Vec::with_capacity(test_maps.len());
    let mut outcomes = Vec::new();
    let mut truths = Vec::new();
    for (f, &y) in det.extractor.extract_all(&test_maps).iter().zip(&test_labels) {
        let (label, d) = det.nearest(f)?;
        target_distances.push(d);
        correct.push(label == y);
        outcomes.push(DetectionOutcome::classify(label, d, threshold));
        truths.push(TrueClass::Target(y));
    }
    let mut novel_distances = Vec::new();
    let mut per_novel = vec![(0usize, 0usize); novels.len()];
    for (rec, rec_maps) in dataset.recordings.iter().zip(maps) {
        let Some(c) = novels.iter().position(|&id| id == rec.motion_id) else { continue };
        for f in det.extractor.extract_all(rec_maps) {
            let (label, d) = det.nearest(&f)?;
            novel_distances.push(d);
            let o = DetectionOutcome::classify(label, d, threshold);
            per_novel[c].0 += usize::from(o.is_novel());
            per_novel[c].1 += 1;
            outcomes.push(o);
            truths.push(TrueClass::Novel(c));
        }
    }

    let roc = roc_curve(&target_distances, &novel_distances)?;
    let n_test = target_distances.len() as f64;
    let accepted_correct = target_distances.iter().zip(&correct).filter(|(&d, &ok)| ok && d <= threshold).count();
    Ok(FoldReport {
        fold,
        test_repetitions: split.test[fold].clone(),
        calibration_repetitions: cal_reps,
        auc: auc(&roc),
        auc_correct_label: auc(&roc_curve_correct_label(&target_distances, &correct, &novel_distances)?),
        target_accuracy: correct.iter().filter(|&&c| c).count() as f64 / n_test,
        threshold,
        tpr_at_threshold: acceptance_rate(&target_distances, threshold),
        tpr_correct_at_threshold: accepted_correct as f64 / n_test,
        novel_detection: 1.0 - acceptance_rate(&novel_distances, threshold),
        per_novel_detection: per_novel.iter().map(|&(r, n)| if n == 0 { 0.0 } else { r as f64 / n as f64 }).collect(),
        roc,
        confusion: confusion(&outcomes, &truths, targets.len(), novels.len())?,
        target_distances,
        novel_distances,
        train_history: trained.history,
        train_accuracy: trained.accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, SynthConfig};

    fn small_dataset() -> Dataset {
        generate(&SynthConfig { n_target: 3, n_novel: 2, reps: 5, trial_seconds: 0.8, seed: 7, ..Default::default() })
            .unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("cpn-md".parse::<Method>().is_err());
    }

    #[test]
    fn lda_report_fields_in_range() {
        let d = small_dataset();
        let r = run_experiment(&d, Method::LdaSled, &ExperimentConfig::for_method(Method::LdaSled)).unwrap();
        assert_eq!(r.folds.len(), 5);
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        assert!(unit(r.auc) && unit(r.auc_correct_label) && unit(r.target_accuracy));
        assert!(unit(r.novel_detection) && unit(r.tpr_at_threshold));
        assert!(r.per_novel_detection.iter().all(|&x| unit(x)));
        assert!(r.auc_correct_label <= r.auc + 1e-12);
        for f in &r.folds {
            assert_eq!(f.test_repetitions.len(), 1);
            assert_eq!(f.calibration_repetitions.len(), 1);
            assert!(f.calibration_repetitions.iter().all(|c| !f.test_repetitions.contains(c)));
            // detection accuracy at T is one minus the per-class false-positive rate
            let novels = d.novel_ids();
            let per_class_windows = f.novel_distances.len() / novels.len();
            for (c, chunk) in f.novel_distances.chunks(per_class_windows).enumerate() {
                let fpr = acceptance_rate(chunk, f.threshold);
                assert!((f.per_novel_detection[c] - (1.0 - fpr)).abs() < 1e-12);
            }
            let total: usize = f.confusion.counts.iter().flatten().sum();
            assert_eq!(total, f.target_distances.len() + f.novel_distances.len());
        }
    }

    #[test]
    fn novel_motions_never_trained() {
        let d = small_dataset();
        let maps = dataset_feature_maps(&d, &WindowConfig::default()).unwrap();
        let (xs, ys) = labelled_target_maps(&d, &maps, None);
        let novels = d.novel_ids();
        assert!(xs.iter().all(|m| !novels.contains(&m.source.motion_id)));
        assert!(ys.iter().all(|&y| y < 3));
    }

    #[test]
    fn too_many_folds_rejected() {
        let d = small_dataset();
        let cfg = ExperimentConfig { folds: 20, ..ExperimentConfig::for_method(Method::LdaEd) };
        assert!(run_experiment(&d, Method::LdaEd, &cfg).is_err());
    }

    #[test]
    fn deterministic_report() {
        let d = small_dataset();
        let cfg = ExperimentConfig::for_method(Method::LdaEd);
        let a = run_experiment(&d, Method::LdaEd, &cfg).unwrap();
        let b = run_experiment(&d, Method::LdaEd, &cfg).unwrap();
        assert_eq!(a.auc, b.auc);
        assert_eq!(a.confusion, b.confusion);
        assert_eq!(a.folds[3].target_distances, b.folds[3].target_distances);
    }
}
