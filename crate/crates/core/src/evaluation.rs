//! Evaluation protocol: stratified k-fold cross-validation repeated over
//! seeds, Top-K accuracy, per-class undersampling, random subsets and
//! cross-dataset transfer.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{svm_scores, svm_train, LinearSvmModel, SvmConfig};
use crate::error::{Error, Result};
use crate::modelio::Model;
use crate::neuralnet::{format_architecture, train, LayerSpec, Network, TrainConfig};
use crate::types::{Dataset, FunctionalGroup, RngSeed, Spectrum, N_CLASSES};

/// Fold id of every sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }
}

/// Per-class seeded shuffle, then round-robin over folds. The round-robin
/// cursor carries over between classes so fold sizes stay balanced too.
pub fn stratified_folds(d: &Dataset, n_folds: usize, seed: RngSeed) -> Result<FoldAssignment> {
    if n_folds < 2 {
        return Err(Error::InvalidConfig(format!("n_folds must be >= 2, got {n_folds}")));
    }
    let mut fold_of = vec![0; d.len()];
    let mut cursor = 0;
    for g in FunctionalGroup::ALL {
        let mut members: Vec<usize> = (0..d.len()).filter(|&i| d.samples()[i].label == g).collect();
        members.shuffle(&mut seed.derive(g.index() as u64).rng());
        for (j, &i) in members.iter().enumerate() {
            fold_of[i] = (cursor + j) % n_folds;
        }
        cursor = (cursor + members.len()) % n_folds;
    }
    Ok(FoldAssignment { n_folds, fold_of })
}

/// Position of `label` when classes are sorted by descending score, ties
/// broken by ascending class index. 0 = top.
pub fn rank_of(scores: &[f64], label: usize) -> usize {
    let target = scores[label];
    scores
        .iter()
        .enumerate()
        .filter(|&(c, &s)| s > target || (s == target && c < label))
        .count()
}

/// Class with the highest score, lowest index on ties.
pub fn argmax(scores: &[f64]) -> usize {
    (0..scores.len()).fold(0, |best, c| if scores[c] > scores[best] { c } else { best })
}

/// Percentage of samples whose true label is among the `k` top-ranked classes.
pub fn top_k_accuracy(scores: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64> {
    let n_classes = scores.first().map_or(N_CLASSES, Vec::len);
    if k == 0 || k > n_classes {
        return Err(Error::KOutOfRange { k, n_classes });
    }
    if scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} score rows for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut hits = 0usize;
    for (row, &label) in scores.iter().zip(labels) {
        if row.len() != n_classes || label >= n_classes {
            return Err(Error::LabelOutOfRange { label, n_classes });
        }
        if rank_of(row, label) < k {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / scores.len() as f64)
}

/// Keeps `min(per_class, count)` randomly chosen samples of every class,
/// in their original order.
pub fn undersample(d: &Dataset, per_class: usize, seed: RngSeed) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::InvalidConfig("per_class must be >= 1".into()));
    }
    let mut keep = Vec::new();
    for g in FunctionalGroup::ALL {
        let mut members: Vec<usize> = (0..d.len()).filter(|&i| d.samples()[i].label == g).collect();
        members.shuffle(&mut seed.derive(g.index() as u64).rng());
        members.truncate(per_class);
        keep.extend(members);
    }
    keep.sort_unstable();
    Ok(d.select(&keep))
}

/// `n` samples drawn uniformly without replacement, in original order.
pub fn random_subset(d: &Dataset, n: usize, seed: RngSeed) -> Result<Dataset> {
    if n > d.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot draw {n} samples from {}",
            d.len()
        )));
    }
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.shuffle(&mut seed.rng());
    idx.truncate(n);
    idx.sort_unstable();
    Ok(d.select(&idx))
}

/// A trained classifier: one score per class, higher is more likely.
pub trait Scorer: Send + Sync {
    fn score_batch(&self, spectra: &[&Spectrum]) -> Result<Vec<Vec<f64>>>;
}

impl Scorer for Network {
    fn score_batch(&self, spectra: &[&Spectrum]) -> Result<Vec<Vec<f64>>> {
        self.predict_proba_batch(spectra)
    }
}

impl Scorer for LinearSvmModel {
    fn score_batch(&self, spectra: &[&Spectrum]) -> Result<Vec<Vec<f64>>> {
        spectra.iter().map(|s| svm_scores(self, s)).collect()
    }
}

impl Scorer for Model {
    fn score_batch(&self, spectra: &[&Spectrum]) -> Result<Vec<Vec<f64>>> {
        match self {
            Model::Cnn(n) => n.score_batch(spectra),
            Model::Svm(m) => m.score_batch(spectra),
        }
    }
}

/// Something that can be trained on a dataset.
pub trait Learner: Sync {
    fn name(&self) -> String;
    fn fit(&self, train: &Dataset, seed: RngSeed) -> Result<Box<dyn Scorer>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnLearner {
    pub architecture: Vec<LayerSpec>,
    pub train: TrainConfig,
}

impl CnnLearner {
    /// Initializes from `seed.derive(0)` and trains with `seed.derive(1)`.
    pub fn fit_network(&self, data: &Dataset, seed: RngSeed) -> Result<Network> {
        let len = data.spectrum_len().ok_or(Error::EmptyDataset)?;
        let mut net = Network::new(len, N_CLASSES, &self.architecture, seed.derive(0))?;
        let cfg = TrainConfig {
            seed: seed.derive(1),
            ..self.train.clone()
        };
        train(&mut net, data, &cfg)?;
        Ok(net)
    }
}

impl Learner for CnnLearner {
    fn name(&self) -> String {
        "cnn".into()
    }

    fn fit(&self, train: &Dataset, seed: RngSeed) -> Result<Box<dyn Scorer>> {
        Ok(Box::new(self.fit_network(train, seed)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmLearner {
    pub config: SvmConfig,
}

impl Learner for SvmLearner {
    fn name(&self) -> String {
        "svm".into()
    }

    fn fit(&self, train: &Dataset, seed: RngSeed) -> Result<Box<dyn Scorer>> {
        let cfg = SvmConfig {
            seed,
            ..self.config.clone()
        };
        Ok(Box::new(svm_train(train, &cfg)?))
    }
}

/// Describes a learner for report snapshots.
pub fn describe_cnn(l: &CnnLearner) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("model.architecture".to_string(), format_architecture(&l.architecture)),
        ("train.epochs".to_string(), l.train.epochs.to_string()),
        ("train.batch_size".to_string(), l.train.batch_size.to_string()),
        ("train.learning_rate".to_string(), l.train.learning_rate.to_string()),
        ("train.optimizer".to_string(), serde_json::to_string(&l.train.optimizer).expect("serializable")),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub n_folds: usize,
    /// One repeat per seed.
    pub seeds: Vec<RngSeed>,
    /// Worker threads for fold-level parallelism; 0 or 1 runs sequentially.
    pub jobs: usize,
    /// Resolved run configuration, copied verbatim into the report.
    pub snapshot: BTreeMap<String, String>,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            n_folds: 10,
            seeds: (1..=10).map(RngSeed).collect(),
            jobs: 1,
            snapshot: BTreeMap::new(),
        }
    }
}

/// Per-repeat and pooled metrics plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub protocol: String,
    pub model: String,
    pub dataset_tag: String,
    pub n_samples: usize,
    pub n_folds: usize,
    pub seeds: Vec<u64>,
    /// Top-1 accuracy (percent) of each repeat, pooled over its folds.
    pub per_repeat_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Top-K accuracy (percent) for K = 1..=14, pooled over all repeats.
    pub top_k_accuracies: BTreeMap<usize, f64>,
    pub class_names: Vec<String>,
    /// Rows are true classes, columns predicted classes, pooled over repeats.
    pub confusion_matrix: Vec<Vec<u64>>,
    pub config_snapshot: BTreeMap<String, String>,
}

/// Accumulates predictions into report metrics.
#[derive(Default)]
struct Tally {
    scores: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl Tally {
    fn add(&mut self, scores: Vec<Vec<f64>>, labels: Vec<usize>) {
        self.scores.extend(scores);
        self.labels.extend(labels);
    }

    fn top1(&self) -> f64 {
        let hits = self
            .scores
            .iter()
            .zip(&self.labels)
            .filter(|(s, &l)| argmax(s) == l)
            .count();
        100.0 * hits as f64 / self.labels.len().max(1) as f64
    }

    fn confusion(&self) -> Vec<Vec<u64>> {
        let mut m = vec![vec![0u64; N_CLASSES]; N_CLASSES];
        for (s, &l) in self.scores.iter().zip(&self.labels) {
            m[l][argmax(s)] += 1;
        }
        m
    }

    fn top_k(&self) -> Result<BTreeMap<usize, f64>> {
        (1..=N_CLASSES)
            .map(|k| Ok((k, top_k_accuracy(&self.scores, &self.labels, k)?)))
            .collect()
    }
}

/// Score rows with the matching true labels.
type Scored = (Vec<Vec<f64>>, Vec<usize>);

fn score_dataset(scorer: &dyn Scorer, d: &Dataset) -> Result<Scored> {
    let spectra: Vec<&Spectrum> = d.samples().iter().map(|s| &s.spectrum).collect();
    let scores = scorer.score_batch(&spectra)?;
    if let Some(row) = scores.iter().find(|r| r.len() != N_CLASSES) {
        return Err(Error::ShapeMismatch(format!(
            "scorer returned {} scores, expected {N_CLASSES}",
            row.len()
        )));
    }
    Ok((scores, d.samples().iter().map(|s| s.label.index()).collect()))
}

fn run_parallel<T: Send>(jobs: usize, tasks: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if jobs <= 1 {
        return (0..tasks).map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| (0..tasks).into_par_iter().map(&f).collect()),
        Err(_) => (0..tasks).map(f).collect(),
    }
}

/// Repeated stratified k-fold cross-validation. Each repeat re-draws the
/// fold split (from `seed.derive(0)`) and the model seeds (`seed.derive(1 + fold)`).
pub fn cross_validate(d: &Dataset, learner: &dyn Learner, cv: &CvConfig) -> Result<EvaluationReport> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cv.seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed (repeat) is required".into()));
    }
    let mut pooled = Tally::default();
    let mut per_repeat = Vec::with_capacity(cv.seeds.len());
    for (repeat, &seed) in cv.seeds.iter().enumerate() {
        let folds = stratified_folds(d, cv.n_folds, seed.derive(0))?;
        let results = run_parallel(cv.jobs, cv.n_folds, |fold| -> Result<Option<Scored>> {
            let test_idx = folds.test_indices(fold);
            if test_idx.is_empty() {
                return Ok(None);
            }
            let wrap = |e: Error| Error::Fold {
                repeat,
                fold,
                source: Box::new(e),
            };
            let model = learner
                .fit(&d.select(&folds.train_indices(fold)), seed.derive(1 + fold as u64))
                .map_err(wrap)?;
            score_dataset(model.as_ref(), &d.select(&test_idx)).map(Some).map_err(wrap)
        });
        let mut tally = Tally::default();
        for r in results {
            if let Some((scores, labels)) = r? {
                tally.add(scores, labels);
            }
        }
        per_repeat.push(tally.top1());
        pooled.add(tally.scores, tally.labels);
    }
    let mean = per_repeat.iter().sum::<f64>() / per_repeat.len() as f64;
    Ok(EvaluationReport {
        protocol: "stratified-cv".into(),
        model: learner.name(),
        dataset_tag: d.tag().to_string(),
        n_samples: d.len(),
        n_folds: cv.n_folds,
        seeds: cv.seeds.iter().map(|s| s.0).collect(),
        per_repeat_accuracies: per_repeat,
        mean_accuracy: mean,
        top_k_accuracies: pooled.top_k()?,
        class_names: FunctionalGroup::ALL.iter().map(|g| g.name().to_string()).collect(),
        confusion_matrix: pooled.confusion(),
        config_snapshot: cv.snapshot.clone(),
    })
}

/// Scores an already trained model on a held-out dataset.
pub fn evaluate_holdout(
    scorer: &dyn Scorer,
    model_name: &str,
    test: &Dataset,
    snapshot: BTreeMap<String, String>,
) -> Result<EvaluationReport> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (scores, labels) = score_dataset(scorer, test)?;
    let mut tally = Tally::default();
    tally.add(scores, labels);
    let top1 = tally.top1();
    Ok(EvaluationReport {
        protocol: "holdout".into(),
        model: model_name.to_string(),
        dataset_tag: test.tag().to_string(),
        n_samples: test.len(),
        n_folds: 0,
        seeds: Vec::new(),
        per_repeat_accuracies: vec![top1],
        mean_accuracy: top1,
        top_k_accuracies: tally.top_k()?,
        class_names: FunctionalGroup::ALL.iter().map(|g| g.name().to_string()).collect(),
        confusion_matrix: tally.confusion(),
        config_snapshot: snapshot,
    })
}

fn check_transfer(train: &Dataset, test: &Dataset) -> Result<()> {
    if train.tag() == test.tag() {
        return Err(Error::TagCollision(train.tag().to_string()));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.spectrum_len() != test.spectrum_len() {
        return Err(Error::ShapeMismatch(format!(
            "train spectra have {:?} points, test spectra {:?}",
            train.spectrum_len(),
            test.spectrum_len()
        )));
    }
    Ok(())
}

/// Trains once on `train` and returns top-1 accuracy (percent) on `test`.
pub fn cross_dataset_eval(train: &Dataset, test: &Dataset, learner: &dyn Learner, seed: RngSeed) -> Result<f64> {
    check_transfer(train, test)?;
    let model = learner.fit(train, seed)?;
    let (scores, labels) = score_dataset(model.as_ref(), test)?;
    top_k_accuracy(&scores, &labels, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub train_tag: String,
    pub test_tag: String,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub model: String,
    pub results: Vec<TransferResult>,
    pub config_snapshot: BTreeMap<String, String>,
}

/// Both transfer directions between an `old` and a `new` dataset. `new` is
/// first cut down to a random subset the size of `old` (when larger), and
/// that subset is used in both directions.
pub fn transfer_experiment(
    old: &Dataset,
    new: &Dataset,
    learner: &dyn Learner,
    seed: RngSeed,
    snapshot: BTreeMap<String, String>,
) -> Result<TransferReport> {
    check_transfer(old, new)?;
    let matched = if new.len() > old.len() {
        random_subset(new, old.len(), seed.derive(0))?
    } else {
        new.clone()
    };
    let mut results = Vec::with_capacity(2);
    for (i, (train, test)) in [(&matched, old), (old, &matched)].into_iter().enumerate() {
        results.push(TransferResult {
            train_tag: train.tag().to_string(),
            test_tag: test.tag().to_string(),
            n_train: train.len(),
            n_test: test.len(),
            accuracy: cross_dataset_eval(train, test, learner, seed.derive(1 + i as u64))?,
        });
    }
    Ok(TransferReport {
        model: learner.name(),
        results,
        config_snapshot: snapshot,
    })
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    /// Correctly classified / total for each class, `None` when unseen.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        self.confusion_matrix
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let total: u64 = row.iter().sum();
                (total > 0).then(|| 100.0 * row[c] as f64 / total as f64)
            })
            .collect()
    }

    /// Aligned plain-text tables: per-repeat accuracies with their mean,
    /// then Top-K accuracies for the requested `ks`.
    pub fn to_text(&self, ks: &[usize]) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "model: {}  protocol: {}  dataset: {} ({} samples)  folds: {}",
            self.model, self.protocol, self.dataset_tag, self.n_samples, self.n_folds
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<6}{:>12}", "No.", "Accuracy");
        for (i, a) in self.per_repeat_accuracies.iter().enumerate() {
            let _ = writeln!(out, "{:<6}{:>12.2}", i + 1, a);
        }
        let _ = writeln!(out, "{:<6}{:>12.2}", "Mean", self.mean_accuracy);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<6}{:>12}", "K", "Top-K");
        for k in ks {
            if let Some(a) = self.top_k_accuracies.get(k) {
                let _ = writeln!(out, "{:<6}{:>12.2}", k, a);
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<12}{:>10}", "Class", "Accuracy");
        for (name, acc) in self.class_names.iter().zip(self.per_class_accuracy()) {
            match acc {
                Some(a) => {
                    let _ = writeln!(out, "{:<12}{:>10.2}", name, a);
                }
                None => {
                    let _ = writeln!(out, "{:<12}{:>10}", name, "-");
                }
            }
        }
        out
    }

    /// Per-class accuracy bar chart.
    pub fn per_class_svg(&self) -> String {
        let (bar_w, gap, plot_h, left, top) = (36.0, 8.0, 240.0, 50.0, 30.0);
        let n = self.class_names.len() as f64;
        let width = left + n * (bar_w + gap) + 20.0;
        let height = top + plot_h + 90.0;
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{left}" y="18" font-size="13">Per-class accuracy (%), {} on {}</text>"#,
            self.model, self.dataset_tag
        );
        for tick in [0, 25, 50, 75, 100] {
            let y = top + plot_h * (1.0 - tick as f64 / 100.0);
            let _ = writeln!(
                svg,
                r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{tick}</text>"##,
                width - 20.0,
                left - 6.0,
                y + 4.0
            );
        }
        for (i, (name, acc)) in self.class_names.iter().zip(self.per_class_accuracy()).enumerate() {
            let x = left + gap / 2.0 + i as f64 * (bar_w + gap);
            let a = acc.unwrap_or(0.0);
            let h = plot_h * a / 100.0;
            let _ = writeln!(
                svg,
                r##"<rect x="{x}" y="{}" width="{bar_w}" height="{h}" fill="#4a7ab5"/>"##,
                top + plot_h - h
            );
            let label = acc.map_or("-".to_string(), |a| format!("{a:.0}"));
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
                x + bar_w / 2.0,
                top + plot_h - h - 3.0
            );
            let (lx, ly) = (x + bar_w / 2.0, top + plot_h + 12.0);
            let _ = writeln!(
                svg,
                r#"<text x="{lx}" y="{ly}" text-anchor="end" transform="rotate(-45 {lx} {ly})">{name}</text>"#
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}
