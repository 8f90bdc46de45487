//! Subject-disjoint splitting, the mini-batch Adam training loop, and the
//! confusion-matrix metrics. PD is the positive class throughout.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::{expand_dataset, AugmentPlan, Sample};
use crate::encode::{Dimension, EncodeConfig};
use crate::error::{Error, Result};
use crate::ingest::{DrawingRecord, Feature, FeatureSet, Label};
use crate::net::{Mode, Network, NetworkConfig, Prediction};
use crate::preprocess::{FeatureRanges, Normalization};
use crate::tensor::{softmax_cross_entropy, Adam, AdamConfig};

/// How the per-epoch training loss and accuracy are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainMetrics {
    /// Averaged over the epoch's mini-batches, dropout active.
    #[default]
    Running,
    /// Recomputed in eval mode over the training set after the epoch.
    EvalPass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Share of the train+validation partition held out for validation.
    pub val_fraction: f64,
    pub train_metrics: TrainMetrics,
    /// Stop once training accuracy is 1 and training loss is below this.
    pub stop_below_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            epochs: 100,
            batch_size: 8,
            seed: 0,
            val_fraction: 0.2,
            train_metrics: TrainMetrics::Running,
            stop_below_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction {} outside (0, 1)", self.val_fraction)));
        }
        if !(self.adam.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.adam.lr)));
        }
        Ok(())
    }
}

/// Record indices of a two-way partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified, subject-grouped split of `(label, subject)` items. Roughly
/// `fraction` of each class goes to `test`, whole subjects at a time.
pub fn split_indices(items: &[(Label, &str)], fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    // subject -> (label of its first record, record indices)
    let mut subjects: BTreeMap<&str, (Label, Vec<usize>)> = BTreeMap::new();
    for (i, &(label, subject)) in items.iter().enumerate() {
        subjects.entry(subject).or_insert((label, Vec::new())).1.push(i);
    }
    let mut test = Vec::new();
    for label in [Label::Pd, Label::Hc] {
        let mut group: Vec<&Vec<usize>> = subjects.values().filter(|(l, _)| *l == label).map(|(_, v)| v).collect();
        if group.is_empty() {
            return Err(Error::ClassMissing(label.as_str()));
        }
        let total: usize = group.iter().map(|v| v.len()).sum();
        let target = (fraction * total as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(label.index() as u64);
        group.shuffle(&mut rng);
        let mut taken = 0;
        for v in group {
            if taken >= target {
                break;
            }
            taken += v.len();
            test.extend_from_slice(v);
        }
    }
    test.sort_unstable();
    let in_test: BTreeSet<usize> = test.iter().copied().collect();
    let train: Vec<usize> = (0..items.len()).filter(|i| !in_test.contains(i)).collect();
    if train.is_empty() {
        return Err(Error::EmptyPartition("train"));
    }
    if test.is_empty() {
        return Err(Error::EmptyPartition("test"));
    }
    Ok(Split { train, test })
}

pub fn split_dataset(records: &[DrawingRecord], fraction: f64, seed: u64) -> Result<Split> {
    let items: Vec<(Label, &str)> = records.iter().map(|r| (r.label, r.subject_id.as_str())).collect();
    split_indices(&items, fraction, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        ConfusionMatrix { tp, fn_, fp, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Pd, Label::Pd) => self.tp += 1,
            (Label::Pd, Label::Hc) => self.fn_ += 1,
            (Label::Hc, Label::Pd) => self.fp += 1,
            (Label::Hc, Label::Hc) => self.tn += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut cm = ConfusionMatrix::default();
        for (t, p) in pairs {
            cm.record(t, p);
        }
        cm
    }
}

/// Scores in [0, 1]. Ratios with a zero denominator are reported as 0 and
/// named in `undefined`.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub undefined: Vec<&'static str>,
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    if cm.total() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut undefined = Vec::new();
    let mut ratio = |name, num: u64, den: u64| {
        if den == 0 {
            undefined.push(name);
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = ratio("accuracy", cm.tp + cm.tn, cm.total());
    let precision = ratio("precision", cm.tp, cm.tp + cm.fp);
    let sensitivity = ratio("sensitivity", cm.tp, cm.tp + cm.fn_);
    let specificity = ratio("specificity", cm.tn, cm.tn + cm.fp);
    let f1 = if precision + sensitivity > 0.0 {
        2.0 * precision * sensitivity / (precision + sensitivity)
    } else {
        undefined.push("f1");
        0.0
    };
    Ok(Metrics {
        accuracy,
        precision,
        sensitivity,
        specificity,
        f1,
        undefined,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    /// `(truth, prediction)` per sample, in input order.
    pub predictions: Vec<(Label, Prediction)>,
}

/// Eval-mode predictions over `samples`.
pub fn evaluate(model: &Network<f32>, samples: &[Sample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyPartition("test"));
    }
    let inputs: Vec<_> = samples.iter().map(|s| &s.input).collect();
    let preds = model.predict(&inputs)?;
    let predictions: Vec<(Label, Prediction)> = samples.iter().map(|s| s.label).zip(preds).collect();
    let confusion = ConfusionMatrix::from_pairs(predictions.iter().map(|(t, p)| (*t, p.label)));
    Ok(Evaluation {
        metrics: compute_metrics(&confusion)?,
        confusion,
        predictions,
    })
}

/// Mean eval-mode cross-entropy and accuracy.
pub fn assess(model: &Network<f32>, samples: &[Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyPartition("evaluation"));
    }
    let per: Vec<(f64, bool)> = samples
        .par_iter()
        .map(|s| {
            let logits = model.forward(&s.input, Mode::Eval)?;
            let (loss, _) = softmax_cross_entropy(&logits, s.label.index())?;
            Ok((loss as f64, Prediction::from_logits(&logits).label == s.label))
        })
        .collect::<Result<_>>()?;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / per.len() as f64;
    let acc = per.iter().filter(|p| p.1).count() as f64 / per.len() as f64;
    Ok((loss, acc))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        let mut s = format!("{HISTORY_HEADER}\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{},{}",
                e.epoch,
                e.train_loss,
                e.train_acc,
                opt(e.val_loss),
                opt(e.val_acc)
            );
        }
        s
    }
}

/// Owns a model and its optimizer state; advances one epoch at a time.
pub struct Trainer {
    model: Network<f32>,
    optimizer: Adam<f32>,
    config: TrainConfig,
    history: History,
}

impl Trainer {
    pub fn new(model: Network<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            model,
            optimizer: Adam::new(config.adam),
            config,
            history: History::default(),
        })
    }

    pub fn model(&self) -> &Network<f32> {
        &self.model
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn into_parts(self) -> (Network<f32>, History) {
        (self.model, self.history)
    }

    /// Whether the early-stop condition of the config is met.
    pub fn converged(&self) -> bool {
        match (self.config.stop_below_loss, self.history.last()) {
            (Some(limit), Some(e)) => e.train_acc == 1.0 && e.train_loss < limit,
            _ => false,
        }
    }

    /// One pass over `train` in a seeded shuffled order, then validation.
    pub fn step_epoch(&mut self, train: &[Sample], val: &[Sample]) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::EmptyPartition("train"));
        }
        let epoch = self.history.len() + 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle = ChaCha8Rng::seed_from_u64(self.config.seed);
        shuffle.set_stream(2 * epoch as u64);
        order.shuffle(&mut shuffle);
        let mut drops = ChaCha8Rng::seed_from_u64(self.config.seed);
        drops.set_stream(2 * epoch as u64 + 1);

        let diverged = |loss: f64| Error::NumericDivergence { epoch, loss };
        let (mut loss_sum, mut correct) = (0.0, 0);
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| (&train[i].input, train[i].label)).collect();
            let seeds: Vec<u64> = chunk.iter().map(|_| drops.gen()).collect();
            let stats = match self.model.batch_gradients(&batch, Some(&seeds)) {
                Err(Error::NonFiniteLogit(v)) => return Err(diverged(v)),
                other => other?,
            };
            if !stats.loss_sum.is_finite() {
                return Err(diverged(stats.loss_sum));
            }
            loss_sum += stats.loss_sum;
            correct += stats.correct;
            let mut params: Vec<_> = self.model.params_mut().iter_mut().collect();
            self.optimizer.step(&mut params)?;
        }
        let (train_loss, train_acc) = match self.config.train_metrics {
            TrainMetrics::Running => (loss_sum / train.len() as f64, correct as f64 / train.len() as f64),
            TrainMetrics::EvalPass => self.assess(train, epoch)?,
        };
        let (val_loss, val_acc) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a) = self.assess(val, epoch)?;
            (Some(l), Some(a))
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        };
        self.history.epochs.push(record);
        Ok(record)
    }

    fn assess(&self, samples: &[Sample], epoch: usize) -> Result<(f64, f64)> {
        match assess(&self.model, samples) {
            Err(Error::NonFiniteLogit(v)) => Err(Error::NumericDivergence { epoch, loss: v }),
            Ok((l, _)) if !l.is_finite() => Err(Error::NumericDivergence { epoch, loss: l }),
            other => other,
        }
    }
}

/// Runs up to `config.epochs` epochs (fewer if the early-stop condition is
/// met) and returns the trained model with its history.
pub fn train(model: Network<f32>, train: &[Sample], val: &[Sample], config: &TrainConfig) -> Result<(Network<f32>, History)> {
    let mut t = Trainer::new(model, config.clone())?;
    for _ in 0..config.epochs {
        t.step_epoch(train, val)?;
        if t.converged() {
            break;
        }
    }
    Ok(t.into_parts())
}

/// Everything needed to go from raw records to test metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub dim: Dimension,
    pub features: FeatureSet,
    pub encode: EncodeConfig,
    /// Normalize with min/max taken over the training partition instead of
    /// per record.
    pub dataset_normalization: bool,
    pub augment: AugmentPlan,
    pub train: TrainConfig,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub init_seed: u64,
}

impl Experiment {
    pub fn new(dim: Dimension, features: FeatureSet) -> Self {
        Experiment {
            dim,
            features,
            encode: EncodeConfig::default(),
            dataset_normalization: false,
            augment: AugmentPlan::default(),
            train: TrainConfig::default(),
            test_fraction: 0.2,
            split_seed: 0,
            init_seed: 0,
        }
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig::new(self.dim, self.dim.input_channels(&self.features)).with_extent(self.encode.extent(self.dim))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == Dimension::Three && !self.features.contains(Feature::Velocity) {
            return Err(Error::PlanInvalidForDimension {
                dim: 3,
                reason: "velocity supplies the third axis and must be enabled".into(),
            });
        }
        self.encode.validate()?;
        self.augment.validate(self.dim)?;
        self.train.validate()?;
        crate::net::shape_trace(&self.network_config())?;
        Ok(())
    }
}

/// Output of [`run_experiment`]. Index lists refer to the input records.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub model: Network<f32>,
    pub history: History,
    pub evaluation: Evaluation,
}

/// Subject-disjoint train/validation/test record indices. The validation
/// split is carved out of the outer training partition with `split_seed + 1`.
pub fn partition_indices(records: &[DrawingRecord], exp: &Experiment) -> Result<[Vec<usize>; 3]> {
    let outer = split_dataset(records, exp.test_fraction, exp.split_seed)?;
    let items: Vec<(Label, &str)> = outer
        .train
        .iter()
        .map(|&i| (records[i].label, records[i].subject_id.as_str()))
        .collect();
    let inner = split_indices(&items, exp.train.val_fraction, exp.split_seed.wrapping_add(1))?;
    let train_idx = inner.train.iter().map(|&i| outer.train[i]).collect();
    let val_idx = inner.test.iter().map(|&i| outer.train[i]).collect();
    Ok([train_idx, val_idx, outer.test])
}

/// Normalization scope for an experiment; dataset ranges come from the
/// training records only.
pub fn normalization_scope(records: &[DrawingRecord], train_idx: &[usize], exp: &Experiment) -> Normalization {
    if exp.dataset_normalization {
        let train: Vec<DrawingRecord> = train_idx.iter().map(|&i| records[i].clone()).collect();
        Normalization::Dataset(FeatureRanges::from_records(&train))
    } else {
        Normalization::PerRecord
    }
}

/// Encodes the records at `idx` under `plan`. Sample origins are indices into
/// `records`.
pub fn encode_partition(
    records: &[DrawingRecord],
    idx: &[usize],
    exp: &Experiment,
    plan: &AugmentPlan,
    scope: Normalization,
) -> Result<Vec<Sample>> {
    let recs: Vec<DrawingRecord> = idx.iter().map(|&i| records[i].clone()).collect();
    let mut set = expand_dataset(&recs, plan, exp.dim, &exp.features, &exp.encode, scope)?;
    for s in &mut set {
        s.provenance.origin = idx[s.provenance.origin];
    }
    Ok(set)
}

/// Encodes train/validation/test partitions of `records` and returns their
/// samples. Augmentation touches the training partition only.
pub fn prepare_partitions(records: &[DrawingRecord], exp: &Experiment) -> Result<([Vec<usize>; 3], [Vec<Sample>; 3])> {
    exp.validate()?;
    let [train_idx, val_idx, test_idx] = partition_indices(records, exp)?;
    let scope = normalization_scope(records, &train_idx, exp);
    let none = AugmentPlan::default();
    let train_set = encode_partition(records, &train_idx, exp, &exp.augment, scope)?;
    let val_set = encode_partition(records, &val_idx, exp, &none, scope)?;
    let test_set = encode_partition(records, &test_idx, exp, &none, scope)?;
    let test_subjects: BTreeSet<&str> = test_idx.iter().map(|&i| records[i].subject_id.as_str()).collect();
    if train_set.iter().chain(&val_set).any(|s| test_subjects.contains(s.provenance.subject_id.as_str())) {
        return Err(Error::Config("a test subject leaked into training data".into()));
    }
    Ok(([train_idx, val_idx, test_idx], [train_set, val_set, test_set]))
}

/// Split, encode, augment, train and evaluate.
pub fn run_experiment(records: &[DrawingRecord], exp: &Experiment) -> Result<RunOutput> {
    let ([train_indices, val_indices, test_indices], [train_set, val_set, test_set]) =
        prepare_partitions(records, exp)?;
    let model = Network::<f32>::build(exp.network_config(), exp.init_seed)?;
    let (model, history) = train(model, &train_set, &val_set, &exp.train)?;
    let evaluation = evaluate(&model, &test_set)?;
    Ok(RunOutput {
        train_indices,
        val_indices,
        test_indices,
        model,
        history,
        evaluation,
    })
}

pub const REPORT_HEADER: &str = "dim,features,precision,sensitivity,specificity,accuracy,f1";

/// One row of the ablation report; scores as percentages with two decimals.
pub fn report_row(dim: Dimension, features: &FeatureSet, m: &Metrics) -> String {
    format!(
        "{},{},{:.2},{:.2},{:.2},{:.2},{:.2}",
        dim,
        features.label(),
        100.0 * m.precision,
        100.0 * m.sensitivity,
        100.0 * m.specificity,
        100.0 * m.accuracy,
        100.0 * m.f1
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::Dimension;
    use crate::synthetic::gen_cohort;

    #[test]
    fn metric_examples() {
        let m = compute_metrics(&ConfusionMatrix::new(3, 1, 1, 4)).unwrap();
        assert_eq!(format!("{:.2}", m.precision * 100.0), "75.00");
        assert_eq!(format!("{:.2}", m.sensitivity * 100.0), "75.00");
        assert_eq!(format!("{:.2}", m.specificity * 100.0), "80.00");
        assert_eq!(format!("{:.2}", m.accuracy * 100.0), "77.78");
        assert_eq!(format!("{:.2}", m.f1 * 100.0), "75.00");
        let m = compute_metrics(&ConfusionMatrix::new(6, 1, 1, 7)).unwrap();
        assert_eq!(format!("{:.2}", m.sensitivity * 100.0), "85.71");
        assert_eq!(format!("{:.2}", m.specificity * 100.0), "87.50");
        assert_eq!(format!("{:.2}", m.accuracy * 100.0), "86.67");
        let m = compute_metrics(&ConfusionMatrix::new(1, 1, 1, 1)).unwrap();
        assert_eq!([m.accuracy, m.precision, m.sensitivity, m.specificity, m.f1], [0.5; 5]);
        assert!(matches!(compute_metrics(&ConfusionMatrix::default()), Err(Error::EmptyMatrix)));
        let m = compute_metrics(&ConfusionMatrix::new(0, 0, 0, 3)).unwrap();
        assert_eq!(m.undefined, vec!["precision", "sensitivity", "f1"]);
    }

    #[test]
    fn split_examples() {
        let (_, records) = gen_cohort(40, 40, 7).unwrap();
        let s = split_dataset(&records, 0.2, 3).unwrap();
        let count = |idx: &[usize], l: Label| idx.iter().filter(|&&i| records[i].label == l).count();
        assert_eq!((count(&s.test, Label::Pd), count(&s.test, Label::Hc)), (8, 8));
        assert_eq!(s, split_dataset(&records, 0.2, 3).unwrap());
        assert_ne!(s, split_dataset(&records, 0.2, 4).unwrap());

        let labels: Vec<(Label, String)> = (0..75)
            .map(|i| (if i < 37 { Label::Pd } else { Label::Hc }, format!("s{i}")))
            .collect();
        let items: Vec<(Label, &str)> = labels.iter().map(|(l, s)| (*l, s.as_str())).collect();
        assert_eq!(split_indices(&items, 0.2, 1).unwrap().test.len(), 15);

        let only_pd = [(Label::Pd, "a"), (Label::Pd, "b")];
        assert!(matches!(split_indices(&only_pd, 0.2, 0), Err(Error::ClassMissing("HC"))));
    }

    #[test]
    fn split_keeps_subjects_together() {
        let subj: Vec<String> = (0..60).map(|i| format!("s{}", i / 3)).collect();
        let items: Vec<(Label, &str)> = subj
            .iter()
            .enumerate()
            .map(|(i, s)| (if (i / 3) % 2 == 0 { Label::Pd } else { Label::Hc }, s.as_str()))
            .collect();
        for seed in 0..50 {
            let s = split_indices(&items, 0.2, seed).unwrap();
            let a: BTreeSet<&str> = s.train.iter().map(|&i| items[i].1).collect();
            let b: BTreeSet<&str> = s.test.iter().map(|&i| items[i].1).collect();
            assert!(a.is_disjoint(&b));
            assert_eq!(s.train.len() + s.test.len(), 60);
        }
    }

    fn tiny_experiment(dim: Dimension) -> Experiment {
        let mut exp = Experiment::new(dim, FeatureSet::ALL);
        exp.encode = EncodeConfig {
            length: 32,
            image_size: 32,
            voxel_size: 32,
            w_max: 3,
            ..Default::default()
        };
        exp.train.epochs = 2;
        exp
    }

    #[test]
    fn lr_zero_keeps_parameters() {
        let (_, records) = gen_cohort(4, 4, 1).unwrap();
        let mut exp = tiny_experiment(Dimension::Two);
        exp.train.adam.lr = 0.0;
        let ([_, _, _], [train_set, val_set, _]) = prepare_partitions(&records, &exp).unwrap();
        let model = Network::<f32>::build(exp.network_config(), 0).unwrap();
        let (after, history) = train(model.clone(), &train_set, &val_set, &exp.train).unwrap();
        assert_eq!(history.len(), 2);
        for (a, b) in after.params().iter().zip(model.params()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let (_, records) = gen_cohort(5, 5, 2).unwrap();
        let exp = tiny_experiment(Dimension::One);
        let a = run_experiment(&records, &exp).unwrap();
        let b = run_experiment(&records, &exp).unwrap();
        assert_eq!(a.history.to_csv(), b.history.to_csv());
        assert_eq!(a.evaluation, b.evaluation);
        assert!(a.history.to_csv().starts_with(HISTORY_HEADER));
        let subjects = |idx: &[usize]| idx.iter().map(|&i| records[i].subject_id.clone()).collect::<BTreeSet<_>>();
        assert!(subjects(&a.train_indices).is_disjoint(&subjects(&a.test_indices)));
        assert!(subjects(&a.val_indices).is_disjoint(&subjects(&a.test_indices)));
    }

    #[test]
    fn evaluation_forced_cases() {
        let (_, records) = gen_cohort(4, 5, 3).unwrap();
        let exp = tiny_experiment(Dimension::One);
        let samples = expand_dataset(
            &records,
            &AugmentPlan::default(),
            exp.dim,
            &exp.features,
            &exp.encode,
            Normalization::PerRecord,
        )
        .unwrap();
        let mut model = Network::<f32>::build(exp.network_config(), 0).unwrap();
        // output bias alone decides: PD always
        let p = model.params_mut();
        p[12].data_mut().fill(0.0);
        p[13].data_mut().copy_from_slice(&[0.0, 1.0]);
        let e = evaluate(&model, &samples).unwrap();
        assert_eq!(e.metrics.sensitivity, 1.0);
        assert_eq!(e.metrics.specificity, 0.0);
        assert!((e.metrics.accuracy - 4.0 / 9.0).abs() < 1e-12);
        // recount from stored predictions
        let recount = e.predictions.iter().filter(|(t, p)| *t == p.label).count();
        assert!((recount as f64 / 9.0 - e.metrics.accuracy).abs() < 1e-12);
        assert!(matches!(evaluate(&model, &[]), Err(Error::EmptyPartition(_))));
    }

    #[test]
    fn three_d_without_velocity_is_rejected() {
        let exp = Experiment::new(Dimension::Three, FeatureSet::POSITIONS);
        assert!(matches!(exp.validate(), Err(Error::PlanInvalidForDimension { dim: 3, .. })));
    }

    #[test]
    fn report_row_layout() {
        let m = compute_metrics(&ConfusionMatrix::new(3, 1, 1, 4)).unwrap();
        assert_eq!(
            report_row(Dimension::Two, &FeatureSet::ALL, &m),
            "2D,x+y+a+l+p+v,75.00,75.00,80.00,77.78,75.00"
        );
    }
}
