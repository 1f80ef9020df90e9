//! Training loop, evaluation harness and repeated-trial experiments.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PairSample, Rect};
use crate::layers::Mode;
use crate::loss::bce_loss;
use crate::model::{build_model, ModelBundle, ModelConfig, PairBatch, PairModel, Variant};
use crate::optim::AdamConfig;
use crate::pairing::{mask_landmarks, split_pairs, Split, SplitConfig};
use crate::stats::mean_sd;
use crate::{Error, Prng, Result, Tensor};

const SHUFFLE_STREAM: u64 = 40;
const DROPOUT_STREAM: u64 = 41;
const EVAL_CHUNK: usize = 256;

/// How a pair's prediction is read off the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Predict "right is ENT" when `logit(L, R) > logit(R, L)`. Exact ties
    /// go to the side with the larger subject index. Swapping a pair
    /// therefore always swaps the prediction.
    #[default]
    Symmetric,
    /// Predict "right is ENT" when `p(L, R) ≥ 0.5`.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub eval_mode: EvalMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            adam: AdamConfig::default(),
            eval_mode: EvalMode::Symmetric,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "epochs ({}) and batch size ({}) must be positive",
                self.epochs, self.batch_size
            )));
        }
        Ok(())
    }
}

/// Per-stream model inputs for every subject of a dataset, masked to the
/// stream's landmark where the architecture asks for it.
#[derive(Debug, Clone)]
pub struct Inputs {
    /// `streams[s][subject]`.
    streams: Vec<Vec<Tensor<f32>>>,
    shape: [usize; 3],
}

impl Inputs {
    pub fn prepare(dataset: &Dataset, config: &ModelConfig) -> Result<Self> {
        let shape = dataset.feature_shape();
        if shape != config.input_shape {
            return Err(Error::ShapeMismatch {
                expected: config.input_shape.to_vec(),
                got: shape.to_vec(),
            });
        }
        let streams = match config.variant {
            Variant::FullfacePair => vec![dataset.features().to_vec()],
            Variant::LandmarkSingle | Variant::LandmarkCombined => config
                .landmarks
                .iter()
                .map(|name| {
                    dataset
                        .subjects()
                        .iter()
                        .zip(dataset.features())
                        .map(|(s, f)| {
                            let rect = s.region(name).ok_or_else(|| {
                                Error::InvalidData(format!("subject {} has no region {name:?}", s.subject_id))
                            })?;
                            mask_landmarks(f, &[rect])
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(Self { streams, shape })
    }

    /// Unmasked single-stream inputs.
    pub fn raw(dataset: &Dataset) -> Self {
        Self {
            streams: vec![dataset.features().to_vec()],
            shape: dataset.feature_shape(),
        }
    }

    pub fn streams(&self) -> usize {
        self.streams.len()
    }

    pub fn get(&self, stream: usize, subject: usize) -> &Tensor<f32> {
        &self.streams[stream][subject]
    }

    /// Stacks the selected pairs into a batch.
    pub fn batch(&self, pairs: &[IndexedPair]) -> PairBatch<f32> {
        let [h, w, c] = self.shape;
        let stack = |stream: &[Tensor<f32>], pick: &dyn Fn(&IndexedPair) -> usize| {
            let mut data = Vec::with_capacity(pairs.len() * h * w * c);
            for p in pairs {
                data.extend_from_slice(stream[pick(p)].data());
            }
            Tensor::new(vec![pairs.len(), h, w, c], data).expect("consistent shapes")
        };
        PairBatch {
            left: self.streams.iter().map(|s| stack(s, &|p| p.left)).collect(),
            right: self.streams.iter().map(|s| stack(s, &|p| p.right)).collect(),
        }
    }
}

/// A validated pair referring to dataset positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedPair {
    pub left: usize,
    pub right: usize,
    pub target: u8,
}

impl IndexedPair {
    pub fn swapped(self) -> Self {
        Self {
            left: self.right,
            right: self.left,
            target: 1 - self.target,
        }
    }
}

pub fn index_pairs(dataset: &Dataset, pairs: &[PairSample]) -> Result<Vec<IndexedPair>> {
    pairs
        .iter()
        .map(|p| {
            let (left, right) = dataset.check_pair(p)?;
            Ok(IndexedPair {
                left,
                right,
                target: p.target,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn record(&mut self, target: u8, predicted: u8) {
        match (target, predicted) {
            (1, 1) => self.tp += 1,
            (0, 0) => self.tn += 1,
            (0, _) => self.fp += 1,
            _ => self.fn_ += 1,
        }
    }

    pub fn correct(&self) -> usize {
        self.tp + self.tn
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Percent correct.
    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::Empty("confusion counts")),
            n => Ok(self.correct() as f64 / n as f64 * 100.0),
        }
    }
}

/// Predicted targets (1 = right is ENT) in eval mode.
pub fn predict_targets(model: &PairModel<f32>, inputs: &Inputs, pairs: &[IndexedPair], mode: EvalMode) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(EVAL_CHUNK) {
        let batch = inputs.batch(chunk);
        match mode {
            EvalMode::Single => {
                out.extend(model.predict(&batch)?.into_iter().map(|p| u8::from(p >= 0.5)));
            }
            EvalMode::Symmetric => {
                let fwd = model.logits(&batch)?;
                let rev = model.logits(&batch.swapped())?;
                for ((a, b), p) in fwd.into_iter().zip(rev).zip(chunk) {
                    let d = a - b;
                    if d.is_nan() {
                        return Err(Error::Numerical("NaN logit during evaluation".into()));
                    }
                    out.push(if d == 0.0 { u8::from(p.left < p.right) } else { u8::from(d > 0.0) });
                }
            }
        }
    }
    Ok(out)
}

pub fn evaluate(model: &PairModel<f32>, inputs: &Inputs, pairs: &[IndexedPair], mode: EvalMode) -> Result<ConfusionCounts> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let mut counts = ConfusionCounts::default();
    for (p, y) in pairs.iter().zip(predict_targets(model, inputs, pairs, mode)?) {
        counts.record(p.target, y);
    }
    Ok(counts)
}

/// Mean eval-mode BCE over pairs.
pub fn eval_loss(model: &PairModel<f32>, inputs: &Inputs, pairs: &[IndexedPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let mut total = 0.0;
    for chunk in pairs.chunks(EVAL_CHUNK) {
        for (p, pair) in model.predict(&inputs.batch(chunk))?.into_iter().zip(chunk) {
            total += bce_loss(p as f64, pair.target as f64)?.0;
        }
    }
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's batches, weighted by size.
    pub train_loss: f64,
    /// Training-mode accuracy (p ≥ 0.5 rule) accumulated over the epoch.
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curves: Vec<EpochStats>,
    /// Epoch (1-based) with the highest validation accuracy, latest on ties.
    pub best_epoch: Option<usize>,
    /// The model as it was after `best_epoch`.
    pub best_model: Option<PairModel<f32>>,
}

/// Trains in place with binary cross-entropy and Adam. Pairs are
/// reshuffled every epoch from `seed`; dropout draws come from a separate
/// stream of the same seed.
pub fn train(
    bundle: &mut ModelBundle,
    inputs: &Inputs,
    train_pairs: &[IndexedPair],
    val_pairs: &[IndexedPair],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_pairs.is_empty() {
        return Err(Error::Empty("training pairs"));
    }
    if inputs.streams() != bundle.model.config.streams() || inputs.shape != bundle.model.config.input_shape {
        return Err(Error::ShapeMismatch {
            expected: bundle.model.config.input_shape.to_vec(),
            got: inputs.shape.to_vec(),
        });
    }
    let mut shuffle = Prng::derive(seed, SHUFFLE_STREAM);
    let mut dropout = Prng::derive(seed, DROPOUT_STREAM);
    let mut order: Vec<IndexedPair> = train_pairs.to_vec();
    let mut curves = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, PairModel<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        shuffle.shuffle(&mut order);
        let (mut loss_sum, mut hits) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = inputs.batch(chunk);
            let (p, cache) = bundle.model.forward(&batch, Mode::Train, &mut dropout)?;
            let n = chunk.len() as f32;
            let mut grad = Vec::with_capacity(chunk.len());
            for (&pi, pair) in p.data().iter().zip(chunk) {
                let (l, d) = bce_loss(pi, pair.target as f32)?;
                if !l.is_finite() {
                    return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}")));
                }
                loss_sum += l as f64;
                hits += usize::from(u8::from(pi >= 0.5) == pair.target);
                grad.push(d / n);
            }
            let grad = Tensor::new(vec![chunk.len(), 1], grad)?;
            let grads = bundle.model.param_grads(&cache, &grad)?;
            if !grads.iter().all(Tensor::all_finite) {
                return Err(Error::Numerical(format!("non-finite gradient at epoch {epoch}")));
            }
            bundle.optimizer.update(bundle.model.params_mut(), &grads)?;
            bundle.model.commit(&cache);
        }
        let m = order.len() as f64;
        let (val_loss, val_acc) = if val_pairs.is_empty() {
            (None, None)
        } else {
            let acc = evaluate(&bundle.model, inputs, val_pairs, cfg.eval_mode)?.accuracy()?;
            (Some(eval_loss(&bundle.model, inputs, val_pairs)?), Some(acc))
        };
        if let Some(acc) = val_acc {
            if best.as_ref().map_or(true, |(_, b, _)| acc >= *b) {
                best = Some((epoch, acc, bundle.model.clone()));
            }
        }
        curves.push(EpochStats {
            epoch,
            train_loss: loss_sum / m,
            train_acc: hits as f64 / m * 100.0,
            val_loss,
            val_acc,
        });
    }
    Ok(TrainOutcome {
        curves,
        best_epoch: best.as_ref().map(|b| b.0),
        best_model: best.map(|b| b.2),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub seed: u64,
    pub epochs: usize,
    pub curves: Vec<EpochStats>,
    /// Test accuracy of the final-epoch model.
    pub test_accuracy: f64,
    pub test_counts: ConfusionCounts,
    pub best_epoch: Option<usize>,
    /// Test accuracy of the best-validation snapshot.
    pub best_val_test_accuracy: Option<f64>,
}

/// A fixed dataset split with prepared inputs; trials differ only in seed.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train_cfg: TrainConfig,
    pub inputs: Inputs,
    pub train: Vec<IndexedPair>,
    pub validation: Vec<IndexedPair>,
    pub test: Vec<IndexedPair>,
}

impl Experiment {
    pub fn new(dataset: &Dataset, split: &Split, model: ModelConfig, train_cfg: TrainConfig) -> Result<Self> {
        model.validate()?;
        train_cfg.validate()?;
        Ok(Self {
            inputs: Inputs::prepare(dataset, &model)?,
            train: index_pairs(dataset, &split.train)?,
            validation: index_pairs(dataset, &split.validation)?,
            test: index_pairs(dataset, &split.test)?,
            model,
            train_cfg,
        })
    }

    /// One trial: fresh weights and shuffling from `seed`, then test
    /// evaluation of the final and the best-validation model.
    pub fn trial(&self, seed: u64) -> Result<(ModelBundle, TrialReport)> {
        let mut bundle = build_model(&self.model, self.train_cfg.adam, seed)?;
        let outcome = train(&mut bundle, &self.inputs, &self.train, &self.validation, &self.train_cfg, seed)?;
        let mode = self.train_cfg.eval_mode;
        let counts = evaluate(&bundle.model, &self.inputs, &self.test, mode)?;
        let best_val_test_accuracy = match &outcome.best_model {
            Some(m) => Some(evaluate(m, &self.inputs, &self.test, mode)?.accuracy()?),
            None => None,
        };
        let report = TrialReport {
            seed,
            epochs: self.train_cfg.epochs,
            curves: outcome.curves,
            test_accuracy: counts.accuracy()?,
            test_counts: counts,
            best_epoch: outcome.best_epoch,
            best_val_test_accuracy,
        };
        Ok((bundle, report))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialsSummary {
    pub trials: Vec<TrialReport>,
    pub mean: f64,
    /// Sample SD; absent for a single trial.
    pub sd: Option<f64>,
}

impl TrialsSummary {
    pub fn from_reports(trials: Vec<TrialReport>) -> Result<Self> {
        let acc: Vec<f64> = trials.iter().map(|t| t.test_accuracy).collect();
        let (mean, sd) = mean_sd(&acc)?;
        Ok(Self { trials, mean, sd })
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.test_accuracy).collect()
    }
}

/// Runs trials with seeds `base_seed + i`, one after another.
pub fn repeat_trials(experiment: &Experiment, k: usize, base_seed: u64) -> Result<TrialsSummary> {
    if k == 0 {
        return Err(Error::InvalidConfig("at least one trial is required".into()));
    }
    let reports = (0..k as u64)
        .map(|i| experiment.trial(base_seed.wrapping_add(i)).map(|(_, r)| r))
        .collect::<Result<Vec<_>>>()?;
    TrialsSummary::from_reports(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkStudyConfig {
    pub landmarks: [String; 3],
    pub repeats: usize,
    pub conv_width: usize,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub seed: u64,
}

impl Default for LandmarkStudyConfig {
    fn default() -> Self {
        Self {
            landmarks: ["eyes".into(), "nose".into(), "mouth".into()],
            repeats: 3,
            conv_width: 64,
            train: TrainConfig::default(),
            split: SplitConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRow {
    /// A landmark name or `combined`.
    pub name: String,
    /// One test accuracy per resplit.
    pub accuracies: Vec<f64>,
    pub mean: f64,
}

/// Per-landmark and combined test accuracies averaged over resplits.
/// Resplit `r` uses split seed `split.seed + r` and trial seed `seed + r`.
pub fn run_landmark_study(dataset: &Dataset, pairs: &[PairSample], cfg: &LandmarkStudyConfig) -> Result<Vec<LandmarkRow>> {
    if cfg.repeats == 0 {
        return Err(Error::InvalidConfig("at least one resplit is required".into()));
    }
    for s in dataset.subjects() {
        for name in &cfg.landmarks {
            if s.region(name).is_none() {
                return Err(Error::InvalidData(format!("subject {} has no region {name:?}", s.subject_id)));
            }
        }
    }
    let shape = dataset.feature_shape();
    let names: [&str; 3] = [&cfg.landmarks[0], &cfg.landmarks[1], &cfg.landmarks[2]];
    let mut models: Vec<(String, ModelConfig)> = names
        .iter()
        .map(|n| (String::from(*n), ModelConfig::landmark_single(shape, n).with_widths(cfg.conv_width, 0)))
        .collect();
    models.push(("combined".into(), ModelConfig::landmark_combined(shape, names).with_widths(cfg.conv_width, 0)));
    let mut rows: Vec<LandmarkRow> = models
        .iter()
        .map(|(n, _)| LandmarkRow {
            name: n.clone(),
            accuracies: Vec::new(),
            mean: 0.0,
        })
        .collect();
    for r in 0..cfg.repeats as u64 {
        let split = split_pairs(
            pairs,
            &SplitConfig {
                seed: cfg.split.seed.wrapping_add(r),
                ..cfg.split
            },
        )?;
        for ((_, model), row) in models.iter().zip(&mut rows) {
            let exp = Experiment::new(dataset, &split, model.clone(), cfg.train)?;
            let (_, report) = exp.trial(cfg.seed.wrapping_add(r))?;
            row.accuracies.push(report.test_accuracy);
        }
    }
    for row in &mut rows {
        row.mean = mean_sd(&row.accuracies)?.0;
    }
    Ok(rows)
}

/// Landmark rectangle lookup shared by analyses that mask inputs.
pub fn landmark_rects(dataset: &Dataset, subject: usize, config: &ModelConfig) -> Result<Vec<Rect>> {
    let s = dataset.subject(subject);
    config
        .landmarks
        .iter()
        .map(|n| {
            s.region(n)
                .ok_or_else(|| Error::InvalidData(format!("subject {} has no region {n:?}", s.subject_id)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairing::generate_pairs;
    use crate::synth::{synth_generate, SynthSpec, MIN_ORACLE_DRAWS};

    fn data(n: usize, signal: f64, shape: [usize; 3], seed: u64) -> Dataset {
        let spec = SynthSpec {
            n_subjects: n,
            signal,
            oracle_draws: MIN_ORACLE_DRAWS,
            ..SynthSpec::default().with_shape(shape)
        };
        synth_generate(&spec, seed).unwrap().dataset
    }

    fn tiny_train() -> TrainConfig {
        TrainConfig {
            epochs: 5,
            batch_size: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn accuracy_formula() {
        let c = |tp, tn, fp, fn_| ConfusionCounts { tp, tn, fp, fn_ }.accuracy().unwrap();
        assert_eq!(c(5, 5, 0, 0), 100.0);
        assert_eq!(c(0, 0, 3, 7), 0.0);
        assert_eq!(c(3, 2, 2, 3), 50.0);
        assert!(ConfusionCounts::default().accuracy().is_err());
    }

    #[test]
    fn overfits_ten_pairs() {
        let d = data(40, 0.0, [6, 6, 2], 1);
        let pairs = index_pairs(&d, &generate_pairs(d.subjects(), Some(10), None, 2).unwrap()).unwrap();
        let cfg = ModelConfig::fullface([6, 6, 2]).with_widths(8, 32);
        let mut bundle = build_model(&cfg, AdamConfig::default(), 3).unwrap();
        let inputs = Inputs::prepare(&d, &cfg).unwrap();
        let tc = TrainConfig {
            epochs: 100,
            batch_size: 10,
            eval_mode: EvalMode::Single,
            ..TrainConfig::default()
        };
        let out = train(&mut bundle, &inputs, &pairs, &[], &tc, 4).unwrap();
        assert_eq!(out.curves.len(), 100);
        assert!(out.best_epoch.is_none());
        let acc = evaluate(&bundle.model, &inputs, &pairs, EvalMode::Single).unwrap().accuracy().unwrap();
        assert_eq!(acc, 100.0);
    }

    #[test]
    fn same_seed_same_parameters() {
        let d = data(60, 1.0, [6, 6, 2], 2);
        let pairs = index_pairs(&d, &generate_pairs(d.subjects(), Some(30), None, 2).unwrap()).unwrap();
        let cfg = ModelConfig::fullface([6, 6, 2]).with_widths(3, 6);
        let inputs = Inputs::prepare(&d, &cfg).unwrap();
        let run = || {
            let mut b = build_model(&cfg, AdamConfig::default(), 7).unwrap();
            let out = train(&mut b, &inputs, &pairs[..24], &pairs[24..], &tiny_train(), 7).unwrap();
            (b, out.curves)
        };
        let (a, ca) = run();
        let (b, cb) = run();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert!(ca.iter().all(|e| e.val_acc.is_some()));
    }

    #[test]
    fn symmetric_evaluation_is_orientation_invariant() {
        let d = data(80, 0.5, [6, 6, 2], 3);
        let pairs = index_pairs(&d, &generate_pairs(d.subjects(), Some(60), None, 2).unwrap()).unwrap();
        let cfg = ModelConfig::fullface([6, 6, 2]).with_widths(3, 6);
        let inputs = Inputs::prepare(&d, &cfg).unwrap();
        let mut b = build_model(&cfg, AdamConfig::default(), 1).unwrap();
        train(&mut b, &inputs, &pairs, &[], &tiny_train(), 1).unwrap();
        let swapped: Vec<_> = pairs.iter().map(|p| p.swapped()).collect();
        let x = evaluate(&b.model, &inputs, &pairs, EvalMode::Symmetric).unwrap();
        let y = evaluate(&b.model, &inputs, &swapped, EvalMode::Symmetric).unwrap();
        assert_eq!(x.correct(), y.correct());
    }

    #[test]
    fn constant_model_is_at_chance() {
        // Zero features make every logit identical, so only the tie rule decides.
        let mut d = data(400, 0.0, [4, 4, 1], 4);
        let zeros: Vec<_> = d.features().iter().map(|f| Tensor::zeros(f.shape())).collect();
        d = Dataset::new(d.subjects().to_vec(), zeros).unwrap();
        let pairs = index_pairs(&d, &generate_pairs(d.subjects(), Some(2000), None, 5).unwrap()).unwrap();
        let cfg = ModelConfig::fullface([4, 4, 1]).with_widths(2, 4);
        let inputs = Inputs::prepare(&d, &cfg).unwrap();
        let mut b = build_model(&cfg, AdamConfig::default(), 1).unwrap();
        train(&mut b, &inputs, &pairs[..64], &[], &tiny_train(), 1).unwrap();
        let acc = evaluate(&b.model, &inputs, &pairs, EvalMode::Symmetric).unwrap().accuracy().unwrap();
        let sd = 100.0 * libm::sqrt(0.25 / pairs.len() as f64);
        assert!((acc - 50.0).abs() <= 3.0 * sd, "{acc}");
    }

    #[test]
    fn landmark_inputs_are_masked() {
        let d = data(20, 1.0, [14, 14, 2], 5);
        let cfg = ModelConfig::landmark_combined([14, 14, 2], ["eyes", "nose", "mouth"]);
        let inputs = Inputs::prepare(&d, &cfg).unwrap();
        assert_eq!(inputs.streams(), 3);
        let nose = d.subject(0).region("nose").unwrap();
        let t = inputs.get(1, 0);
        for (i, v) in t.data().iter().enumerate() {
            let cell = i / 2;
            if !nose.contains(cell / 14, cell % 14) {
                assert_eq!(*v, 0.0);
            }
        }
        let bad = ModelConfig::landmark_single([14, 14, 2], "ear");
        assert!(Inputs::prepare(&d, &bad).is_err());
        let wrong = ModelConfig::fullface([7, 7, 2]);
        assert!(matches!(Inputs::prepare(&d, &wrong), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn trials_summary() {
        let d = data(120, 2.0, [6, 6, 2], 6);
        let pairs = generate_pairs(d.subjects(), None, None, 6).unwrap();
        let split = split_pairs(&pairs, &SplitConfig::default()).unwrap();
        let cfg = ModelConfig::fullface([6, 6, 2]).with_widths(2, 4);
        let exp = Experiment::new(&d, &split, cfg, tiny_train()).unwrap();
        let one = repeat_trials(&exp, 1, 10).unwrap();
        assert!(one.sd.is_none());
        let three = repeat_trials(&exp, 3, 10).unwrap();
        assert_eq!(three.trials.len(), 3);
        assert_eq!(three.trials[0], one.trials[0]);
        assert_eq!(three.trials[2].seed, 12);
        assert!(three.sd.is_some());
        assert!(three.trials.iter().all(|t| t.curves.len() == 5 && t.best_val_test_accuracy.is_some()));
        assert!(repeat_trials(&exp, 0, 0).is_err());
    }
}
