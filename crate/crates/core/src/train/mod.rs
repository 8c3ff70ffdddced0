//! Training: loss, gradients, optimisation, model selection and ensembles.

mod adam;
mod auc;
mod loss;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{optimizer_step, Adam, BETA1, BETA2, EPSILON};
pub use auc::auc;
pub use loss::{bce_dlogit, bce_loss, bce_mean, bce_term, BCE_EPS};

use crate::net::{
    backward_from_logit, forward_one, init_params, ChronosConfig, ModelParams, NetError, Weights,
};
use crate::scalar::Scalar;
use crate::signal::{trajectory_signal, SignalError, Standardizer, TemporalSignal, DEFAULT_K_STAT};
use crate::store::{DatasetSplit, Trajectory};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("{0}: single-class input")]
    SingleClass(&'static str),
    #[error("NaN score")]
    NanScore,
    #[error("unlabeled trajectory {0:?} encountered")]
    Unlabeled(String),
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),
    #[error("empty grid")]
    EmptyGrid,
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("ensemble members disagree on l_tail")]
    MixedTail,
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Which held-out set drives grid selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Select on test AUC.
    #[default]
    Test,
    /// Select on validation AUC only.
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub ensemble_size: usize,
    pub seed: u64,
    pub k_stat: usize,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 50,
            batch_size: 32,
            patience: 5,
            ensemble_size: 5,
            seed: 0,
            k_stat: DEFAULT_K_STAT,
            selection: Selection::Test,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if self.batch_size == 0
            || self.ensemble_size == 0
            || self.max_epochs == 0
            || self.k_stat == 0
        {
            return Err(TrainError::InvalidConfig(
                "batch_size, ensemble_size, max_epochs and k_stat must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: Option<f64>,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of the initial weights.
    pub initial_loss: f64,
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub test_auc: Option<f64>,
}

impl TrainReport {
    pub fn best(&self) -> &EpochMetrics {
        &self.epochs[self.best_epoch]
    }
}

/// Standardized, labeled signals for one split, shared across configs with
/// the same tail length.
#[derive(Debug, Clone)]
pub struct PreparedSplit<T> {
    pub l_tail: usize,
    pub k_stat: usize,
    pub standardizer: Standardizer,
    pub train: Vec<(TemporalSignal<T>, bool)>,
    pub validation: Vec<(TemporalSignal<T>, bool)>,
    pub test: Vec<(TemporalSignal<T>, bool)>,
}

fn labeled_signals<T: Scalar>(
    data: &[Trajectory],
    idx: &[usize],
    k_stat: usize,
    l_tail: usize,
) -> Result<Vec<(TemporalSignal<T>, bool)>, TrainError> {
    idx.iter()
        .map(|&i| {
            let t = &data[i];
            let y = t
                .label
                .ok_or_else(|| TrainError::Unlabeled(t.trajectory_id.clone()))?;
            Ok((trajectory_signal(t, k_stat, l_tail)?, y))
        })
        .collect()
}

impl<T: Scalar> PreparedSplit<T> {
    pub fn new(
        data: &[Trajectory],
        split: &DatasetSplit,
        k_stat: usize,
        l_tail: usize,
    ) -> Result<Self, TrainError> {
        if split.train.is_empty() {
            return Err(TrainError::EmptySet("training"));
        }
        if split.validation.is_empty() {
            return Err(TrainError::EmptySet("validation"));
        }
        let train = labeled_signals(data, &split.train, k_stat, l_tail)?;
        let validation = labeled_signals(data, &split.validation, k_stat, l_tail)?;
        let test = labeled_signals(data, &split.test, k_stat, l_tail)?;
        let n_pos = train.iter().filter(|(_, y)| *y).count();
        if n_pos == 0 || n_pos == train.len() {
            return Err(TrainError::SingleClass("single-class training set"));
        }
        let raw: Vec<TemporalSignal<T>> = train.iter().map(|(s, _)| s.clone()).collect();
        let standardizer = Standardizer::fit(&raw)?;
        let apply = |set: Vec<(TemporalSignal<T>, bool)>| -> Vec<(TemporalSignal<T>, bool)> {
            set.into_iter()
                .map(|(s, y)| {
                    (
                        TemporalSignal {
                            values: standardizer.apply(&s),
                            valid_len: s.valid_len,
                        },
                        y,
                    )
                })
                .collect()
        };
        Ok(Self {
            l_tail,
            k_stat,
            standardizer,
            train: apply(train),
            validation: apply(validation),
            test: apply(test),
        })
    }
}

/// Mean BCE over a batch of standardized signals and its gradient with
/// respect to every weight (sum-form gradient divided by the batch size).
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[&TemporalSignal<T>],
    labels: &[bool],
) -> Result<(T, Weights<T>), TrainError> {
    if batch.len() != labels.len() {
        return Err(TrainError::LengthMismatch {
            scores: batch.len(),
            labels: labels.len(),
        });
    }
    if batch.is_empty() {
        return Ok((T::zero(), Weights::zeros(&params.config)));
    }
    let inv_n = T::one() / T::from_count(batch.len());
    let per_sample: Vec<(T, Weights<T>)> = batch
        .par_iter()
        .zip(labels.par_iter())
        .map(|(sig, &y)| {
            let cache = forward_one(&params.weights, &params.config, &sig.values, sig.valid_len)?;
            let mut g = Weights::zeros(&params.config);
            let dlogit = bce_dlogit(cache.score, y) * inv_n;
            backward_from_logit(&params.weights, &params.config, &cache, dlogit, &mut g);
            Ok((bce_term(cache.score, y), g))
        })
        .collect::<Result<_, TrainError>>()?;
    let mut grads = Weights::zeros(&params.config);
    let mut loss = T::zero();
    for (l, g) in &per_sample {
        loss += *l;
        grads.add_assign(g);
    }
    for (name, t) in grads.named_tensors() {
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient(name));
        }
    }
    Ok((loss * inv_n, grads))
}

fn score_set<T: Scalar>(
    params: &ModelParams<T>,
    set: &[(TemporalSignal<T>, bool)],
) -> Result<Vec<T>, TrainError> {
    set.par_iter()
        .map(|(s, _)| {
            Ok(forward_one(&params.weights, &params.config, &s.values, s.valid_len)?.score)
        })
        .collect()
}

fn labels_of<T>(set: &[(TemporalSignal<T>, bool)]) -> Vec<bool> {
    set.iter().map(|(_, y)| *y).collect()
}

/// AUC of `scores`, or `None` when the labels are single-class.
fn auc_opt<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<Option<f64>, TrainError> {
    match auc(scores, labels) {
        Ok(a) => Ok(Some(a)),
        Err(TrainError::SingleClass(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Trains one model with initialisation seed `seed`.
///
/// Early stopping tracks validation AUC; when the validation set is
/// single-class, the negated validation loss is tracked instead.
pub fn train_prepared<T: Scalar>(
    prep: &PreparedSplit<T>,
    cconf: &ChronosConfig,
    tconf: &TrainConfig,
    seed: u64,
) -> Result<(ModelParams<T>, TrainReport), TrainError> {
    tconf.validate()?;
    if cconf.l_tail != prep.l_tail {
        return Err(TrainError::InvalidConfig(format!(
            "config l_tail {} differs from prepared signals ({})",
            cconf.l_tail, prep.l_tail
        )));
    }
    let mut config = cconf.clone();
    config.seed = seed;
    let mut params = init_params::<T>(&config, seed)?;
    params.k_stat = prep.k_stat;
    params.standardizer = prep.standardizer;

    let train_labels = labels_of(&prep.train);
    let val_labels = labels_of(&prep.validation);
    let initial_loss = bce_mean(&score_set(&params, &prep.train)?, &train_labels)?.as_f64();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut opt = Adam::new(&config, tconf.learning_rate);
    let mut order: Vec<usize> = (0..prep.train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Weights<T>)> = None;

    for epoch in 0..tconf.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(tconf.batch_size) {
            let batch: Vec<&TemporalSignal<T>> = chunk.iter().map(|&i| &prep.train[i].0).collect();
            let labels: Vec<bool> = chunk.iter().map(|&i| prep.train[i].1).collect();
            let (loss, grads) = backward(&params, &batch, &labels)?;
            loss_sum += loss.as_f64() * chunk.len() as f64;
            opt.update(&mut params.weights, &grads);
        }
        let val_scores = score_set(&params, &prep.validation)?;
        let val_auc = auc_opt(&val_scores, &val_labels)?;
        let val_loss = bce_mean(&val_scores, &val_labels)?.as_f64();
        epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / prep.train.len() as f64,
            val_auc,
            val_loss,
        });
        let metric = val_auc.unwrap_or(-val_loss);
        if best.as_ref().is_none_or(|(m, _, _)| metric > *m) {
            best = Some((metric, epoch, params.weights.clone()));
        }
        let best_epoch = best.as_ref().unwrap().1;
        if epoch - best_epoch >= tconf.patience {
            break;
        }
    }
    let (_, best_epoch, weights) = best.expect("at least one epoch runs");
    params.weights = weights;
    let test_auc = if prep.test.is_empty() {
        None
    } else {
        auc_opt(&score_set(&params, &prep.test)?, &labels_of(&prep.test))?
    };
    Ok((
        params,
        TrainReport {
            initial_loss,
            epochs,
            best_epoch,
            test_auc,
        },
    ))
}

/// Trains a single model on `split` with seed `tconf.seed`.
pub fn train<T: Scalar>(
    data: &[Trajectory],
    split: &DatasetSplit,
    cconf: &ChronosConfig,
    tconf: &TrainConfig,
) -> Result<(ModelParams<T>, TrainReport), TrainError> {
    cconf.validate()?;
    tconf.validate()?;
    let prep = PreparedSplit::new(data, split, tconf.k_stat, cconf.l_tail)?;
    train_prepared(&prep, cconf, tconf, tconf.seed)
}

/// Outcome of training one grid entry.
#[derive(Debug, Clone)]
pub struct GridEntry<T> {
    pub config: ChronosConfig,
    pub model: ModelParams<T>,
    pub report: TrainReport,
    /// AUC on the selection set (test or validation).
    pub heldout_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GridResult<T> {
    pub best_index: usize,
    pub entries: Vec<GridEntry<T>>,
}

impl<T> GridResult<T> {
    pub fn best(&self) -> &GridEntry<T> {
        &self.entries[self.best_index]
    }
}

/// Trains every config and keeps the one with the highest held-out AUC.
/// Ties (and configs without a defined AUC) resolve to the earliest entry.
pub fn grid_search<T: Scalar>(
    data: &[Trajectory],
    split: &DatasetSplit,
    grid: &[ChronosConfig],
    tconf: &TrainConfig,
) -> Result<GridResult<T>, TrainError> {
    if grid.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    for c in grid {
        c.validate()?;
    }
    tconf.validate()?;
    let mut prepared: Vec<(usize, PreparedSplit<T>)> = Vec::new();
    for c in grid {
        if !prepared.iter().any(|(l, _)| *l == c.l_tail) {
            prepared.push((
                c.l_tail,
                PreparedSplit::new(data, split, tconf.k_stat, c.l_tail)?,
            ));
        }
    }
    let entries: Vec<GridEntry<T>> = grid
        .par_iter()
        .map(|c| {
            let prep = &prepared.iter().find(|(l, _)| *l == c.l_tail).unwrap().1;
            let (model, report) = train_prepared(prep, c, tconf, tconf.seed)?;
            let heldout_auc = match tconf.selection {
                Selection::Test => report.test_auc,
                Selection::Validation => report.best().val_auc,
            };
            Ok(GridEntry {
                config: c.clone(),
                model,
                report,
                heldout_auc,
            })
        })
        .collect::<Result<_, TrainError>>()?;
    let mut best_index = 0;
    for (i, e) in entries.iter().enumerate() {
        let cur = e.heldout_auc.unwrap_or(f64::NEG_INFINITY);
        let top = entries[best_index].heldout_auc.unwrap_or(f64::NEG_INFINITY);
        if cur > top {
            best_index = i;
        }
    }
    Ok(GridResult {
        best_index,
        entries,
    })
}

/// Trains `tconf.ensemble_size` members with seeds `seed, seed+1, ...`.
pub fn train_ensemble<T: Scalar>(
    prep: &PreparedSplit<T>,
    cconf: &ChronosConfig,
    tconf: &TrainConfig,
) -> Result<Vec<(ModelParams<T>, TrainReport)>, TrainError> {
    (0..tconf.ensemble_size as u64)
        .into_par_iter()
        .map(|i| train_prepared(prep, cconf, tconf, tconf.seed.wrapping_add(i)))
        .collect()
}

/// Arithmetic mean of member scores for a raw tail window.
pub fn ensemble_score<T: Scalar>(
    models: &[ModelParams<T>],
    signal: &TemporalSignal<T>,
) -> Result<T, TrainError> {
    let first = models.first().ok_or(TrainError::EmptyEnsemble)?;
    if models
        .iter()
        .any(|m| m.config.l_tail != first.config.l_tail)
    {
        return Err(TrainError::MixedTail);
    }
    let mut acc = T::zero();
    for m in models {
        acc += m.score_signal(signal)?;
    }
    Ok(acc / T::from_count(models.len()))
}

/// Ensemble score of a trajectory (signal recomputed per distinct `k_stat`).
pub fn ensemble_score_trajectory<T: Scalar>(
    models: &[ModelParams<T>],
    traj: &Trajectory,
) -> Result<T, TrainError> {
    let first = models.first().ok_or(TrainError::EmptyEnsemble)?;
    if models
        .iter()
        .any(|m| m.config.l_tail != first.config.l_tail)
    {
        return Err(TrainError::MixedTail);
    }
    let mut acc = T::zero();
    for m in models {
        acc += m.score_trajectory(traj)?;
    }
    Ok(acc / T::from_count(models.len()))
}
