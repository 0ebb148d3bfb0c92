//! Forward-backward splitting (FOBOS) training of the bilinear weight matrix.
//!
//! Each epoch takes one full-batch step
//!
//! ```text
//! W ← prox_{η λ R}(W − η ∇ nll(W))
//! ```
//!
//! where `R` is the Frobenius norm, half the squared Frobenius norm, or the
//! trace (nuclear) norm. The trace-norm prox soft-thresholds singular values,
//! which drives `W` toward low rank.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::eval;
use crate::lexicon::{Pair, SeedLexicon};
use crate::linalg::{self, Svd};
use crate::model::{BilinearModel, CandidateSet, IndexedPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularizer {
    /// `‖W‖_F`; block soft-thresholding prox.
    Frobenius,
    /// `½‖W‖_F²`; prox is `W / (1 + τ)`.
    FrobeniusSquared,
    /// `‖W‖_*`; singular-value soft-thresholding prox.
    Trace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    /// `η_t = η_0 / √t` with `t` counted from 1.
    InverseSqrt,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Gaussian { sigma: f64 },
}

/// Which target words form the softmax partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CandidatePolicy {
    /// The whole loaded target vocabulary.
    Vocabulary,
    /// Only target types that appear in the dictionary.
    DictionaryTargets,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub regularizer: Regularizer,
    pub lambda: f64,
    pub eta0: f64,
    pub schedule: Schedule,
    pub epochs: usize,
    pub init: Init,
    pub rng_seed: u64,
    pub early_stop_patience: Option<usize>,
    pub candidates: CandidatePolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regularizer: Regularizer::Trace,
            lambda: 0.01,
            eta0: 0.1,
            schedule: Schedule::InverseSqrt,
            epochs: 100,
            init: Init::Zeros,
            rng_seed: 0,
            early_stop_patience: None,
            candidates: CandidatePolicy::Vocabulary,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta0 {} must be > 0", self.eta0)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if let Init::Gaussian { sigma } = self.init {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidArgument(format!("init sigma {sigma} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn step_size(&self, iteration: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.eta0,
            Schedule::InverseSqrt => self.eta0 / (iteration as f64).sqrt(),
        }
    }

    /// `λ R(W)`.
    pub fn penalty(&self, w: &Array2<f64>) -> Result<f64> {
        if self.lambda == 0.0 {
            return Ok(0.0);
        }
        let r = match self.regularizer {
            Regularizer::Frobenius => linalg::frobenius_norm(w),
            Regularizer::FrobeniusSquared => 0.5 * linalg::frobenius_norm(w).powi(2),
            Regularizer::Trace => linalg::nuclear_norm(w)?,
        };
        Ok(self.lambda * r)
    }
}

/// Block soft-thresholding, the prox of `τ‖·‖_F`.
pub fn prox_frobenius(w: &Array2<f64>, tau: f64) -> Array2<f64> {
    assert!(tau >= 0.0, "prox threshold must be non-negative");
    let norm = linalg::frobenius_norm(w);
    if norm <= tau {
        Array2::zeros(w.raw_dim())
    } else {
        w * (1.0 - tau / norm)
    }
}

/// Prox of `(τ/2)‖·‖_F²`.
pub fn prox_frobenius_squared(w: &Array2<f64>, tau: f64) -> Array2<f64> {
    assert!(tau >= 0.0, "prox threshold must be non-negative");
    w / (1.0 + tau)
}

/// Singular-value soft-thresholding, the prox of `τ‖·‖_*`.
pub fn prox_trace(w: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
    if tau == 0.0 {
        return Ok(w.clone());
    }
    Ok(prox_trace_with_spectrum(w, tau)?.0)
}

/// Like [`prox_trace`], also returning the shrunk singular values.
fn prox_trace_with_spectrum(w: &Array2<f64>, tau: f64) -> Result<(Array2<f64>, Array1<f64>)> {
    assert!(tau >= 0.0, "prox threshold must be non-negative");
    if w.iter().all(|&v| v == 0.0) {
        let k = w.nrows().min(w.ncols());
        return Ok((w.clone(), Array1::zeros(k)));
    }
    let svd = Svd::new(w)?;
    let shrunk = svd.s.mapv(|s| (s - tau).max(0.0));
    Ok((svd.compose(&shrunk), shrunk))
}

/// Prox of `τ R` for the configured regularizer.
pub fn prox(regularizer: Regularizer, w: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
    match regularizer {
        Regularizer::Frobenius => Ok(prox_frobenius(w, tau)),
        Regularizer::FrobeniusSquared => Ok(prox_frobenius_squared(w, tau)),
        Regularizer::Trace => prox_trace(w, tau),
    }
}

/// One FOBOS step: gradient step on the likelihood, then the prox with
/// threshold `eta · λ`. Returns the new weight matrix.
pub fn fobos_step(model: &BilinearModel<'_>, pairs: &[Pair], eta: f64, cfg: &TrainConfig) -> Result<Array2<f64>> {
    if eta.is_nan() || eta <= 0.0 {
        return Err(Error::InvalidArgument(format!("step size {eta} must be > 0")));
    }
    let grad = model.nll_gradient(pairs)?;
    Ok(step_with_gradient(model.weights(), &grad, eta, cfg, 0)?.0)
}

/// The FOBOS update, plus the singular values of the result when the trace
/// prox already computed them.
fn step_with_gradient(
    w: &Array2<f64>,
    grad: &Array2<f64>,
    eta: f64,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(Array2<f64>, Option<Array1<f64>>)> {
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            epoch,
            what: "non-finite gradient".into(),
        });
    }
    let forward = w - &(grad * eta);
    if forward.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            epoch,
            what: "gradient step overflowed".into(),
        });
    }
    let tau = eta * cfg.lambda;
    match cfg.regularizer {
        Regularizer::Trace if tau > 0.0 => {
            let (next, s) = prox_trace_with_spectrum(&forward, tau)?;
            Ok((next, Some(s)))
        }
        r => Ok((prox(r, &forward, tau)?, None)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    /// `None` when there is no dev partition.
    pub dev_p1: Option<f64>,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// `L(W_init)`.
    pub initial_objective: f64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were returned.
    pub best_epoch: usize,
    pub final_rank: usize,
}

impl TrainReport {
    pub fn objective_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.objective).collect()
    }

    pub fn dev_p1_trace(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.dev_p1).collect()
    }

    pub fn rank_trace(&self) -> Vec<usize> {
        self.epochs.iter().map(|e| e.rank).collect()
    }

    pub fn best_dev_p1(&self) -> Option<f64> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)?.dev_p1
    }

    /// Line-delimited `key=value` records, one per epoch, then a summary.
    pub fn write_log<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "init objective={}", self.initial_objective)?;
        for e in &self.epochs {
            write!(w, "epoch={} objective={} ", e.epoch, e.objective)?;
            match e.dev_p1 {
                Some(p) => write!(w, "dev_p1={p} ")?,
                None => write!(w, "dev_p1=NA ")?,
            }
            writeln!(w, "rank={}", e.rank)?;
        }
        write!(
            w,
            "summary epochs_run={} best_epoch={} final_rank={}",
            self.epochs.len(),
            self.best_epoch,
            self.final_rank
        )?;
        match self.best_dev_p1() {
            Some(p) => writeln!(w, " best_dev_p1={p}")?,
            None => writeln!(w, " best_dev_p1=NA")?,
        }
        Ok(())
    }
}

fn init_weights(cfg: &TrainConfig, rows: usize, cols: usize) -> Array2<f64> {
    match cfg.init {
        Init::Zeros => Array2::zeros((rows, cols)),
        Init::Gaussian { sigma } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            let normal = Normal::new(0.0, sigma).expect("sigma validated");
            Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
        }
    }
}

fn build_candidates(cfg: &TrainConfig, target: &EmbeddingStore, lex: &SeedLexicon) -> Result<CandidateSet> {
    match cfg.candidates {
        CandidatePolicy::Vocabulary => Ok(CandidateSet::full(target)),
        CandidatePolicy::DictionaryTargets => CandidateSet::dictionary_targets(target, lex.pairs()),
    }
}

/// Trains `W` on the train partition of `lex`, tracking the objective and dev
/// precision@1 per epoch. Returns the weights from the epoch with the best dev
/// precision@1 (the earliest one on ties), or from the last epoch when the dev
/// partition is empty.
pub fn train<'a>(
    src: &'a EmbeddingStore,
    tgt: &'a EmbeddingStore,
    lex: &SeedLexicon,
    cfg: &TrainConfig,
) -> Result<(BilinearModel<'a>, TrainReport)> {
    cfg.validate()?;
    let train_pairs = lex.train_pairs();
    if train_pairs.is_empty() {
        return Err(Error::Empty("train partition"));
    }
    let dev_pairs = lex.dev_pairs();
    if dev_pairs.is_empty() && cfg.early_stop_patience.is_some() {
        return Err(Error::Empty("dev partition (required for early stopping)"));
    }

    let candidates = build_candidates(cfg, tgt, lex)?;
    let w0 = init_weights(cfg, src.dimension(), tgt.dimension());
    let mut model = BilinearModel::new(src, tgt, w0, candidates)?;
    let train_idx: Vec<IndexedPair> = model.index_pairs(&train_pairs)?;
    let dev_eval = if dev_pairs.is_empty() {
        None
    } else {
        Some(eval::DevSet::new(&model, &dev_pairs)?)
    };

    let (mut nll, mut grad) = model.nll_and_gradient_indexed(&train_idx, 64);
    let initial_objective = nll + cfg.penalty(model.weights())?;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Array2<f64>)> = None;
    let mut since_improvement = 0;

    for epoch in 1..=cfg.epochs {
        let eta = cfg.step_size(epoch);
        let (next, spectrum) = step_with_gradient(model.weights(), &grad, eta, cfg, epoch)?;
        let s = match spectrum {
            Some(s) => s,
            None if next.iter().all(|&v| v == 0.0) => Array1::zeros(0),
            None => Svd::new(&next)?.s,
        };
        let rank = linalg::rank_of_singular_values(&s);
        let penalty = match cfg.regularizer {
            Regularizer::Trace => cfg.lambda * s.sum(),
            _ => cfg.penalty(&next)?,
        };
        model.set_weights(next).map_err(|_| Error::Diverged {
            epoch,
            what: "non-finite weights".into(),
        })?;
        (nll, grad) = model.nll_and_gradient_indexed(&train_idx, 64);
        let objective = nll + penalty;
        if !objective.is_finite() {
            return Err(Error::Diverged {
                epoch,
                what: format!("objective is {objective}"),
            });
        }
        let dev_p1 = dev_eval.as_ref().map(|d| d.precision_at_1(&model));
        log::debug!("epoch={epoch} eta={eta} objective={objective} dev_p1={dev_p1:?} rank={rank}");
        records.push(EpochRecord {
            epoch,
            objective,
            dev_p1,
            rank,
        });

        let score = dev_p1.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((_, b, _)) => dev_p1.is_none() || score > *b,
        };
        if improved {
            best = Some((epoch, score, model.weights().clone()));
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if cfg.early_stop_patience.is_some_and(|p| since_improvement >= p) {
                log::info!("early stop at epoch={epoch}");
                break;
            }
        }
    }

    let (best_epoch, _, weights) = best.expect("at least one epoch ran");
    let final_rank = linalg::numerical_rank(&weights)?;
    model.set_weights(weights)?;
    Ok((
        model,
        TrainReport {
            initial_objective,
            epochs: records,
            best_epoch,
            final_rank,
        },
    ))
}

/// Outcome of one grid cell.
#[derive(Debug)]
pub struct GridCell {
    pub config: TrainConfig,
    pub outcome: std::result::Result<TrainReport, Error>,
}

impl GridCell {
    pub fn dev_p1(&self) -> Option<f64> {
        self.outcome.as_ref().ok().and_then(TrainReport::best_dev_p1)
    }
}

#[derive(Debug)]
pub struct Selection<'a> {
    pub best_index: usize,
    pub model: BilinearModel<'a>,
    pub cells: Vec<GridCell>,
}

impl Selection<'_> {
    pub fn best_report(&self) -> &TrainReport {
        self.cells[self.best_index]
            .outcome
            .as_ref()
            .expect("best cell succeeded")
    }

    /// Tab-separated table with one row per grid cell.
    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "index\tregularizer\tlambda\teta0\tschedule\tepochs\tdev_p1\tfinal_rank\tbest_epoch\tselected\tstatus"
        )?;
        for (i, cell) in self.cells.iter().enumerate() {
            let c = &cell.config;
            write!(
                w,
                "{i}\t{}\t{}\t{}\t{}\t{}\t",
                c.regularizer, c.lambda, c.eta0, c.schedule, c.epochs
            )?;
            match &cell.outcome {
                Ok(r) => {
                    let p1 = r.best_dev_p1().map_or("NA".to_owned(), |p| p.to_string());
                    writeln!(
                        w,
                        "{p1}\t{}\t{}\t{}\tok",
                        r.final_rank,
                        r.best_epoch,
                        i == self.best_index
                    )?
                }
                Err(e) => writeln!(w, "NA\tNA\tNA\tfalse\terror: {e}")?,
            }
        }
        Ok(())
    }
}

/// Trains every configuration (in parallel) and keeps the one with the best
/// dev precision@1, preferring lower final rank and then the earlier grid
/// position on ties. Failed cells are recorded unless every cell fails.
pub fn select_model<'a>(
    grid: &[TrainConfig],
    src: &'a EmbeddingStore,
    tgt: &'a EmbeddingStore,
    lex: &SeedLexicon,
) -> Result<Selection<'a>> {
    if grid.is_empty() {
        return Err(Error::Empty("configuration grid"));
    }
    let results: Vec<Result<(BilinearModel<'a>, TrainReport)>> =
        grid.par_iter().map(|cfg| train(src, tgt, lex, cfg)).collect();

    let mut best: Option<(usize, f64, usize)> = None;
    let mut models = Vec::with_capacity(grid.len());
    let mut cells = Vec::with_capacity(grid.len());
    for (i, (cfg, result)) in grid.iter().zip(results).enumerate() {
        match result {
            Ok((model, report)) => {
                let p1 = report.best_dev_p1().unwrap_or(0.0);
                let better = match best {
                    None => true,
                    Some((_, bp, br)) => p1 > bp || (p1 == bp && report.final_rank < br),
                };
                if better {
                    best = Some((i, p1, report.final_rank));
                }
                models.push(Some(model));
                cells.push(GridCell {
                    config: cfg.clone(),
                    outcome: Ok(report),
                });
            }
            Err(e) => {
                log::warn!("grid cell {i} failed: {e}");
                models.push(None);
                cells.push(GridCell {
                    config: cfg.clone(),
                    outcome: Err(e),
                });
            }
        }
    }
    let (best_index, _, _) = best.ok_or(Error::AllCellsFailed(grid.len()))?;
    let model = models.swap_remove(best_index).expect("best cell has a model");
    Ok(Selection {
        best_index,
        model,
        cells,
    })
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regularizer::Frobenius => "frobenius",
            Regularizer::FrobeniusSquared => "frobenius_squared",
            Regularizer::Trace => "trace",
        })
    }
}

impl FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frobenius" | "l2" => Ok(Regularizer::Frobenius),
            "frobenius_squared" => Ok(Regularizer::FrobeniusSquared),
            "trace" | "nuclear" => Ok(Regularizer::Trace),
            _ => Err(Error::InvalidArgument(format!("unknown regularizer {s:?}"))),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Constant => "constant",
            Schedule::InverseSqrt => "inverse_sqrt",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "inverse_sqrt" => Ok(Schedule::InverseSqrt),
            _ => Err(Error::InvalidArgument(format!("unknown schedule {s:?}"))),
        }
    }
}

impl FromStr for CandidatePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vocabulary" => Ok(CandidatePolicy::Vocabulary),
            "dictionary" => Ok(CandidatePolicy::DictionaryTargets),
            _ => Err(Error::InvalidArgument(format!("unknown candidate policy {s:?}"))),
        }
    }
}
