//! Deterministic training on synthetic teacher-student regression tasks.
//!
//! Only the adapter's trainable matrices move; `W0` and basis indices are
//! reachable only through shared references during training.

mod optim;
mod task;

use std::io::Write;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{LrSchedule, OptimizerKind};
pub use task::{eval, make_task, mse, population_mse, SyntheticTask, TaskKind};

use crate::accounting::OpCounters;
use crate::adapters::AdapterLayer;
use crate::autograd::backward;
use crate::error::{dim_err, Result, SboraError};
use crate::matrix::{Activation, Matrix, Scalar};
use optim::Optimizer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            lr: 1e-2,
            optimizer: OptimizerKind::default(),
            schedule: LrSchedule::Constant,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(SboraError::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SboraError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            let unit = |b: f64| (0.0..1.0).contains(&b);
            if !unit(beta1) || !unit(beta2) || eps.is_nan() || eps <= 0.0 {
                return Err(SboraError::Config("adam betas must lie in [0, 1) and eps > 0".into()));
            }
        }
        Ok(())
    }
}

/// Record of one training run.
#[derive(Debug, Clone)]
pub struct TrainTrace<T> {
    /// Minibatch loss before each update.
    pub losses: Vec<f64>,
    pub final_trainable: Vec<Matrix<T>>,
    /// Informational only; excluded from serialized output.
    pub wall_clock: Duration,
    /// Forward-pass operations over the whole run.
    pub counters: OpCounters,
}

/// Deterministic digest of a trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub steps: usize,
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub min_loss: Option<f64>,
    pub forward_mults: u64,
    pub forward_adds: u64,
}

impl<T: Scalar> TrainTrace<T> {
    /// `step,loss` rows, steps counted from 0.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| SboraError::Io(std::io::Error::other(e));
        w.write_record(["step", "loss"]).map_err(io)?;
        for (step, loss) in self.losses.iter().enumerate() {
            w.serialize((step, loss)).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            steps: self.losses.len(),
            first_loss: self.losses.first().copied(),
            final_loss: self.losses.last().copied(),
            min_loss: self.losses.iter().copied().reduce(f64::min),
            forward_mults: self.counters.mults(),
            forward_adds: self.counters.adds(),
        }
    }
}

/// Minimizes minibatch MSE of `layer` against `task` targets.
///
/// Inputs come from a ChaCha stream keyed by `cfg.seed` and the task's input
/// seed, so a run is bit-for-bit reproducible.
pub fn train<T: Scalar>(
    layer: &mut AdapterLayer<T>,
    task: &SyntheticTask<T>,
    cfg: &TrainConfig,
) -> Result<TrainTrace<T>> {
    cfg.validate()?;
    if (layer.d(), layer.k()) != (task.d(), task.k()) {
        return Err(dim_err(format!(
            "layer is {}x{} but task is {}x{}",
            layer.d(),
            layer.k(),
            task.d(),
            task.k()
        )));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(task.input_seed);
    let mut opt = Optimizer::new(cfg.optimizer, &layer.trainable());
    let mut counters = OpCounters::default();
    let mut losses = Vec::with_capacity(cfg.steps);
    let scale = 2.0 / (cfg.batch_size * task.d()) as f64;

    for step in 0..cfg.steps {
        let (x, y) = task.sample(cfg.batch_size, &mut rng)?;
        let h = layer.forward_counted(&x, &mut counters)?;
        let loss = mse(&h, &y);
        if !loss.is_finite() {
            return Err(SboraError::Diverged { step, loss });
        }
        losses.push(loss);
        let up_data = h
            .data()
            .iter()
            .zip(y.data())
            .map(|(&a, &b)| T::of(scale * (a.as_f64() - b.as_f64())))
            .collect();
        let upstream = Activation::from_vec(h.batch(), h.features(), up_data)?;
        let grads = backward(layer, &x, &upstream)?;
        if !grads.is_finite() {
            return Err(SboraError::Diverged { step, loss: f64::NAN });
        }
        let lr = cfg.lr * cfg.schedule.factor(step, cfg.steps);
        opt.step(layer.trainable_mut(), &grads.grads, lr);
    }

    Ok(TrainTrace {
        losses,
        final_trainable: layer.trainable().into_iter().cloned().collect(),
        wall_clock: start.elapsed(),
        counters: counters.checked()?,
    })
}
