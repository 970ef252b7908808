//! Full-batch adaptive-moment fitting with an annealed log-barrier.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::SttpModel;
use crate::model::{EventSequence, GridResolution, GridSpec};
use crate::objectives::{barrier_min_intensity, evaluate as eval_terms, mle_barrier_loss, Terms};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    MleBarrier,
    LeastSquares,
}

/// Barrier weight `initial * decay^stage`, the stage advancing every
/// `stage_epochs` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BarrierSchedule {
    pub initial: f64,
    pub decay: f64,
    pub stage_epochs: usize,
    /// Below this intensity the logarithms switch to their guarded form.
    pub floor: f64,
}

impl Default for BarrierSchedule {
    fn default() -> Self {
        Self { initial: 0.1, decay: 0.5, stage_epochs: 100, floor: 1e-6 }
    }
}

impl BarrierSchedule {
    pub fn weight(&self, epoch: usize) -> f64 {
        let stage = if self.stage_epochs == 0 { 0 } else { epoch / self.stage_epochs };
        self.initial * self.decay.powi(stage as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub objective: ObjectiveKind,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier applied at every barrier stage boundary.
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub barrier: BarrierSchedule,
    pub clip_norm: f64,
    pub seed: u64,
    /// Stop when the relative change of the objective stays below this for
    /// `patience` consecutive epochs.
    pub tolerance: f64,
    pub patience: usize,
    /// Quadrature grid used during fitting.
    pub resolution: GridResolution,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            objective: ObjectiveKind::MleBarrier,
            max_epochs: 500,
            learning_rate: 1e-2,
            lr_decay: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            barrier: BarrierSchedule::default(),
            clip_norm: 10.0,
            seed: 0,
            tolerance: 1e-9,
            patience: 10,
            resolution: GridResolution::default(),
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig("learning-rate decay must lie in (0, 1]".into()));
        }
        if !(in_unit(self.beta1) && in_unit(self.beta2)) {
            return Err(Error::InvalidConfig("moment decay rates must lie in (0, 1)".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("clip norm must be positive".into()));
        }
        let b = &self.barrier;
        if !(b.initial >= 0.0 && b.decay > 0.0 && b.decay <= 1.0 && b.floor > 0.0) {
            return Err(Error::InvalidConfig("invalid barrier schedule".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxEpochs,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Loss (to be minimized) before each parameter update.
    pub trace: Vec<f64>,
    pub final_params: Vec<f64>,
    /// Loss at the returned parameters with the last barrier weight.
    pub final_objective: f64,
    pub min_intensity: f64,
    pub grad_norm: f64,
    /// Barrier weight used for `final_objective`.
    pub final_barrier_weight: f64,
    pub seconds: f64,
    pub termination: Termination,
}

/// Anything exposing a flat parameter vector and a differentiable loss.
pub trait Trainable {
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, theta: &[f64]) -> Result<()>;
    /// Loss to minimize and its gradient at the current parameters.
    fn loss_and_grad(&self, barrier_weight: f64) -> Result<(f64, Vec<f64>)>;
    /// Smallest intensity on the constraint nodes.
    fn min_intensity(&self) -> Result<f64>;
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            theta[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

fn norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Generic descent loop shared by every model family.
pub fn fit_trainable<T: Trainable + Clone>(init: &T, opts: &FitOptions) -> Result<(T, FitReport)> {
    opts.validate()?;
    let start = Instant::now();
    let mut model = init.clone();
    let mut theta = model.params();
    let mut adam = Adam::new(theta.len(), opts.learning_rate, opts.beta1, opts.beta2);
    let mut trace = Vec::with_capacity(opts.max_epochs);
    let mut termination = Termination::MaxEpochs;
    let mut grad_norm = 0.0;
    let mut calm = 0;
    for epoch in 0..opts.max_epochs {
        let w = opts.barrier.weight(epoch);
        let stage = if opts.barrier.stage_epochs == 0 { 0 } else { epoch / opts.barrier.stage_epochs };
        adam.set_learning_rate(opts.learning_rate * opts.lr_decay.powi(stage as i32));
        let (loss, mut grad) = model.loss_and_grad(w)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            termination = Termination::Diverged;
            break;
        }
        grad_norm = norm(&grad);
        if let Some(&prev) = trace.last() {
            let change = (loss - prev) / f64::max(f64::abs(prev), 1.0);
            calm = if change.abs() < opts.tolerance { calm + 1 } else { 0 };
        }
        trace.push(loss);
        if calm >= opts.patience.max(1) {
            termination = Termination::Converged;
            break;
        }
        if grad_norm > opts.clip_norm {
            let s = opts.clip_norm / grad_norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        adam.step(&mut theta, &grad);
        model.set_params(&theta)?;
    }
    let last_w = opts.barrier.weight(trace.len().saturating_sub(1));
    let (final_objective, g) = if opts.max_epochs == 0 {
        (f64::NAN, Vec::new())
    } else {
        model.loss_and_grad(last_w)?
    };
    if !g.is_empty() {
        grad_norm = norm(&g);
    }
    if !final_objective.is_nan() && !final_objective.is_finite() {
        termination = Termination::Diverged;
    }
    let report = FitReport {
        trace,
        final_params: model.params(),
        final_objective,
        min_intensity: model.min_intensity()?,
        grad_norm,
        final_barrier_weight: last_w,
        seconds: start.elapsed().as_secs_f64(),
        termination,
    };
    Ok((model, report))
}

/// A spatio-temporal model bound to its training data.
#[derive(Debug, Clone)]
pub struct SttpProblem<'a> {
    pub model: SttpModel,
    pub data: &'a [EventSequence],
    pub grid: GridSpec,
    pub objective: ObjectiveKind,
    pub floor: f64,
}

impl Trainable for SttpProblem<'_> {
    fn params(&self) -> Vec<f64> {
        self.model.params()
    }

    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        self.model.set_params(theta)
    }

    fn loss_and_grad(&self, barrier_weight: f64) -> Result<(f64, Vec<f64>)> {
        let v = match self.objective {
            ObjectiveKind::MleBarrier => mle_barrier_loss(&self.model, self.data, &self.grid, barrier_weight, self.floor, true)?,
            ObjectiveKind::LeastSquares => {
                let terms = Terms { least_squares: true, gradient: true, ..Terms::default() };
                eval_terms(&self.model, self.data, &self.grid, terms)?.0
            }
        };
        Ok((v.value, v.gradient))
    }

    fn min_intensity(&self) -> Result<f64> {
        barrier_min_intensity(&self.model, self.data, &self.grid)
    }
}

/// Fits a spatio-temporal model; the quadrature grid comes from `opts.resolution`.
pub fn fit(model_init: &SttpModel, data: &[EventSequence], opts: &FitOptions) -> Result<(SttpModel, FitReport)> {
    let k = &model_init.kernel;
    let grid = opts.resolution.spec(model_init.window, &model_init.domain, k.tau_max, k.a_max)?;
    for seq in data {
        crate::model::validate_sequence(seq, Some(&model_init.domain)).map_err(Error::InvalidSequence)?;
    }
    if model_init.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidConfig("initial parameters must be finite".into()));
    }
    let problem = SttpProblem { model: model_init.clone(), data, grid, objective: opts.objective, floor: opts.barrier.floor };
    let (p, report) = fit_trainable(&problem, opts)?;
    Ok((p.model, report))
}

/// The training loss of [`fit`] at `model`, without gradient.
pub fn fit_loss(model: &SttpModel, data: &[EventSequence], opts: &FitOptions, barrier_weight: f64) -> Result<f64> {
    let k = &model.kernel;
    let grid = opts.resolution.spec(model.window, &model.domain, k.tau_max, k.a_max)?;
    let v = match opts.objective {
        ObjectiveKind::MleBarrier => mle_barrier_loss(model, data, &grid, barrier_weight, opts.barrier.floor, false)?,
        ObjectiveKind::LeastSquares => eval_terms(model, data, &grid, Terms { least_squares: true, ..Terms::default() })?.0,
    };
    Ok(v.value)
}

/// Held-out metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Average log-likelihood per event; `None` when an event has
    /// nonpositive intensity.
    pub loglik_per_event: Option<f64>,
    /// Average log-likelihood per sequence, same condition.
    pub loglik_per_sequence: Option<f64>,
    pub ls_loss: f64,
    /// Description of the positivity violation, if any.
    pub flag: Option<String>,
}

pub fn evaluate(model: &SttpModel, data: &[EventSequence], grid: &GridSpec) -> Result<Evaluation> {
    let ls = eval_terms(model, data, grid, Terms { least_squares: true, ..Terms::default() })?.0.value;
    let n_events: usize = data.iter().map(|s| s.len()).sum();
    let ll = eval_terms(model, data, grid, Terms { loglik: Some(None), integral: true, ..Terms::default() });
    match ll {
        Ok((v, _)) => {
            let total = v.value * data.len() as f64;
            Ok(Evaluation {
                loglik_per_event: Some(if n_events == 0 { total } else { total / n_events as f64 }),
                loglik_per_sequence: Some(v.value),
                ls_loss: ls,
                flag: None,
            })
        }
        Err(e @ Error::NonPositiveIntensityAtEvent { .. }) => {
            Ok(Evaluation { loglik_per_event: None, loglik_per_sequence: None, ls_loss: ls, flag: Some(e.to_string()) })
        }
        Err(e) => Err(e),
    }
}
