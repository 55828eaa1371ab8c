//! Adam, learning-rate schedules, clipping, and the training loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result, RmnError};
use crate::models::{ModelParams, SpectrumEntry};
use crate::param_grad::{grad_mse, LossWeights, ParamGradient};
use crate::sampling::{sample_uniform, PointBatch};
use crate::targets::TargetSpec;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Interval (in iterations) between loss-trace records.
pub const TRACE_EVERY: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0, beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS }
    }
}

/// Fails on the first non-finite gradient entry, naming the parameter.
pub fn check_finite(grad: &ParamGradient) -> Result<()> {
    match grad.values.iter().position(|g| !g.is_finite()) {
        Some(i) => Err(RmnError::NonFiniteGradient { param: grad.layout().param_name(i), value: grad.values[i] }),
        None => Ok(()),
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(state: &mut AdamState, params: &mut ModelParams, grad: &ParamGradient, lr: f64) -> Result<()> {
    if state.m.len() != params.len() || grad.values.len() != params.len() {
        return Err(contract("optimizer state, parameters, and gradient must have the same length"));
    }
    check_finite(grad)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad.values[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params.values[i] -= lr * mhat / (vhat.sqrt() + state.eps);
    }
    Ok(())
}

/// Rescales `grad` so that its Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    /// Cosine annealing from the base rate at step 0 to `lr_final` at the last step.
    Cosine { lr_final: f64 },
}

impl Schedule {
    pub fn lr(&self, lr0: f64, step: usize, total: usize) -> f64 {
        match *self {
            Schedule::Constant => lr0,
            Schedule::Cosine { lr_final } => {
                let frac = if total == 0 { 1.0 } else { (step.min(total)) as f64 / total as f64 };
                lr_final + 0.5 * (lr0 - lr_final) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    /// `w_i` proportional to `|x_i|^2`, normalized to unit mean.
    RSquared,
}

fn default_schedule() -> Schedule {
    Schedule::Constant
}
fn default_weighting() -> Weighting {
    Weighting::Uniform
}
fn default_n_train() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    pub iterations: usize,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub resample_every: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_weighting")]
    pub weighting: Weighting,
    #[serde(default)]
    pub output_normalization: bool,
    /// Training points for function fitting.
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    /// Segment names held fixed during training.
    #[serde(default)]
    pub frozen: Vec<String>,
}

impl TrainConfig {
    /// Function-fitting defaults for the given dimension.
    pub fn fit_defaults(dim: usize) -> Self {
        let (lr, iterations) = if dim == 3 { (1e-3, 8000) } else { (2e-3, 5000) };
        Self {
            lr,
            schedule: Schedule::Constant,
            iterations,
            clip_norm: None,
            resample_every: None,
            seed: 0,
            weighting: Weighting::Uniform,
            output_normalization: false,
            n_train: 10_000,
            frozen: Vec::new(),
        }
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.iterations == 0 {
            return Err(contract("iterations must be at least 1"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(contract("learning rate must be finite and nonnegative"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(contract("clip norm must be positive"));
            }
        }
        if self.resample_every == Some(0) {
            return Err(contract("resample interval must be positive"));
        }
        if let Some(f) = self.frozen.iter().find(|f| params.layout().segment(f).is_none()) {
            return Err(contract(format!("cannot freeze unknown segment `{f}`")));
        }
        Ok(())
    }
}

/// Curriculum multipliers `(s_pde, s_flux)` at `step`.
pub fn curriculum_multipliers(step: usize, warmup_steps: usize) -> (f64, f64) {
    if step >= warmup_steps {
        return (1.0, 1.0);
    }
    let w = warmup_steps as f64;
    let s = step as f64;
    let split = 0.4 * w;
    if s < split {
        let p = s / split;
        (0.1 + 0.9 * p, 0.1 + 0.4 * p)
    } else {
        let q = (s - split) / (w - split);
        (1.0, 0.5 + 0.5 * q)
    }
}

/// Two-phase warmup of the PDE and flux weights; the boundary weight is constant.
pub fn curriculum_weights(step: usize, warmup_steps: usize, base: &LossWeights) -> LossWeights {
    let (sp, sf) = curriculum_multipliers(step, warmup_steps);
    LossWeights { pde: base.pde * sp, bc: base.bc, flux: base.flux * sf }
}

/// A differentiable training objective that may redraw its data.
pub trait Objective {
    /// Draws (or redraws) training data; `round` counts resampling events.
    fn resample(&mut self, round: u64) -> Result<()>;
    /// Total loss, named components, and gradient at `step`.
    fn loss_grad(&self, params: &ModelParams, step: usize) -> Result<(f64, Vec<(String, f64)>, ParamGradient)>;
    /// Output scaling applied to the targets (mean, std), if any.
    fn normalization(&self) -> Option<(f64, f64)> {
        None
    }
}

/// Mean squared error against a benchmark target on uniform samples.
pub struct FitObjective<'a> {
    target: &'a TargetSpec,
    cfg: TrainConfig,
    batch: PointBatch,
    values: Vec<f64>,
    stats: Option<(f64, f64)>,
}

impl<'a> FitObjective<'a> {
    pub fn new(target: &'a TargetSpec, cfg: &TrainConfig) -> Result<Self> {
        let mut o = Self { target, cfg: cfg.clone(), batch: PointBatch::new(target.dim, vec![]), values: vec![], stats: None };
        o.resample(0)?;
        Ok(o)
    }

    pub fn batch(&self) -> &PointBatch {
        &self.batch
    }

    pub fn targets(&self) -> &[f64] {
        &self.values
    }
}

/// Seed of resampling round `round` of a run seeded with `seed`.
pub fn round_seed(seed: u64, round: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(round.wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

impl Objective for FitObjective<'_> {
    fn resample(&mut self, round: u64) -> Result<()> {
        let mut batch = sample_uniform(&self.target.domain, self.cfg.n_train, round_seed(self.cfg.seed, round))?;
        let mut values: Vec<f64> = batch.iter().map(|x| self.target.value(x)).collect();
        if self.cfg.weighting == Weighting::RSquared {
            batch = batch.with_r2_weights(&vec![0.0; self.target.dim]);
        }
        if self.cfg.output_normalization {
            // statistics are fixed by the first draw
            let (mean, std) = *self.stats.get_or_insert_with(|| {
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt().max(1e-300))
            });
            values.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
        self.batch = batch;
        self.values = values;
        Ok(())
    }

    fn loss_grad(&self, params: &ModelParams, _step: usize) -> Result<(f64, Vec<(String, f64)>, ParamGradient)> {
        let (loss, g) = grad_mse(params, &self.batch, &self.values, None)?;
        Ok((loss, vec![("mse".into(), loss)], g))
    }

    fn normalization(&self) -> Option<(f64, f64)> {
        self.stats
    }
}

/// Maps parameters trained on normalized outputs back to the original scale.
pub fn denormalize(params: &mut ModelParams, mean: f64, std: f64) {
    for seg in params.layout().segments().to_vec() {
        let scale = matches!(seg.name, "coeffs" | "ang_coeffs" | "log_coeff" | "log_coeffs" | "bias");
        if scale {
            for v in &mut params.values[seg.offset..seg.offset + seg.len] {
                *v *= std;
            }
        }
    }
    if let Some(b) = params.segment_mut("bias") {
        b[0] += mean;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: f64,
    pub components: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Training stopped at `iteration`; the report holds the last finite state.
    Failed { iteration: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub status: RunStatus,
    pub iterations_run: usize,
    pub final_loss: f64,
    pub final_rmse: Option<f64>,
    pub param_count: usize,
    pub loss_trace: Vec<TraceRow>,
    pub spectrum: Vec<SpectrumEntry>,
    pub centers: Vec<Vec<f64>>,
    pub normalization: Option<(f64, f64)>,
    pub params: serde_json::Value,
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn failed(&self) -> bool {
        matches!(self.status, RunStatus::Failed { .. })
    }

    /// Copy with the wall-clock time zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self { wall_time_s: 0.0, ..self.clone() }
    }

    /// Loss trace as CSV (`iter,loss,<component>...`).
    pub fn trace_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["iter".to_string(), "loss".to_string()];
        if let Some(first) = self.loss_trace.first() {
            header.extend(first.components.iter().map(|(n, _)| n.clone()));
        }
        w.write_record(&header)?;
        for row in &self.loss_trace {
            let mut rec = vec![row.iter.to_string(), row.loss.to_string()];
            rec.extend(row.components.iter().map(|(_, v)| v.to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| RmnError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Result of [`train`]: the trained parameters and the run record.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub report: TrainReport,
}

/// Runs `cfg.iterations` Adam steps on `objective` starting from `init`.
///
/// When the objective normalizes its outputs, the returned parameters are
/// mapped back to the original scale.
pub fn train(init: ModelParams, objective: &mut dyn Objective, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate(&init)?;
    let start = Instant::now();
    let frozen: Vec<bool> = {
        let mut mask = vec![false; init.len()];
        for name in &cfg.frozen {
            let s = init.layout().segment(name).expect("validated");
            mask[s.offset..s.offset + s.len].iter_mut().for_each(|m| *m = true);
        }
        mask
    };
    let mut params = init;
    let mut last_good = params.clone();
    let mut state = AdamState::new(params.len());
    let mut trace = Vec::new();
    let mut status = RunStatus::Completed;
    let mut final_loss = f64::NAN;
    let mut round = 0u64;
    let mut iterations_run = 0;

    for step in 0..cfg.iterations {
        if let Some(every) = cfg.resample_every {
            if step > 0 && step % every == 0 {
                round += 1;
                objective.resample(round)?;
            }
        }
        let (loss, components, mut grad) = match objective.loss_grad(&params, step) {
            Ok(r) => r,
            Err(e) => {
                status = RunStatus::Failed { iteration: step, message: e.to_string() };
                break;
            }
        };
        if !loss.is_finite() {
            status = RunStatus::Failed { iteration: step, message: format!("loss became {loss}") };
            break;
        }
        final_loss = loss;
        last_good = params.clone();
        if step % TRACE_EVERY == 0 {
            trace.push(TraceRow { iter: step, loss, components });
        }
        for (g, f) in grad.values.iter_mut().zip(&frozen) {
            if *f {
                *g = 0.0;
            }
        }
        if let Some(c) = cfg.clip_norm {
            if grad.values.iter().all(|g| g.is_finite()) {
                clip_global_norm(&mut grad.values, c);
            }
        }
        let lr = cfg.schedule.lr(cfg.lr, step, cfg.iterations);
        if let Err(e) = adam_step(&mut state, &mut params, &grad, lr) {
            status = RunStatus::Failed { iteration: step, message: e.to_string() };
            break;
        }
        iterations_run = step + 1;
    }

    if matches!(status, RunStatus::Completed) {
        match objective.loss_grad(&params, cfg.iterations) {
            Ok((loss, components, _)) if loss.is_finite() => {
                final_loss = loss;
                trace.push(TraceRow { iter: cfg.iterations, loss, components });
            }
            Ok((loss, _, _)) => {
                status = RunStatus::Failed { iteration: cfg.iterations, message: format!("loss became {loss}") };
                params = last_good.clone();
            }
            Err(e) => {
                status = RunStatus::Failed { iteration: cfg.iterations, message: e.to_string() };
                params = last_good.clone();
            }
        }
    } else {
        params = last_good;
    }

    let normalization = objective.normalization();
    if let Some((mean, std)) = normalization {
        denormalize(&mut params, mean, std);
    }
    let report = TrainReport {
        seed: cfg.seed,
        status,
        iterations_run,
        final_loss,
        final_rmse: None,
        param_count: params.len(),
        loss_trace: trace,
        spectrum: params.spectrum(),
        centers: params.centers(),
        normalization,
        params: params.to_json(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { params, report })
}
