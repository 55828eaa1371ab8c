//! Bounded-domain 3D Poisson problem with point charges: finite-difference
//! ground truth, Gauss-flux metric, and supervised / physics-informed runs.
//!
//! The solution of `-lap u = sum_j q_j delta(x - c_j)` on `[-L, L]^3` with
//! `u = 0` on the boundary is split as `u = u_sing + v`, where `u_sing` is the
//! free-space field and `v` is harmonic with `v = -u_sing` on the boundary.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{contract, Result, RmnError};
use crate::models::{ModelKind, ModelParams, ModelSpec};
use crate::optim::{curriculum_weights, round_seed, train, Objective, RunStatus, Schedule, TrainConfig, Weighting};
use crate::param_grad::{flux_residuals, grad_mse, grad_pinn, LossWeights, ParamGradient, SphereSamples};
use crate::sampling::{boundary_sample_cube, fibonacci_sphere, rng_from_seed, sample_uniform, Domain, PointBatch, Puncture};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Charge {
    pub center: [f64; 3],
    pub q: f64,
}

fn default_epsilon() -> f64 {
    0.08
}
fn default_d_min() -> f64 {
    0.15
}
fn default_half_width() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargeConfig {
    pub charges: Vec<Charge>,
    /// Puncture radius around each charge.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Minimum distance from a charge to the cube faces.
    #[serde(default = "default_d_min")]
    pub d_min: f64,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
}

impl ChargeConfig {
    pub fn single(center: [f64; 3], q: f64) -> Self {
        Self { charges: vec![Charge { center, q }], epsilon: 0.08, d_min: 0.15, half_width: 1.0 }
    }

    /// Unit charge with its center uniform in the cube shrunk by `d_min`.
    pub fn random_single(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let reach = 1.0 - 0.15;
        let center = [0; 3].map(|_| rng.random_range(-reach..reach));
        Self::single(center, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > 0.0) || !(self.epsilon > 0.0) {
            return Err(contract("half width and puncture radius must be positive"));
        }
        if self.epsilon >= self.d_min {
            return Err(contract(format!("puncture radius {} must be below d_min {}", self.epsilon, self.d_min)));
        }
        for c in &self.charges {
            if c.center.iter().any(|v| v.abs() > self.half_width - self.d_min) {
                return Err(contract(format!("charge at {:?} is closer than d_min to the boundary", c.center)));
            }
            if !c.q.is_finite() {
                return Err(contract("charge magnitude must be finite"));
            }
        }
        Ok(())
    }

    /// The cube with a ball of radius `epsilon` removed around every charge.
    pub fn domain(&self) -> Domain {
        Domain::PuncturedCube {
            half_width: self.half_width,
            punctures: self.charges.iter().map(|c| Puncture::new(&c.center, self.epsilon)).collect(),
        }
    }

    /// Free-space field `sum_j q_j / (4 pi |x - c_j|)`.
    pub fn u_sing(&self, x: &[f64]) -> f64 {
        self.charges.iter().map(|c| c.q / (4.0 * PI * dist(x, &c.center))).sum()
    }

    pub fn u_sing_gradient(&self, x: &[f64]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for c in &self.charges {
            let r = dist(x, &c.center);
            let s = -c.q / (4.0 * PI * r * r * r);
            for i in 0..3 {
                g[i] += s * (x[i] - c.center[i]);
            }
        }
        g
    }

    /// Fibonacci quadrature on every puncture sphere.
    pub fn spheres(&self, n_sphere: usize) -> Vec<SphereSamples> {
        self.charges
            .iter()
            .map(|c| SphereSamples { radius: self.epsilon, charge: c.q, points: fibonacci_sphere(c.center, self.epsilon, n_sphere) })
            .collect()
    }
}

fn dist(x: &[f64], c: &[f64; 3]) -> f64 {
    ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2)).sqrt()
}

/// Harmonic correction `v` on an `n^3` node grid, row-major with `x` slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthField {
    pub n: usize,
    pub config: ChargeConfig,
    pub tol: f64,
    pub iterations: usize,
    pub residual: f64,
    pub values: Vec<f64>,
}

/// Iteration cap for the conjugate-gradient solve.
pub fn cg_iteration_cap(n: usize) -> usize {
    50 * n + 500
}

impl GroundTruthField {
    pub fn spacing(&self) -> f64 {
        2.0 * self.config.half_width / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let (h, l) = (self.spacing(), self.config.half_width);
        [-l + i as f64 * h, -l + j as f64 * h, -l + k as f64 * h]
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    /// Cell index and local coordinate of `x` along one axis.
    fn locate(&self, x: f64) -> (usize, f64) {
        let t = (x + self.config.half_width) / self.spacing();
        let i = (t.floor().max(0.0) as usize).min(self.n - 2);
        (i, (t - i as f64).clamp(0.0, 1.0))
    }

    fn corners(&self, x: &[f64]) -> ([usize; 3], [f64; 3]) {
        let (i, a) = self.locate(x[0]);
        let (j, b) = self.locate(x[1]);
        let (k, c) = self.locate(x[2]);
        ([i, j, k], [a, b, c])
    }

    /// Trilinear interpolant of `v`.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let ([i, j, k], [a, b, c]) = self.corners(x);
        let mut s = 0.0;
        for (di, wa) in [(0, 1.0 - a), (1, a)] {
            for (dj, wb) in [(0, 1.0 - b), (1, b)] {
                for (dk, wc) in [(0, 1.0 - c), (1, c)] {
                    s += wa * wb * wc * self.values[self.index(i + di, j + dj, k + dk)];
                }
            }
        }
        s
    }

    /// Gradient of the trilinear interpolant of `v` inside the cell holding `x`.
    pub fn interpolate_gradient(&self, x: &[f64]) -> [f64; 3] {
        let ([i, j, k], [a, b, c]) = self.corners(x);
        let h = self.spacing();
        let mut g = [0.0; 3];
        for di in 0..2 {
            for dj in 0..2 {
                for dk in 0..2 {
                    let v = self.values[self.index(i + di, j + dj, k + dk)];
                    let wa = if di == 1 { a } else { 1.0 - a };
                    let wb = if dj == 1 { b } else { 1.0 - b };
                    let wc = if dk == 1 { c } else { 1.0 - c };
                    let sa = if di == 1 { 1.0 } else { -1.0 };
                    let sb = if dj == 1 { 1.0 } else { -1.0 };
                    let sc = if dk == 1 { 1.0 } else { -1.0 };
                    g[0] += sa * wb * wc * v / h;
                    g[1] += wa * sb * wc * v / h;
                    g[2] += wa * wb * sc * v / h;
                }
            }
        }
        g
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        let l = self.config.half_width * (1.0 + 1e-12);
        if x.len() != 3 || x.iter().any(|v| v.abs() > l) {
            return Err(contract(format!("point {x:?} lies outside the cube")));
        }
        if self.config.charges.iter().any(|c| dist(x, &c.center) < self.config.epsilon * (1.0 - 1e-9)) {
            return Err(contract(format!("point {x:?} lies inside a puncture")));
        }
        Ok(())
    }
}

/// Solves the 7-point discrete Laplace problem for `v` by conjugate gradients.
pub fn solve_smooth_correction(cfg: &ChargeConfig, n_grid: usize, tol: f64) -> Result<GroundTruthField> {
    cfg.validate()?;
    if n_grid < 17 {
        return Err(contract("the ground-truth grid needs at least 17 nodes per axis"));
    }
    if !(tol > 0.0) {
        return Err(contract("solver tolerance must be positive"));
    }
    let n = n_grid;
    let mut field = GroundTruthField { n, config: cfg.clone(), tol, iterations: 0, residual: 0.0, values: vec![0.0; n * n * n] };
    let boundary = |i: usize| i == 0 || i == n - 1;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if boundary(i) || boundary(j) || boundary(k) {
                    let x = field.node(i, j, k);
                    let idx = field.index(i, j, k);
                    field.values[idx] = -cfg.u_sing(&x);
                }
            }
        }
    }

    // A = 6 I - (interior adjacency) on interior nodes; boundary entries of
    // the work vectors stay zero.
    let s1 = n * n;
    let s2 = n;
    let interior = |f: &mut dyn FnMut(usize)| {
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let base = i * s1 + j * s2;
                for k in 1..n - 1 {
                    f(base + k);
                }
            }
        }
    };
    let len = n * n * n;
    let mut b = vec![0.0; len];
    {
        let vals = &field.values;
        interior(&mut |idx| {
            let mut s = 0.0;
            for nb in [idx - s1, idx + s1, idx - s2, idx + s2, idx - 1, idx + 1] {
                if is_boundary(nb, n) {
                    s += vals[nb];
                }
            }
            b[idx] = s;
        });
    }
    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
    let apply = |p: &[f64], out: &mut [f64]| {
        interior(&mut |idx| {
            out[idx] = 6.0 * p[idx] - p[idx - s1] - p[idx + s1] - p[idx - s2] - p[idx + s2] - p[idx - 1] - p[idx + 1];
        });
    };
    let b_norm = dot(&b, &b).sqrt();
    let mut x = vec![0.0; len];
    if b_norm > 0.0 {
        let mut r = b.clone();
        let mut p = r.clone();
        let mut ap = vec![0.0; len];
        let mut rr = dot(&r, &r);
        let cap = cg_iteration_cap(n);
        let mut it = 0;
        while rr.sqrt() / b_norm >= tol {
            if it == cap {
                return Err(RmnError::NoConvergence { iterations: it, residual: rr.sqrt() / b_norm });
            }
            apply(&p, &mut ap);
            let alpha = rr / dot(&p, &ap);
            x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
            r.iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
            rr = rr_new;
            it += 1;
        }
        field.iterations = it;
        field.residual = rr.sqrt() / b_norm;
    }
    interior(&mut |idx| field.values[idx] = x[idx]);
    Ok(field)
}

fn is_boundary(idx: usize, n: usize) -> bool {
    let k = idx % n;
    let j = (idx / n) % n;
    let i = idx / (n * n);
    i == 0 || j == 0 || k == 0 || i == n - 1 || j == n - 1 || k == n - 1
}

/// `u_sing(x)` plus the trilinear interpolant of `v`.
pub fn eval_ground_truth(field: &GroundTruthField, x: &[f64]) -> Result<f64> {
    field.check_point(x)?;
    Ok(field.config.u_sing(x) + field.interpolate(x))
}

/// Gradient of [`eval_ground_truth`] (exact singular part, cellwise interpolant).
pub fn ground_truth_gradient(field: &GroundTruthField, x: &[f64]) -> Result<[f64; 3]> {
    field.check_point(x)?;
    let gs = field.config.u_sing_gradient(x);
    let gv = field.interpolate_gradient(x);
    Ok([gs[0] + gv[0], gs[1] + gv[1], gs[2] + gv[2]])
}

const GRID_MAGIC: &[u8] = b"RMNGRID1\n";

#[derive(Serialize, Deserialize)]
struct GridHeader {
    n_grid: usize,
    tol: f64,
    iterations: usize,
    residual: f64,
    config: ChargeConfig,
    layout: String,
}

/// Cache key: hex SHA-256 of the canonical JSON of `(config, n_grid, tol)`.
pub fn cache_key(cfg: &ChargeConfig, n_grid: usize, tol: f64) -> String {
    let doc = serde_json::json!({ "config": cfg, "n_grid": n_grid, "tol": tol });
    let digest = Sha256::digest(doc.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn cache_path(dir: &Path, cfg: &ChargeConfig, n_grid: usize, tol: f64) -> PathBuf {
    dir.join(format!("grid_{}.bin", &cache_key(cfg, n_grid, tol)[..16]))
}

/// Writes the field as magic line, JSON header line, then `n^3` little-endian f64.
pub fn write_field<W: Write>(field: &GroundTruthField, mut out: W) -> Result<()> {
    let header = GridHeader {
        n_grid: field.n,
        tol: field.tol,
        iterations: field.iterations,
        residual: field.residual,
        config: field.config.clone(),
        layout: "row-major f64-le, index (i*n + j)*n + k, x = -L + i*h".into(),
    };
    out.write_all(GRID_MAGIC)?;
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(field.values.len() * 8);
    for v in &field.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_field<R: Read>(input: R) -> Result<GroundTruthField> {
    let mut r = BufReader::new(input);
    let mut magic = Vec::new();
    r.read_until(b'\n', &mut magic)?;
    if magic != GRID_MAGIC {
        return Err(contract("not a ground-truth grid file"));
    }
    let mut line = String::new();
    r.read_line(&mut line)?;
    let h: GridHeader = serde_json::from_str(&line)?;
    let len = h.n_grid.pow(3);
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)?;
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(GroundTruthField { n: h.n_grid, config: h.config, tol: h.tol, iterations: h.iterations, residual: h.residual, values })
}

/// Loads the field from `cache_dir` when present and matching, otherwise
/// solves and writes it there.
pub fn load_or_solve(cfg: &ChargeConfig, n_grid: usize, tol: f64, cache_dir: Option<&Path>) -> Result<GroundTruthField> {
    let Some(dir) = cache_dir else {
        return solve_smooth_correction(cfg, n_grid, tol);
    };
    let path = cache_path(dir, cfg, n_grid, tol);
    if let Ok(f) = fs::File::open(&path) {
        if let Ok(field) = read_field(f) {
            if field.config == *cfg && field.n == n_grid && field.tol == tol {
                return Ok(field);
            }
        }
    }
    let field = solve_smooth_correction(cfg, n_grid, tol)?;
    fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp");
    write_field(&field, std::io::BufWriter::new(fs::File::create(&tmp)?))?;
    fs::rename(&tmp, &path)?;
    Ok(field)
}

/// Absolute Gauss-law violation `|A mean(grad(phi) . n) + q_j|` per charge.
pub fn flux_error(params: &ModelParams, cfg: &ChargeConfig, n_sphere: usize) -> Result<Vec<f64>> {
    if n_sphere < 100 {
        return Err(contract("flux quadrature needs at least 100 sphere points"));
    }
    Ok(flux_residuals(params, &cfg.spheres(n_sphere))?.into_iter().map(f64::abs).collect())
}

/// `||phi - u*||_2 / ||u*||_2` over `points`.
pub fn rel_l2(params: &ModelParams, field: &GroundTruthField, points: &PointBatch) -> Result<f64> {
    let ev = params.evaluator();
    let (mut num, mut den) = (0.0, 0.0);
    for x in points.iter() {
        let u = eval_ground_truth(field, x)?;
        let phi = ev.probe(x, &crate::models::Probe::Value, None)?;
        num += (phi - u).powi(2);
        den += u * u;
    }
    if den == 0.0 {
        return Err(contract("relative L2 error is undefined for a zero reference field"));
    }
    Ok((num / den).sqrt())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinnMode {
    /// Mean squared error against the ground truth.
    Supervised,
    /// PDE residual, boundary, and flux losses only.
    #[default]
    Pinn,
}

impl PinnMode {
    pub fn label(&self) -> &'static str {
        match self {
            PinnMode::Supervised => "supervised",
            PinnMode::Pinn => "pinn",
        }
    }
}

fn d_n_grid() -> usize {
    65
}
fn d_tol() -> f64 {
    1e-8
}
fn d_k() -> usize {
    6
}
fn d_steps() -> usize {
    25_000
}
fn d_lr() -> f64 {
    1e-2
}
fn d_lr_final() -> f64 {
    1e-4
}
fn d_clip() -> f64 {
    1.0
}
fn d_resample() -> usize {
    2500
}
fn d_n_int() -> usize {
    30_000
}
fn d_n_bc() -> usize {
    8000
}
fn d_n_sphere() -> usize {
    1500
}
fn d_warmup() -> f64 {
    0.2
}
fn d_n_eval() -> usize {
    5000
}

/// Settings of one Poisson run; unset fields take the standard values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinnRunConfig {
    #[serde(default)]
    pub mode: PinnMode,
    /// Fixed charges; when absent a unit charge is placed at random per seed.
    #[serde(default)]
    pub charges: Option<ChargeConfig>,
    #[serde(default = "d_n_grid")]
    pub n_grid: usize,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_lr_final")]
    pub lr_final: f64,
    #[serde(default = "d_clip")]
    pub clip_norm: f64,
    #[serde(default = "d_resample")]
    pub resample_every: usize,
    #[serde(default = "d_n_int")]
    pub n_interior: usize,
    #[serde(default = "d_n_bc")]
    pub n_boundary: usize,
    #[serde(default = "d_n_sphere")]
    pub n_sphere: usize,
    #[serde(default)]
    pub weights: LossWeights,
    /// Curriculum warmup length as a fraction of `steps`.
    #[serde(default = "d_warmup")]
    pub warmup_frac: f64,
    #[serde(default = "d_n_eval")]
    pub n_eval: usize,
}

impl PinnRunConfig {
    pub fn new(mode: PinnMode) -> Self {
        serde_json::from_value(serde_json::json!({ "mode": mode })).expect("defaults deserialize")
    }

    pub fn charges_for_seed(&self, seed: u64) -> ChargeConfig {
        self.charges.clone().unwrap_or_else(|| ChargeConfig::random_single(seed))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            schedule: Schedule::Cosine { lr_final: self.lr_final },
            iterations: self.steps,
            clip_norm: Some(self.clip_norm),
            resample_every: Some(self.resample_every),
            seed,
            weighting: Weighting::Uniform,
            output_normalization: false,
            n_train: self.n_interior,
            frozen: vec!["centers".into(), "log_coeffs".into()],
        }
    }
}

/// Multi-center model with fixed centers on the charges, no log terms, and
/// the first coefficient of each center set to `q_j / (4 pi)`.
pub fn pinn_model(cfg: &ChargeConfig, k: usize, seed: u64) -> Result<ModelParams> {
    let spec = ModelSpec::new(ModelKind::MultiCenter { centers: cfg.charges.len() }, 3).with_k(k).with_range(-1.0, 2.0);
    let mut p = ModelParams::init(spec, &mut rng_from_seed(seed))?;
    let centers: Vec<Vec<f64>> = cfg.charges.iter().map(|c| c.center.to_vec()).collect();
    p.set_centers(&centers)?;
    p.segment_mut("log_coeffs").expect("multi-center model").fill(0.0);
    let coeffs = p.segment_mut("coeffs").expect("multi-center model");
    for (j, c) in cfg.charges.iter().enumerate() {
        coeffs[j * k] = c.q / (4.0 * PI);
    }
    Ok(p)
}

/// Physics-informed objective with the warmup curriculum.
pub struct PinnObjective {
    cfg: ChargeConfig,
    run: PinnRunConfig,
    seed: u64,
    interior: PointBatch,
    boundary: PointBatch,
    spheres: Vec<SphereSamples>,
}

impl PinnObjective {
    pub fn new(cfg: &ChargeConfig, run: &PinnRunConfig, seed: u64) -> Result<Self> {
        let mut o = Self {
            cfg: cfg.clone(),
            run: run.clone(),
            seed,
            interior: PointBatch::new(3, vec![]),
            boundary: PointBatch::new(3, vec![]),
            spheres: cfg.spheres(run.n_sphere),
        };
        o.resample(0)?;
        Ok(o)
    }
}

impl Objective for PinnObjective {
    fn resample(&mut self, round: u64) -> Result<()> {
        let s = round_seed(self.seed, round);
        self.interior = sample_uniform(&self.cfg.domain(), self.run.n_interior, s)?;
        self.boundary = boundary_sample_cube(self.cfg.half_width, self.run.n_boundary, s ^ 0x5555)?;
        Ok(())
    }

    fn loss_grad(&self, params: &ModelParams, step: usize) -> Result<(f64, Vec<(String, f64)>, ParamGradient)> {
        let warmup = (self.run.warmup_frac * self.run.steps as f64).round() as usize;
        let w = curriculum_weights(step, warmup, &self.run.weights);
        let (loss, g) = grad_pinn(params, &self.interior, &self.boundary, &self.spheres, &w)?;
        let comps = vec![("pde".into(), loss.pde), ("bc".into(), loss.bc), ("flux".into(), loss.flux)];
        Ok((loss.total, comps, g))
    }
}

/// Mean squared error against the ground-truth field.
pub struct SupervisedObjective<'a> {
    field: &'a GroundTruthField,
    n: usize,
    seed: u64,
    batch: PointBatch,
    values: Vec<f64>,
}

impl<'a> SupervisedObjective<'a> {
    pub fn new(field: &'a GroundTruthField, n: usize, seed: u64) -> Result<Self> {
        let mut o = Self { field, n, seed, batch: PointBatch::new(3, vec![]), values: vec![] };
        o.resample(0)?;
        Ok(o)
    }
}

impl Objective for SupervisedObjective<'_> {
    fn resample(&mut self, round: u64) -> Result<()> {
        self.batch = sample_uniform(&self.field.config.domain(), self.n, round_seed(self.seed, round))?;
        self.values = self.batch.iter().map(|x| eval_ground_truth(self.field, x)).collect::<Result<_>>()?;
        Ok(())
    }

    fn loss_grad(&self, params: &ModelParams, _step: usize) -> Result<(f64, Vec<(String, f64)>, ParamGradient)> {
        let (loss, g) = grad_mse(params, &self.batch, &self.values, None)?;
        Ok((loss, vec![("mse".into(), loss)], g))
    }
}

/// Metrics of one seed of a Poisson run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinnResult {
    pub seed: u64,
    pub mode: PinnMode,
    pub charges: ChargeConfig,
    pub rel_l2: f64,
    pub flux_error: Vec<f64>,
    pub exponents: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub failed: bool,
    pub report: crate::optim::TrainReport,
}

impl PinnResult {
    pub fn mean_flux_error(&self) -> f64 {
        self.flux_error.iter().sum::<f64>() / self.flux_error.len() as f64
    }
}

/// Trains one seed and evaluates it against the (cached) ground truth.
pub fn run_pinn_seed(run: &PinnRunConfig, seed: u64, cache_dir: Option<&Path>) -> Result<PinnResult> {
    let charges = run.charges_for_seed(seed);
    charges.validate()?;
    let field = load_or_solve(&charges, run.n_grid, run.tol, cache_dir)?;
    let init = pinn_model(&charges, run.k, seed)?;
    let tcfg = run.train_config(seed);
    let outcome = match run.mode {
        PinnMode::Pinn => train(init, &mut PinnObjective::new(&charges, run, seed)?, &tcfg)?,
        PinnMode::Supervised => train(init, &mut SupervisedObjective::new(&field, run.n_interior, seed)?, &tcfg)?,
    };
    let eval = sample_uniform(&charges.domain(), run.n_eval, round_seed(seed, u64::MAX))?;
    let p = &outcome.params;
    Ok(PinnResult {
        seed,
        mode: run.mode,
        rel_l2: rel_l2(p, &field, &eval)?,
        flux_error: flux_error(p, &charges, run.n_sphere.max(100))?,
        exponents: p.exponents(0),
        coefficients: p.segment("coeffs").expect("multi-center model")[..run.k].to_vec(),
        failed: matches!(outcome.report.status, RunStatus::Failed { .. }),
        charges,
        report: outcome.report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn centered_33() -> &'static GroundTruthField {
        static F: OnceLock<GroundTruthField> = OnceLock::new();
        F.get_or_init(|| solve_smooth_correction(&ChargeConfig::single([0.0; 3], 1.0), 33, 1e-10).unwrap())
    }

    fn centered_65() -> &'static GroundTruthField {
        static F: OnceLock<GroundTruthField> = OnceLock::new();
        F.get_or_init(|| solve_smooth_correction(&ChargeConfig::single([0.0; 3], 1.0), 65, 1e-8).unwrap())
    }

    #[test]
    fn zero_charges_give_zero_correction() {
        let cfg = ChargeConfig { charges: vec![], ..ChargeConfig::single([0.0; 3], 1.0) };
        let f = solve_smooth_correction(&cfg, 17, 1e-8).unwrap();
        assert!(f.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn residual_below_tolerance() {
        let f = centered_33();
        let n = f.n;
        let (mut num, mut bnorm) = (0.0f64, 0.0f64);
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                for k in 1..n - 1 {
                    let c = f.values[f.index(i, j, k)];
                    let s = f.values[f.index(i - 1, j, k)]
                        + f.values[f.index(i + 1, j, k)]
                        + f.values[f.index(i, j - 1, k)]
                        + f.values[f.index(i, j + 1, k)]
                        + f.values[f.index(i, j, k - 1)]
                        + f.values[f.index(i, j, k + 1)];
                    num += (6.0 * c - s).powi(2);
                    bnorm = bnorm.max(s.abs());
                }
            }
        }
        assert!(num.sqrt() < 1e-8 * bnorm * (n as f64).powf(1.5), "{}", num.sqrt());
        assert!(f.residual < 1e-10);
    }

    #[test]
    fn centered_charge_has_cube_symmetry() {
        let f = centered_33();
        let n = f.n;
        let scale = f.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = f.values[f.index(i, j, k)];
                    for w in [
                        f.values[f.index(j, i, k)],
                        f.values[f.index(k, j, i)],
                        f.values[f.index(i, k, j)],
                        f.values[f.index(n - 1 - i, j, k)],
                        f.values[f.index(i, n - 1 - j, n - 1 - k)],
                    ] {
                        assert!((v - w).abs() < 1e-9 * scale, "{v} vs {w}");
                    }
                }
            }
        }
    }

    #[test]
    fn center_value_converges_under_refinement() {
        let a = centered_33().interpolate(&[0.0; 3]);
        let b = centered_65().interpolate(&[0.0; 3]);
        assert!(((a - b) / b).abs() < 0.02, "{a} vs {b}");
        assert!(b < 0.0);
    }

    #[test]
    fn maximum_principle() {
        let f = centered_33();
        let n = f.n;
        let (mut bmin, mut bmax, mut imin, mut imax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = f.values[f.index(i, j, k)];
                    if is_boundary(f.index(i, j, k), n) {
                        bmin = bmin.min(v);
                        bmax = bmax.max(v);
                    } else {
                        imin = imin.min(v);
                        imax = imax.max(v);
                    }
                }
            }
        }
        assert!(imin >= bmin - 1e-10 && imax <= bmax + 1e-10);
    }

    #[test]
    fn interpolation_identities() {
        let f = centered_33();
        let x = f.node(20, 7, 11);
        let u = eval_ground_truth(f, &x).unwrap();
        assert_eq!(u, f.config.u_sing(&x) + f.values[f.index(20, 7, 11)]);

        let mut lin = f.clone();
        for i in 0..f.n {
            for j in 0..f.n {
                for k in 0..f.n {
                    let p = f.node(i, j, k);
                    let idx = f.index(i, j, k);
                    lin.values[idx] = 0.3 + 2.0 * p[0] - p[1] + 0.5 * p[2];
                }
            }
        }
        for x in [[0.123, -0.456, 0.789], [-0.99, 0.5, 0.01], [1.0, 1.0, -1.0]] {
            let expect = 0.3 + 2.0 * x[0] - x[1] + 0.5 * x[2];
            assert!((lin.interpolate(&x) - expect).abs() < 1e-12);
            let g = lin.interpolate_gradient(&x);
            assert!((g[0] - 2.0).abs() < 1e-10 && (g[1] + 1.0).abs() < 1e-10 && (g[2] - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn boundary_values_are_small() {
        let cfg = ChargeConfig::single([0.3, -0.2, 0.1], 1.0);
        let f = solve_smooth_correction(&cfg, 65, 1e-8).unwrap();
        let b = boundary_sample_cube(1.0, 2000, 4).unwrap();
        let max_sing = b.iter().map(|x| cfg.u_sing(x)).fold(0.0f64, f64::max);
        for x in b.iter() {
            let u = eval_ground_truth(&f, x).unwrap();
            assert!(u.abs() < 5e-2 * max_sing, "{u} at {x:?}");
        }
    }

    #[test]
    fn puncture_points_are_rejected() {
        let f = centered_33();
        assert!(eval_ground_truth(f, &[0.01, 0.0, 0.0]).is_err());
        assert!(eval_ground_truth(f, &[1.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn ground_truth_flux_matches_charge() {
        let f = centered_65();
        let cfg = &f.config;
        let pts = fibonacci_sphere([0.0; 3], cfg.epsilon, 1500);
        let mean: f64 = pts
            .iter()
            .map(|(x, n)| {
                let g = ground_truth_gradient(f, x).unwrap();
                g[0] * n[0] + g[1] * n[1] + g[2] * n[2]
            })
            .sum::<f64>()
            / pts.len() as f64;
        let flux = 4.0 * PI * cfg.epsilon.powi(2) * mean;
        assert!((flux + 1.0).abs() < 1e-2, "{flux}");
    }

    fn coulomb_params(cfg: &ChargeConfig, scale: f64) -> ModelParams {
        let mut p = ModelParams::zeros(ModelSpec::new(ModelKind::MultiCenter { centers: 1 }, 3).with_k(6).with_range(-2.0, 2.0)).unwrap();
        p.set_centers(&[cfg.charges[0].center.to_vec()]).unwrap();
        p.set_exponents(0, &[-1.0, -0.5, 0.0, 0.5, 1.0, 2.0]).unwrap();
        p.segment_mut("coeffs").unwrap()[0] = scale * cfg.charges[0].q / (4.0 * PI);
        p
    }

    #[test]
    fn flux_error_examples() {
        let cfg = ChargeConfig::single([0.1, 0.2, -0.3], 1.0);
        let p = coulomb_params(&cfg, 1.0);
        assert!(flux_error(&p, &cfg, 1500).unwrap()[0] < 1e-3);
        let c = ModelParams::zeros(p.spec.clone()).unwrap();
        assert!((flux_error(&c, &cfg, 200).unwrap()[0] - 1.0).abs() < 1e-15);
        assert!(flux_error(&p, &cfg, 50).is_err());
        // the flux integral is linear in the coefficients
        let flux = |s: f64| flux_residuals(&coulomb_params(&cfg, s), &cfg.spheres(500)).unwrap()[0] - 1.0;
        assert!((flux(2.0) - 2.0 * flux(1.0)).abs() < 1e-12);
    }

    #[test]
    fn rel_l2_examples() {
        let f = centered_33();
        let pts = sample_uniform(&f.config.domain(), 500, 9).unwrap();
        let zero = ModelParams::zeros(ModelSpec::new(ModelKind::MultiCenter { centers: 1 }, 3).with_k(6)).unwrap();
        assert!((rel_l2(&zero, f, &pts).unwrap() - 1.0).abs() < 1e-15);

        // a charge in a huge box: the correction is negligible near the charge
        let big = ChargeConfig { half_width: 50.0, ..ChargeConfig::single([0.0; 3], 1.0) };
        let fb = solve_smooth_correction(&big, 33, 1e-10).unwrap();
        let near = sample_uniform(&Domain::ShellBall3D { r_min: 0.1, r_max: 1.0 }, 300, 2).unwrap();
        let p = coulomb_params(&big, 1.0);
        let err = rel_l2(&p, &fb, &near).unwrap();
        assert!(err < 0.02, "{err}");
    }

    #[test]
    fn doubled_model_has_unit_error() {
        let cfg = ChargeConfig::single([0.0; 3], 1.0);
        let f = centered_33();
        let pts = sample_uniform(&cfg.domain(), 300, 1).unwrap();
        let truth: Vec<f64> = pts.iter().map(|x| eval_ground_truth(f, x).unwrap()).collect();
        let num: f64 = truth.iter().map(|u| u * u).sum::<f64>().sqrt();
        // u_theta = 2 u*: ||2u* - u*|| / ||u*|| = 1
        let e = truth.iter().map(|u| (2.0 * u - u).powi(2)).sum::<f64>().sqrt() / num;
        assert!((e - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ChargeConfig::single([0.2, 0.0, -0.1], 1.0);
        let a = load_or_solve(&cfg, 17, 1e-8, Some(dir.path())).unwrap();
        let path = cache_path(dir.path(), &cfg, 17, 1e-8);
        assert!(path.exists());
        let b = load_or_solve(&cfg, 17, 1e-8, Some(dir.path())).unwrap();
        assert_eq!(a, b);
        assert_ne!(cache_key(&cfg, 17, 1e-8), cache_key(&cfg, 33, 1e-8));
        std::fs::write(&path, b"garbage").unwrap();
        assert_eq!(load_or_solve(&cfg, 17, 1e-8, Some(dir.path())).unwrap(), a);
    }

    #[test]
    fn config_validation() {
        assert!(ChargeConfig::single([0.9, 0.0, 0.0], 1.0).validate().is_err());
        let c = ChargeConfig::random_single(7);
        c.validate().unwrap();
        assert!(c.charges[0].center.iter().all(|v| v.abs() <= 0.85));
        assert!(solve_smooth_correction(&c, 9, 1e-8).is_err());
    }

    #[test]
    fn pinn_model_layout() {
        let cfg = ChargeConfig::single([0.1, 0.0, 0.0], 1.0);
        let p = pinn_model(&cfg, 6, 0).unwrap();
        assert_eq!(p.segment("centers").unwrap(), &[0.1, 0.0, 0.0]);
        assert!((p.segment("coeffs").unwrap()[0] - 0.0796).abs() < 1e-3);
        let frozen = ["centers", "log_coeffs"].iter().map(|s| p.segment(s).unwrap().len()).sum::<usize>();
        assert_eq!(p.len() - frozen, 13);
        let mu = p.exponents(0);
        assert!(mu[0] > -1.0 && (mu[5] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn short_pinn_run_reduces_loss() {
        let run = PinnRunConfig {
            steps: 200,
            n_interior: 500,
            n_boundary: 300,
            n_sphere: 200,
            n_grid: 17,
            n_eval: 200,
            resample_every: 100,
            charges: Some(ChargeConfig::single([0.1, -0.1, 0.2], 1.0)),
            ..PinnRunConfig::new(PinnMode::Pinn)
        };
        let r = run_pinn_seed(&run, 1, None).unwrap();
        assert!(!r.failed);
        let t = &r.report.loss_trace;
        assert!(t.last().unwrap().loss < t[0].loss);
        assert_eq!(r.report.spectrum.iter().filter(|e| e.group == "center0").count(), 6);
    }
}
