//! Experiment orchestration: benchmark configs, seed sweeps, metrics,
//! multi-center initializers, ablations, and result files.

mod centers;
mod report;

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result, RmnError};
use crate::models::{ModelKind, ModelParams, ModelSpec};
use crate::optim::{train, FitObjective, Schedule, TrainConfig, TrainReport, Weighting};
use crate::pinn::{run_pinn_seed, PinnMode, PinnResult, PinnRunConfig};
use crate::sampling::{rng_from_seed, test_grid, Domain, PointBatch};
use crate::targets::{catalog, find, TargetSpec};

pub use centers::{kmeans, random_centers, residual_init_centers, residual_prefit, CenterInit, PREFIT_ITERATIONS};
pub use report::{aggregate, BASELINE_LABEL, baselines, read_rows, report, write_csv, Aggregate, Baseline, Report};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McInit {
    Random,
    #[default]
    ResidualBased,
}

/// Optional overrides of the dimension-dependent training defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub lr: Option<f64>,
    pub schedule: Option<Schedule>,
    pub iterations: Option<usize>,
    pub clip_norm: Option<f64>,
    pub resample_every: Option<usize>,
    pub weighting: Option<Weighting>,
    pub output_normalization: Option<bool>,
    pub n_train: Option<usize>,
    pub frozen: Option<Vec<String>>,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}
fn default_true() -> bool {
    true
}
fn default_restarts() -> usize {
    1
}
fn default_n_test() -> usize {
    5000
}

/// One benchmark / model combination swept over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: String,
    pub model: ModelKind,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub mu_min: Option<f64>,
    #[serde(default)]
    pub mu_max: Option<f64>,
    #[serde(default)]
    pub k_ang: Option<usize>,
    #[serde(default)]
    pub ang_mu_min: Option<f64>,
    #[serde(default)]
    pub ang_mu_max: Option<f64>,
    /// When false the log-primitive coefficient is held at zero.
    #[serde(default = "default_true")]
    pub log_primitive: bool,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub mc_init: McInit,
    /// Runs per seed with perturbed initializations; the lowest final training loss is kept.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    /// Check that the model represents the target exactly before training.
    #[serde(default)]
    pub verify: bool,
    /// Method name used in result files; derived from the model when absent.
    #[serde(default)]
    pub label: Option<String>,
}

/// Parses a JSON value into `T`, reporting the path of the offending key.
pub fn parse_config<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        RmnError::Config { path, message: e.into_inner().to_string() }
    })
}

impl ExperimentConfig {
    pub fn new(benchmark: &str, model: ModelKind) -> Self {
        Self {
            benchmark: benchmark.into(),
            model,
            k: None,
            mu_min: None,
            mu_max: None,
            k_ang: None,
            ang_mu_min: None,
            ang_mu_max: None,
            log_primitive: true,
            train: TrainOverrides::default(),
            seeds: default_seeds(),
            mc_init: McInit::default(),
            restarts: 1,
            n_test: default_n_test(),
            verify: false,
            label: None,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = parse_config(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn target(&self) -> Result<TargetSpec> {
        find(&self.benchmark)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.target()?;
        let spec = self.model_spec(t.dim);
        spec.validate().map_err(|e| RmnError::Config { path: "model".into(), message: e.to_string() })?;
        if self.seeds.is_empty() {
            return Err(RmnError::Config { path: "seeds".into(), message: "at least one seed is required".into() });
        }
        if self.restarts == 0 || self.n_test == 0 {
            return Err(RmnError::Config { path: "restarts".into(), message: "restarts and n_test must be positive".into() });
        }
        let tc = self.train_config(t.dim, 0);
        let probe = ModelParams::zeros(spec).map_err(|e| RmnError::Config { path: "model".into(), message: e.to_string() })?;
        tc.validate(&probe).map_err(|e| RmnError::Config { path: "train".into(), message: e.to_string() })
    }

    pub fn model_spec(&self, dim: usize) -> ModelSpec {
        let mut s = ModelSpec::new(self.model.clone(), dim);
        if let Some(k) = self.k {
            s.k = k;
        }
        if let Some(v) = self.mu_min {
            s.mu_min = v;
        }
        if let Some(v) = self.mu_max {
            s.mu_max = v;
        }
        if let Some(v) = self.k_ang {
            s.k_ang = v;
        }
        s.ang_mu_min = self.ang_mu_min;
        s.ang_mu_max = self.ang_mu_max;
        s
    }

    pub fn train_config(&self, dim: usize, seed: u64) -> TrainConfig {
        let o = &self.train;
        let d = TrainConfig::fit_defaults(dim);
        let mut frozen = o.frozen.clone().unwrap_or_default();
        if !self.log_primitive {
            let names: &[&str] = match self.model {
                ModelKind::MultiCenter { .. } => &["log_coeffs"],
                ModelKind::MsnCoord => &[],
                _ => &["log_coeff", "log_mu"],
            };
            for n in names {
                if !frozen.iter().any(|f| f == n) {
                    frozen.push((*n).into());
                }
            }
        }
        TrainConfig {
            lr: o.lr.unwrap_or(d.lr),
            schedule: o.schedule.unwrap_or(d.schedule),
            iterations: o.iterations.unwrap_or(d.iterations),
            clip_norm: o.clip_norm.or(d.clip_norm),
            resample_every: o.resample_every.or(d.resample_every),
            seed,
            weighting: o.weighting.unwrap_or(d.weighting),
            output_normalization: o.output_normalization.unwrap_or(d.output_normalization),
            n_train: o.n_train.unwrap_or(d.n_train),
            frozen,
        }
    }

    pub fn method(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let base = match &self.model {
            ModelKind::Angular2D { half_integer: true, .. } => "rmn-angular-half",
            k => k.label(),
        };
        if self.log_primitive || self.model == ModelKind::MsnCoord {
            base.into()
        } else {
            format!("{base}-nolog")
        }
    }

    /// The standard configuration for a catalog benchmark.
    pub fn default_for(benchmark: &str) -> Result<Self> {
        let t = find(benchmark)?;
        let model = match t.name {
            "crack2d" => ModelKind::Angular2D { m_max: 4, half_integer: false, n_max: 0 },
            "dipole3d" => ModelKind::Angular3D { l_max: 2 },
            "two_source" | "two_source_offset" => ModelKind::MultiCenter { centers: 2 },
            "three_source" => ModelKind::MultiCenter { centers: 3 },
            _ => ModelKind::Direct,
        };
        let mut cfg = Self::new(t.name, model);
        if t.name == "dipole3d" {
            // the r^-2 radial order must lie strictly inside both ladders
            cfg.mu_min = Some(-3.0);
            cfg.ang_mu_min = Some(-3.0);
            cfg.train.output_normalization = Some(true);
            cfg.train.weighting = Some(Weighting::RSquared);
            cfg.verify = true;
        }
        Ok(cfg)
    }
}

/// One evaluated run. `wall_time_s` is kept out of CSV output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub benchmark: String,
    pub method: String,
    pub seed: u64,
    pub rmse: f64,
    pub rel_l2: Option<f64>,
    pub flux_err: Option<f64>,
    pub param_count: usize,
    #[serde(skip)]
    pub wall_time_s: f64,
    /// JSON array of the significant exponents of the first ladder.
    pub dominant_exponents: String,
    /// JSON array of learned centers (empty for single-center models).
    pub centers: String,
    pub failed: bool,
    pub note: String,
}

/// A trained model with its row and training record.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub row: ResultRow,
    pub report: TrainReport,
    pub params: ModelParams,
}

#[derive(Clone, Debug)]
pub struct BenchmarkResult {
    pub config: ExperimentConfig,
    pub runs: Vec<RunOutcome>,
    pub aggregate: Aggregate,
}

impl BenchmarkResult {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.runs.iter().map(|r| r.row.clone()).collect()
    }
}

/// Root-mean-square error of `params` against `target` on `points`.
pub fn rmse(params: &ModelParams, target: &TargetSpec, points: &PointBatch) -> Result<f64> {
    let ev = params.evaluator();
    let mut s = 0.0;
    for x in points.iter() {
        let e = ev.probe(x, &crate::models::Probe::Value, None)? - target.value(x);
        s += e * e;
    }
    Ok((s / points.len() as f64).sqrt())
}

fn json_list(values: &[f64]) -> String {
    serde_json::to_string(values).expect("finite list serializes")
}

fn significant_first_ladder(p: &ModelParams) -> Vec<f64> {
    let sig = p.significant_exponents();
    let Some(first) = sig.first().map(|e| e.group.clone()) else {
        return vec![];
    };
    sig.into_iter().filter(|e| e.group == first).map(|e| e.mu).collect()
}

/// Places centers of a multi-center model per the configured initializer.
fn init_centers(cfg: &ExperimentConfig, t: &TargetSpec, params: &mut ModelParams, seed: u64) -> Result<Option<String>> {
    let j = params.spec.num_centers();
    if j == 0 {
        return Ok(None);
    }
    let mut note = None;
    let centers = match cfg.mc_init {
        McInit::Random => random_centers(&t.domain, j, seed),
        McInit::ResidualBased => {
            let (batch, residuals) = residual_prefit(t, &cfg.train_config(t.dim, seed), seed)?;
            let init = residual_init_centers(&batch, &residuals, j);
            if init.fallback {
                note = Some("too few distinct high-residual points; centers initialized at random".to_string());
                random_centers(&t.domain, j, seed)
            } else {
                init.centers
            }
        }
    };
    params.set_centers(&centers)?;
    Ok(note)
}

/// Trains one seed (with restarts) and evaluates it on the test grid.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    let t = cfg.target()?;
    let spec = cfg.model_spec(t.dim);
    let grid = test_grid(&t.domain, cfg.n_test)?;
    let mut notes = Vec::new();
    if cfg.verify {
        let err = verify_single_term(&spec, &t, &grid)?;
        if !(err < 1e-10) {
            return Err(contract(format!("verification failed: exact parameters give RMSE {err:.3e}")));
        }
        notes.push(format!("verified exact representation (RMSE {err:.1e})"));
    }
    let mut best: Option<(ModelParams, TrainReport)> = None;
    for r in 0..cfg.restarts as u64 {
        let s = seed.wrapping_add(7919 * r);
        let mut init = ModelParams::init(spec.clone(), &mut rng_from_seed(s))?;
        if !cfg.log_primitive {
            for name in ["log_coeff", "log_coeffs"] {
                if let Some(seg) = init.segment_mut(name) {
                    seg.fill(0.0);
                }
            }
        }
        if let Some(n) = init_centers(cfg, &t, &mut init, s)? {
            notes.push(n);
        }
        let tc = cfg.train_config(t.dim, s);
        let mut obj = FitObjective::new(&t, &tc)?;
        let out = train(init, &mut obj, &tc)?;
        let better = match &best {
            None => true,
            Some((_, b)) => (b.failed() && !out.report.failed()) || (out.report.failed() == b.failed() && out.report.final_loss < b.final_loss),
        };
        if better {
            best = Some((out.params, out.report));
        }
    }
    let (params, mut report) = best.expect("at least one restart");
    let e = rmse(&params, &t, &grid)?;
    report.final_rmse = Some(e);
    if let crate::optim::RunStatus::Failed { message, .. } = &report.status {
        notes.push(format!("training failed: {message}"));
    }
    let row = ResultRow {
        benchmark: t.name.into(),
        method: cfg.method(),
        seed,
        rmse: e,
        rel_l2: None,
        flux_err: None,
        param_count: params.len(),
        wall_time_s: report.wall_time_s,
        dominant_exponents: json_list(&significant_first_ladder(&params)),
        centers: if params.spec.num_centers() > 0 { serde_json::to_string(&params.centers())? } else { String::new() },
        failed: report.failed() || !e.is_finite(),
        note: notes.join("; "),
    };
    Ok(RunOutcome { row, report, params })
}

/// Runs every seed of `cfg`; seeds may execute in parallel.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<BenchmarkResult> {
    cfg.validate()?;
    let runs: Vec<RunOutcome> = cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect::<Result<_>>()?;
    let rows: Vec<ResultRow> = runs.iter().map(|r| r.row.clone()).collect();
    let aggregate = aggregate(&rows).into_iter().next().expect("at least one seed");
    Ok(BenchmarkResult { config: cfg.clone(), runs, aggregate })
}

/// Writes `<benchmark>__<method>.csv` and one JSON run record per seed under `runs/`.
pub fn write_outputs(result: &BenchmarkResult, out_dir: &Path) -> Result<()> {
    let stem = format!("{}__{}", result.config.benchmark, result.config.method());
    fs::create_dir_all(out_dir.join("runs"))?;
    write_csv(&out_dir.join(format!("{stem}.csv")), &result.rows())?;
    let mut timing = csv::Writer::from_path(out_dir.join("runs").join(format!("{stem}__timing.csv")))?;
    timing.write_record(["seed", "wall_time_s"])?;
    for run in &result.runs {
        let doc = serde_json::json!({ "config": result.config, "row": run.row, "report": run.report });
        fs::write(out_dir.join("runs").join(format!("{stem}__seed{}.json", run.row.seed)), serde_json::to_string_pretty(&doc)?)?;
        timing.write_record([run.row.seed.to_string(), run.row.wall_time_s.to_string()])?;
    }
    timing.flush()?;
    Ok(())
}

/// Sets one ladder's exponents evenly over its range with the exponent nearest
/// `mu` moved exactly onto it.
fn ladder_through(p: &mut ModelParams, idx: usize, mu: f64) -> Result<usize> {
    let slot = p.layout().ladders()[idx].clone();
    let k = slot.len;
    let step = (slot.mu_max - slot.mu_min) / k as f64;
    let mut mus: Vec<f64> = (1..=k).map(|i| slot.mu_min + step * i as f64).collect();
    let j = (0..k).min_by(|a, b| (mus[*a] - mu).abs().total_cmp(&(mus[*b] - mu).abs())).expect("non-empty ladder");
    mus[j] = mu;
    let ok = mus.windows(2).all(|w| w[1] - w[0] > p.spec.eps_gap) && mus[0] > slot.mu_min;
    if !ok || (j == k - 1 && mu != slot.mu_max) {
        return Err(contract(format!("exponent {mu} cannot be placed on a ladder over ({}, {}]", slot.mu_min, slot.mu_max)));
    }
    p.set_exponents(idx, &mus)?;
    Ok(j)
}

/// Builds parameters that hold the target's known exponent on every ladder
/// and fits the single best-matching linear coefficient; returns the RMSE
/// of that construction on `points`.
pub fn verify_single_term(spec: &ModelSpec, t: &TargetSpec, points: &PointBatch) -> Result<f64> {
    let mu = t
        .known_exponents
        .as_ref()
        .and_then(|e| e.first().copied())
        .ok_or_else(|| contract(format!("target `{}` has no known exponent to verify against", t.name)))?;
    let mut p = ModelParams::zeros(spec.clone())?;
    for idx in 0..p.layout().ladders().len() {
        ladder_through(&mut p, idx, mu)?;
    }
    let truth: Vec<f64> = points.iter().map(|x| t.value(x)).collect();
    let coeff_segments = ["coeffs", "ang_coeffs", "log_coeff", "log_coeffs"];
    let mut best = f64::INFINITY;
    for name in coeff_segments {
        let Some(seg) = p.layout().segment(name).cloned() else { continue };
        for i in seg.offset..seg.offset + seg.len {
            let mut q = p.clone();
            q.values[i] = 1.0;
            let basis: Vec<f64> = points.iter().map(|x| q.forward(x)).collect::<Result<_>>()?;
            let bb: f64 = basis.iter().map(|b| b * b).sum();
            if bb == 0.0 {
                continue;
            }
            let scale = basis.iter().zip(&truth).map(|(b, f)| b * f).sum::<f64>() / bb;
            q.values[i] = scale;
            best = best.min(rmse(&q, t, points)?);
        }
    }
    Ok(best)
}

/// Equal-count radial bins of the test grid with per-bin RMSE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileBin {
    pub r_lo: f64,
    pub r_hi: f64,
    pub count: usize,
    pub rmse: f64,
}

pub fn radial_error_profile(params: &ModelParams, t: &TargetSpec, n_bins: usize, n_test: usize) -> Result<Vec<ProfileBin>> {
    if n_bins < 2 {
        return Err(contract("a radial profile needs at least two bins"));
    }
    let grid = test_grid(&t.domain, n_test)?;
    let mut pts: Vec<(f64, f64)> = grid
        .iter()
        .map(|x| {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            params.forward(x).map(|v| (r, (v - t.value(x)).powi(2)))
        })
        .collect::<Result<_>>()?;
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();
    Ok((0..n_bins)
        .map(|b| {
            let (lo, hi) = (b * n / n_bins, (b + 1) * n / n_bins);
            let bin = &pts[lo..hi];
            let mse = bin.iter().map(|p| p.1).sum::<f64>() / bin.len().max(1) as f64;
            ProfileBin { r_lo: bin.first().map_or(0.0, |p| p.0), r_hi: bin.last().map_or(0.0, |p| p.0), count: bin.len(), rmse: mse.sqrt() }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    KSweep,
    RangeSweep,
    LogPrimitiveToggle,
    /// Coordinate-separable baseline against the radial model.
    Separability,
}

impl std::str::FromStr for Ablation {
    type Err = RmnError;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "k_sweep" => Ok(Self::KSweep),
            "range_sweep" => Ok(Self::RangeSweep),
            "log_primitive_toggle" => Ok(Self::LogPrimitiveToggle),
            "separability" => Ok(Self::Separability),
            _ => Err(RmnError::Config {
                path: "ablation".into(),
                message: format!("unknown ablation `{s}`; valid: k_sweep, range_sweep, log_primitive_toggle, separability"),
            }),
        }
    }
}

pub const K_SWEEP: [usize; 7] = [2, 4, 6, 8, 10, 12, 16];
pub const RANGE_SWEEP: [f64; 3] = [0.0, -1.0, -2.0];

/// Experiment configs making up an ablation.
pub fn ablation_configs(which: Ablation, seeds: &[u64]) -> Vec<ExperimentConfig> {
    let with = |mut c: ExperimentConfig, label: String| {
        c.seeds = seeds.to_vec();
        c.label = Some(label);
        c
    };
    match which {
        Ablation::KSweep => K_SWEEP
            .iter()
            .map(|&k| with(ExperimentConfig { k: Some(k), ..ExperimentConfig::new("log2d", ModelKind::Direct) }, format!("rmn-direct-k{k}")))
            .collect(),
        Ablation::RangeSweep => RANGE_SWEEP
            .iter()
            .map(|&m| {
                with(ExperimentConfig { mu_min: Some(m), ..ExperimentConfig::new("inv2d", ModelKind::Direct) }, format!("rmn-direct-mumin{m}"))
            })
            .collect(),
        Ablation::LogPrimitiveToggle => vec![
            with(ExperimentConfig::new("log2d", ModelKind::Direct), "rmn-direct".into()),
            with(ExperimentConfig { log_primitive: false, ..ExperimentConfig::new("log2d", ModelKind::Direct) }, "rmn-direct-nolog".into()),
        ],
        Ablation::Separability => ["log2d", "inv2d", "coulomb3d"]
            .iter()
            .flat_map(|b| {
                [
                    with(ExperimentConfig::new(b, ModelKind::Direct), "rmn-direct".into()),
                    with(ExperimentConfig::new(b, ModelKind::MsnCoord), "msn-coord".into()),
                ]
            })
            .collect(),
    }
}

pub fn ablation_suite(which: Ablation, seeds: &[u64]) -> Result<Vec<BenchmarkResult>> {
    ablation_configs(which, seeds).iter().map(run_benchmark).collect()
}

fn default_modes() -> Vec<PinnMode> {
    vec![PinnMode::Pinn, PinnMode::Supervised]
}

/// Poisson point-charge experiment over seeds and training modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinnExperimentConfig {
    #[serde(default = "default_modes")]
    pub modes: Vec<PinnMode>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub run: PinnRunConfig,
    /// Directory for cached ground-truth grids.
    #[serde(default)]
    pub cache_dir: Option<String>,
}

impl Default for PinnRunConfig {
    fn default() -> Self {
        PinnRunConfig::new(PinnMode::Pinn)
    }
}

impl PinnExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = parse_config(text)?;
        if cfg.modes.is_empty() || cfg.seeds.is_empty() {
            return Err(RmnError::Config { path: "modes".into(), message: "at least one mode and one seed are required".into() });
        }
        if let Some(c) = &cfg.run.charges {
            c.validate().map_err(|e| RmnError::Config { path: "run.charges".into(), message: e.to_string() })?;
        }
        Ok(cfg)
    }
}

/// Runs every (mode, seed) pair; returns rows in mode-major, seed order.
pub fn run_pinn_experiment(cfg: &PinnExperimentConfig, cache_dir: Option<&Path>) -> Result<Vec<(ResultRow, PinnResult)>> {
    let cache = cache_dir.map(Path::to_path_buf).or_else(|| cfg.cache_dir.as_ref().map(Into::into));
    // solve (or load) every ground truth once before the parallel sweep
    if let Some(dir) = &cache {
        for &s in &cfg.seeds {
            let charges = cfg.run.charges_for_seed(s);
            crate::pinn::load_or_solve(&charges, cfg.run.n_grid, cfg.run.tol, Some(dir))?;
        }
    }
    let jobs: Vec<(PinnMode, u64)> = cfg.modes.iter().flat_map(|m| cfg.seeds.iter().map(move |s| (*m, *s))).collect();
    jobs.par_iter()
        .map(|&(mode, seed)| {
            let run = PinnRunConfig { mode, ..cfg.run.clone() };
            let r = run_pinn_seed(&run, seed, cache.as_deref())?;
            let row = ResultRow {
                benchmark: "poisson3d".into(),
                method: format!("rmn-mc-{}", mode.label()),
                seed,
                rmse: f64::NAN,
                rel_l2: Some(r.rel_l2),
                flux_err: Some(r.mean_flux_error()),
                param_count: 13,
                wall_time_s: r.report.wall_time_s,
                dominant_exponents: json_list(&r.exponents),
                centers: serde_json::to_string(&r.charges.charges.iter().map(|c| c.center).collect::<Vec<_>>())?,
                failed: r.failed,
                note: String::new(),
            };
            Ok((row, r))
        })
        .collect()
}

/// Writes one CSV per mode plus a JSON record per run under `runs/`.
pub fn write_pinn_outputs(results: &[(ResultRow, PinnResult)], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir.join("runs"))?;
    let mut methods: Vec<&str> = results.iter().map(|(r, _)| r.method.as_str()).collect();
    methods.dedup();
    for m in methods {
        let stem = format!("poisson3d__{m}");
        let rows: Vec<ResultRow> = results.iter().filter(|(r, _)| r.method == m).map(|(r, _)| r.clone()).collect();
        write_csv(&out_dir.join(format!("{stem}.csv")), &rows)?;
        for (row, res) in results.iter().filter(|(r, _)| r.method == m) {
            let doc = serde_json::json!({ "row": row, "result": res });
            fs::write(out_dir.join("runs").join(format!("{stem}__seed{}.json", row.seed)), serde_json::to_string_pretty(&doc)?)?;
        }
    }
    Ok(())
}

/// Benchmarks that also get the coordinate-separable baseline in the full sweep.
pub const MSN_BASELINE: [&str; 6] = ["log2d", "sqrt2d", "inv2d", "multipower2d", "coulomb3d", "smooth2d"];

/// Default config for every catalog benchmark, then the separable baseline
/// where it has a comparison column.
pub fn standard_suite(seeds: &[u64]) -> Vec<ExperimentConfig> {
    let mut out: Vec<ExperimentConfig> = standard_benchmarks()
        .into_iter()
        .map(|b| ExperimentConfig::default_for(b).expect("catalog names resolve"))
        .collect();
    out.extend(MSN_BASELINE.iter().map(|b| ExperimentConfig::new(b, ModelKind::MsnCoord)));
    for c in &mut out {
        c.seeds = seeds.to_vec();
    }
    out
}

/// Benchmark names of the standard sweep.
pub fn standard_benchmarks() -> Vec<&'static str> {
    catalog().iter().map(|t| t.name).collect()
}

/// Uniform point in the bounding box of `domain`, shrunk by 10%.
pub(crate) fn uniform_in_box<R: Rng>(domain: &Domain, rng: &mut R) -> Vec<f64> {
    let half = match domain {
        Domain::Annulus2D { r_max, .. } | Domain::ShellBall3D { r_max, .. } => *r_max / 2f64.sqrt(),
        Domain::PuncturedCube { half_width, .. } => *half_width,
        Domain::Square2D { side, .. } => side / 2.0,
    };
    (0..domain.dim()).map(|_| rng.random_range(-0.9 * half..0.9 * half)).collect()
}
