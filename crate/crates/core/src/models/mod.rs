//! Model variants built from learnable radial powers.
//!
//! All variants share one flat parameter vector ([`ModelParams`]) whose
//! named segments are described by a [`Layout`]. Evaluation goes through
//! [`Evaluator`], which resolves the exponent ladders once and then serves
//! point queries (value, Laplacian, or a directional derivative) together
//! with their parameter derivatives.

mod angular;
mod eval;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result, RmnError};
use crate::radial::{self, ExponentLadder, DEFAULT_EPS_GAP, DEFAULT_EPS_LOG, DEFAULT_R_FLOOR};

pub use angular::{angular_basis_2d, angular_count_2d, angular_count_3d, sh_basis_3d};
pub use eval::{Accumulator, Evaluator, Probe};

/// Architectural variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelKind {
    /// Radial powers plus a log-primitive, centered at the origin.
    Direct,
    /// Direct plus Fourier modes `r^lambda cos(m theta)`, `r^lambda sin(m theta)`,
    /// optionally with half-integer crack modes.
    #[serde(rename = "angular2d")]
    Angular2D {
        m_max: usize,
        #[serde(default)]
        half_integer: bool,
        #[serde(default)]
        n_max: usize,
    },
    /// Direct plus real spherical harmonics up to degree `l_max`.
    #[serde(rename = "angular3d")]
    Angular3D { l_max: usize },
    /// Radial expansions around `centers` learnable points.
    MultiCenter { centers: usize },
    /// Coordinate-wise power sums (separable baseline).
    MsnCoord,
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Direct => "rmn-direct",
            ModelKind::Angular2D { half_integer: true, .. } => "rmn-angular-half",
            ModelKind::Angular2D { .. } | ModelKind::Angular3D { .. } => "rmn-angular",
            ModelKind::MultiCenter { .. } => "rmn-mc",
            ModelKind::MsnCoord => "msn-coord",
        }
    }
}

fn default_k() -> usize {
    12
}
fn default_k_ang() -> usize {
    4
}
fn default_mu_min() -> f64 {
    -2.0
}
fn default_mu_max() -> f64 {
    4.0
}
fn default_eps_gap() -> f64 {
    DEFAULT_EPS_GAP
}
fn default_eps_log() -> f64 {
    DEFAULT_EPS_LOG
}
fn default_r_floor() -> f64 {
    DEFAULT_R_FLOOR
}

/// Architecture and hyperparameters of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dim: usize,
    /// Radial exponents (per center for multi-center, per coordinate for MSN).
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_mu_min")]
    pub mu_min: f64,
    #[serde(default = "default_mu_max")]
    pub mu_max: f64,
    /// Angular exponents (angular variants only).
    #[serde(default = "default_k_ang")]
    pub k_ang: usize,
    #[serde(default)]
    pub ang_mu_min: Option<f64>,
    #[serde(default)]
    pub ang_mu_max: Option<f64>,
    #[serde(default = "default_eps_gap")]
    pub eps_gap: f64,
    #[serde(default = "default_eps_log")]
    pub eps_log: f64,
    #[serde(default = "default_r_floor")]
    pub r_floor: f64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, dim: usize) -> Self {
        let k = if matches!(kind, ModelKind::MultiCenter { .. }) { 9 } else { 12 };
        let (k, k_ang) = match kind {
            ModelKind::Angular2D { .. } | ModelKind::Angular3D { .. } => (6, 4),
            _ => (k, 4),
        };
        Self {
            kind,
            dim,
            k,
            mu_min: -2.0,
            mu_max: 4.0,
            k_ang,
            ang_mu_min: None,
            ang_mu_max: None,
            eps_gap: DEFAULT_EPS_GAP,
            eps_log: DEFAULT_EPS_LOG,
            r_floor: DEFAULT_R_FLOOR,
        }
    }

    pub fn direct(dim: usize) -> Self {
        Self::new(ModelKind::Direct, dim)
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_range(mut self, mu_min: f64, mu_max: f64) -> Self {
        self.mu_min = mu_min;
        self.mu_max = mu_max;
        self
    }

    pub fn ang_range(&self) -> (f64, f64) {
        (self.ang_mu_min.unwrap_or(self.mu_min), self.ang_mu_max.unwrap_or(self.mu_max))
    }

    pub fn n_ang(&self) -> usize {
        match self.kind {
            ModelKind::Angular2D { m_max, half_integer, n_max } => angular_count_2d(m_max, half_integer, n_max),
            ModelKind::Angular3D { l_max } => angular_count_3d(l_max),
            _ => 0,
        }
    }

    pub fn num_centers(&self) -> usize {
        match self.kind {
            ModelKind::MultiCenter { centers } => centers,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(contract(format!("dimension {} not supported", self.dim)));
        }
        if self.k == 0 {
            return Err(contract("at least one exponent is required"));
        }
        if !(self.mu_min < self.mu_max) {
            return Err(contract("exponent range must satisfy mu_min < mu_max"));
        }
        let (amin, amax) = self.ang_range();
        match self.kind {
            ModelKind::Angular2D { .. } if self.dim != 2 => Err(contract("angular2d requires dim = 2")),
            ModelKind::Angular3D { .. } if self.dim != 3 => Err(contract("angular3d requires dim = 3")),
            ModelKind::Angular2D { .. } | ModelKind::Angular3D { .. } if self.k_ang == 0 || !(amin < amax) => {
                Err(contract("angular ladder needs k_ang >= 1 and a non-empty range"))
            }
            ModelKind::MultiCenter { centers: 0 } => Err(contract("multi-center model needs at least one center")),
            _ => Ok(()),
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().len()
    }
}

/// A named contiguous range of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
}

/// Raw-gap range of the flat vector feeding one exponent ladder.
#[derive(Clone, Debug, PartialEq)]
pub struct LadderSlot {
    pub offset: usize,
    pub len: usize,
    pub mu_min: f64,
    pub mu_max: f64,
}

/// Offsets of every segment a model variant may use.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub(crate) struct Offsets {
    pub coeffs: usize,
    pub raw_gaps: usize,
    pub log_coeff: Option<usize>,
    pub log_mu: Option<usize>,
    pub bias: usize,
    pub centers: Option<usize>,
    pub ang_gaps: Option<usize>,
    pub ang_coeffs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    segments: Vec<Segment>,
    ladders: Vec<LadderSlot>,
    pub(crate) offsets: Offsets,
    len: usize,
}

impl Layout {
    fn new(spec: &ModelSpec) -> Self {
        let mut segments = Vec::new();
        let mut cursor = 0;
        let mut push = |name: &'static str, len: usize| {
            segments.push(Segment { name, offset: cursor, len });
            cursor += len;
            cursor - len
        };
        let k = spec.k;
        let d = spec.dim;
        let mut offsets = Offsets::default();
        let mut ladders = Vec::new();
        match spec.kind {
            ModelKind::Direct => {
                offsets.coeffs = push("coeffs", k);
                offsets.raw_gaps = push("raw_gaps", k);
                offsets.log_coeff = Some(push("log_coeff", 1));
                offsets.log_mu = Some(push("log_mu", 1));
                offsets.bias = push("bias", 1);
                ladders.push(LadderSlot { offset: offsets.raw_gaps, len: k, mu_min: spec.mu_min, mu_max: spec.mu_max });
            }
            ModelKind::Angular2D { .. } | ModelKind::Angular3D { .. } => {
                let ka = spec.k_ang;
                offsets.coeffs = push("coeffs", k);
                offsets.raw_gaps = push("raw_gaps", k);
                let ag = push("ang_raw_gaps", ka);
                let ac = push("ang_coeffs", spec.n_ang() * ka);
                offsets.ang_gaps = Some(ag);
                offsets.ang_coeffs = Some(ac);
                offsets.log_coeff = Some(push("log_coeff", 1));
                offsets.log_mu = Some(push("log_mu", 1));
                offsets.bias = push("bias", 1);
                let (amin, amax) = spec.ang_range();
                ladders.push(LadderSlot { offset: offsets.raw_gaps, len: k, mu_min: spec.mu_min, mu_max: spec.mu_max });
                ladders.push(LadderSlot { offset: ag, len: ka, mu_min: amin, mu_max: amax });
            }
            ModelKind::MultiCenter { centers: j } => {
                offsets.centers = Some(push("centers", j * d));
                offsets.raw_gaps = push("raw_gaps", j * k);
                offsets.coeffs = push("coeffs", j * k);
                offsets.log_coeff = Some(push("log_coeffs", j));
                offsets.bias = push("bias", 1);
                for c in 0..j {
                    ladders.push(LadderSlot {
                        offset: offsets.raw_gaps + c * k,
                        len: k,
                        mu_min: spec.mu_min,
                        mu_max: spec.mu_max,
                    });
                }
            }
            ModelKind::MsnCoord => {
                offsets.raw_gaps = push("raw_gaps", d * k);
                offsets.coeffs = push("coeffs", d * k);
                offsets.bias = push("bias", 1);
                for i in 0..d {
                    ladders.push(LadderSlot {
                        offset: offsets.raw_gaps + i * k,
                        len: k,
                        mu_min: spec.mu_min,
                        mu_max: spec.mu_max,
                    });
                }
            }
        }
        Self { segments, ladders, offsets, len: cursor }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn ladders(&self) -> &[LadderSlot] {
        &self.ladders
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Human-readable name of flat index `idx`, e.g. `coeffs[3]`.
    pub fn param_name(&self, idx: usize) -> String {
        self.segments
            .iter()
            .find(|s| idx >= s.offset && idx < s.offset + s.len)
            .map(|s| if s.len == 1 { s.name.to_string() } else { format!("{}[{}]", s.name, idx - s.offset) })
            .unwrap_or_else(|| format!("#{idx}"))
    }

    /// Maps a gradient with `dL/dmu` stored in the raw-gap slots to `dL/ds`.
    pub fn chain_ladders(&self, values: &[f64], grad: &mut [f64]) {
        for slot in &self.ladders {
            let range = slot.offset..slot.offset + slot.len;
            let ladder = ExponentLadder::new(values[range.clone()].to_vec(), slot.mu_min, slot.mu_max);
            let g = ladder.vjp(&grad[range.clone()]);
            grad[range].copy_from_slice(&g);
        }
    }
}

/// Flat parameter vector together with the architecture it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub values: Vec<f64>,
    layout: Layout,
}

/// One `(exponent, coefficient)` pair of a learned spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEntry {
    pub group: String,
    pub mu: f64,
    pub coeff: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDocument {
    spec: ModelSpec,
    segments: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    exponents: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    spectrum: Vec<SpectrumEntry>,
}

impl ModelParams {
    /// All-zero parameters, with every ladder at equal gaps.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let mut values = vec![0.0; layout.len()];
        for slot in layout.ladders() {
            values[slot.offset..slot.offset + slot.len].fill(radial::softplus_inv(1.0));
        }
        Ok(Self { spec, values, layout })
    }

    /// Randomized initialization: equal-gap ladders with N(0, 0.05^2) jitter
    /// on the raw gaps, coefficients from N(0, 1/K), `mu_log = 0.1`.
    ///
    /// Multi-center models start with their centers at the origin; callers
    /// place them with [`ModelParams::set_centers`].
    pub fn init<R: Rng>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        let jitter = Normal::new(0.0, 0.05).expect("valid normal");
        for slot in p.layout.ladders().to_vec() {
            for v in &mut p.values[slot.offset..slot.offset + slot.len] {
                *v += jitter.sample(rng);
            }
        }
        let k = p.spec.k;
        let coeff = Normal::new(0.0, (1.0 / k as f64).sqrt()).expect("valid normal");
        let off = p.layout.offsets.clone();
        let n_coeffs = match p.spec.kind {
            ModelKind::MultiCenter { centers } => centers * k,
            ModelKind::MsnCoord => p.spec.dim * k,
            _ => k,
        };
        for v in &mut p.values[off.coeffs..off.coeffs + n_coeffs] {
            *v = coeff.sample(rng);
        }
        if let Some(ac) = off.ang_coeffs {
            let n = p.spec.n_ang() * p.spec.k_ang;
            let ang = Normal::new(0.0, (1.0 / (p.spec.k_ang * p.spec.n_ang()) as f64).sqrt()).expect("valid normal");
            for v in &mut p.values[ac..ac + n] {
                *v = ang.sample(rng);
            }
        }
        if let Some(lc) = off.log_coeff {
            let n = p.spec.num_centers().max(1);
            p.values[lc..lc + n].fill(0.1);
        }
        if let Some(lm) = off.log_mu {
            p.values[lm] = 0.1;
        }
        Ok(p)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.offset..s.offset + s.len])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.layout.segment(name)?.clone();
        Some(&mut self.values[s.offset..s.offset + s.len])
    }

    /// Exponents of ladder `idx` (see [`Layout::ladders`]).
    pub fn ladder(&self, idx: usize) -> ExponentLadder {
        let slot = &self.layout.ladders()[idx];
        ExponentLadder {
            raw_gaps: self.values[slot.offset..slot.offset + slot.len].to_vec(),
            mu_min: slot.mu_min,
            mu_max: slot.mu_max,
            eps_gap: self.spec.eps_gap,
        }
    }

    pub fn exponents(&self, idx: usize) -> Vec<f64> {
        self.ladder(idx).exponents()
    }

    /// Sets ladder `idx` so that its exponents equal `mus`.
    pub fn set_exponents(&mut self, idx: usize, mus: &[f64]) -> Result<()> {
        let slot = self.layout.ladders()[idx].clone();
        if mus.len() != slot.len {
            return Err(contract(format!("expected {} exponents, got {}", slot.len, mus.len())));
        }
        let ladder = ExponentLadder::from_exponents(mus, slot.mu_min, slot.mu_max).ok_or_else(|| {
            contract(format!("exponents must increase strictly within ({}, {}] and end at the upper bound", slot.mu_min, slot.mu_max))
        })?;
        self.values[slot.offset..slot.offset + slot.len].copy_from_slice(&ladder.raw_gaps);
        Ok(())
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        match self.segment("centers") {
            Some(c) => c.chunks(self.spec.dim).map(|c| c.to_vec()).collect(),
            None => Vec::new(),
        }
    }

    pub fn set_centers(&mut self, centers: &[Vec<f64>]) -> Result<()> {
        let dim = self.spec.dim;
        let seg = self.segment_mut("centers").ok_or_else(|| contract("model has no centers"))?;
        if centers.len() * dim != seg.len() || centers.iter().any(|c| c.len() != dim) {
            return Err(contract("center list does not match the model"));
        }
        for (dst, c) in seg.chunks_mut(dim).zip(centers) {
            dst.copy_from_slice(c);
        }
        Ok(())
    }

    /// Learned `(exponent, coefficient)` pairs, grouped by ladder.
    pub fn spectrum(&self) -> Vec<SpectrumEntry> {
        let mut out = Vec::new();
        let off = &self.layout.offsets;
        let k = self.spec.k;
        let mut push = |group: String, mus: Vec<f64>, coeffs: &[f64]| {
            for (mu, c) in mus.into_iter().zip(coeffs) {
                out.push(SpectrumEntry { group: group.clone(), mu, coeff: *c });
            }
        };
        match self.spec.kind {
            ModelKind::Direct | ModelKind::Angular2D { .. } | ModelKind::Angular3D { .. } => {
                push("radial".into(), self.exponents(0), &self.values[off.coeffs..off.coeffs + k]);
                if let Some(ac) = off.ang_coeffs {
                    let ka = self.spec.k_ang;
                    let n_ang = self.spec.n_ang();
                    // one entry per angular exponent, weighted by the norm over modes
                    let norms: Vec<f64> = (0..ka)
                        .map(|j| (0..n_ang).map(|m| self.values[ac + m * ka + j].powi(2)).sum::<f64>().sqrt())
                        .collect();
                    push("angular".into(), self.exponents(1), &norms);
                }
                if let (Some(lc), Some(lm)) = (off.log_coeff, off.log_mu) {
                    push("log".into(), vec![self.values[lm]], &self.values[lc..lc + 1]);
                }
            }
            ModelKind::MultiCenter { centers } => {
                let lc = off.log_coeff.expect("multi-center log coefficients");
                for j in 0..centers {
                    let base = off.coeffs + j * k;
                    push(format!("center{j}"), self.exponents(j), &self.values[base..base + k]);
                    push(format!("center{j}-log"), vec![0.0], &self.values[lc + j..lc + j + 1]);
                }
            }
            ModelKind::MsnCoord => {
                for i in 0..self.spec.dim {
                    let base = off.coeffs + i * k;
                    push(format!("coord{i}"), self.exponents(i), &self.values[base..base + k]);
                }
            }
        }
        out
    }

    /// Exponent of the largest-magnitude coefficient in the first ladder.
    pub fn dominant_exponent(&self) -> Option<(f64, f64)> {
        let group = self.spectrum().first()?.group.clone();
        self.spectrum()
            .into_iter()
            .filter(|e| e.group == group)
            .max_by(|a, b| a.coeff.abs().total_cmp(&b.coeff.abs()))
            .map(|e| (e.mu, e.coeff))
    }

    /// Exponents whose coefficients exceed `1e-3` of the largest one in their group.
    pub fn significant_exponents(&self) -> Vec<SpectrumEntry> {
        let spectrum = self.spectrum();
        let mut out = Vec::new();
        let mut groups: Vec<&str> = spectrum.iter().map(|e| e.group.as_str()).collect();
        groups.dedup();
        for g in groups {
            let max = spectrum.iter().filter(|e| e.group == g).map(|e| e.coeff.abs()).fold(0.0, f64::max);
            out.extend(spectrum.iter().filter(|e| e.group == g && e.coeff.abs() > 1e-3 * max).cloned());
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let segments = self
            .layout
            .segments()
            .iter()
            .map(|s| (s.name.to_string(), self.values[s.offset..s.offset + s.len].to_vec()))
            .collect();
        let exponents = (0..self.layout.ladders().len()).map(|i| (format!("ladder{i}"), self.exponents(i))).collect();
        let doc = ParamsDocument { spec: self.spec.clone(), segments, exponents, spectrum: self.spectrum() };
        serde_json::to_value(doc).expect("params serialize")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let doc: ParamsDocument = serde_path_to_error::deserialize(value).map_err(|e| RmnError::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        let mut p = Self::zeros(doc.spec)?;
        for seg in p.layout.segments().to_vec() {
            let vals = doc.segments.get(seg.name).ok_or_else(|| RmnError::Config {
                path: format!("segments.{}", seg.name),
                message: "missing segment".into(),
            })?;
            if vals.len() != seg.len {
                return Err(RmnError::Config {
                    path: format!("segments.{}", seg.name),
                    message: format!("expected {} values, got {}", seg.len, vals.len()),
                });
            }
            p.values[seg.offset..seg.offset + seg.len].copy_from_slice(vals);
        }
        if let Some(extra) = doc.segments.keys().find(|k| p.layout.segment(k).is_none()) {
            return Err(RmnError::Config { path: format!("segments.{extra}"), message: "unknown segment".into() });
        }
        Ok(p)
    }

    pub fn evaluator(&self) -> Evaluator<'_> {
        Evaluator::new(self)
    }

    /// Model value at `x`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.evaluator().probe(x, &Probe::Value, None)
    }

    /// Closed-form spatial gradient at `x` (length `dim`).
    pub fn spatial_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.evaluator().gradient(x)
    }

    /// Closed-form Laplacian at `x`.
    pub fn laplacian(&self, x: &[f64]) -> Result<f64> {
        self.evaluator().probe(x, &Probe::Laplacian, None)
    }
}

/// Model value at `x`; see [`ModelParams::forward`].
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<f64> {
    params.forward(x)
}

/// See [`ModelParams::spatial_gradient`].
pub fn spatial_gradient(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    params.spatial_gradient(x)
}

/// See [`ModelParams::laplacian`].
pub fn laplacian(params: &ModelParams, x: &[f64]) -> Result<f64> {
    params.laplacian(x)
}
