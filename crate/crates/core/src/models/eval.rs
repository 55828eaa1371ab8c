//! Point evaluation with closed-form spatial derivatives and, optionally,
//! the derivative of the probed quantity with respect to every parameter.
//!
//! Parameter derivatives are accumulated in "natural" coordinates: the
//! raw-gap slots of the gradient receive `d/d mu_k`, which
//! [`super::Layout::chain_ladders`] later maps back to the raw gaps.

use super::angular::{modes_2d, modes_3d, AngularMode};
use super::{ModelKind, ModelParams};
use crate::error::{contract, Result};
use crate::radial::{log_jets, power_jets, RadialJet};

/// Scalar quantity extracted from the model at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Probe {
    Value,
    Laplacian,
    /// Directional derivative `grad(phi) . n`; only the first `dim` entries are used.
    Normal([f64; 3]),
}

/// Gradient sink: `grad += weight * d(probe)/d(theta)`.
pub struct Accumulator<'g> {
    pub grad: &'g mut [f64],
    pub weight: f64,
}

impl Accumulator<'_> {
    #[inline]
    fn add(&mut self, idx: usize, v: f64) {
        self.grad[idx] += self.weight * v;
    }
}

/// Exponent-resolved view of a parameter vector.
pub struct Evaluator<'a> {
    params: &'a ModelParams,
    mus: Vec<Vec<f64>>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Probe applied to a radial profile with jet `h` at offset `v` (|v| ~ rho).
#[inline]
fn project(h: &RadialJet, probe: &Probe, rho: f64, vn: f64, d: usize) -> f64 {
    let [h0, h1, h2, _] = h.0;
    match probe {
        Probe::Value => h0,
        Probe::Laplacian => h2 + (d as f64 - 1.0) * h1 / rho,
        Probe::Normal(_) => h1 / rho * vn,
    }
}

/// `d/dc` of the probe of `h(|x - c|)`, written into `out[..d]`.
#[inline]
fn center_grad(h: &RadialJet, probe: &Probe, v: &[f64], rho: f64, vn: f64, out: &mut [f64; 3]) {
    let d = v.len();
    let [_, h1, h2, h3] = h.0;
    match probe {
        Probe::Value => {
            for i in 0..d {
                out[i] = -h1 / rho * v[i];
            }
        }
        Probe::Normal(n) => {
            let a = (h2 - h1 / rho) / (rho * rho) * vn;
            for i in 0..d {
                out[i] = -(a * v[i] + h1 / rho * n[i]);
            }
        }
        Probe::Laplacian => {
            let dm1 = d as f64 - 1.0;
            let dr = h3 + dm1 * (h2 / rho - h1 / (rho * rho));
            for i in 0..d {
                out[i] = -dr / rho * v[i];
            }
        }
    }
}

#[inline]
fn axpy(acc: &mut RadialJet, a: f64, h: &RadialJet) {
    for i in 0..4 {
        acc.0[i] += a * h.0[i];
    }
}

impl<'a> Evaluator<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        let mus = (0..params.layout().ladders().len()).map(|i| params.exponents(i)).collect();
        Self { params, mus }
    }

    /// Resolved exponents of ladder `idx`.
    pub fn exponents(&self, idx: usize) -> &[f64] {
        &self.mus[idx]
    }

    /// Evaluates `probe` at `x`. When `acc` is given, also accumulates the
    /// parameter derivative of the probed quantity.
    pub fn probe(&self, x: &[f64], probe: &Probe, acc: Option<Accumulator<'_>>) -> Result<f64> {
        let spec = &self.params.spec;
        if x.len() != spec.dim {
            return Err(contract(format!("point has dimension {}, model expects {}", x.len(), spec.dim)));
        }
        let mut acc = acc;
        Ok(match spec.kind {
            ModelKind::Direct => self.direct(x, probe, &mut acc),
            ModelKind::Angular2D { .. } | ModelKind::Angular3D { .. } => {
                self.direct(x, probe, &mut acc) + self.angular(x, probe, &mut acc)
            }
            ModelKind::MultiCenter { centers } => self.multi_center(centers, x, probe, &mut acc),
            ModelKind::MsnCoord => self.msn(x, probe, &mut acc),
        })
    }

    /// Spatial gradient from directional probes along the coordinate axes.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        (0..self.params.spec.dim)
            .map(|i| {
                let mut n = [0.0; 3];
                n[i] = 1.0;
                self.probe(x, &Probe::Normal(n), None)
            })
            .collect()
    }

    fn bias(&self, probe: &Probe, acc: &mut Option<Accumulator<'_>>) -> f64 {
        if *probe != Probe::Value {
            return 0.0;
        }
        let off = self.params.layout().offsets.bias;
        if let Some(a) = acc {
            a.add(off, 1.0);
        }
        self.params.values[off]
    }

    fn direct(&self, x: &[f64], probe: &Probe, acc: &mut Option<Accumulator<'_>>) -> f64 {
        let spec = &self.params.spec;
        let vals = &self.params.values;
        let off = &self.params.layout().offsets;
        let d = spec.dim;
        let rho = dot(x, x).sqrt().max(spec.r_floor);
        let l = rho.ln();
        let vn = match probe {
            Probe::Normal(n) => dot(x, &n[..d]),
            _ => 0.0,
        };
        let mut out = 0.0;
        for (k, &mu) in self.mus[0].iter().enumerate() {
            let (h, hm) = power_jets(rho, l, mu);
            let a = vals[off.coeffs + k];
            let p = project(&h, probe, rho, vn, d);
            out += a * p;
            if let Some(acc) = acc {
                acc.add(off.coeffs + k, p);
                acc.add(off.raw_gaps + k, a * project(&hm, probe, rho, vn, d));
            }
        }
        if let (Some(lc), Some(lm)) = (off.log_coeff, off.log_mu) {
            let (c0, mu_log) = (vals[lc], vals[lm]);
            let (h, hm) = log_jets(rho, l, mu_log, spec.eps_log);
            let p = project(&h, probe, rho, vn, d);
            out += c0 * p;
            if let Some(acc) = acc {
                acc.add(lc, p);
                acc.add(lm, c0 * project(&hm, probe, rho, vn, d));
            }
        }
        out + self.bias(probe, acc)
    }

    fn angular(&self, x: &[f64], probe: &Probe, acc: &mut Option<Accumulator<'_>>) -> f64 {
        let spec = &self.params.spec;
        let vals = &self.params.values;
        let off = &self.params.layout().offsets;
        let (ag, ac) = (off.ang_gaps.expect("angular gaps"), off.ang_coeffs.expect("angular coeffs"));
        let d = spec.dim;
        let df = d as f64;
        let rho = dot(x, x).sqrt().max(spec.r_floor);
        let l = rho.ln();
        let mut modes: Vec<AngularMode> = Vec::new();
        match spec.kind {
            ModelKind::Angular2D { m_max, half_integer, n_max } => modes_2d(m_max, half_integer, n_max, x, rho, &mut modes),
            ModelKind::Angular3D { l_max } => modes_3d(l_max, x, rho, &mut modes),
            _ => unreachable!("angular terms on a non-angular model"),
        }
        let (ern, nvec) = match probe {
            Probe::Normal(n) => (dot(x, &n[..d]) / rho, &n[..d]),
            _ => (0.0, &[][..]),
        };
        let ka = spec.k_ang;
        let mut out = 0.0;
        for (j, &lam) in self.mus[1].iter().enumerate() {
            let p = (lam * l).exp();
            let mut dlam = 0.0;
            for (m, mode) in modes.iter().enumerate() {
                let a = mode.value;
                let (b, db) = match probe {
                    Probe::Value => (p * a, l * p * a),
                    Probe::Laplacian => {
                        let q = p / (rho * rho);
                        let e = lam * (lam + df - 2.0) - mode.eig;
                        (q * e * a, q * (l * e + 2.0 * lam + df - 2.0) * a)
                    }
                    Probe::Normal(_) => {
                        let q = p / rho;
                        let tn = dot(&mode.tangent[..d], nvec);
                        let core = (lam - mode.shift) * a * ern + tn;
                        (q * core, q * (l * core + a * ern))
                    }
                };
                let idx = ac + m * ka + j;
                out += vals[idx] * b;
                dlam += vals[idx] * db;
                if let Some(acc) = acc {
                    acc.add(idx, b);
                }
            }
            if let Some(acc) = acc {
                acc.add(ag + j, dlam);
            }
        }
        out
    }

    fn multi_center(&self, centers: usize, x: &[f64], probe: &Probe, acc: &mut Option<Accumulator<'_>>) -> f64 {
        let spec = &self.params.spec;
        let vals = &self.params.values;
        let off = &self.params.layout().offsets;
        let (co, lc) = (off.centers.expect("centers"), off.log_coeff.expect("log coefficients"));
        let d = spec.dim;
        let k = spec.k;
        let mut out = 0.0;
        let mut v = [0.0; 3];
        for j in 0..centers {
            for i in 0..d {
                v[i] = x[i] - vals[co + j * d + i];
            }
            let v = &v[..d];
            let rho = dot(v, v).sqrt().max(spec.r_floor);
            let l = rho.ln();
            let vn = match probe {
                Probe::Normal(n) => dot(v, &n[..d]),
                _ => 0.0,
            };
            let mut total = RadialJet::default();
            for (kk, &mu) in self.mus[j].iter().enumerate() {
                let (h, hm) = power_jets(rho, l, mu);
                let idx = off.coeffs + j * k + kk;
                let a = vals[idx];
                let p = project(&h, probe, rho, vn, d);
                out += a * p;
                if let Some(acc) = acc {
                    axpy(&mut total, a, &h);
                    acc.add(idx, p);
                    acc.add(off.raw_gaps + j * k + kk, a * project(&hm, probe, rho, vn, d));
                }
            }
            let (h, _) = log_jets(rho, l, 0.0, spec.eps_log);
            let c = vals[lc + j];
            let p = project(&h, probe, rho, vn, d);
            out += c * p;
            if let Some(acc) = acc {
                axpy(&mut total, c, &h);
                acc.add(lc + j, p);
                let mut g = [0.0; 3];
                center_grad(&total, probe, v, rho, vn, &mut g);
                for i in 0..d {
                    acc.add(co + j * d + i, g[i]);
                }
            }
        }
        out + self.bias(probe, acc)
    }

    fn msn(&self, x: &[f64], probe: &Probe, acc: &mut Option<Accumulator<'_>>) -> f64 {
        let spec = &self.params.spec;
        let vals = &self.params.values;
        let off = &self.params.layout().offsets;
        let k = spec.k;
        let mut out = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            let t = xi.abs().max(spec.r_floor);
            let l = t.ln();
            let s = if xi < 0.0 { -1.0 } else { 1.0 };
            let pick = |h: &RadialJet| match probe {
                Probe::Value => h.0[0],
                Probe::Laplacian => h.0[2],
                Probe::Normal(n) => s * h.0[1] * n[i],
            };
            for (kk, &mu) in self.mus[i].iter().enumerate() {
                let (h, hm) = power_jets(t, l, mu);
                let idx = off.coeffs + i * k + kk;
                let a = vals[idx];
                let p = pick(&h);
                out += a * p;
                if let Some(acc) = acc {
                    acc.add(idx, p);
                    acc.add(off.raw_gaps + i * k + kk, a * pick(&hm));
                }
            }
        }
        out + self.bias(probe, acc)
    }
}
