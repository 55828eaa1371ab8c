//! Hand-assembled reverse-mode gradients of the training losses, plus a
//! finite-difference checker.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::models::{Accumulator, Evaluator, Layout, ModelParams, Probe};
use crate::sampling::PointBatch;

/// Points per work unit. Partial sums are reduced in chunk order, so the
/// result does not depend on the number of worker threads.
const CHUNK: usize = 512;

/// `dL/dtheta` laid out like the [`ModelParams`] it differentiates.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradient {
    pub values: Vec<f64>,
    layout: Layout,
}

impl ParamGradient {
    pub fn zeros(params: &ModelParams) -> Self {
        Self { values: vec![0.0; params.len()], layout: params.layout().clone() }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.offset..s.offset + s.len])
    }

    pub fn inf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Base weights of the physics-informed loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub pde: f64,
    pub bc: f64,
    pub flux: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { pde: 1.0, bc: 200.0, flux: 50.0 }
    }
}

/// Quadrature points on one puncture sphere, with the enclosed charge.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereSamples {
    pub radius: f64,
    pub charge: f64,
    /// `(point, outward unit normal)` pairs.
    pub points: Vec<([f64; 3], [f64; 3])>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PinnLoss {
    pub pde: f64,
    pub bc: f64,
    pub flux: f64,
    pub total: f64,
}

fn surface_area(dim: usize, radius: f64) -> f64 {
    match dim {
        2 => 2.0 * PI * radius,
        _ => 4.0 * PI * radius * radius,
    }
}

/// Sum over points of `c(phi_i) * d(probe_i)/d(theta)` where `c` is computed
/// from the probe value, together with `sum s(phi_i)`.
fn reduce_points<C>(params: &ModelParams, ev: &Evaluator<'_>, batch: &PointBatch, probe: Probe, coef: C) -> Result<(f64, Vec<f64>)>
where
    C: Fn(usize, f64) -> (f64, f64) + Sync,
{
    let n = batch.len();
    let p = params.len();
    let dim = batch.dim;
    let parts: Vec<Result<(f64, Vec<f64>)>> = batch
        .points
        .par_chunks(CHUNK * dim)
        .enumerate()
        .map(|(c, chunk)| {
            let mut grad = vec![0.0; p];
            let mut scratch = vec![0.0; p];
            let mut loss = 0.0;
            for (k, x) in chunk.chunks_exact(dim).enumerate() {
                let i = c * CHUNK + k;
                scratch.iter_mut().for_each(|v| *v = 0.0);
                let v = ev.probe(x, &probe, Some(Accumulator { grad: &mut scratch, weight: 1.0 }))?;
                let (s, w) = coef(i, v);
                loss += s;
                if w != 0.0 {
                    grad.iter_mut().zip(&scratch).for_each(|(g, d)| *g += w * d);
                }
            }
            Ok((loss, grad))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; p];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    debug_assert!(n > 0);
    Ok((loss, grad))
}

/// Values of `probe` at every point of `batch`.
pub fn eval_batch(params: &ModelParams, batch: &PointBatch, probe: Probe) -> Result<Vec<f64>> {
    if batch.dim != params.spec.dim {
        return Err(contract(format!("batch dimension {} does not match model dimension {}", batch.dim, params.spec.dim)));
    }
    let ev = params.evaluator();
    batch.points.par_chunks(CHUNK * batch.dim).map(|chunk| {
        chunk.chunks_exact(batch.dim).map(|x| ev.probe(x, &probe, None)).collect::<Result<Vec<f64>>>()
    }).collect::<Result<Vec<Vec<f64>>>>().map(|v| v.concat())
}

/// Weighted mean squared error `(1/N) sum w_i (phi(x_i) - f_i)^2` and its gradient.
///
/// When `weights` is `None` the batch's own weights are used (uniform if absent).
pub fn grad_mse(params: &ModelParams, batch: &PointBatch, targets: &[f64], weights: Option<&[f64]>) -> Result<(f64, ParamGradient)> {
    if batch.is_empty() {
        return Err(contract("mean squared error needs at least one point"));
    }
    if targets.len() != batch.len() {
        return Err(contract(format!("{} targets for {} points", targets.len(), batch.len())));
    }
    if batch.dim != params.spec.dim {
        return Err(contract(format!("batch dimension {} does not match model dimension {}", batch.dim, params.spec.dim)));
    }
    let w: Option<&[f64]> = weights.or(batch.weights.as_deref());
    if let Some(w) = w {
        if w.len() != batch.len() || w.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(contract("weights must be finite, nonnegative, and one per point"));
        }
    }
    let inv_n = 1.0 / batch.len() as f64;
    let ev = params.evaluator();
    let (loss, mut grad) = reduce_points(params, &ev, batch, Probe::Value, |i, phi| {
        let wi = w.map_or(1.0, |w| w[i]);
        let r = phi - targets[i];
        (wi * r * r * inv_n, 2.0 * wi * r * inv_n)
    })?;
    params.layout().chain_ladders(&params.values, &mut grad);
    Ok((loss, ParamGradient { values: grad, layout: params.layout().clone() }))
}

/// Gauss-flux residuals `A_j * mean(grad(phi) . n) + q_j` per sphere.
pub fn flux_residuals(params: &ModelParams, spheres: &[SphereSamples]) -> Result<Vec<f64>> {
    let ev = params.evaluator();
    let d = params.spec.dim;
    spheres
        .iter()
        .map(|s| {
            if s.points.is_empty() {
                return Err(contract("flux sphere has no quadrature points"));
            }
            let mut sum = 0.0;
            for (x, n) in &s.points {
                sum += ev.probe(&x[..d], &Probe::Normal(*n), None)?;
            }
            Ok(surface_area(d, s.radius) * sum / s.points.len() as f64 + s.charge)
        })
        .collect()
}

/// Physics-informed loss `w.pde L_pde + w.bc L_bc + w.flux L_flux` with
/// `L_pde = mean (lap phi)^2`, `L_bc = mean phi^2` on the boundary, and
/// `L_flux = sum_j (A_j mean(grad(phi) . n) + q_j)^2`.
pub fn grad_pinn(
    params: &ModelParams,
    interior: &PointBatch,
    boundary: &PointBatch,
    spheres: &[SphereSamples],
    weights: &LossWeights,
) -> Result<(PinnLoss, ParamGradient)> {
    if interior.is_empty() || boundary.is_empty() || spheres.is_empty() {
        return Err(contract("physics-informed loss needs interior, boundary, and flux points"));
    }
    let d = params.spec.dim;
    if interior.dim != d || boundary.dim != d {
        return Err(contract("collocation dimension does not match the model"));
    }
    let ev = params.evaluator();
    let ni = 1.0 / interior.len() as f64;
    let (l_pde, g_pde) = reduce_points(params, &ev, interior, Probe::Laplacian, |_, lap| (lap * lap * ni, 2.0 * lap * ni))?;
    let nb = 1.0 / boundary.len() as f64;
    let (l_bc, g_bc) = reduce_points(params, &ev, boundary, Probe::Value, |_, phi| (phi * phi * nb, 2.0 * phi * nb))?;

    let residuals = flux_residuals(params, spheres)?;
    let mut g_flux = vec![0.0; params.len()];
    for (s, res) in spheres.iter().zip(&residuals) {
        let scale = 2.0 * res * surface_area(d, s.radius) / s.points.len() as f64;
        for (x, n) in &s.points {
            ev.probe(&x[..d], &Probe::Normal(*n), Some(Accumulator { grad: &mut g_flux, weight: scale }))?;
        }
    }
    let l_flux: f64 = residuals.iter().map(|r| r * r).sum();

    let mut grad: Vec<f64> = (0..params.len())
        .map(|i| weights.pde * g_pde[i] + weights.bc * g_bc[i] + weights.flux * g_flux[i])
        .collect();
    params.layout().chain_ladders(&params.values, &mut grad);
    let total = weights.pde * l_pde + weights.bc * l_bc + weights.flux * l_flux;
    Ok((PinnLoss { pde: l_pde, bc: l_bc, flux: l_flux, total }, ParamGradient { values: grad, layout: params.layout().clone() }))
}

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub worst_name: String,
    pub tol: f64,
    pub passed: bool,
    /// `(name, analytic, finite difference, relative error)` for entries above `tol`.
    pub failures: Vec<(String, f64, f64, f64)>,
}

/// Central-difference check of `analytic` against `f` at `params`.
///
/// Entry `i` uses the step `step * max(1, |p_i|)`. Relative errors are
/// taken against `max(|analytic_i|, |fd_i|, 1e-3 * max_j |analytic_j|)` so
/// that entries far below the gradient's scale are judged absolutely.
pub fn fd_check<F, N>(f: F, params: &[f64], analytic: &[f64], step: f64, tol: f64, name: N) -> FdReport
where
    F: Fn(&[f64]) -> f64,
    N: Fn(usize) -> String,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    assert_eq!(params.len(), analytic.len(), "gradient and parameter lengths differ");
    let floor = 1e-3 * analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut p = params.to_vec();
    let mut report = FdReport { max_rel_err: 0.0, worst_index: 0, worst_name: String::new(), tol, passed: true, failures: Vec::new() };
    for i in 0..p.len() {
        let h = step * params[i].abs().max(1.0);
        p[i] = params[i] + h;
        let fp = f(&p);
        p[i] = params[i] - h;
        let fm = f(&p);
        p[i] = params[i];
        let fd = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(fd.abs()).max(floor).max(f64::MIN_POSITIVE);
        let err = if (a - fd).abs() == 0.0 { 0.0 } else { (a - fd).abs() / denom };
        let err = if err.is_nan() { f64::INFINITY } else { err };
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
        }
        if err > tol {
            report.failures.push((name(i), a, fd, err));
        }
    }
    report.worst_name = name(report.worst_index);
    report.passed = report.failures.is_empty();
    report
}

/// Step for losses built from values only.
pub const FD_STEP_VALUE: f64 = 1e-6;
/// Step for losses that contain second spatial derivatives.
pub const FD_STEP_SECOND_ORDER: f64 = 1e-4;

/// Checks [`grad_mse`] against central differences.
pub fn fd_check_mse(params: &ModelParams, batch: &PointBatch, targets: &[f64], tol: f64) -> Result<FdReport> {
    let (_, g) = grad_mse(params, batch, targets, None)?;
    let probe = std::cell::RefCell::new(params.clone());
    let f = |v: &[f64]| {
        let mut p = probe.borrow_mut();
        p.values.copy_from_slice(v);
        grad_mse(&p, batch, targets, None).map(|r| r.0).unwrap_or(f64::NAN)
    };
    Ok(fd_check(f, &params.values, &g.values, FD_STEP_VALUE, tol, |i| params.layout().param_name(i)))
}

/// Checks [`grad_pinn`] against central differences.
pub fn fd_check_pinn(
    params: &ModelParams,
    interior: &PointBatch,
    boundary: &PointBatch,
    spheres: &[SphereSamples],
    weights: &LossWeights,
    tol: f64,
) -> Result<FdReport> {
    let (_, g) = grad_pinn(params, interior, boundary, spheres, weights)?;
    let probe = std::cell::RefCell::new(params.clone());
    let f = |v: &[f64]| {
        let mut p = probe.borrow_mut();
        p.values.copy_from_slice(v);
        grad_pinn(&p, interior, boundary, spheres, weights).map(|r| r.0.total).unwrap_or(f64::NAN)
    };
    Ok(fd_check(f, &params.values, &g.values, FD_STEP_SECOND_ORDER, tol, |i| params.layout().param_name(i)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelKind, ModelSpec};
    use crate::sampling::{fibonacci_sphere, rng_from_seed};
    use rand::Rng;

    fn random_batch(params: &ModelParams, n: usize, seed: u64) -> PointBatch {
        let mut rng = rng_from_seed(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| crate::gradcheck::random_point(params, 0.05, &mut rng)).collect();
        PointBatch::from_points(params.spec.dim, &pts)
    }

    #[test]
    fn hand_computed_coefficient_gradient() {
        let spec = ModelSpec::direct(2).with_k(1).with_range(-2.0, -1.0);
        let mut p = ModelParams::zeros(spec).unwrap();
        p.segment_mut("coeffs").unwrap()[0] = 1.0;
        let batch = PointBatch::from_points(2, &[vec![0.5, 0.0]]);
        let (loss, g) = grad_mse(&p, &batch, &[0.0], None).unwrap();
        assert!((loss - 4.0).abs() < 1e-12);
        assert!((g.segment("coeffs").unwrap()[0] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn exact_representation_is_stationary() {
        let mut p = ModelParams::zeros(ModelSpec::direct(2)).unwrap();
        p.segment_mut("coeffs").unwrap()[11] = 0.7;
        p.segment_mut("bias").unwrap()[0] = -0.2;
        let batch = random_batch(&p, 200, 1);
        let targets: Vec<f64> = batch.iter().map(|x| 0.7 * (x[0] * x[0] + x[1] * x[1]).powi(2) - 0.2).collect();
        let (loss, g) = grad_mse(&p, &batch, &targets, None).unwrap();
        assert!(loss < 1e-20, "{loss}");
        assert!(g.inf_norm() < 1e-9);
    }

    #[test]
    fn mse_gradients_match_finite_differences() {
        for (s, spec) in crate::gradcheck::oracle_specs().into_iter().enumerate() {
            for inst in 0..20u64 {
                let seed = 1000 * s as u64 + inst;
                let p = crate::gradcheck::random_instance(spec.clone(), seed).unwrap();
                let batch = random_batch(&p, 16, seed);
                let mut rng = rng_from_seed(seed ^ 0xabc);
                let targets: Vec<f64> = (0..batch.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let w: Vec<f64> = (0..batch.len()).map(|_| rng.random_range(0.1..2.0)).collect();
                let batch = PointBatch { weights: Some(w), ..batch };
                let r = fd_check_mse(&p, &batch, &targets, 1e-4).unwrap();
                assert!(r.passed, "{:?} seed {seed}: {:?}", p.spec.kind, r.failures);
            }
        }
    }

    fn pinn_sets(p: &ModelParams, seed: u64) -> (PointBatch, PointBatch, Vec<SphereSamples>) {
        let interior = random_batch(p, 12, seed);
        let d = p.spec.dim;
        let mut rng = rng_from_seed(seed + 7);
        let bpts: Vec<Vec<f64>> = (0..8)
            .map(|k| {
                let mut x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                x[k % d] = if k % 2 == 0 { 1.0 } else { -1.0 };
                x
            })
            .collect();
        let boundary = PointBatch::from_points(d, &bpts);
        let centers = p.centers();
        let c = centers.first().cloned().unwrap_or_else(|| vec![0.0; d]);
        let mut c3 = [0.0; 3];
        c3[..d].copy_from_slice(&c);
        let radius = 0.12;
        let points = fibonacci_sphere(c3, radius, 40)
            .into_iter()
            .map(|(mut x, mut n)| {
                if d == 2 {
                    // project onto the circle in the plane
                    let t = n[1].atan2(n[0]);
                    n = [t.cos(), t.sin(), 0.0];
                    x = [c3[0] + radius * n[0], c3[1] + radius * n[1], 0.0];
                }
                (x, n)
            })
            .collect();
        (interior, boundary, vec![SphereSamples { radius, charge: 0.7, points }])
    }

    #[test]
    fn pinn_gradients_match_finite_differences() {
        for (s, spec) in crate::gradcheck::oracle_specs().into_iter().enumerate() {
            for inst in 0..20u64 {
                let seed = 5000 + 100 * s as u64 + inst;
                let p = crate::gradcheck::random_instance(spec.clone(), seed).unwrap();
                let (i, b, sp) = pinn_sets(&p, seed);
                let r = fd_check_pinn(&p, &i, &b, &sp, &LossWeights::default(), 1e-3).unwrap();
                assert!(r.passed, "{:?} seed {seed}: {:?}", p.spec.kind, r.failures);
            }
        }
    }

    #[test]
    fn zero_model_pinn_loss() {
        let p = ModelParams::zeros(ModelSpec::new(ModelKind::MultiCenter { centers: 1 }, 3)).unwrap();
        let (i, b, sp) = pinn_sets(&p, 3);
        let (l, _) = grad_pinn(&p, &i, &b, &sp, &LossWeights::default()).unwrap();
        assert_eq!(l.pde, 0.0);
        assert_eq!(l.bc, 0.0);
        assert!((l.flux - 0.49).abs() < 1e-15);
    }

    #[test]
    fn coulomb_flux_quadrature() {
        let spec = ModelSpec::new(ModelKind::MultiCenter { centers: 1 }, 3).with_k(6).with_range(-2.0, 2.0);
        let mut p = ModelParams::zeros(spec).unwrap();
        p.set_exponents(0, &[-1.0, -0.5, 0.0, 0.5, 1.0, 2.0]).unwrap();
        p.segment_mut("coeffs").unwrap()[0] = 1.0 / (4.0 * PI);
        let c = [0.2, -0.1, 0.3];
        p.set_centers(&[c.to_vec()]).unwrap();
        let sphere = SphereSamples { radius: 0.08, charge: 1.0, points: fibonacci_sphere(c, 0.08, 1500) };
        let r = flux_residuals(&p, &[sphere]).unwrap();
        assert!(r[0].abs() < 1e-3, "{}", r[0]);
    }

    #[test]
    fn loss_is_linear_in_weights() {
        let p = crate::gradcheck::random_instance(ModelSpec::new(ModelKind::MultiCenter { centers: 2 }, 3), 9).unwrap();
        let (i, b, sp) = pinn_sets(&p, 9);
        let g = |w: LossWeights| grad_pinn(&p, &i, &b, &sp, &w).unwrap().1.values;
        let g1 = g(LossWeights { pde: 1.0, bc: 0.0, flux: 0.0 });
        let g2 = g(LossWeights { pde: 0.0, bc: 1.0, flux: 0.0 });
        let g3 = g(LossWeights { pde: 0.0, bc: 0.0, flux: 1.0 });
        let (a, b_, c) = (0.3, -1.7, 2.5);
        let gc = g(LossWeights { pde: a, bc: b_, flux: c });
        for k in 0..gc.len() {
            let lin = a * g1[k] + b_ * g2[k] + c * g3[k];
            assert!((gc[k] - lin).abs() <= 1e-12 * lin.abs().max(1.0), "{k}: {} vs {lin}", gc[k]);
        }
    }

    #[test]
    fn fd_check_detects_quadratic_and_faults() {
        let p = vec![0.3, -1.2, 2.0];
        let exact: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        let f = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let r = fd_check(f, &p, &exact, 1e-6, 1e-8, |i| format!("p[{i}]"));
        assert!(r.passed, "{r:?}");
        let mut bad = exact.clone();
        bad[1] += 0.1;
        let r = fd_check(f, &p, &bad, 1e-6, 1e-8, |i| format!("p[{i}]"));
        assert!(!r.passed);
        assert_eq!(r.worst_name, "p[1]");
        assert_eq!(r.failures.len(), 1);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let p = ModelParams::zeros(ModelSpec::direct(2)).unwrap();
        let empty = PointBatch::new(2, vec![]);
        assert!(grad_mse(&p, &empty, &[], None).is_err());
        let one = PointBatch::from_points(2, &[vec![0.5, 0.5]]);
        assert!(grad_pinn(&p, &empty, &one, &[], &LossWeights::default()).is_err());
    }
}
