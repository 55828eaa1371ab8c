//! Seeded samplers for punctured domains, surfaces, and evaluation grids.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Seeded generator used throughout the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A removed ball `|x - center| < radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Puncture {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Puncture {
    pub fn new(center: &[f64], radius: f64) -> Self {
        Self { center: center.to_vec(), radius }
    }

    fn excludes(&self, x: &[f64]) -> bool {
        dist2(x, &self.center) < self.radius * self.radius
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    /// `r_min <= |x| <= r_max` in the plane.
    #[serde(rename = "annulus2d")]
    Annulus2D { r_min: f64, r_max: f64 },
    /// `r_min <= |x| <= r_max` in space.
    #[serde(rename = "shell_ball3d")]
    ShellBall3D { r_min: f64, r_max: f64 },
    /// `[-h, h]^3` minus punctures.
    PuncturedCube { half_width: f64, punctures: Vec<Puncture> },
    /// `[-side/2, side/2]^2` minus punctures.
    #[serde(rename = "square2d")]
    Square2D {
        side: f64,
        #[serde(default)]
        punctures: Vec<Puncture>,
    },
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// Radii are pulled this far inside the shell so that the norm of the emitted
// point, after rounding, still satisfies the closed bounds.
const SHELL_GUARD: f64 = 8.0 * f64::EPSILON;

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Annulus2D { .. } | Domain::Square2D { .. } => 2,
            Domain::ShellBall3D { .. } | Domain::PuncturedCube { .. } => 3,
        }
    }

    pub fn punctures(&self) -> &[Puncture] {
        match self {
            Domain::PuncturedCube { punctures, .. } | Domain::Square2D { punctures, .. } => punctures,
            _ => &[],
        }
    }

    /// Membership predicate.
    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            Domain::Annulus2D { r_min, r_max } | Domain::ShellBall3D { r_min, r_max } => {
                let r = norm(x);
                r >= *r_min && r <= *r_max
            }
            Domain::PuncturedCube { half_width: h, punctures } => {
                x.iter().all(|c| c.abs() <= *h) && !punctures.iter().any(|p| p.excludes(x))
            }
            Domain::Square2D { side, punctures } => {
                x.iter().all(|c| c.abs() <= side / 2.0) && !punctures.iter().any(|p| p.excludes(x))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::Annulus2D { r_min, r_max } | Domain::ShellBall3D { r_min, r_max } => {
                if !(*r_min > 0.0 && r_min < r_max) {
                    return Err(contract(format!("shell needs 0 < r_min < r_max, got [{r_min}, {r_max}]")));
                }
            }
            Domain::PuncturedCube { half_width: h, punctures } | Domain::Square2D { side: h, punctures } => {
                if *h <= 0.0 {
                    return Err(contract("box size must be positive"));
                }
                let (half, d) = match self {
                    Domain::Square2D { .. } => (h / 2.0, 2),
                    _ => (*h, 3),
                };
                for p in punctures {
                    if p.center.len() != d || p.radius <= 0.0 || p.center.iter().any(|c| c.abs() + p.radius >= half) {
                        return Err(contract("punctures must be balls strictly inside the box"));
                    }
                }
                let box_vol = (2.0 * half).powi(d as i32);
                let ball = |r: f64| if d == 2 { PI * r * r } else { 4.0 / 3.0 * PI * r.powi(3) };
                let removed: f64 = punctures.iter().map(|p| ball(p.radius)).sum();
                if removed >= 0.5 * box_vol {
                    return Err(contract("punctures cover at least half of the box; rejection sampling would stall"));
                }
            }
        }
        Ok(())
    }

    /// Maps a point of the unit cube `[0,1)^d` into the domain (before
    /// puncture filtering). Shells use the inverse radial CDF.
    fn map_unit(&self, u: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self {
            Domain::Annulus2D { r_min, r_max } => {
                let r = shell_radius(u[0], *r_min, *r_max, 2);
                let t = 2.0 * PI * u[1] - PI;
                out.extend([r * t.cos(), r * t.sin()]);
            }
            Domain::ShellBall3D { r_min, r_max } => {
                let r = shell_radius(u[0], *r_min, *r_max, 3);
                let z = 1.0 - 2.0 * u[1];
                let s = (1.0 - z * z).max(0.0).sqrt();
                let phi = 2.0 * PI * u[2];
                out.extend([r * s * phi.cos(), r * s * phi.sin(), r * z]);
            }
            Domain::PuncturedCube { half_width: h, .. } => out.extend(u.iter().map(|v| h * (2.0 * v - 1.0))),
            Domain::Square2D { side, .. } => out.extend(u.iter().map(|v| side * (v - 0.5))),
        }
    }
}

fn shell_radius(u: f64, r_min: f64, r_max: f64, d: i32) -> f64 {
    let df = d as f64;
    let (a, b) = (r_min.powi(d), r_max.powi(d));
    let r = (a + u * (b - a)).powf(1.0 / df);
    r.clamp(r_min * (1.0 + SHELL_GUARD), r_max * (1.0 - SHELL_GUARD))
}

/// A set of `d`-dimensional points stored row-major, with optional weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PointBatch {
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl PointBatch {
    pub fn new(dim: usize, points: Vec<f64>) -> Self {
        assert!(dim > 0 && points.len().is_multiple_of(dim), "point buffer is not a multiple of the dimension");
        Self { dim, points, weights: None }
    }

    pub fn from_points(dim: usize, pts: &[Vec<f64>]) -> Self {
        Self::new(dim, pts.iter().flat_map(|p| p.iter().copied()).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.dim)
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    /// Weights proportional to `|x - c|^2`, normalized to unit mean.
    pub fn with_r2_weights(mut self, center: &[f64]) -> Self {
        let w: Vec<f64> = self.iter().map(|p| dist2(p, center)).collect();
        let mean = w.iter().sum::<f64>() / w.len().max(1) as f64;
        self.weights = Some(w.into_iter().map(|v| v / mean).collect());
        self
    }

    /// CSV with columns `x1..xd[,weight][,value]`.
    pub fn write_csv<W: Write>(&self, out: W, values: Option<&[f64]>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        if self.weights.is_some() {
            header.push("weight".into());
        }
        if values.is_some() {
            header.push("value".into());
        }
        w.write_record(&header)?;
        for (i, p) in self.iter().enumerate() {
            let mut row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            if let Some(ws) = &self.weights {
                row.push(ws[i].to_string());
            }
            if let Some(vs) = values {
                row.push(vs[i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `n` i.i.d. points, uniform with respect to Lebesgue measure on `domain`.
pub fn sample_uniform(domain: &Domain, n: usize, seed: u64) -> Result<PointBatch> {
    if n == 0 {
        return Err(contract("at least one point must be requested"));
    }
    domain.validate()?;
    let d = domain.dim();
    let mut rng = rng_from_seed(seed);
    let mut pts = Vec::with_capacity(n * d);
    let mut buf = Vec::with_capacity(d);
    let mut u = vec![0.0; d];
    while pts.len() < n * d {
        match domain {
            Domain::ShellBall3D { r_min, r_max } => {
                // gaussian direction keeps the angular law exact
                let g: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
                let gn = norm(&g);
                if gn < 1e-300 {
                    continue;
                }
                let r = shell_radius(rng.random::<f64>(), *r_min, *r_max, 3);
                buf.clear();
                buf.extend(g.iter().map(|c| r * c / gn));
            }
            _ => {
                for v in u.iter_mut() {
                    *v = rng.random::<f64>();
                }
                domain.map_unit(&u, &mut buf);
            }
        }
        if domain.contains(&buf) {
            pts.extend_from_slice(&buf);
        }
    }
    Ok(PointBatch::new(d, pts))
}

/// Points on a sphere from the golden-angle spiral, paired with the outward
/// unit normal.
pub fn fibonacci_sphere(center: [f64; 3], radius: f64, n: usize) -> Vec<([f64; 3], [f64; 3])> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let s = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            let nrm = [s * phi.cos(), s * phi.sin(), z];
            let p = [center[0] + radius * nrm[0], center[1] + radius * nrm[1], center[2] + radius * nrm[2]];
            (p, nrm)
        })
        .collect()
}

/// Uniform points on the surface of `[-h, h]^3`.
pub fn boundary_sample_cube(half_width: f64, n: usize, seed: u64) -> Result<PointBatch> {
    if n < 6 {
        return Err(contract("boundary sampling needs at least six points"));
    }
    let mut rng = rng_from_seed(seed);
    let mut pts = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let face = rng.random_range(0..6usize);
        let axis = face / 2;
        let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
        let mut p = [0.0; 3];
        for (i, c) in p.iter_mut().enumerate() {
            *c = if i == axis { sign * half_width } else { half_width * (2.0 * rng.random::<f64>() - 1.0) };
        }
        pts.extend_from_slice(&p);
    }
    Ok(PointBatch::new(3, pts))
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    out
}

/// Deterministic low-discrepancy evaluation set of exactly `n` points
/// (Halton sequence in bases 2, 3, 5 mapped into the domain; points that
/// land in a puncture are skipped and the sequence continues).
pub fn test_grid(domain: &Domain, n: usize) -> Result<PointBatch> {
    if n == 0 {
        return Err(contract("at least one point must be requested"));
    }
    domain.validate()?;
    const BASES: [u64; 3] = [2, 3, 5];
    let d = domain.dim();
    let mut pts = Vec::with_capacity(n * d);
    let mut buf = Vec::with_capacity(d);
    let mut u = vec![0.0; d];
    let mut i = 1u64;
    while pts.len() < n * d {
        for (k, v) in u.iter_mut().enumerate() {
            *v = radical_inverse(i, BASES[k]);
        }
        i += 1;
        domain.map_unit(&u, &mut buf);
        if domain.contains(&buf) {
            pts.extend_from_slice(&buf);
        }
    }
    Ok(PointBatch::new(d, pts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn annulus() -> Domain {
        Domain::Annulus2D { r_min: 0.01, r_max: 1.0 }
    }

    #[test]
    fn annulus_second_moment() {
        let b = sample_uniform(&annulus(), 100_000, 7).unwrap();
        let m: f64 = b.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>() / b.len() as f64;
        // E[r^2] for density 2r / (1 - a^2) on [a, 1]
        let a2: f64 = 1e-4;
        let exact = (1.0 - a2 * a2) / (2.0 * (1.0 - a2));
        assert!((m - exact).abs() < 1e-2, "{m} vs {exact}");
    }

    #[test]
    fn shell_points_respect_bounds() {
        for dom in [annulus(), Domain::ShellBall3D { r_min: 0.01, r_max: 1.0 }] {
            let b = sample_uniform(&dom, 20_000, 3).unwrap();
            assert!(b.iter().all(|p| dom.contains(p)));
            let g = test_grid(&dom, 5000).unwrap();
            assert!(g.iter().all(|p| dom.contains(p)));
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_uniform(&annulus(), 100, 11).unwrap();
        let b = sample_uniform(&annulus(), 100, 11).unwrap();
        let c = sample_uniform(&annulus(), 100, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn annulus_chi_square() {
        let n = 100_000;
        let b = sample_uniform(&annulus(), n, 5).unwrap();
        let (a2, mut counts) = (1e-4, [[0usize; 10]; 10]);
        for p in b.iter() {
            let r2 = p[0] * p[0] + p[1] * p[1];
            // radial bins of equal probability in r^2
            let rb = (((r2 - a2) / (1.0 - a2)) * 10.0).floor().clamp(0.0, 9.0) as usize;
            let t = p[1].atan2(p[0]);
            let ab = (((t + PI) / (2.0 * PI)) * 10.0).floor().clamp(0.0, 9.0) as usize;
            counts[rb][ab] += 1;
        }
        let e = n as f64 / 100.0;
        let chi2: f64 = counts.iter().flatten().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99 degrees of freedom, upper 0.001 quantile
        assert!(chi2 < 148.2, "chi2 = {chi2}");
    }

    #[test]
    fn punctured_cube_membership_and_guard() {
        let dom = Domain::PuncturedCube { half_width: 1.0, punctures: vec![Puncture::new(&[0.2, -0.1, 0.3], 0.08)] };
        let b = sample_uniform(&dom, 5000, 1).unwrap();
        assert!(b.iter().all(|p| dom.contains(p)));
        let huge = Domain::PuncturedCube { half_width: 1.0, punctures: vec![Puncture::new(&[0.0; 3], 0.99)] };
        assert!(sample_uniform(&huge, 10, 1).is_err());
    }

    #[test]
    fn fibonacci_sphere_symmetry() {
        let c = [0.3, -0.2, 0.1];
        let pts = fibonacci_sphere(c, 0.08, 1500);
        for k in 0..3 {
            let m = pts.iter().map(|(p, _)| p[k]).sum::<f64>() / pts.len() as f64;
            assert!((m - c[k]).abs() < 0.01 * 0.08);
        }
        let v = [0.6, 0.0, 0.8];
        let f = pts.iter().map(|(_, n)| n[0] * v[0] + n[1] * v[1] + n[2] * v[2]).sum::<f64>() / pts.len() as f64;
        assert!(f.abs() < 1e-3);
        for (p, n) in &pts {
            for k in 0..3 {
                assert!((n[k] - (p[k] - c[k]) / 0.08).abs() < 1e-12);
            }
        }
    }

    fn coulomb_flux(n: usize) -> f64 {
        let eps = 0.08;
        let pts = fibonacci_sphere([0.0; 3], eps, n);
        let mean = pts
            .iter()
            .map(|(p, nrm)| {
                let r = norm(p);
                // grad(1/(4 pi r)) = -x / (4 pi r^3)
                -(p[0] * nrm[0] + p[1] * nrm[1] + p[2] * nrm[2]) / (4.0 * PI * r.powi(3))
            })
            .sum::<f64>()
            / n as f64;
        4.0 * PI * eps * eps * mean
    }

    #[test]
    fn fibonacci_coulomb_flux() {
        assert!((coulomb_flux(1500) + 1.0).abs() < 1e-3);
    }

    #[test]
    fn fibonacci_flux_error_shrinks() {
        // off-center source so the integrand is not constant on the sphere
        let eps = 0.1;
        let src = [0.03, -0.02, 0.05];
        let err = |n: usize| {
            let pts = fibonacci_sphere([0.0; 3], eps, n);
            let mean = pts
                .iter()
                .map(|(p, nrm)| {
                    let v = [p[0] - src[0], p[1] - src[1], p[2] - src[2]];
                    let r = norm(&v);
                    -(v[0] * nrm[0] + v[1] * nrm[1] + v[2] * nrm[2]) / (4.0 * PI * r.powi(3))
                })
                .sum::<f64>()
                / n as f64;
            (4.0 * PI * eps * eps * mean + 1.0).abs()
        };
        let (e1, e2, e3) = (err(100), err(500), err(1500));
        assert!(e1 > e2 && e2 > e3, "{e1} {e2} {e3}");
    }

    #[test]
    fn cube_boundary_faces() {
        let b = boundary_sample_cube(1.0, 8000, 9).unwrap();
        let mut faces = [0usize; 6];
        for p in b.iter() {
            let m = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert_eq!(m, 1.0);
            let axis = (0..3).find(|&k| p[k].abs() == 1.0).unwrap();
            faces[2 * axis + usize::from(p[axis] > 0.0)] += 1;
        }
        for c in faces {
            assert!((c as f64 - 8000.0 / 6.0).abs() < 0.05 * 8000.0 / 6.0, "{faces:?}");
        }
        assert_eq!(b, boundary_sample_cube(1.0, 8000, 9).unwrap());
    }

    #[test]
    fn test_grid_count_and_determinism() {
        let dom = Domain::Square2D { side: 2.0, punctures: vec![Puncture::new(&[0.0, 0.0], 0.3)] };
        let g = test_grid(&dom, 5000).unwrap();
        assert_eq!(g.len(), 5000);
        assert!(g.iter().all(|p| dom.contains(p)));
        assert_eq!(g, test_grid(&dom, 5000).unwrap());
    }

    #[test]
    fn csv_export_has_header() {
        let b = PointBatch::from_points(2, &[vec![0.5, 0.25]]).with_r2_weights(&[0.0, 0.0]);
        let mut buf = Vec::new();
        b.write_csv(&mut buf, Some(&[3.0])).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "x1,x2,weight,value");
        assert_eq!(s.lines().nth(1).unwrap(), "0.5,0.25,1,3");
    }
}
