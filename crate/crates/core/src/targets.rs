//! Benchmark targets with exact values and gradients.

use std::f64::consts::PI;

use crate::error::{contract, Result, RmnError};
use crate::sampling::{Domain, PointBatch, Puncture};

/// Closed-form family of a target.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetKind {
    /// `log |x|`
    Log,
    /// `sum_i w_i |x|^alpha_i` as `(w_i, alpha_i)` pairs.
    Powers(Vec<(f64, f64)>),
    /// `r^(1/2) cos(theta / 2)`, `theta = atan2(y, x)`.
    Crack,
    /// `sum_j w_j log |x - c_j|`
    LogSources { centers: Vec<[f64; 2]>, weights: Vec<f64> },
    /// `1 / |x|`
    Coulomb,
    /// `z / |x|^3`
    Dipole,
    /// `sin(pi x) sin(pi y)`
    Smooth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetSpec {
    pub name: &'static str,
    pub dim: usize,
    pub domain: Domain,
    pub kind: TargetKind,
    /// Singular exponents present in the target, when it has any.
    pub known_exponents: Option<Vec<f64>>,
    pub notes: &'static str,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl TargetSpec {
    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            TargetKind::Log => norm(x).ln(),
            TargetKind::Powers(terms) => {
                let r = norm(x);
                terms.iter().map(|(w, a)| w * r.powf(*a)).sum()
            }
            TargetKind::Crack => norm(x).sqrt() * (x[1].atan2(x[0]) / 2.0).cos(),
            TargetKind::LogSources { centers, weights } => centers
                .iter()
                .zip(weights)
                .map(|(c, w)| w * ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt().ln())
                .sum(),
            TargetKind::Coulomb => 1.0 / norm(x),
            TargetKind::Dipole => x[2] / norm(x).powi(3),
            TargetKind::Smooth => (PI * x[0]).sin() * (PI * x[1]).sin(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r = norm(x);
        match &self.kind {
            TargetKind::Log => x.iter().map(|v| v / (r * r)).collect(),
            TargetKind::Powers(terms) => {
                let s: f64 = terms.iter().map(|(w, a)| w * a * r.powf(a - 2.0)).sum();
                x.iter().map(|v| s * v).collect()
            }
            TargetKind::Crack => {
                // r^(1/2) cos(theta/2) = sqrt((r + x) / 2) on (-pi, pi]
                let f = ((r + x[0]) / 2.0).sqrt();
                vec![(x[0] / r + 1.0) / (4.0 * f), x[1] / r / (4.0 * f)]
            }
            TargetKind::LogSources { centers, weights } => {
                let mut g = vec![0.0; 2];
                for (c, w) in centers.iter().zip(weights) {
                    let (dx, dy) = (x[0] - c[0], x[1] - c[1]);
                    let r2 = dx * dx + dy * dy;
                    g[0] += w * dx / r2;
                    g[1] += w * dy / r2;
                }
                g
            }
            TargetKind::Coulomb => x.iter().map(|v| -v / r.powi(3)).collect(),
            TargetKind::Dipole => {
                let r3 = r.powi(3);
                let r5 = r3 * r * r;
                (0..3).map(|i| f64::from(u8::from(i == 2)) / r3 - 3.0 * x[2] * x[i] / r5).collect()
            }
            TargetKind::Smooth => vec![
                PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
                PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
            ],
        }
    }

    /// Source locations for multi-source targets.
    pub fn source_centers(&self) -> Option<Vec<Vec<f64>>> {
        match &self.kind {
            TargetKind::LogSources { centers, .. } => Some(centers.iter().map(|c| c.to_vec()).collect()),
            _ => None,
        }
    }

    pub fn source_weights(&self) -> Option<&[f64]> {
        match &self.kind {
            TargetKind::LogSources { weights, .. } => Some(weights),
            _ => None,
        }
    }
}

/// Exact target values on `batch`; points outside the domain are rejected.
pub fn eval_batch(spec: &TargetSpec, batch: &PointBatch) -> Result<Vec<f64>> {
    if batch.dim != spec.dim {
        return Err(contract(format!("target `{}` is {}-dimensional, batch is {}-dimensional", spec.name, spec.dim, batch.dim)));
    }
    batch
        .iter()
        .map(|x| {
            if spec.domain.contains(x) {
                Ok(spec.value(x))
            } else {
                Err(contract(format!("point {x:?} lies outside the domain of `{}`", spec.name)))
            }
        })
        .collect()
}

const R_MIN: f64 = 0.01;

fn annulus() -> Domain {
    Domain::Annulus2D { r_min: R_MIN, r_max: 1.0 }
}

fn shell() -> Domain {
    Domain::ShellBall3D { r_min: R_MIN, r_max: 1.0 }
}

fn sources(name: &'static str, centers: Vec<[f64; 2]>, weights: Vec<f64>, notes: &'static str) -> TargetSpec {
    let punctures = centers.iter().map(|c| Puncture::new(c, R_MIN)).collect();
    TargetSpec {
        name,
        dim: 2,
        domain: Domain::Square2D { side: 2.0, punctures },
        kind: TargetKind::LogSources { centers, weights },
        known_exponents: Some(vec![0.0]),
        notes,
    }
}

fn single(name: &'static str, dim: usize, kind: TargetKind, exps: Option<Vec<f64>>, notes: &'static str) -> TargetSpec {
    TargetSpec { name, dim, domain: if dim == 2 { annulus() } else { shell() }, kind, known_exponents: exps, notes }
}

/// The ten standard benchmarks.
pub fn catalog() -> Vec<TargetSpec> {
    vec![
        single("log2d", 2, TargetKind::Log, Some(vec![0.0]), "2D Laplace fundamental solution"),
        single("sqrt2d", 2, TargetKind::Powers(vec![(1.0, 0.5)]), Some(vec![0.5]), "r^(1/2)"),
        single("inv2d", 2, TargetKind::Powers(vec![(1.0, -1.0)]), Some(vec![-1.0]), "r^(-1)"),
        single(
            "multipower2d",
            2,
            TargetKind::Powers(vec![(0.5, 0.5), (0.3, -0.5), (0.2, 1.5)]),
            Some(vec![-0.5, 0.5, 1.5]),
            "0.5 r^(1/2) + 0.3 r^(-1/2) + 0.2 r^(3/2)",
        ),
        single("crack2d", 2, TargetKind::Crack, Some(vec![0.5]), "mode-I crack tip, crack along the negative x-axis"),
        sources("two_source", vec![[-0.3, 0.0], [0.3, 0.0]], vec![1.0, 0.5], "log |x - c1| + 0.5 log |x - c2|"),
        sources(
            "three_source",
            vec![[-0.3, -0.2], [0.3, -0.2], [0.0, 0.3]],
            vec![1.0, 0.7, 0.5],
            "three logarithmic sources",
        ),
        single("coulomb3d", 3, TargetKind::Coulomb, Some(vec![-1.0]), "3D Coulomb potential"),
        single("dipole3d", 3, TargetKind::Dipole, Some(vec![-2.0]), "z / r^3 = r^(-2) cos(theta)"),
        TargetSpec {
            name: "smooth2d",
            dim: 2,
            domain: Domain::Square2D { side: 2.0, punctures: vec![Puncture::new(&[0.0, 0.0], R_MIN)] },
            kind: TargetKind::Smooth,
            known_exponents: None,
            notes: "smooth non-radial control",
        },
    ]
}

/// Named variants reachable through [`find`] but not part of the standard sweep.
pub fn variants() -> Vec<TargetSpec> {
    vec![sources(
        "two_source_offset",
        vec![[-0.3, -0.2], [0.3, -0.2]],
        vec![1.0, 0.5],
        "two-source target with both sources below the x-axis",
    )]
}

pub fn names() -> Vec<&'static str> {
    catalog().iter().chain(variants().iter()).map(|t| t.name).collect()
}

pub fn find(name: &str) -> Result<TargetSpec> {
    catalog()
        .into_iter()
        .chain(variants())
        .find(|t| t.name == name)
        .ok_or_else(|| RmnError::UnknownBenchmark { name: name.to_string(), valid: names().join(", ") })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::sample_uniform;
    use approx::assert_relative_eq;

    #[test]
    fn catalog_has_ten_entries() {
        let c = catalog();
        assert_eq!(c.len(), 10);
        let mut names: Vec<_> = c.iter().map(|t| t.name).collect();
        names.dedup();
        assert_eq!(names.len(), 10);
    }

    #[test]
    fn value_examples() {
        assert_eq!(find("coulomb3d").unwrap().value(&[0.5, 0.0, 0.0]), 2.0);
        let mp = find("multipower2d").unwrap();
        assert_relative_eq!(mp.value(&[1.0, 0.0]), 1.0, max_relative = 1e-15);
        assert_eq!(find("log2d").unwrap().value(&[0.0, 1.0]), 0.0);
        assert_relative_eq!(find("dipole3d").unwrap().value(&[0.0, 0.0, 0.5]), 4.0, max_relative = 1e-15);
        assert_relative_eq!(find("crack2d").unwrap().value(&[0.25, 0.0]), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn two_source_configuration() {
        let t = find("two_source").unwrap();
        assert_eq!(t.source_centers().unwrap(), vec![vec![-0.3, 0.0], vec![0.3, 0.0]]);
        assert_eq!(t.source_weights().unwrap(), &[1.0, 0.5]);
        let o = find("two_source_offset").unwrap();
        assert_eq!(o.source_centers().unwrap(), vec![vec![-0.3, -0.2], vec![0.3, -0.2]]);
    }

    #[test]
    fn unknown_name_lists_valid_ones() {
        match find("nope") {
            Err(RmnError::UnknownBenchmark { valid, .. }) => assert!(valid.contains("coulomb3d")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for t in catalog().into_iter().chain(variants()) {
            let b = sample_uniform(&t.domain, 100, 3).unwrap();
            for x in b.iter() {
                // keep clear of the crack line, where the profile has a kink
                if t.kind == TargetKind::Crack && x[0] < 0.0 && x[1].abs() < 0.05 {
                    continue;
                }
                let g = t.gradient(x);
                let fx = t.value(x);
                // step small relative to the distance to the nearest singularity
                let h = 1e-7;
                for i in 0..t.dim {
                    let mut a = x.to_vec();
                    let mut c = x.to_vec();
                    a[i] += h;
                    c[i] -= h;
                    let fd = (t.value(&a) - t.value(&c)) / (2.0 * h);
                    assert!((fd - g[i]).abs() < 1e-6 * g[i].abs().max(1.0), "{} at {x:?}: {fd} vs {}", t.name, g[i]);
                }
                assert!(fx.is_finite());
            }
        }
    }

    #[test]
    fn eval_batch_rejects_punctured_points() {
        let t = find("two_source").unwrap();
        let bad = PointBatch::from_points(2, &[vec![-0.3, 0.001]]);
        assert!(eval_batch(&t, &bad).is_err());
        let ok = PointBatch::from_points(2, &[vec![0.0, 0.5]]);
        assert_eq!(eval_batch(&t, &ok).unwrap().len(), 1);
    }
}
