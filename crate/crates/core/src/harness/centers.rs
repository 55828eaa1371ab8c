//! Center initializers for the multi-center model.

use crate::error::Result;
use crate::models::{ModelParams, ModelSpec, Probe};
use crate::optim::{train, FitObjective, TrainConfig};
use crate::sampling::{rng_from_seed, Domain, PointBatch};
use crate::targets::TargetSpec;

use super::uniform_in_box;

/// Length of the radial pre-fit that precedes residual clustering.
pub const PREFIT_ITERATIONS: usize = 1000;
/// Fraction of training points, by largest |residual|, that are clustered.
pub const TOP_FRACTION: f64 = 0.05;
pub const KMEANS_ITERATIONS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct CenterInit {
    pub centers: Vec<Vec<f64>>,
    /// True when clustering was impossible and the caller should fall back.
    pub fallback: bool,
}

/// `j` centers uniform in the (shrunk) bounding box of `domain`.
pub fn random_centers(domain: &Domain, j: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed ^ 0xC3A5_C85C_97CB_3127);
    (0..j).map(|_| uniform_in_box(domain, &mut rng)).collect()
}

/// Trains a single-center radial model for [`PREFIT_ITERATIONS`] steps and
/// returns its training points with residuals `phi - f`.
pub fn residual_prefit(t: &TargetSpec, base: &TrainConfig, seed: u64) -> Result<(PointBatch, Vec<f64>)> {
    let cfg = TrainConfig { iterations: PREFIT_ITERATIONS, frozen: vec![], seed, ..base.clone() };
    let init = ModelParams::init(ModelSpec::direct(t.dim), &mut rng_from_seed(seed))?;
    let mut obj = FitObjective::new(t, &cfg)?;
    let out = train(init, &mut obj, &cfg)?;
    let batch = obj.batch().clone();
    let ev = out.params.evaluator();
    let residuals = batch.iter().map(|x| Ok(ev.probe(x, &Probe::Value, None)? - t.value(x))).collect::<Result<_>>()?;
    Ok((batch, residuals))
}

/// Clusters the top [`TOP_FRACTION`] of points by |residual| into `j` groups.
///
/// Ties in |residual| keep the lower point index first.
pub fn residual_init_centers(batch: &PointBatch, residuals: &[f64], j: usize) -> CenterInit {
    let n_top = ((TOP_FRACTION * batch.len() as f64).ceil() as usize).max(j).min(batch.len());
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by(|a, b| residuals[*b].abs().total_cmp(&residuals[*a].abs()));
    let pts: Vec<Vec<f64>> = order[..n_top].iter().map(|&i| batch.point(i).to_vec()).collect();
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in &pts {
        if !distinct.contains(&p) {
            distinct.push(p);
            if distinct.len() >= j {
                break;
            }
        }
    }
    if distinct.len() < j {
        return CenterInit { centers: vec![], fallback: true };
    }
    CenterInit { centers: kmeans(&pts, j, KMEANS_ITERATIONS), fallback: false }
}

fn d2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Lloyd's algorithm with farthest-point seeding from the first point.
///
/// Every tie (seeding or assignment) goes to the lowest index.
pub fn kmeans(points: &[Vec<f64>], k: usize, iterations: usize) -> Vec<Vec<f64>> {
    assert!(k >= 1 && points.len() >= k, "k-means needs at least k points");
    let mut cents = vec![points[0].clone()];
    while cents.len() < k {
        let mut best = (0, -1.0);
        for (i, p) in points.iter().enumerate() {
            let d = cents.iter().map(|c| d2(p, c)).fold(f64::INFINITY, f64::min);
            if d > best.1 {
                best = (i, d);
            }
        }
        cents.push(points[best.0].clone());
    }
    let dim = points[0].len();
    for _ in 0..iterations {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for p in points {
            let mut c = 0;
            for i in 1..k {
                if d2(p, &cents[i]) < d2(p, &cents[c]) {
                    c = i;
                }
            }
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let next: Vec<Vec<f64>> = (0..k)
            .map(|i| if counts[i] == 0 { cents[i].clone() } else { sums[i].iter().map(|s| s / counts[i] as f64).collect() })
            .collect();
        if next == cents {
            break;
        }
        cents = next;
    }
    cents
}
