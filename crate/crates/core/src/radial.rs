//! Radial power primitives: the cumulative-gap exponent ladder, stabilized
//! powers, and the log-primitive `(r^mu - 1)/mu` with its `mu -> 0` limit.
//!
//! Everything here is a pure scalar function. Derivatives with respect to
//! both `r` and `mu` are provided so the model layer can assemble spatial
//! and parameter gradients without an autodiff engine.

use serde::{Deserialize, Serialize};

/// Default minimum gap between consecutive exponents.
pub const DEFAULT_EPS_GAP: f64 = 0.01;
/// Default switch point between the direct and series log-primitive forms.
pub const DEFAULT_EPS_LOG: f64 = 1e-4;
/// Default floor applied to radii before taking logarithms.
pub const DEFAULT_R_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilizationConfig {
    pub r_floor: f64,
}

impl Default for StabilizationConfig {
    fn default() -> Self {
        Self { r_floor: DEFAULT_R_FLOOR }
    }
}

impl StabilizationConfig {
    #[inline]
    pub fn floor(&self, r: f64) -> f64 {
        r.max(self.r_floor)
    }
}

/// Coefficient and exponent of a log-primitive term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogPrimitiveParams {
    pub coeff: f64,
    pub mu_log: f64,
    pub eps_log: f64,
}

impl Default for LogPrimitiveParams {
    fn default() -> Self {
        Self { coeff: 0.0, mu_log: 0.0, eps_log: DEFAULT_EPS_LOG }
    }
}

/// `log(1 + e^s)` without overflow.
#[inline]
pub fn softplus(s: f64) -> f64 {
    (-s.abs()).exp().ln_1p() + s.max(0.0)
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    // log(e^y - 1) = y + log(1 - e^{-y})
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Derivative of [`softplus`].
#[inline]
pub fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Raw gap parameters mapped to strictly ordered exponents in `(mu_min, mu_max]`.
///
/// `delta_k = softplus(s_k) + eps_gap`, `sigma_k = sum_{j<=k} delta_j`, and
/// `mu_k = mu_min + (mu_max - mu_min) * sigma_k / sigma_K`. The last exponent
/// is therefore pinned to `mu_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentLadder {
    pub raw_gaps: Vec<f64>,
    pub mu_min: f64,
    pub mu_max: f64,
    pub eps_gap: f64,
}

impl ExponentLadder {
    pub fn new(raw_gaps: Vec<f64>, mu_min: f64, mu_max: f64) -> Self {
        Self { raw_gaps, mu_min, mu_max, eps_gap: DEFAULT_EPS_GAP }
    }

    /// Equal raw gaps: exponents `mu_min + (mu_max - mu_min) * k / K`.
    pub fn uniform(k: usize, mu_min: f64, mu_max: f64) -> Self {
        Self::new(vec![softplus_inv(1.0); k], mu_min, mu_max)
    }

    pub fn len(&self) -> usize {
        self.raw_gaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_gaps.is_empty()
    }

    fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.raw_gaps
            .iter()
            .map(|&s| {
                acc += softplus(s) + self.eps_gap;
                acc
            })
            .collect()
    }

    pub fn exponents(&self) -> Vec<f64> {
        ladder_exponents(self)
    }

    /// Vector-Jacobian product: maps `dL/dmu` to `dL/ds` in O(K).
    pub fn vjp(&self, grad_mu: &[f64]) -> Vec<f64> {
        let sigma = self.cumulative();
        let k = sigma.len();
        if k == 0 {
            return Vec::new();
        }
        let total = sigma[k - 1];
        let range = self.mu_max - self.mu_min;
        let weighted: f64 = grad_mu.iter().zip(&sigma).map(|(g, s)| g * s).sum();
        let mut suffix = 0.0;
        let mut out = vec![0.0; k];
        for j in (0..k).rev() {
            suffix += grad_mu[j];
            out[j] = range * logistic(self.raw_gaps[j]) * (suffix / total - weighted / (total * total));
        }
        out
    }

    /// Builds a ladder whose exponents equal `mus` up to rounding.
    ///
    /// `mus` must be strictly increasing, lie in `(mu_min, mu_max]`, and end
    /// exactly at `mu_max`.
    pub fn from_exponents(mus: &[f64], mu_min: f64, mu_max: f64) -> Option<Self> {
        let eps_gap = DEFAULT_EPS_GAP;
        let last = *mus.last()?;
        if last != mu_max {
            return None;
        }
        let range = mu_max - mu_min;
        let mut prev = mu_min;
        let mut gaps = Vec::with_capacity(mus.len());
        for &m in mus {
            let g = m - prev;
            if g <= 0.0 {
                return None;
            }
            gaps.push(g / range);
            prev = m;
        }
        let min_gap = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        // Total length so that every delta_k clears eps_gap comfortably.
        let total = (mus.len() as f64).max(4.0 * eps_gap / min_gap);
        let raw_gaps = gaps.iter().map(|g| softplus_inv(total * g - eps_gap)).collect();
        Some(Self { raw_gaps, mu_min, mu_max, eps_gap })
    }
}

/// Exponents `mu_1 < ... < mu_K = mu_max` of a ladder.
pub fn ladder_exponents(ladder: &ExponentLadder) -> Vec<f64> {
    let sigma = ladder.cumulative();
    let Some(&total) = sigma.last() else {
        return Vec::new();
    };
    let range = ladder.mu_max - ladder.mu_min;
    let k = sigma.len();
    sigma
        .iter()
        .enumerate()
        .map(|(i, s)| if i + 1 == k { ladder.mu_max } else { ladder.mu_min + range * s / total })
        .collect()
}

/// Full `K x K` Jacobian `d mu_k / d s_j`, row-major by `k`.
pub fn ladder_jacobian(ladder: &ExponentLadder) -> Vec<Vec<f64>> {
    let sigma = ladder.cumulative();
    let k = sigma.len();
    let mut jac = vec![vec![0.0; k]; k];
    if k == 0 {
        return jac;
    }
    let total = sigma[k - 1];
    let range = ladder.mu_max - ladder.mu_min;
    for (row, jac_row) in jac.iter_mut().enumerate().take(k - 1) {
        for (j, entry) in jac_row.iter_mut().enumerate() {
            let ind = if j <= row { 1.0 } else { 0.0 };
            *entry = range * logistic(ladder.raw_gaps[j]) * (ind / total - sigma[row] / (total * total));
        }
    }
    jac
}

/// `r^mu` evaluated as `exp(mu * log(max(r, r_floor)))`.
#[inline]
pub fn stable_pow(r: f64, mu: f64, cfg: &StabilizationConfig) -> f64 {
    (mu * cfg.floor(r).ln()).exp()
}

/// `(r^mu - 1)/mu`, switching to `L + mu L^2/2 + mu^2 L^3/6` for `|mu| <= eps_log`.
#[inline]
pub fn log_primitive(r: f64, mu: f64, params: &LogPrimitiveParams, cfg: &StabilizationConfig) -> f64 {
    psi(cfg.floor(r).ln(), mu, params.eps_log)
}

/// `d/dmu` of [`log_primitive`], branch-consistent with it.
#[inline]
pub fn log_primitive_dmu(r: f64, mu: f64, params: &LogPrimitiveParams, cfg: &StabilizationConfig) -> f64 {
    psi_dmu(cfg.floor(r).ln(), mu, params.eps_log)
}

/// `d/dr` of [`log_primitive`]: `r^(mu - 1)` on both branches.
#[inline]
pub fn log_primitive_dr(r: f64, mu: f64, cfg: &StabilizationConfig) -> f64 {
    let rf = cfg.floor(r);
    ((mu - 1.0) * rf.ln()).exp()
}

#[inline]
pub(crate) fn psi(l: f64, mu: f64, eps_log: f64) -> f64 {
    if mu.abs() > eps_log {
        (mu * l).exp_m1() / mu
    } else {
        l + mu * l * l / 2.0 + mu * mu * l * l * l / 6.0
    }
}

#[inline]
pub(crate) fn psi_dmu(l: f64, mu: f64, eps_log: f64) -> f64 {
    if mu.abs() > eps_log {
        let ml = mu * l;
        (ml * ml.exp() - ml.exp_m1()) / (mu * mu)
    } else {
        l * l / 2.0 + mu * l * l * l / 3.0
    }
}

/// Radial derivatives `h, h', h'', h'''` of a radial profile at one radius.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct RadialJet(pub [f64; 4]);

/// Jets of `rho^mu` and of its `mu`-derivative `log(rho) rho^mu`.
///
/// `rho` must already be floored; `l = ln(rho)`.
#[inline]
pub(crate) fn power_jets(rho: f64, l: f64, mu: f64) -> (RadialJet, RadialJet) {
    let p = (mu * l).exp();
    let p1 = p / rho;
    let p2 = p1 / rho;
    let p3 = p2 / rho;
    let a = mu;
    let b = mu * (mu - 1.0);
    let c = b * (mu - 2.0);
    let value = RadialJet([p, a * p1, b * p2, c * p3]);
    let dmu = RadialJet([
        l * p,
        (1.0 + a * l) * p1,
        ((2.0 * mu - 1.0) + b * l) * p2,
        ((3.0 * mu * mu - 6.0 * mu + 2.0) + c * l) * p3,
    ]);
    (value, dmu)
}

/// Jets of the log-primitive `psi(rho; mu)` and of `d psi / d mu`.
#[inline]
pub(crate) fn log_jets(rho: f64, l: f64, mu: f64, eps_log: f64) -> (RadialJet, RadialJet) {
    let p = (mu * l).exp();
    let p1 = p / rho;
    let p2 = p1 / rho;
    let p3 = p2 / rho;
    let value = RadialJet([psi(l, mu, eps_log), p1, (mu - 1.0) * p2, (mu - 1.0) * (mu - 2.0) * p3]);
    let dmu = RadialJet([
        psi_dmu(l, mu, eps_log),
        l * p1,
        (1.0 + (mu - 1.0) * l) * p2,
        ((2.0 * mu - 3.0) + (mu - 1.0) * (mu - 2.0) * l) * p3,
    ]);
    (value, dmu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const CFG: StabilizationConfig = StabilizationConfig { r_floor: DEFAULT_R_FLOOR };
    const LP: LogPrimitiveParams = LogPrimitiveParams { coeff: 1.0, mu_log: 0.0, eps_log: DEFAULT_EPS_LOG };

    #[test]
    fn equal_gaps_give_uniform_exponents() {
        for s in [-3.0, 0.0, 2.5] {
            let mus = ladder_exponents(&ExponentLadder::new(vec![s; 4], -2.0, 4.0));
            let want = [-0.5, 1.0, 2.5, 4.0];
            for (m, w) in mus.iter().zip(want) {
                assert_relative_eq!(*m, w, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_exponent_is_pinned() {
        let mus = ladder_exponents(&ExponentLadder::new(vec![-7.3], -2.0, 4.0));
        assert_eq!(mus, vec![4.0]);
        assert_eq!(ladder_jacobian(&ExponentLadder::new(vec![1.2], -2.0, 4.0)), vec![vec![0.0]]);
    }

    #[test]
    fn hand_computed_ladder() {
        // softplus(0)=ln 2, softplus(1)=1.3132617, softplus(-1)=0.3132617, each + 0.01
        let mus = ladder_exponents(&ExponentLadder::new(vec![0.0, 1.0, -1.0], 0.0, 1.0));
        assert_relative_eq!(mus[0], 0.2992535182794906, epsilon = 1e-13);
        assert_relative_eq!(mus[1], 0.8624225482383964, epsilon = 1e-13);
        assert_eq!(mus[2], 1.0);
    }

    fn fd_jacobian(ladder: &ExponentLadder, h: f64) -> Vec<Vec<f64>> {
        let k = ladder.len();
        let mut jac = vec![vec![0.0; k]; k];
        for j in 0..k {
            let mut up = ladder.clone();
            let mut dn = ladder.clone();
            up.raw_gaps[j] += h;
            dn.raw_gaps[j] -= h;
            let (mu_up, mu_dn) = (ladder_exponents(&up), ladder_exponents(&dn));
            for row in 0..k {
                jac[row][j] = (mu_up[row] - mu_dn[row]) / (2.0 * h);
            }
        }
        jac
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let ladder = ExponentLadder::new(vec![0.3, -1.2, 2.0, 0.0, -0.4], -2.0, 4.0);
        let jac = ladder_jacobian(&ladder);
        let fd = fd_jacobian(&ladder, 1e-6);
        for (row, fd_row) in jac.iter().zip(&fd) {
            for (a, b) in row.iter().zip(fd_row) {
                assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-3), "{a} vs {b}");
            }
        }
        assert!(jac[4].iter().all(|&v| v == 0.0));
        // entries right of the diagonal share the same closed form
        let sigma = ladder.cumulative();
        let total = sigma[4];
        for j in 2..5 {
            let want = -6.0 * logistic(ladder.raw_gaps[j]) * sigma[1] / (total * total);
            assert_relative_eq!(jac[1][j], want, epsilon = 1e-14);
        }
    }

    #[test]
    fn vjp_agrees_with_dense_jacobian() {
        let ladder = ExponentLadder::new(vec![0.1, 0.7, -2.0, 1.5], -1.0, 2.0);
        let g = [0.3, -1.0, 2.0, 5.0];
        let jac = ladder_jacobian(&ladder);
        let dense: Vec<f64> = (0..4).map(|j| (0..4).map(|k| jac[k][j] * g[k]).sum()).collect();
        for (a, b) in ladder.vjp(&g).iter().zip(dense) {
            assert_relative_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn from_exponents_round_trips() {
        let want = [-1.0, 0.5, 1.5, 4.0];
        let ladder = ExponentLadder::from_exponents(&want, -2.0, 4.0).unwrap();
        for (m, w) in ladder_exponents(&ladder).iter().zip(want) {
            assert_relative_eq!(*m, w, epsilon = 1e-14);
        }
        assert!(ExponentLadder::from_exponents(&[0.0, 3.0], -2.0, 4.0).is_none());
        assert!(ExponentLadder::from_exponents(&[1.0, 1.0, 4.0], -2.0, 4.0).is_none());
    }

    #[test]
    fn stable_pow_values() {
        assert_eq!(stable_pow(1.0, -1.0, &CFG), 1.0);
        assert_relative_eq!(stable_pow(0.5, -1.0, &CFG), 2.0, epsilon = 1e-15);
        assert_relative_eq!(stable_pow(0.0, -1.0, &CFG), 1e12, max_relative = 1e-12);
        for r in [0.0, 1e-30, 0.3, 7.0] {
            assert_eq!(stable_pow(r, 0.0, &CFG), 1.0);
        }
    }

    #[test]
    fn log_primitive_values() {
        let e = std::f64::consts::E;
        assert_relative_eq!(log_primitive(e, 1.0, &LP, &CFG), e - 1.0, epsilon = 1e-14);
        assert_relative_eq!(log_primitive(0.5, 0.0, &LP, &CFG), 0.5f64.ln(), epsilon = 1e-15);
        // 50-digit reference for (2^1e-5 - 1)/1e-5
        let reference = 0.693_149_582_830_565_3_f64;
        assert_relative_eq!(log_primitive(2.0, 1e-5, &LP, &CFG), reference, max_relative = 1e-10);
    }

    #[test]
    fn log_primitive_dmu_values_and_fd() {
        assert_eq!(log_primitive_dmu(1.0, 0.4, &LP, &CFG), 0.0);
        assert_relative_eq!(log_primitive_dmu(std::f64::consts::E, 0.0, &LP, &CFG), 0.5, epsilon = 1e-15);
        let h = 1e-6;
        for r in [0.05, 0.3, 1.0] {
            for mu in [-0.5, -1e-5, 0.0, 1e-5, 0.7] {
                let fd = (log_primitive(r, mu + h, &LP, &CFG) - log_primitive(r, mu - h, &LP, &CFG)) / (2.0 * h);
                let an = log_primitive_dmu(r, mu, &LP, &CFG);
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-8), "r={r} mu={mu}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn log_primitive_dr_values_and_fd() {
        assert_eq!(log_primitive_dr(2.0, 0.0, &CFG), 0.5);
        assert_eq!(log_primitive_dr(1.0, 3.0, &CFG), 1.0);
        let h = 1e-7;
        for r in [0.05, 0.4, 1.3] {
            for mu in [-1.0, 0.0, 5e-5, 0.8] {
                let fd = (log_primitive(r + h, mu, &LP, &CFG) - log_primitive(r - h, mu, &LP, &CFG)) / (2.0 * h);
                let an = log_primitive_dr(r, mu, &CFG);
                assert!((fd - an).abs() <= 1e-5 * an.abs(), "{an} vs {fd}");
            }
        }
    }

    #[test]
    fn jets_match_finite_differences() {
        let h = 1e-5;
        for (rho, mu) in [(0.3, -1.2), (0.8, 0.5), (1.7, 2.2), (0.5, 3e-5)] {
            for log in [false, true] {
                let jets = |rho: f64, mu: f64| {
                    if log { log_jets(rho, rho.ln(), mu, DEFAULT_EPS_LOG) } else { power_jets(rho, rho.ln(), mu) }
                };
                let (v, dm) = jets(rho, mu);
                let (vp, dmp) = jets(rho + h, mu);
                let (vm, dmm) = jets(rho - h, mu);
                for i in 0..3 {
                    let fd = (vp.0[i] - vm.0[i]) / (2.0 * h);
                    assert!((fd - v.0[i + 1]).abs() < 1e-6 * v.0[i + 1].abs().max(1.0), "value jet {i}");
                    let fd = (dmp.0[i] - dmm.0[i]) / (2.0 * h);
                    assert!((fd - dm.0[i + 1]).abs() < 1e-6 * dm.0[i + 1].abs().max(1.0), "dmu jet {i}");
                }
                let hm = 1e-6;
                let (vu, _) = jets(rho, mu + hm);
                let (vd, _) = jets(rho, mu - hm);
                for i in 0..4 {
                    let fd = (vu.0[i] - vd.0[i]) / (2.0 * hm);
                    assert!((fd - dm.0[i]).abs() < 1e-5 * dm.0[i].abs().max(1.0), "mu derivative {i}: {fd} vs {}", dm.0[i]);
                }
            }
        }
    }

    #[test]
    fn branch_is_continuous() {
        for r in [0.01, 0.05, 0.2, 0.7, 1.0] {
            let (m_lo, m_hi) = (DEFAULT_EPS_LOG * (1.0 - 1e-3), DEFAULT_EPS_LOG * (1.0 + 1e-3));
            let lo = log_primitive(r, m_lo, &LP, &CFG);
            let hi = log_primitive(r, m_hi, &LP, &CFG);
            // remove the smooth change of psi over [m_lo, m_hi]; what is left is the jump
            let slope = log_primitive_dmu(r, DEFAULT_EPS_LOG, &LP, &CFG);
            let jump = hi - lo - slope * (m_hi - m_lo);
            assert!(jump.abs() < 1e-10, "r={r}: jump {jump}");
            let l = f64::ln(r);
            let at = psi(l, DEFAULT_EPS_LOG, DEFAULT_EPS_LOG);
            let series = l + DEFAULT_EPS_LOG * l * l / 2.0 + DEFAULT_EPS_LOG.powi(2) * l.powi(3) / 6.0;
            assert!((at - series).abs() < 1e-12 * at.abs().max(1e-3), "r={r}");
        }
    }

    proptest! {
        #[test]
        fn ladder_is_strictly_increasing(gaps in proptest::collection::vec(-8.0f64..8.0, 1..16)) {
            let mus = ladder_exponents(&ExponentLadder::new(gaps, -2.0, 4.0));
            prop_assert_eq!(*mus.last().unwrap(), 4.0);
            prop_assert!(mus[0] > -2.0);
            for w in mus.windows(2) {
                prop_assert!(w[0] < w[1]);
            }
        }

        #[test]
        fn jacobian_fd_random(gaps in proptest::collection::vec(-3.0f64..3.0, 2..10)) {
            let ladder = ExponentLadder::new(gaps, -2.0, 4.0);
            let jac = ladder_jacobian(&ladder);
            let fd = fd_jacobian(&ladder, 1e-6);
            for (row, fd_row) in jac.iter().zip(&fd) {
                for (a, b) in row.iter().zip(fd_row) {
                    prop_assert!((a - b).abs() <= 1e-4 * a.abs().max(1e-3));
                }
            }
        }
    }
}
