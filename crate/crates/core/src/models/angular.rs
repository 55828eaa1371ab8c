//! Angular bases: real Fourier modes on the circle (with optional
//! half-integer crack modes) and real spherical harmonics on the sphere.

use std::f64::consts::PI;

use crate::error::{contract, Result};

/// One angular basis function evaluated at a point, in the form needed by
/// the power-times-angle terms `rho^lambda * a(x_hat)`.
///
/// The spatial gradient of such a term is `rho^(lambda-1) * ((lambda - shift) * a * e_r + tangent)`
/// and its Laplacian is `rho^(lambda-2) * (lambda (lambda + d - 2) - eig) * a`.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct AngularMode {
    pub value: f64,
    pub shift: f64,
    pub tangent: [f64; 3],
    pub eig: f64,
}

/// Number of 2D angular functions for the given configuration.
pub fn angular_count_2d(m_max: usize, half_integer: bool, n_max: usize) -> usize {
    2 * m_max + if half_integer { 2 * (n_max + 1) } else { 0 }
}

/// Number of non-constant real spherical harmonics up to degree `l_max`.
pub fn angular_count_3d(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1) - 1
}

/// Frequencies of the 2D basis in output order. Each frequency contributes a
/// cosine entry followed by a sine entry.
fn frequencies_2d(m_max: usize, half_integer: bool, n_max: usize) -> impl Iterator<Item = f64> {
    let ints = (1..=m_max).map(|m| m as f64);
    let halves = (0..=n_max).filter(move |_| half_integer).map(|n| (2 * n + 1) as f64 / 2.0);
    ints.chain(halves)
}

/// `[cos(m t), sin(m t)]` for `m = 1..=m_max`, followed (when `half_integer`) by
/// `[cos((2n+1) t / 2), sin((2n+1) t / 2)]` for `n = 0..=n_max`.
///
/// The constant `m = 0` mode is not included; it is purely radial.
pub fn angular_basis_2d(m_max: usize, half_integer: bool, n_max: usize, theta: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(angular_count_2d(m_max, half_integer, n_max));
    for nu in frequencies_2d(m_max, half_integer, n_max) {
        out.push((nu * theta).cos());
        out.push((nu * theta).sin());
    }
    out
}

/// 2D modes at a point `(x, y)` with `rho = |(x, y)|` already floored.
pub(crate) fn modes_2d(m_max: usize, half_integer: bool, n_max: usize, x: &[f64], rho: f64, out: &mut Vec<AngularMode>) {
    out.clear();
    let theta = x[1].atan2(x[0]);
    let e_theta = [-x[1] / rho, x[0] / rho, 0.0];
    for nu in frequencies_2d(m_max, half_integer, n_max) {
        let (s, c) = (nu * theta).sin_cos();
        for (g, dg) in [(c, -nu * s), (s, nu * c)] {
            out.push(AngularMode {
                value: g,
                shift: 0.0,
                tangent: [dg * e_theta[0], dg * e_theta[1], 0.0],
                eig: nu * nu,
            });
        }
    }
}

/// Real solid harmonics `R_lm(x) = |x|^l Y_lm(x/|x|)` and their gradients for
/// `0 <= l <= l_max`, indexed `l^2 + l + m`.
///
/// Orthonormal under the uniform sphere measure, no Condon-Shortley phase.
pub(crate) fn solid_harmonics(l_max: usize, x: [f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let n = (l_max + 1) * (l_max + 1);
    let [px, py, pz] = x;
    let s = px * px + py * py + pz * pz;

    // C_m + i S_m = (x + i y)^m
    let mut cm = vec![0.0; l_max + 1];
    let mut sm = vec![0.0; l_max + 1];
    cm[0] = 1.0;
    for m in 1..=l_max {
        cm[m] = px * cm[m - 1] - py * sm[m - 1];
        sm[m] = px * sm[m - 1] + py * cm[m - 1];
    }

    let mut vals = vec![0.0; n];
    let mut grads = vec![[0.0; 3]; n];
    for m in 0..=l_max {
        // F_l^m(z, s) with s = |x|^2, plus partials in z and s.
        let mut f = vec![0.0; l_max + 1];
        let mut fz = vec![0.0; l_max + 1];
        let mut fs = vec![0.0; l_max + 1];
        f[m] = double_factorial(2 * m as i64 - 1);
        if m < l_max {
            f[m + 1] = (2 * m + 1) as f64 * pz * f[m];
            fz[m + 1] = (2 * m + 1) as f64 * f[m];
        }
        for l in (m + 2)..=l_max {
            let a = (2 * l - 1) as f64;
            let b = (l + m - 1) as f64;
            let c = (l - m) as f64;
            f[l] = (a * pz * f[l - 1] - b * s * f[l - 2]) / c;
            fz[l] = (a * (f[l - 1] + pz * fz[l - 1]) - b * s * fz[l - 2]) / c;
            fs[l] = (a * pz * fs[l - 1] - b * (f[l - 2] + s * fs[l - 2])) / c;
        }
        for l in m..=l_max {
            let norm = norm_factor(l, m);
            // d/dx F = 2 x F_s, d/dz F = F_z + 2 z F_s
            let df = [2.0 * px * fs[l], 2.0 * py * fs[l], fz[l] + 2.0 * pz * fs[l]];
            let mu = m as f64;
            if m == 0 {
                let idx = l * l + l;
                vals[idx] = norm * f[l];
                grads[idx] = [norm * df[0], norm * df[1], norm * df[2]];
            } else {
                let (dcx, dcy) = (mu * cm[m - 1], -mu * sm[m - 1]);
                let (dsx, dsy) = (mu * sm[m - 1], mu * cm[m - 1]);
                let ip = l * l + l + m;
                vals[ip] = norm * f[l] * cm[m];
                grads[ip] = [
                    norm * (df[0] * cm[m] + f[l] * dcx),
                    norm * (df[1] * cm[m] + f[l] * dcy),
                    norm * df[2] * cm[m],
                ];
                let ineg = l * l + l - m;
                vals[ineg] = norm * f[l] * sm[m];
                grads[ineg] = [
                    norm * (df[0] * sm[m] + f[l] * dsx),
                    norm * (df[1] * sm[m] + f[l] * dsy),
                    norm * df[2] * sm[m],
                ];
            }
        }
    }
    (vals, grads)
}

fn double_factorial(n: i64) -> f64 {
    let mut acc = 1.0;
    let mut k = n;
    while k > 1 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}

fn norm_factor(l: usize, m: usize) -> f64 {
    // (l - m)! / (l + m)!
    let ratio: f64 = ((l - m + 1)..=(l + m)).map(|k| 1.0 / k as f64).product();
    let base = ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt();
    if m == 0 {
        base
    } else {
        base * std::f64::consts::SQRT_2
    }
}

/// Real spherical harmonics `Y_lm` at a unit direction, ordered
/// `(0,0), (1,-1), (1,0), (1,1), (2,-2), ...`.
pub fn sh_basis_3d(l_max: usize, unit_dir: [f64; 3]) -> Result<Vec<f64>> {
    let norm = unit_dir.iter().map(|c| c * c).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(contract(format!("spherical harmonics need a unit direction, got norm {norm}")));
    }
    Ok(solid_harmonics(l_max, unit_dir).0)
}

/// 3D modes (excluding `l = 0`) at `x` with `rho = |x|` already floored.
pub(crate) fn modes_3d(l_max: usize, x: &[f64], rho: f64, out: &mut Vec<AngularMode>) {
    out.clear();
    let (vals, grads) = solid_harmonics(l_max, [x[0], x[1], x[2]]);
    for l in 1..=l_max {
        let scale = rho.powi(-(l as i32));
        let tscale = scale * rho;
        for idx in (l * l)..((l + 1) * (l + 1)) {
            let g = grads[idx];
            out.push(AngularMode {
                value: vals[idx] * scale,
                shift: l as f64,
                tangent: [g[0] * tscale, g[1] * tscale, g[2] * tscale],
                eig: (l * (l + 1)) as f64,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::fibonacci_sphere;
    use approx::assert_relative_eq;

    #[test]
    fn low_order_values() {
        let y = sh_basis_3d(2, [0.0, 0.0, 1.0]).unwrap();
        assert_relative_eq!(y[0], 0.28209479177387814, epsilon = 1e-15);
        assert_relative_eq!(y[2], (3.0 / (4.0 * PI)).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(y[2], 0.4886025119029199, epsilon = 1e-15);
        let d = [0.6, 0.0, 0.8];
        let y = sh_basis_3d(2, d).unwrap();
        assert_relative_eq!(y[0], 1.0 / (4.0 * PI).sqrt(), epsilon = 1e-15);
        // Y_11 = sqrt(3/4pi) x, Y_{2,0} = sqrt(5/16pi)(3z^2 - 1)
        assert_relative_eq!(y[3], (3.0 / (4.0 * PI)).sqrt() * 0.6, epsilon = 1e-15);
        assert_relative_eq!(y[6], (5.0 / (16.0 * PI)).sqrt() * (3.0 * 0.64 - 1.0), epsilon = 1e-14);
    }

    #[test]
    fn rejects_non_unit_direction() {
        assert!(sh_basis_3d(1, [1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn gram_matrix_is_identity() {
        // Quasi-Monte-Carlo over a 200k-point Fibonacci lattice.
        let l_max = 3;
        let n = (l_max + 1) * (l_max + 1);
        let pts = fibonacci_sphere([0.0; 3], 1.0, 200_000);
        let mut gram = vec![0.0; n * n];
        for (p, _) in &pts {
            let y = sh_basis_3d(l_max, *p).unwrap();
            for a in 0..n {
                for b in 0..n {
                    gram[a * n + b] += y[a] * y[b];
                }
            }
        }
        let w = 4.0 * PI / pts.len() as f64;
        for a in 0..n {
            for b in 0..n {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a * n + b] * w - want).abs() < 5e-3, "({a},{b}) = {}", gram[a * n + b] * w);
            }
        }
    }

    #[test]
    fn solid_harmonic_gradients_match_fd() {
        let x = [0.3, -0.7, 0.45];
        let (_, grads) = solid_harmonics(4, x);
        let h = 1e-6;
        for axis in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[axis] += h;
            xm[axis] -= h;
            let (vp, _) = solid_harmonics(4, xp);
            let (vm, _) = solid_harmonics(4, xm);
            for i in 0..vp.len() {
                let fd = (vp[i] - vm[i]) / (2.0 * h);
                assert!((fd - grads[i][axis]).abs() < 1e-8, "idx {i} axis {axis}");
            }
        }
    }

    #[test]
    fn solid_harmonics_are_harmonic() {
        let x = [0.2, 0.5, -0.4];
        let h = 1e-4;
        let (v0, _) = solid_harmonics(4, x);
        let mut lap = vec![0.0; v0.len()];
        for axis in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[axis] += h;
            xm[axis] -= h;
            let (vp, _) = solid_harmonics(4, xp);
            let (vm, _) = solid_harmonics(4, xm);
            for i in 0..v0.len() {
                lap[i] += (vp[i] - 2.0 * v0[i] + vm[i]) / (h * h);
            }
        }
        assert!(lap.iter().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn fourier_basis_entries() {
        let b = angular_basis_2d(4, false, 0, 0.0);
        assert_eq!(b.len(), 8);
        for pair in b.chunks(2) {
            assert_eq!(pair, [1.0, 0.0]);
        }
        let b = angular_basis_2d(1, true, 0, PI);
        assert_eq!(b.len(), 4);
        assert!(b[2].abs() < 1e-15);
        assert_relative_eq!(b[3], 1.0, epsilon = 1e-15);
    }
}
