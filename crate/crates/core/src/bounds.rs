//! Mixing-time bounds from exact lumped-chain computations: a TV lower
//! bound via the distinguishing statistic `Z = sum_i a_i S_i`, the
//! conductance of the positive-magnetization cut (exponentially small at
//! low temperature), and the free-energy profile whose second derivative
//! at the symmetric point changes sign exactly at the critical beta.

use crate::error::{Error, Result};
use crate::magchain::MagKernel;
use crate::spectral::{PartitionSpec, SpectralData};

#[derive(Debug, Clone)]
pub struct LowerBoundResult {
    pub t_star: usize,
    pub r: f64,
    pub tv_lower: f64,
    pub e_start: f64,
    pub e_stat: f64,
    pub var_start: f64,
    pub var_stat: f64,
    /// Exact TV of the lumped chain at `t_star` from the same start; the
    /// bound must sit below it.
    pub tv_exact: f64,
    pub zeta: f64,
}

/// Largest admissible tilt of the starting magnetization `s = zeta * p`.
pub fn zeta_max(spec: &PartitionSpec, sd: &SpectralData) -> f64 {
    let beta = spec.beta();
    if beta == 0.0 {
        1.0
    } else {
        (3.0 * sd.upsilon / (beta * beta)).min(1.0)
    }
}

/// Default tilt: the midpoint of the admissible range.
pub fn zeta_default(spec: &PartitionSpec, sd: &SpectralData) -> f64 {
    zeta_max(spec, sd) / 2.0
}

/// Starting state with magnetizations `S_i ~ zeta * p_i`, rounded to the
/// grid and kept strictly positive.
pub fn tilted_start(spec: &PartitionSpec, zeta: f64) -> Vec<usize> {
    spec.np_all()
        .iter()
        .map(|&np| {
            let target = np as f64 * (1.0 + zeta) / 2.0;
            let lo = np / 2 + 1; // smallest count with S_i > 0
            (target.round() as usize).clamp(lo.min(np), np)
        })
        .collect()
}

/// TV lower bound at `t_star = ceil(t_n - gamma n / upsilon)` from the
/// tilted start, by comparing the exact first two moments of
/// `Z = sum_i a_i S_i` under the evolved and the stationary law.
pub fn lower_bound_at(
    spec: &PartitionSpec,
    sd: &SpectralData,
    gamma: f64,
    zeta: Option<f64>,
) -> Result<LowerBoundResult> {
    if spec.beta() >= sd.beta_cr {
        return Err(Error::Validation(format!(
            "lower bound needs beta < beta_cr = {}",
            sd.beta_cr
        )));
    }
    if gamma <= 0.0 {
        return Err(Error::Validation("gamma must be positive".into()));
    }
    let zmax = zeta_max(spec, sd);
    let zeta = zeta.unwrap_or_else(|| zeta_default(spec, sd));
    if !(zeta > 0.0 && zeta < zmax) {
        return Err(Error::Validation(format!(
            "zeta = {} outside the admissible range (0, {})",
            zeta, zmax
        )));
    }
    let n = spec.n() as f64;
    let t_n = n * n.ln() / (2.0 * sd.upsilon);
    let t_star = (t_n - gamma * n / sd.upsilon).ceil().max(0.0) as usize;

    let kernel = MagKernel::new(spec)?;
    let start = tilted_start(spec, zeta);
    let mut dist = kernel.point_mass(&start);
    kernel.evolve(&mut dist, t_star);
    let pi = kernel.stationary();

    let a = sd.a.clone();
    let z = |u: &[usize]| -> f64 {
        u.iter()
            .enumerate()
            .map(|(i, &ui)| a[i] * kernel.s_value(i, ui))
            .sum()
    };
    let (e_start, var_start) = kernel.statistic_moments(&dist, z);
    let (e_stat, var_stat) = kernel.statistic_moments(&pi, z);
    debug_assert!(e_stat.abs() < 1e-12, "stationary mean of Z must vanish");

    let sigma_star = var_start.max(var_stat).sqrt();
    let r = (e_start - e_stat).abs() / sigma_star;
    let tv_lower = (1.0 - 8.0 / (r * r)).clamp(0.0, 1.0);
    let tv_exact = MagKernel::tv(&dist, &pi);
    Ok(LowerBoundResult {
        t_star,
        r,
        tv_lower,
        e_start,
        e_stat,
        var_start,
        var_stat,
        tv_exact,
        zeta,
    })
}

#[derive(Debug, Clone)]
pub struct ConductanceResult {
    pub phi_a: f64,
    pub mu_a: f64,
    pub mu_b: f64,
    pub tmix_lower: f64,
}

/// Conductance of the cut `A = { sum_i S_i > 0 }`, computed exactly on the
/// magnetization chain (A is a union of magnetization fibers, so the
/// lumped flow equals the configuration-level flow). Also reports the mass
/// of the slab `|sum_i S_i| <= 1/n`. `1/(4 phi_A)` lower-bounds t_mix.
pub fn conductance_cut(spec: &PartitionSpec) -> Result<ConductanceResult> {
    let kernel = MagKernel::new(spec)?;
    let pi = kernel.stationary();
    let np = spec.np_all();
    // n * sum_i S_i as an integer
    let n_total_s = |u: &[usize]| -> i64 {
        u.iter().zip(&np).map(|(&ui, &npi)| 2 * ui as i64 - npi as i64).sum()
    };
    let m = spec.m();
    let mut st = vec![0usize; m];
    let mut mu_a = 0.0;
    let mut mu_b = 0.0;
    let mut flow = 0.0;
    for idx in 0..kernel.space.total {
        kernel.space.unindex(idx, &mut st);
        let s = n_total_s(&st);
        if s.abs() <= 1 {
            mu_b += pi[idx];
        }
        if s > 0 {
            mu_a += pi[idx];
            for (y, p) in kernel.transition_probs(&st) {
                if n_total_s(&y) <= 0 {
                    flow += pi[idx] * p;
                }
            }
        }
    }
    assert!(mu_a <= 0.5 + 1e-12, "flip symmetry forces mu(A) <= 1/2, got {}", mu_a);
    let phi_a = flow / mu_a;
    Ok(ConductanceResult { phi_a, mu_a, mu_b, tmix_lower: 1.0 / (4.0 * phi_a) })
}

/// Exponential free-energy profile along a fixed direction `v >= 0`:
/// `k_i = 1/2 + gamma v_i` per-partition plus-fractions.
pub fn f_value(beta: f64, p: &[f64], v: &[f64], gamma: f64) -> f64 {
    let sp: f64 = v.iter().zip(p).map(|(v, p)| v * p).sum();
    let sp2: f64 = v.iter().zip(p).map(|(v, p)| v * v * p * p).sum();
    let mut out = 2.0 * beta * gamma * gamma * (sp * sp - sp2);
    for (vi, pi) in v.iter().zip(p) {
        let lo = 0.5 - gamma * vi;
        let hi = 0.5 + gamma * vi;
        out -= pi * (lo * lo.ln() + hi * hi.ln());
    }
    out
}

pub fn f_d1(beta: f64, p: &[f64], v: &[f64], gamma: f64) -> f64 {
    let sp: f64 = v.iter().zip(p).map(|(v, p)| v * p).sum();
    let sp2: f64 = v.iter().zip(p).map(|(v, p)| v * v * p * p).sum();
    let mut out = 4.0 * beta * gamma * (sp * sp - sp2);
    for (vi, pi) in v.iter().zip(p) {
        out -= pi * vi * ((0.5 + gamma * vi).ln() - (0.5 - gamma * vi).ln());
    }
    out
}

pub fn f_d2(beta: f64, p: &[f64], v: &[f64], gamma: f64) -> f64 {
    let sp: f64 = v.iter().zip(p).map(|(v, p)| v * p).sum();
    let sp2: f64 = v.iter().zip(p).map(|(v, p)| v * v * p * p).sum();
    let mut out = 4.0 * beta * (sp * sp - sp2);
    for (vi, pi) in v.iter().zip(p) {
        out -= pi * vi * vi * (1.0 / (0.5 - gamma * vi) + 1.0 / (0.5 + gamma * vi));
    }
    out
}

/// Samples `(gamma, f, f', f'')` along the grid. The whole grid must keep
/// every `gamma * v_i` inside (-1/2, 1/2).
pub fn f_profile(
    spec: &PartitionSpec,
    v: &[f64],
    gamma_grid: &[f64],
) -> Result<Vec<(f64, f64, f64, f64)>> {
    if v.len() != spec.m() || v.iter().any(|&x| x < 0.0) || v.iter().all(|&x| x == 0.0) {
        return Err(Error::Validation("direction must be non-negative and non-zero".into()));
    }
    let p = spec.p_f64();
    let beta = spec.beta();
    for &g in gamma_grid {
        if v.iter().any(|vi| (g * vi).abs() >= 0.5) {
            return Err(Error::Validation(format!(
                "gamma = {} leaves the domain |gamma v_i| < 1/2",
                g
            )));
        }
    }
    debug_assert!((f_value(beta, &p, v, 0.0) - std::f64::consts::LN_2).abs() < 1e-14);
    debug_assert!(f_d1(beta, &p, v, 0.0).abs() < 1e-14);
    Ok(gamma_grid
        .iter()
        .map(|&g| (g, f_value(beta, &p, v, g), f_d1(beta, &p, v, g), f_d2(beta, &p, v, g)))
        .collect())
}

/// Root of `f''(0)` in beta along the direction of the Perron eigenvector:
/// bisection between the grid ends; the root equals the critical beta.
pub fn critical_beta_scan(
    spec: &PartitionSpec,
    sd: &SpectralData,
    beta_lo: f64,
    beta_hi: f64,
) -> Result<f64> {
    let p = spec.p_f64();
    let v = &sd.a;
    let h = |beta: f64| f_d2(beta, &p, v, 0.0);
    let (mut lo, mut hi) = (beta_lo, beta_hi);
    if h(lo) * h(hi) > 0.0 {
        return Err(Error::NonConvergence {
            iterations: 0,
            residual: h(lo).min(h(hi)),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(lo) * h(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordchain::FullChainOracle;
    use crate::spectral::perron;
    use num_rational::Ratio;

    #[test]
    fn conductance_k11_closed_form() {
        for beta in [0.0, 0.7, 2.5] {
            let spec = PartitionSpec::equal(2, 2, beta).unwrap();
            let res = conductance_cut(&spec).unwrap();
            let expect = 0.5 * (1.0 - (beta / 2.0_f64).tanh());
            assert!((res.phi_a - expect).abs() < 1e-14, "beta={}", beta);
            assert!((res.tmix_lower - 1.0 / (4.0 * expect)).abs() < 1e-12);
        }
    }

    #[test]
    fn lumped_conductance_equals_full_chain() {
        for beta in [0.5, 1.0, 2.8] {
            let spec = PartitionSpec::equal(2, 8, beta).unwrap();
            let lumped = conductance_cut(&spec).unwrap();
            let oracle = FullChainOracle::new(&spec).unwrap();
            let mk = MagKernel::new(&spec).unwrap();
            let mu = oracle.stationary();
            let np = spec.np_all();
            let total_s = |mask: usize, oracle: &FullChainOracle| -> i64 {
                let dist = {
                    let mut d = vec![0.0; oracle.n_states()];
                    d[mask] = 1.0;
                    d
                };
                let lump = oracle.lump_to_mag(&dist, &mk);
                let idx = lump.iter().position(|&w| w > 0.5).unwrap();
                let mut st = vec![0usize; 2];
                mk.space.unindex(idx, &mut st);
                st.iter().zip(&np).map(|(&u, &npi)| 2 * u as i64 - npi as i64).sum()
            };
            let mut mu_a = 0.0;
            let mut flow = 0.0;
            for mask in 0..oracle.n_states() {
                if total_s(mask, &oracle) > 0 {
                    mu_a += mu[mask];
                    for (to, p) in oracle.kernel_row(mask) {
                        if total_s(to, &oracle) <= 0 {
                            flow += mu[mask] * p;
                        }
                    }
                }
            }
            let phi_full = flow / mu_a;
            assert!(
                (lumped.phi_a - phi_full).abs() < 1e-12,
                "beta={}: {} vs {}",
                beta,
                lumped.phi_a,
                phi_full
            );
            assert!((lumped.mu_a - mu_a).abs() < 1e-12);
        }
    }

    #[test]
    fn low_temperature_conductance_shrinks_fast() {
        // beta = 3 > beta_cr = 2: phi_A decays at least geometrically in n
        let mut prev = f64::INFINITY;
        for n in [8usize, 16, 32] {
            let spec = PartitionSpec::equal(2, n, 3.0).unwrap();
            let res = conductance_cut(&spec).unwrap();
            assert!(res.phi_a < prev / 2.0, "n={}: {} vs prev {}", n, res.phi_a, prev);
            prev = res.phi_a;
        }
    }

    #[test]
    fn lower_bound_sits_below_exact_tv_and_grows_with_gamma() {
        let spec = PartitionSpec::equal(2, 64, 1.0).unwrap();
        let sd = perron(&spec).unwrap();
        let mut prev_r = 0.0;
        for gamma in [1.0, 2.0, 3.0, 4.0] {
            let res = lower_bound_at(&spec, &sd, gamma, None).unwrap();
            assert!(res.e_stat.abs() < 1e-12);
            assert!(res.tv_lower <= res.tv_exact + 1e-12, "gamma={}: {:?}", gamma, res);
            assert!(res.r >= prev_r, "gamma={}: r={} prev={}", gamma, res.r, prev_r);
            prev_r = res.r;
        }
    }

    #[test]
    fn lower_bound_rejects_bad_parameters() {
        let spec = PartitionSpec::equal(2, 16, 3.0).unwrap(); // beta > beta_cr
        let sd = perron(&spec).unwrap();
        assert!(lower_bound_at(&spec, &sd, 1.0, None).is_err());
        let spec = PartitionSpec::equal(2, 16, 1.0).unwrap();
        let sd = perron(&spec).unwrap();
        assert!(lower_bound_at(&spec, &sd, 1.0, Some(2.0)).is_err());
        assert!(lower_bound_at(&spec, &sd, 0.0, None).is_err());
    }

    #[test]
    fn profile_symmetric_point_values() {
        let spec = PartitionSpec::equal(2, 8, 1.3).unwrap();
        let rows = f_profile(&spec, &[0.5, 0.5], &[0.0, 0.2, 0.4, -0.3]).unwrap();
        assert!((rows[0].1 - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(rows[0].2.abs() < 1e-15);
        // f''(gamma) against a central difference of f'
        let p = spec.p_f64();
        for &(g, _, _, f2) in &rows {
            let h = 1e-5;
            let num =
                (f_d1(1.3, &p, &[0.5, 0.5], g + h) - f_d1(1.3, &p, &[0.5, 0.5], g - h)) / (2.0 * h);
            assert!((num - f2).abs() < 1e-6, "gamma={}: {} vs {}", g, num, f2);
        }
        // leaving the domain is rejected
        assert!(f_profile(&spec, &[0.5, 0.5], &[1.1]).is_err());
    }

    #[test]
    fn second_derivative_changes_sign_at_beta_cr() {
        let spec = PartitionSpec::equal(2, 8, 1.0).unwrap();
        let sd = perron(&spec).unwrap();
        let p = spec.p_f64();
        assert!((f_d2(sd.beta_cr, &p, &sd.a, 0.0)).abs() < 1e-9);
        assert!(f_d2(sd.beta_cr + 0.5, &p, &sd.a, 0.0) > 0.0);
        assert!(f_d2(sd.beta_cr - 0.5, &p, &sd.a, 0.0) < 0.0);
    }

    #[test]
    fn profile_root_agrees_with_spectral_beta_cr() {
        let cases = vec![
            PartitionSpec::equal(2, 8, 1.0).unwrap(),
            PartitionSpec::new(vec![Ratio::new(1, 4), Ratio::new(3, 4)], 8, 1.0).unwrap(),
            PartitionSpec::new(
                vec![Ratio::new(1, 4), Ratio::new(1, 4), Ratio::new(1, 2)],
                8,
                1.0,
            )
            .unwrap(),
        ];
        for spec in cases {
            let sd = perron(&spec).unwrap();
            let root = critical_beta_scan(&spec, &sd, 0.1, 20.0).unwrap();
            assert!(
                (root - sd.beta_cr).abs() <= 1e-8,
                "p={:?}: {} vs {}",
                spec.p(),
                root,
                sd.beta_cr
            );
        }
        let equal = PartitionSpec::equal(2, 8, 1.0).unwrap();
        let sd = perron(&equal).unwrap();
        let root = critical_beta_scan(&equal, &sd, 0.1, 20.0).unwrap();
        assert!((root - 2.0).abs() <= 1e-8);
        let skew = PartitionSpec::new(vec![Ratio::new(1, 4), Ratio::new(3, 4)], 8, 1.0).unwrap();
        let sd = perron(&skew).unwrap();
        let root = critical_beta_scan(&skew, &sd, 0.1, 20.0).unwrap();
        assert!((root - 4.0 / 3.0_f64.sqrt()).abs() <= 1e-8);
    }
}
