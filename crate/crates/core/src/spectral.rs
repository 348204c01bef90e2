//! Contraction matrix of the coupled dynamics and its Perron data.
//!
//! The matrix `A` has diagonal `1 - 1/n` and row-`k` off-diagonal entries
//! `p_k * beta / n`. Its Perron root `g` and positive left eigenvector `a`
//! (l1-normalized) control the contraction rate of coupled chains; the
//! critical inverse temperature is `beta_cr = 1 / ((m-1) * sum a_i p_i)`.

use num_rational::Ratio;
use num_traits::{One, Signed};

use crate::error::{Error, Result};

pub const EIGEN_ITER_CAP: usize = 100_000;
pub const EIGEN_TOL: f64 = 1e-14;

/// Parameters of the graph family: partition proportions, vertex count,
/// inverse temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    p: Vec<Ratio<i64>>,
    n: usize,
    beta: f64,
}

impl PartitionSpec {
    /// Validates and normalizes the parameters. Proportions are sorted
    /// non-decreasing; each `n * p_i` must be a positive integer and the
    /// proportions must sum to exactly 1.
    pub fn new(p: Vec<Ratio<i64>>, n: usize, beta: f64) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Validation("need at least one partition".into()));
        }
        if n == 0 {
            return Err(Error::Validation("n must be positive".into()));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Validation("beta must be a finite non-negative real".into()));
        }
        let mut p = p;
        p.sort();
        let sum: Ratio<i64> = p.iter().sum();
        if !sum.is_one() {
            return Err(Error::Validation(format!(
                "proportions must sum to 1 exactly, got {}",
                sum
            )));
        }
        for pi in &p {
            if !pi.is_positive() {
                return Err(Error::Validation("every proportion must be > 0".into()));
            }
            let np = pi * Ratio::from_integer(n as i64);
            if !np.is_integer() {
                return Err(Error::Validation(format!(
                    "n*p_i must be an integer: n={} p_i={}",
                    n, pi
                )));
            }
        }
        Ok(Self { p, n, beta })
    }

    /// Equal proportions `1/m`; requires `m | n`.
    pub fn equal(m: usize, n: usize, beta: f64) -> Result<Self> {
        let p = vec![Ratio::new(1, m as i64); m];
        Self::new(p, n, beta)
    }

    pub fn m(&self) -> usize {
        self.p.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn p(&self) -> &[Ratio<i64>] {
        &self.p
    }

    pub fn p_f64(&self) -> Vec<f64> {
        self.p
            .iter()
            .map(|r| *r.numer() as f64 / *r.denom() as f64)
            .collect()
    }

    /// Partition size `n * p_i`, an exact integer by construction.
    pub fn np(&self, i: usize) -> usize {
        let np = self.p[i] * Ratio::from_integer(self.n as i64);
        debug_assert!(np.is_integer());
        np.to_integer() as usize
    }

    pub fn np_all(&self) -> Vec<usize> {
        (0..self.m()).map(|i| self.np(i)).collect()
    }

    /// Same proportions and temperature at a different vertex count.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.p.clone(), n, self.beta)
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.p.clone(), self.n, beta)
    }
}

/// Perron data of the contraction matrix.
#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Perron root of the n-free matrix `p 1^T - diag(p)`.
    pub lambda: f64,
    /// Perron root of `A`: `1 - 1/n + beta*lambda/n`.
    pub g: f64,
    /// l1-normalized positive left Perron eigenvector of `A` (n-free).
    pub a: Vec<f64>,
    /// `n (1 - g) = 1 - beta*lambda`.
    pub upsilon: f64,
    /// Critical inverse temperature; `f64::INFINITY` for m = 1.
    pub beta_cr: f64,
}

fn mat_vec(mat: &[f64], m: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let row = &mat[i * m..(i + 1) * m];
        out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Power iteration for the dominant eigenpair of a symmetric matrix with
/// positive spectrum. Stops on the eigen-residual `||M v - rho v||`, which
/// controls the eigenvector error directly.
fn top_eig_sym(mat: &[f64], m: usize) -> Result<(f64, Vec<f64>)> {
    let mut v: Vec<f64> = (0..m).map(|i| 1.0 + (i as f64) * 1e-3).collect();
    let nrm = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nrm);
    let mut w = vec![0.0; m];
    let mut last_residual = f64::INFINITY;
    for _ in 0..EIGEN_ITER_CAP {
        mat_vec(mat, m, &v, &mut w);
        let rayleigh: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let residual: f64 = v
            .iter()
            .zip(&w)
            .map(|(vi, wi)| {
                let r = wi - rayleigh * vi;
                r * r
            })
            .sum::<f64>()
            .sqrt();
        let nrm = norm2(&w);
        if nrm == 0.0 {
            return Ok((0.0, v));
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nrm;
        }
        if residual <= EIGEN_TOL * rayleigh.abs().max(1.0) {
            return Ok((rayleigh, v));
        }
        last_residual = residual;
    }
    Err(Error::NonConvergence {
        iterations: EIGEN_ITER_CAP,
        residual: last_residual,
    })
}

/// All eigenvalues of a symmetric matrix with positive spectrum, via power
/// iteration with Hotelling deflation. Descending order.
fn sym_eigs_all(mat: &[f64], m: usize) -> Result<Vec<f64>> {
    let mut b = mat.to_vec();
    let mut eigs = Vec::with_capacity(m);
    for _ in 0..m {
        let (lam, v) = top_eig_sym(&b, m)?;
        eigs.push(lam);
        for i in 0..m {
            for j in 0..m {
                b[i * m + j] -= lam * v[i] * v[j];
            }
        }
    }
    Ok(eigs)
}

/// The contraction matrix `A` itself (depends on n and beta).
pub fn build_matrix(spec: &PartitionSpec) -> Vec<f64> {
    let m = spec.m();
    let n = spec.n() as f64;
    let p = spec.p_f64();
    let mut mat = vec![0.0; m * m];
    for k in 0..m {
        for j in 0..m {
            mat[k * m + j] = if k == j {
                1.0 - 1.0 / n
            } else {
                p[k] * spec.beta() / n
            };
        }
    }
    mat
}

/// The n-free symmetrized interaction matrix: `sqrt(p_i p_j)` off-diagonal,
/// zero diagonal. Shares its spectrum with `p 1^T - diag(p)`.
fn interaction_sym(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut mat = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            if i != j {
                mat[i * m + j] = (p[i] * p[j]).sqrt();
            }
        }
    }
    mat
}

/// Eigenvalues of the n-free interaction matrix, descending. The Perron root
/// is the first entry.
pub fn interaction_eigs(spec: &PartitionSpec) -> Result<Vec<f64>> {
    let m = spec.m();
    let p = spec.p_f64();
    // Shift by +I so the whole spectrum is positive and deflation ordering
    // by magnitude coincides with ordering by value.
    let mut mat = interaction_sym(&p);
    for i in 0..m {
        mat[i * m + i] += 1.0;
    }
    let eigs = sym_eigs_all(&mat, m)?;
    Ok(eigs.into_iter().map(|e| e - 1.0).collect())
}

/// Perron root of the interaction matrix by bisection on the scalar
/// equation `1 = sum_j p_j / (lambda + p_j)`, which is strictly decreasing
/// in `lambda`. Independent of the power-iteration route.
pub fn scalar_perron_root(p: &[f64]) -> f64 {
    if p.len() == 1 {
        return 0.0;
    }
    let h = |lam: f64| -> f64 { p.iter().map(|&pj| pj / (lam + pj)).sum() };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    debug_assert!(h(hi) < 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Computes the full Perron data. The eigenvector `a` and `beta_cr` depend
/// only on the proportions; `g` carries the n-dependence.
pub fn perron(spec: &PartitionSpec) -> Result<SpectralData> {
    let m = spec.m();
    let n = spec.n() as f64;
    let p = spec.p_f64();
    if m == 1 {
        return Ok(SpectralData {
            lambda: 0.0,
            g: 1.0 - 1.0 / n,
            a: vec![1.0],
            upsilon: 1.0,
            beta_cr: f64::INFINITY,
        });
    }
    let mut shifted = interaction_sym(&p);
    for i in 0..m {
        shifted[i * m + i] += 1.0;
    }
    let (eig, w) = top_eig_sym(&shifted, m)?;
    let lambda = eig - 1.0;
    // Left eigenvector of A from the symmetric eigenvector: a_i = w_i / sqrt(p_i).
    let sign = if w.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let mut a: Vec<f64> = w.iter().zip(&p).map(|(wi, pi)| sign * wi / pi.sqrt()).collect();
    let l1: f64 = a.iter().sum();
    a.iter_mut().for_each(|x| *x /= l1);
    let sum_ap: f64 = a.iter().zip(&p).map(|(ai, pi)| ai * pi).sum();
    let beta_cr = 1.0 / ((m as f64 - 1.0) * sum_ap);
    let g = 1.0 - 1.0 / n + spec.beta() * lambda / n;
    let upsilon = 1.0 - spec.beta() * lambda;
    Ok(SpectralData {
        lambda,
        g,
        a,
        upsilon,
        beta_cr,
    })
}

/// One named identity check.
#[derive(Debug, Clone)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct IdentityReport {
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failing(&self) -> Vec<&IdentityCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

/// Evaluates the interlocking identities tying `a`, `upsilon`, and `beta_cr`
/// together, each as a residual against `tol`.
pub fn verify_identities(sd: &SpectralData, spec: &PartitionSpec, tol: f64) -> Result<IdentityReport> {
    let m = spec.m();
    let p = spec.p_f64();
    let beta = spec.beta();
    let mut checks = Vec::new();
    let mut push = |name: &'static str, residual: f64| {
        checks.push(IdentityCheck {
            name,
            residual,
            pass: residual <= tol,
        });
    };

    // a_1 >= ... >= a_m > 0 and sum a_i = 1.
    let mut order_res = 0.0_f64;
    for i in 1..m {
        order_res = order_res.max(sd.a[i] - sd.a[i - 1]);
    }
    for &ai in &sd.a {
        if ai <= 0.0 {
            order_res = order_res.max(-ai + tol * 2.0);
        }
    }
    order_res = order_res.max((sd.a.iter().sum::<f64>() - 1.0).abs());
    push("eigenvector_ordered_normalized", order_res);

    // sum a_i p_i <= 1/m with equality iff all p_i equal.
    let sum_ap: f64 = sd.a.iter().zip(&p).map(|(a, b)| a * b).sum();
    let all_equal = spec.p().windows(2).all(|w| w[0] == w[1]);
    let chebyshev_res = if all_equal {
        (sum_ap - 1.0 / m as f64).abs()
    } else if m == 1 {
        0.0
    } else {
        // strict inequality expected; fail only if it reaches 1/m.
        (sum_ap - 1.0 / m as f64).max(0.0)
    };
    push("chebyshev_sum_bound", chebyshev_res);

    // upsilon = 1 - beta (m-1) sum a_i p_i and upsilon = 1 - beta/beta_cr.
    let ups_from_sum = 1.0 - beta * (m as f64 - 1.0) * sum_ap;
    push("upsilon_eigen_sum", (sd.upsilon - ups_from_sum).abs());
    let beta_over_cr = if sd.beta_cr.is_infinite() { 0.0 } else { beta / sd.beta_cr };
    push("upsilon_beta_ratio", (sd.upsilon - (1.0 - beta_over_cr)).abs());

    // (beta p_i + 1 - upsilon) a_i constant over i.
    let c0 = (beta * p[0] + 1.0 - sd.upsilon) * sd.a[0];
    let mut const_res = 0.0_f64;
    for i in 1..m {
        const_res = const_res.max(((beta * p[i] + 1.0 - sd.upsilon) * sd.a[i] - c0).abs());
    }
    push("eigen_relation_constant", const_res);

    // beta_cr = sum a_i^2 p_i / ((sum a_i p_i)^2 - sum a_i^2 p_i^2).
    let num: f64 = sd.a.iter().zip(&p).map(|(a, b)| a * a * b).sum();
    let den: f64 = sum_ap * sum_ap - sd.a.iter().zip(&p).map(|(a, b)| a * a * b * b).sum::<f64>();
    let quad_res = if sd.beta_cr.is_infinite() {
        den.abs()
    } else {
        (sd.beta_cr - num / den).abs()
    };
    push("beta_cr_quadratic_identity", quad_res);

    // Optional cross-check: all eigenvalues of n(I - C) positive iff beta < beta_cr.
    let eigs = interaction_eigs(spec)?;
    let min_shifted = eigs.iter().map(|&l| 1.0 - beta * l).fold(f64::INFINITY, f64::min);
    let pd = min_shifted > 0.0;
    let subcritical = beta < sd.beta_cr;
    push("positive_definite_iff_subcritical", if pd == subcritical { 0.0 } else { 1.0 });

    Ok(IdentityReport { checks })
}

/// Result of the spectral norm bound: `lhs = ||A^t s||_1` against
/// `rhs = g^t sqrt(sum s_i^2 / p_i)`, plus the componentwise variant.
#[derive(Debug, Clone)]
pub struct NormBound {
    pub lhs: f64,
    pub rhs: f64,
    pub component_ok: bool,
}

pub fn norm_bound_check(sd: &SpectralData, spec: &PartitionSpec, s: &[f64], t: usize) -> NormBound {
    let m = spec.m();
    assert_eq!(s.len(), m);
    let p = spec.p_f64();
    let mat = build_matrix(spec);
    let mut v = s.to_vec();
    let mut tmp = vec![0.0; m];
    for _ in 0..t {
        mat_vec(&mat, m, &v, &mut tmp);
        std::mem::swap(&mut v, &mut tmp);
    }
    let lhs: f64 = v.iter().sum();
    let weight: f64 = s.iter().zip(&p).map(|(si, pi)| si * si / pi).sum::<f64>().sqrt();
    let rhs = sd.g.powi(t as i32) * weight;
    let component_ok = v
        .iter()
        .zip(&p)
        .all(|(vj, pj)| *vj <= pj.sqrt() * rhs + 1e-12);
    NormBound { lhs, rhs, component_ok }
}
