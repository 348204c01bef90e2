//! Exact magnetization chain.
//!
//! States are per-partition plus-spin counts `u`, with magnetization
//! `S_i = (2 u_i - n p_i)/n`. The chain moves one count by +-1 per step:
//! up with probability `((p_i - S_i)/2) r_+(F_i)` and down with
//! `((p_i + S_i)/2) r_-(F_i)` where `F_i` is the field from the other
//! partitions. Everything here is exact linear algebra on the lumped state
//! space; no sampling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spectral::PartitionSpec;

/// Default refusal threshold for dense lumped state spaces.
pub const DEFAULT_STATE_CAP: usize = 10_000_000;

/// Mixed-radix linearization of integer box states.
#[derive(Debug, Clone)]
pub struct StateSpace {
    pub dims: Vec<usize>,
    strides: Vec<usize>,
    pub total: usize,
}

impl StateSpace {
    pub fn new(dims: Vec<usize>) -> Self {
        let mut strides = vec![0; dims.len()];
        let mut acc = 1usize;
        for (i, d) in dims.iter().enumerate() {
            strides[i] = acc;
            acc *= d;
        }
        Self { dims, strides, total: acc }
    }

    #[inline]
    pub fn stride(&self, i: usize) -> usize {
        self.strides[i]
    }

    #[inline]
    pub fn index(&self, state: &[usize]) -> usize {
        state.iter().zip(&self.strides).map(|(s, st)| s * st).sum()
    }

    #[inline]
    pub fn unindex(&self, mut idx: usize, out: &mut [usize]) {
        for (i, d) in self.dims.iter().enumerate() {
            out[i] = idx % d;
            idx /= d;
        }
    }
}

/// Natural log of k! for k = 0..=n.
pub fn ln_factorials(n: usize) -> Vec<f64> {
    let mut lf = vec![0.0; n + 1];
    for k in 1..=n {
        lf[k] = lf[k - 1] + (k as f64).ln();
    }
    lf
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx.is_infinite() {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Exact kernel of the magnetization chain for one spec.
pub struct MagKernel {
    pub spec: PartitionSpec,
    pub np: Vec<usize>,
    pub space: StateSpace,
    /// tanh(beta * F_i) indexed by [i][k] with k = sum_{j != i} u_j.
    tanh_tables: Vec<Vec<f64>>,
}

impl MagKernel {
    pub fn new(spec: &PartitionSpec) -> Result<Self> {
        Self::with_cap(spec, DEFAULT_STATE_CAP)
    }

    pub fn with_cap(spec: &PartitionSpec, cap: usize) -> Result<Self> {
        let np = spec.np_all();
        let dims: Vec<usize> = np.iter().map(|&k| k + 1).collect();
        let space = StateSpace::new(dims);
        if space.total > cap {
            return Err(Error::ResourceCap(format!(
                "magnetization state space has {} states (cap {}); reduce n",
                space.total, cap
            )));
        }
        let n = spec.n() as f64;
        let beta = spec.beta();
        let tanh_tables = np
            .iter()
            .map(|&npi| {
                let rest = spec.n() - npi;
                (0..=rest)
                    .map(|k| {
                        let field = (2.0 * k as f64 - rest as f64) / n;
                        (beta * field).tanh()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { spec: spec.clone(), np, space, tanh_tables })
    }

    pub fn m(&self) -> usize {
        self.np.len()
    }

    #[inline]
    pub fn s_value(&self, i: usize, u_i: usize) -> f64 {
        (2.0 * u_i as f64 - self.np[i] as f64) / self.spec.n() as f64
    }

    pub fn s_vector(&self, u: &[usize]) -> Vec<f64> {
        (0..self.m()).map(|i| self.s_value(i, u[i])).collect()
    }

    /// tanh(beta F_i) at state u; the table index is the plus-count outside i.
    #[inline]
    fn tanh_field(&self, u: &[usize], total_u: usize, i: usize) -> f64 {
        self.tanh_tables[i][total_u - u[i]]
    }

    /// Transition row from `u`: up/down move per partition plus the holding
    /// probability. Length <= 2m+1, entries sum to 1.
    pub fn transition_probs(&self, u: &[usize]) -> Vec<(Vec<usize>, f64)> {
        let n = self.spec.n() as f64;
        let total_u: usize = u.iter().sum();
        let mut out = Vec::with_capacity(2 * self.m() + 1);
        let mut hold = 1.0;
        for i in 0..self.m() {
            let th = self.tanh_field(u, total_u, i);
            let up = (self.np[i] - u[i]) as f64 / n * 0.5 * (1.0 + th);
            let down = u[i] as f64 / n * 0.5 * (1.0 - th);
            if up > 0.0 {
                let mut y = u.to_vec();
                y[i] += 1;
                out.push((y, up));
            }
            if down > 0.0 {
                let mut y = u.to_vec();
                y[i] -= 1;
                out.push((y, down));
            }
            hold -= up + down;
        }
        out.push((u.to_vec(), hold));
        out
    }

    /// One exact kernel application, gather-form over destinations.
    fn step(&self, old: &[f64], new: &mut [f64]) {
        let m = self.m();
        let n = self.spec.n() as f64;
        new.par_iter_mut().enumerate().for_each_init(|| vec![0usize; m], |y, (yidx, out)| {
            self.space.unindex(yidx, y);
            let total_y: usize = y.iter().sum();
            let mut acc = 0.0;
            let mut hold = 1.0;
            for i in 0..m {
                // F_i ignores partition i, so the field index is shared by
                // the source states y -+ e_i.
                let th = self.tanh_tables[i][total_y - y[i]];
                let rp = 0.5 * (1.0 + th);
                let rm = 0.5 * (1.0 - th);
                if y[i] >= 1 {
                    let up_from_below = (self.np[i] - (y[i] - 1)) as f64 / n * rp;
                    acc += up_from_below * old[yidx - self.space.strides[i]];
                }
                if y[i] + 1 <= self.np[i] {
                    let down_from_above = (y[i] + 1) as f64 / n * rm;
                    acc += down_from_above * old[yidx + self.space.strides[i]];
                }
                hold -= (self.np[i] - y[i]) as f64 / n * rp + y[i] as f64 / n * rm;
            }
            acc += hold * old[yidx];
            *out = acc;
        });
    }

    /// Applies the kernel `t` times. Mass drift beyond 1e-12 per 1000 steps
    /// is renormalized.
    pub fn evolve(&self, dist: &mut Vec<f64>, t: usize) {
        let mut scratch = vec![0.0; dist.len()];
        for step in 1..=t {
            self.step(dist, &mut scratch);
            std::mem::swap(dist, &mut scratch);
            if step % 1000 == 0 {
                let mass: f64 = dist.iter().sum();
                if (mass - 1.0).abs() > 1e-12 {
                    eprintln!("magchain: renormalizing mass drift {:e} at step {}", mass - 1.0, step);
                    dist.iter_mut().for_each(|x| *x /= mass);
                }
            }
        }
    }

    pub fn point_mass(&self, u: &[usize]) -> Vec<f64> {
        let mut d = vec![0.0; self.space.total];
        d[self.space.index(u)] = 1.0;
        d
    }

    pub fn all_plus(&self) -> Vec<usize> {
        self.np.clone()
    }

    pub fn all_minus(&self) -> Vec<usize> {
        vec![0; self.m()]
    }

    pub fn mirror(&self, u: &[usize]) -> Vec<usize> {
        u.iter().zip(&self.np).map(|(ui, npi)| npi - ui).collect()
    }

    /// Exact stationary law: pi(u) proportional to
    /// `prod binom(np_i, u_i) * exp((beta n / 2)((sum S)^2 - sum S_i^2))`,
    /// normalized in the log domain.
    pub fn stationary(&self) -> Vec<f64> {
        let lf = ln_factorials(self.spec.n());
        let beta = self.spec.beta();
        let n = self.spec.n() as f64;
        let m = self.m();
        let mut logw = vec![0.0; self.space.total];
        let mut u = vec![0usize; m];
        for idx in 0..self.space.total {
            self.space.unindex(idx, &mut u);
            let mut lw = 0.0;
            let mut sum_s = 0.0;
            let mut sum_s2 = 0.0;
            for i in 0..m {
                lw += lf[self.np[i]] - lf[u[i]] - lf[self.np[i] - u[i]];
                let s = self.s_value(i, u[i]);
                sum_s += s;
                sum_s2 += s * s;
            }
            lw += beta * n / 2.0 * (sum_s * sum_s - sum_s2);
            logw[idx] = lw;
        }
        let z = log_sum_exp(&logw);
        logw.iter().map(|lw| (lw - z).exp()).collect()
    }

    pub fn tv(a: &[f64], b: &[f64]) -> f64 {
        0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }

    /// Exact TV distance to stationarity from a point start, sampled on an
    /// ascending time grid.
    pub fn tv_curve(&self, start: &[usize], t_grid: &[usize]) -> Vec<(usize, f64)> {
        let pi = self.stationary();
        let mut dist = self.point_mass(start);
        let mut out = Vec::with_capacity(t_grid.len());
        let mut t_cur = 0usize;
        for &t in t_grid {
            assert!(t >= t_cur, "t_grid must be ascending");
            self.evolve(&mut dist, t - t_cur);
            t_cur = t;
            out.push((t, Self::tv(&dist, &pi)));
        }
        out
    }

    /// First times the exact TV drops to each threshold, scanning step by
    /// step from a point start.
    pub fn mixing_times(&self, start: &[usize], epsilons: &[f64], t_max: usize) -> Result<Vec<usize>> {
        let pi = self.stationary();
        let mut dist = self.point_mass(start);
        let mut remaining: Vec<(usize, f64)> = epsilons.iter().cloned().enumerate().collect();
        let mut hit = vec![usize::MAX; epsilons.len()];
        let mut t = 0usize;
        loop {
            let tv = Self::tv(&dist, &pi);
            remaining.retain(|&(k, eps)| {
                if tv <= eps {
                    hit[k] = t;
                    false
                } else {
                    true
                }
            });
            if remaining.is_empty() {
                return Ok(hit);
            }
            if t >= t_max {
                return Err(Error::ResourceCap(format!(
                    "TV did not reach thresholds {:?} within t_max={}",
                    remaining.iter().map(|&(_, e)| e).collect::<Vec<_>>(),
                    t_max
                )));
            }
            self.evolve(&mut dist, 1);
            t += 1;
        }
    }

    /// One-step conditional mean drift of S from state u:
    /// `(1/n)(-S_i + p_i tanh(beta sum_{j!=i} S_j))`.
    pub fn drift(&self, u: &[usize]) -> Vec<f64> {
        let n = self.spec.n() as f64;
        let p = self.spec.p_f64();
        let total_u: usize = u.iter().sum();
        (0..self.m())
            .map(|i| {
                let s = self.s_value(i, u[i]);
                (-s + p[i] * self.tanh_field(u, total_u, i)) / n
            })
            .collect()
    }

    /// Kernel expectation of the one-step S change, the independent route
    /// for the drift identity.
    pub fn drift_from_kernel(&self, u: &[usize]) -> Vec<f64> {
        let s0 = self.s_vector(u);
        let mut acc = vec![0.0; self.m()];
        for (y, prob) in self.transition_probs(u) {
            for i in 0..self.m() {
                acc[i] += prob * (self.s_value(i, y[i]) - s0[i]);
            }
        }
        acc
    }

    pub fn mean_s(&self, dist: &[f64]) -> Vec<f64> {
        let m = self.m();
        let mut mean = vec![0.0; m];
        let mut u = vec![0usize; m];
        for (idx, &w) in dist.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            self.space.unindex(idx, &mut u);
            for i in 0..m {
                mean[i] += w * self.s_value(i, u[i]);
            }
        }
        mean
    }

    /// Per-partition Var(S_i) under a distribution.
    pub fn var_s(&self, dist: &[f64]) -> Vec<f64> {
        let m = self.m();
        let mean = self.mean_s(dist);
        let mut var = vec![0.0; m];
        let mut u = vec![0usize; m];
        for (idx, &w) in dist.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            self.space.unindex(idx, &mut u);
            for i in 0..m {
                let d = self.s_value(i, u[i]) - mean[i];
                var[i] += w * d * d;
            }
        }
        var
    }

    /// Exact `sum_i Var(S_i)` along the evolution from a point start.
    pub fn variance_trajectory(&self, start: &[usize], t_grid: &[usize]) -> Vec<(usize, f64)> {
        let mut dist = self.point_mass(start);
        let mut out = Vec::with_capacity(t_grid.len());
        let mut t_cur = 0usize;
        for &t in t_grid {
            assert!(t >= t_cur, "t_grid must be ascending");
            self.evolve(&mut dist, t - t_cur);
            t_cur = t;
            out.push((t, self.var_s(&dist).iter().sum()));
        }
        out
    }

    /// Mean and variance of a scalar statistic `f(u)` under a distribution.
    pub fn statistic_moments(&self, dist: &[f64], f: impl Fn(&[usize]) -> f64) -> (f64, f64) {
        let m = self.m();
        let mut u = vec![0usize; m];
        let mut mean = 0.0;
        for (idx, &w) in dist.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            self.space.unindex(idx, &mut u);
            mean += w * f(&u);
        }
        let mut var = 0.0;
        for (idx, &w) in dist.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            self.space.unindex(idx, &mut u);
            let d = f(&u) - mean;
            var += w * d * d;
        }
        (mean, var)
    }
}
