//! Exact 2m-coordinate chain relative to a reference configuration, plus a
//! brute-force full-chain oracle for tiny n.
//!
//! With reference sigma~, a state tracks per partition the agreement counts
//! `U_i` (both +1) and `V_i` (both -1). The TV distance of this lumped chain
//! to its stationary law equals the full 2^n-state chain's TV from the same
//! start, which is what makes exact full-chain curves tractable.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::magchain::{ln_factorials, log_sum_exp, MagKernel, StateSpace, DEFAULT_STATE_CAP};
use crate::spectral::PartitionSpec;

/// Reference configuration sigma~ given by per-partition plus/minus counts.
#[derive(Debug, Clone)]
pub struct CoordRef {
    pub tilde_u: Vec<usize>,
    pub tilde_v: Vec<usize>,
}

impl CoordRef {
    pub fn new(spec: &PartitionSpec, tilde_u: Vec<usize>) -> Result<Self> {
        let np = spec.np_all();
        if tilde_u.len() != np.len() || tilde_u.iter().zip(&np).any(|(u, np)| u > np) {
            return Err(Error::Validation("reference counts out of range".into()));
        }
        let tilde_v = np.iter().zip(&tilde_u).map(|(np, u)| np - u).collect();
        Ok(Self { tilde_u, tilde_v })
    }

    /// The most balanced good reference: tilde_u_i = ceil(n p_i / 2).
    pub fn balanced(spec: &PartitionSpec) -> Self {
        let tilde_u: Vec<usize> = spec.np_all().iter().map(|&np| (np + 1) / 2).collect();
        Self::new(spec, tilde_u).expect("balanced reference is always in range")
    }

    /// Good-reference predicate: |S_i(sigma~)| <= p_i/2, i.e.
    /// 4 * min(tilde_u_i, tilde_v_i) >= n p_i.
    pub fn is_good(&self, spec: &PartitionSpec) -> bool {
        self.tilde_u
            .iter()
            .zip(&self.tilde_v)
            .zip(spec.np_all())
            .all(|((&u, &v), np)| 4 * u.min(v) >= np)
    }
}

/// Exact kernel of the 2m-coordinate chain. States are interleaved as
/// `(U_1, V_1, ..., U_m, V_m)` in the mixed-radix space.
pub struct CoordKernel {
    pub spec: PartitionSpec,
    pub reference: CoordRef,
    pub space: StateSpace,
    np: Vec<usize>,
    /// tanh(beta F_i) indexed by [i][k] with k = sum_{j != i} (U_j - V_j)
    /// shifted by sum_{j != i} tilde_v-side capacity to stay non-negative.
    tanh_tables: Vec<Vec<f64>>,
    field_offset: Vec<usize>,
}

impl CoordKernel {
    pub fn new(spec: &PartitionSpec, reference: CoordRef) -> Result<Self> {
        Self::with_cap(spec, reference, DEFAULT_STATE_CAP)
    }

    pub fn with_cap(spec: &PartitionSpec, reference: CoordRef, cap: usize) -> Result<Self> {
        let m = spec.m();
        let np = spec.np_all();
        let mut dims = Vec::with_capacity(2 * m);
        for i in 0..m {
            dims.push(reference.tilde_u[i] + 1);
            dims.push(reference.tilde_v[i] + 1);
        }
        let space = StateSpace::new(dims);
        if space.total > cap {
            return Err(Error::ResourceCap(format!(
                "coordinate state space has {} states (cap {}); reduce n",
                space.total, cap
            )));
        }
        let n = spec.n() as f64;
        let beta = spec.beta();
        // n F_i = sum_{j!=i} (2(U_j - V_j) + tilde_v_j - tilde_u_j).
        // Index by k = sum_{j!=i} (U_j - V_j) + offset_i with
        // offset_i = sum_{j!=i} tilde_v_j, so k in [0, n - np_i].
        let mut tanh_tables = Vec::with_capacity(m);
        let mut field_offset = Vec::with_capacity(m);
        for i in 0..m {
            let off: usize = (0..m).filter(|&j| j != i).map(|j| reference.tilde_v[j]).sum();
            let cshift: i64 = (0..m)
                .filter(|&j| j != i)
                .map(|j| reference.tilde_v[j] as i64 - reference.tilde_u[j] as i64)
                .sum();
            let rest = spec.n() - np[i];
            let table: Vec<f64> = (0..=rest)
                .map(|k| {
                    let diff = k as i64 - off as i64; // sum_{j!=i}(U_j - V_j)
                    let nf = 2 * diff + cshift;
                    (beta * nf as f64 / n).tanh()
                })
                .collect();
            tanh_tables.push(table);
            field_offset.push(off);
        }
        Ok(Self { spec: spec.clone(), reference, space, np, tanh_tables, field_offset })
    }

    pub fn m(&self) -> usize {
        self.np.len()
    }

    /// Start state with sigma_0 = sigma~ (full agreement).
    pub fn start_at_reference(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(2 * self.m());
        for i in 0..self.m() {
            s.push(self.reference.tilde_u[i]);
            s.push(self.reference.tilde_v[i]);
        }
        s
    }

    pub fn s_vector(&self, state: &[usize]) -> Vec<f64> {
        let n = self.spec.n() as f64;
        (0..self.m())
            .map(|i| {
                let (u, v) = (state[2 * i] as f64, state[2 * i + 1] as f64);
                (2.0 * (u - v) + self.reference.tilde_v[i] as f64 - self.reference.tilde_u[i] as f64) / n
            })
            .collect()
    }

    #[inline]
    fn field_index(&self, state: &[usize], i: usize) -> usize {
        let mut k = self.field_offset[i] as i64;
        for j in 0..self.m() {
            if j != i {
                k += state[2 * j] as i64 - state[2 * j + 1] as i64;
            }
        }
        k as usize
    }

    /// Transition row: per partition the four agreement-class moves plus the
    /// holding probability; <= 4m+1 entries summing to 1.
    pub fn transition_probs(&self, state: &[usize]) -> Vec<(Vec<usize>, f64)> {
        let n = self.spec.n() as f64;
        let m = self.m();
        let mut out = Vec::with_capacity(4 * m + 1);
        let mut hold = 1.0;
        for i in 0..m {
            let th = self.tanh_tables[i][self.field_index(state, i)];
            let rp = 0.5 * (1.0 + th);
            let rm = 0.5 * (1.0 - th);
            let (u, v) = (state[2 * i], state[2 * i + 1]);
            let (tu, tv) = (self.reference.tilde_u[i], self.reference.tilde_v[i]);
            let moves = [
                (2 * i, -1i64, u as f64 / n * rm),          // A-site set to -1
                (2 * i, 1, (tu - u) as f64 / n * rp),       // B-site set to +1
                (2 * i + 1, -1, v as f64 / n * rp),         // D-site set to +1
                (2 * i + 1, 1, (tv - v) as f64 / n * rm),   // C-site set to -1
            ];
            for (coord, delta, prob) in moves {
                if prob > 0.0 {
                    let mut y = state.to_vec();
                    y[coord] = (y[coord] as i64 + delta) as usize;
                    out.push((y, prob));
                }
                hold -= prob;
            }
        }
        out.push((state.to_vec(), hold));
        out
    }

    fn step(&self, old: &[f64], new: &mut [f64]) {
        let m = self.m();
        let n = self.spec.n() as f64;
        new.par_iter_mut().enumerate().for_each_init(
            || vec![0usize; 2 * m],
            |y, (yidx, out)| {
                self.space.unindex(yidx, y);
                let mut acc = 0.0;
                let mut hold = 1.0;
                for i in 0..m {
                    // F_i ignores partition i: shared between y and y -+ e.
                    let th = self.tanh_tables[i][self.field_index(y, i)];
                    let rp = 0.5 * (1.0 + th);
                    let rm = 0.5 * (1.0 - th);
                    let (u, v) = (y[2 * i], y[2 * i + 1]);
                    let (tu, tv) = (self.reference.tilde_u[i], self.reference.tilde_v[i]);
                    let su = self.space.stride(2 * i);
                    let sv = self.space.stride(2 * i + 1);
                    // U_i: from u+1 by an A->-1 move, from u-1 by a B->+1 move.
                    if u + 1 <= tu {
                        acc += (u + 1) as f64 / n * rm * old[yidx + su];
                    }
                    if u >= 1 {
                        acc += (tu - (u - 1)) as f64 / n * rp * old[yidx - su];
                    }
                    // V_i: from v+1 by a D->+1 move, from v-1 by a C->-1 move.
                    if v + 1 <= tv {
                        acc += (v + 1) as f64 / n * rp * old[yidx + sv];
                    }
                    if v >= 1 {
                        acc += (tv - (v - 1)) as f64 / n * rm * old[yidx - sv];
                    }
                    hold -= u as f64 / n * rm
                        + (tu - u) as f64 / n * rp
                        + v as f64 / n * rp
                        + (tv - v) as f64 / n * rm;
                }
                acc += hold * old[yidx];
                *out = acc;
            },
        );
    }

    pub fn evolve(&self, dist: &mut Vec<f64>, t: usize) {
        let mut scratch = vec![0.0; dist.len()];
        for step in 1..=t {
            self.step(dist, &mut scratch);
            std::mem::swap(dist, &mut scratch);
            if step % 1000 == 0 {
                let mass: f64 = dist.iter().sum();
                if (mass - 1.0).abs() > 1e-12 {
                    eprintln!("coordchain: renormalizing mass drift {:e} at step {}", mass - 1.0, step);
                    dist.iter_mut().for_each(|x| *x /= mass);
                }
            }
        }
    }

    pub fn point_mass(&self, state: &[usize]) -> Vec<f64> {
        let mut d = vec![0.0; self.space.total];
        d[self.space.index(state)] = 1.0;
        d
    }

    /// Stationary law: nu(U,V) proportional to
    /// `prod binom(tilde_u_i, U_i) binom(tilde_v_i, V_i) *
    ///  exp((beta n/2)((sum S)^2 - sum S_i^2))`.
    pub fn stationary(&self) -> Vec<f64> {
        let lf = ln_factorials(self.spec.n());
        let beta = self.spec.beta();
        let n = self.spec.n() as f64;
        let m = self.m();
        let mut logw = vec![0.0; self.space.total];
        let mut st = vec![0usize; 2 * m];
        for idx in 0..self.space.total {
            self.space.unindex(idx, &mut st);
            let mut lw = 0.0;
            for i in 0..m {
                let (u, v) = (st[2 * i], st[2 * i + 1]);
                let (tu, tv) = (self.reference.tilde_u[i], self.reference.tilde_v[i]);
                lw += lf[tu] - lf[u] - lf[tu - u];
                lw += lf[tv] - lf[v] - lf[tv - v];
            }
            let s = self.s_vector(&st);
            let sum: f64 = s.iter().sum();
            let sum2: f64 = s.iter().map(|x| x * x).sum();
            lw += beta * n / 2.0 * (sum * sum - sum2);
            logw[idx] = lw;
        }
        let z = log_sum_exp(&logw);
        logw.iter().map(|lw| (lw - z).exp()).collect()
    }

    /// Exact TV of the full 2^n chain from a start with the given
    /// coordinates, via the coordinate chain (lumping equality).
    pub fn exact_tv_full(&self, start: &[usize], t_grid: &[usize]) -> Vec<(usize, f64)> {
        let nu = self.stationary();
        let mut dist = self.point_mass(start);
        let mut out = Vec::with_capacity(t_grid.len());
        let mut t_cur = 0usize;
        for &t in t_grid {
            assert!(t >= t_cur, "t_grid must be ascending");
            self.evolve(&mut dist, t - t_cur);
            t_cur = t;
            out.push((t, MagKernel::tv(&dist, &nu)));
        }
        out
    }

    /// Magnetization coordinates of a coordinate state:
    /// u_i = U_i + (tilde_v_i - V_i).
    pub fn to_mag(&self, state: &[usize]) -> Vec<usize> {
        (0..self.m())
            .map(|i| state[2 * i] + self.reference.tilde_v[i] - state[2 * i + 1])
            .collect()
    }

    /// Pushes a coordinate distribution forward to the magnetization space.
    pub fn lump_to_mag(&self, dist: &[f64], mag: &MagKernel) -> Vec<f64> {
        let mut out = vec![0.0; mag.space.total];
        let mut st = vec![0usize; 2 * self.m()];
        for (idx, &w) in dist.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            self.space.unindex(idx, &mut st);
            out[mag.space.index(&self.to_mag(&st))] += w;
        }
        out
    }
}

/// Exact enumeration of the full 2^n-state Glauber chain; validation only.
pub struct FullChainOracle {
    pub spec: PartitionSpec,
    np: Vec<usize>,
    /// partition of each site; sites laid out partition by partition.
    part: Vec<usize>,
    site_lo: Vec<usize>,
}

pub const ORACLE_MAX_STATES: usize = 16384;

impl FullChainOracle {
    pub fn new(spec: &PartitionSpec) -> Result<Self> {
        let n = spec.n();
        if n > 63 || (1usize << n) > ORACLE_MAX_STATES {
            return Err(Error::ResourceCap(format!("2^{} configurations exceed the oracle cap", n)));
        }
        let np = spec.np_all();
        let mut part = Vec::with_capacity(n);
        let mut site_lo = Vec::with_capacity(np.len());
        let mut lo = 0;
        for (i, &k) in np.iter().enumerate() {
            site_lo.push(lo);
            part.extend(std::iter::repeat(i).take(k));
            lo += k;
        }
        Ok(Self { spec: spec.clone(), np, part, site_lo })
    }

    pub fn n_states(&self) -> usize {
        1usize << self.spec.n()
    }

    pub fn all_plus(&self) -> usize {
        (1usize << self.spec.n()) - 1
    }

    fn plus_counts(&self, mask: usize) -> Vec<usize> {
        let m = self.np.len();
        (0..m)
            .map(|i| {
                let width = self.np[i];
                let slice = (mask >> self.site_lo[i]) & ((1usize << width) - 1);
                slice.count_ones() as usize
            })
            .collect()
    }

    pub fn mag_index(&self, mask: usize, mag: &MagKernel) -> usize {
        mag.space.index(&self.plus_counts(mask))
    }

    fn s_values(&self, counts: &[usize]) -> Vec<f64> {
        let n = self.spec.n() as f64;
        counts
            .iter()
            .zip(&self.np)
            .map(|(&c, &np)| (2.0 * c as f64 - np as f64) / n)
            .collect()
    }

    /// Exact Gibbs law over configurations.
    pub fn stationary(&self) -> Vec<f64> {
        let n = self.spec.n() as f64;
        let beta = self.spec.beta();
        let mut logw = vec![0.0; self.n_states()];
        for (mask, lw) in logw.iter_mut().enumerate() {
            let s = self.s_values(&self.plus_counts(mask));
            let sum: f64 = s.iter().sum();
            let sum2: f64 = s.iter().map(|x| x * x).sum();
            *lw = beta * n / 2.0 * (sum * sum - sum2);
        }
        let z = log_sum_exp(&logw);
        logw.iter().map(|lw| (lw - z).exp()).collect()
    }

    /// Sparse kernel row from one configuration: n possible site updates.
    pub fn kernel_row(&self, mask: usize) -> Vec<(usize, f64)> {
        let n = self.spec.n();
        let beta = self.spec.beta();
        let counts = self.plus_counts(mask);
        let s = self.s_values(&counts);
        let total: f64 = s.iter().sum();
        let mut probs: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
        for v in 0..n {
            let i = self.part[v];
            let field = total - s[i];
            let rp = 0.5 * (1.0 + (beta * field).tanh());
            let plus = mask | (1 << v);
            let minus = mask & !(1 << v);
            *probs.entry(plus).or_insert(0.0) += rp / n as f64;
            *probs.entry(minus).or_insert(0.0) += (1.0 - rp) / n as f64;
        }
        probs.into_iter().collect()
    }

    fn step(&self, old: &[f64], new: &mut [f64]) {
        new.iter_mut().for_each(|x| *x = 0.0);
        for (mask, &w) in old.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (to, p) in self.kernel_row(mask) {
                new[to] += w * p;
            }
        }
    }

    pub fn evolve(&self, dist: &mut Vec<f64>, t: usize) {
        let mut scratch = vec![0.0; dist.len()];
        for _ in 0..t {
            self.step(dist, &mut scratch);
            std::mem::swap(dist, &mut scratch);
        }
    }

    pub fn tv_curve(&self, start_mask: usize, t_grid: &[usize]) -> Vec<(usize, f64)> {
        let mu = self.stationary();
        let mut dist = vec![0.0; self.n_states()];
        dist[start_mask] = 1.0;
        let mut out = Vec::with_capacity(t_grid.len());
        let mut t_cur = 0usize;
        for &t in t_grid {
            assert!(t >= t_cur);
            self.evolve(&mut dist, t - t_cur);
            t_cur = t;
            out.push((t, MagKernel::tv(&dist, &mu)));
        }
        out
    }

    /// Lumps a configuration distribution to magnetization fibers.
    pub fn lump_to_mag(&self, dist: &[f64], mag: &MagKernel) -> Vec<f64> {
        let mut out = vec![0.0; mag.space.total];
        for (mask, &w) in dist.iter().enumerate() {
            if w != 0.0 {
                out[self.mag_index(mask, mag)] += w;
            }
        }
        out
    }

    /// Coordinate state of a configuration w.r.t. a reference whose plus
    /// sites are the first tilde_u_i of each partition.
    pub fn coords(&self, mask: usize, reference: &CoordRef) -> Vec<usize> {
        let m = self.np.len();
        let mut st = Vec::with_capacity(2 * m);
        for i in 0..m {
            let lo = self.site_lo[i];
            let tu = reference.tilde_u[i];
            let mut u = 0;
            let mut v = 0;
            for k in 0..self.np[i] {
                let spin_plus = mask >> (lo + k) & 1 == 1;
                let ref_plus = k < tu;
                match (spin_plus, ref_plus) {
                    (true, true) => u += 1,
                    (false, false) => v += 1,
                    _ => {}
                }
            }
            st.push(u);
            st.push(v);
        }
        st
    }

    pub fn lump_to_coords(&self, dist: &[f64], ck: &CoordKernel) -> Vec<f64> {
        let mut out = vec![0.0; ck.space.total];
        for (mask, &w) in dist.iter().enumerate() {
            if w != 0.0 {
                out[ck.space.index(&self.coords(mask, &ck.reference))] += w;
            }
        }
        out
    }

    /// A configuration whose coordinates w.r.t. the same layout are `state`:
    /// first U_i of the reference-plus sites are +1, etc.
    pub fn mask_with_coords(&self, state: &[usize], reference: &CoordRef) -> usize {
        let m = self.np.len();
        let mut mask = 0usize;
        for i in 0..m {
            let lo = self.site_lo[i];
            let tu = reference.tilde_u[i];
            let (u, v) = (state[2 * i], state[2 * i + 1]);
            for k in 0..u {
                mask |= 1 << (lo + k); // agree on +
            }
            // reference-minus sites: first (tilde_v - v) get +1 spins
            let tv = reference.tilde_v[i];
            for k in 0..(tv - v) {
                mask |= 1 << (lo + tu + k);
            }
        }
        mask
    }
}
