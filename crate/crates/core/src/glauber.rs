//! Full spin-configuration Glauber dynamics with a grand coupling.
//!
//! Sites are laid out partition by partition and stored as a bitset with
//! cached per-partition plus counts, so one update is O(m). A step draws a
//! uniform site `I` and a uniform `U` and sets the spin to `+1` iff
//! `U < (1 + tanh(beta F)) / 2` where `F` is the average spin over the
//! site's neighbours (every vertex outside its own partition). Feeding the
//! same `(I, U)` to several configurations yields the grand coupling, which
//! preserves the coordinatewise partial order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Error;
use crate::spectral::PartitionSpec;

/// Default cap on `n * t_max * replicas` for the replica runners.
pub const DEFAULT_WORK_CAP: u64 = 1 << 42;

fn check_work_cap(n: usize, t_max: usize, replicas: usize, cap: Option<u64>) -> Result<(), Error> {
    let cap = cap.unwrap_or(DEFAULT_WORK_CAP);
    let work = (n as u64)
        .saturating_mul(t_max as u64)
        .saturating_mul(replicas as u64);
    if work > cap {
        return Err(Error::ResourceCap(format!(
            "replica run needs n*t_max*replicas = {} site updates, cap is {}",
            work, cap
        )));
    }
    Ok(())
}

/// Spin configuration on `n` sites; bit set means spin `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinConfig {
    words: Vec<u64>,
    plus_counts: Vec<usize>,
    site_lo: Vec<usize>,
    np: Vec<usize>,
    n: usize,
}

impl SpinConfig {
    pub fn all_minus(spec: &PartitionSpec) -> Self {
        let n = spec.n();
        let np = spec.np_all();
        let mut site_lo = Vec::with_capacity(np.len());
        let mut lo = 0;
        for &k in &np {
            site_lo.push(lo);
            lo += k;
        }
        Self {
            words: vec![0u64; (n + 63) / 64],
            plus_counts: vec![0; np.len()],
            site_lo,
            np,
            n,
        }
    }

    pub fn all_plus(spec: &PartitionSpec) -> Self {
        let mut c = Self::all_minus(spec);
        for v in 0..c.n {
            c.set(v, true);
        }
        c
    }

    pub fn random(spec: &PartitionSpec, rng: &mut impl Rng) -> Self {
        let mut c = Self::all_minus(spec);
        for v in 0..c.n {
            c.set(v, rng.gen::<bool>());
        }
        c
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn plus_counts(&self) -> &[usize] {
        &self.plus_counts
    }

    /// Partition of site `v`.
    pub fn partition_of(&self, v: usize) -> usize {
        debug_assert!(v < self.n);
        match self.site_lo.binary_search(&v) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    #[inline]
    pub fn get(&self, v: usize) -> bool {
        self.words[v / 64] >> (v % 64) & 1 == 1
    }

    pub fn set(&mut self, v: usize, plus: bool) {
        let old = self.get(v);
        if old == plus {
            return;
        }
        self.words[v / 64] ^= 1 << (v % 64);
        let i = self.partition_of(v);
        if plus {
            self.plus_counts[i] += 1;
        } else {
            self.plus_counts[i] -= 1;
        }
    }

    /// Per-partition magnetizations `S_i = (2 u_i - n p_i) / n`.
    pub fn s_vector(&self) -> Vec<f64> {
        self.plus_counts
            .iter()
            .zip(&self.np)
            .map(|(&u, &np)| (2.0 * u as f64 - np as f64) / self.n as f64)
            .collect()
    }

    /// Average neighbour spin of a site in partition `i`:
    /// `F_i = sum_{j != i} S_j`.
    pub fn field(&self, i: usize) -> f64 {
        let s = self.s_vector();
        s.iter().sum::<f64>() - s[i]
    }

    /// Sitewise partial order (all plus-sets nested).
    pub fn le(&self, other: &Self) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Per-partition counts of disagreeing sites.
    pub fn hamming_profile(&self, other: &Self) -> Vec<usize> {
        let mut out = vec![0usize; self.np.len()];
        for v in 0..self.n {
            if self.get(v) != other.get(v) {
                out[self.partition_of(v)] += 1;
            }
        }
        out
    }
}

/// Shared randomness of one grand-coupling step.
#[derive(Debug, Clone, Copy)]
pub struct UpdateRandomness {
    pub site: usize,
    pub u: f64,
}

impl UpdateRandomness {
    pub fn draw(n: usize, rng: &mut impl Rng) -> Self {
        Self { site: rng.gen_range(0..n), u: rng.gen::<f64>() }
    }
}

/// One Glauber update. Ties (`u` exactly at the threshold) go to `-1`.
pub fn glauber_step(config: &mut SpinConfig, beta: f64, upd: UpdateRandomness) {
    let i = config.partition_of(upd.site);
    let r_plus = 0.5 * (1.0 + (beta * config.field(i)).tanh());
    config.set(upd.site, upd.u < r_plus);
}

/// Applies the same `(site, u)` to every configuration.
pub fn grand_coupling_step(configs: &mut [SpinConfig], beta: f64, upd: UpdateRandomness) {
    for c in configs.iter_mut() {
        glauber_step(c, beta, upd);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartConfig {
    AllPlus,
    AllMinus,
    Random,
}

impl StartConfig {
    pub fn build(self, spec: &PartitionSpec, rng: &mut impl Rng) -> SpinConfig {
        match self {
            StartConfig::AllPlus => SpinConfig::all_plus(spec),
            StartConfig::AllMinus => SpinConfig::all_minus(spec),
            StartConfig::Random => SpinConfig::random(spec, rng),
        }
    }
}

/// Deterministic per-replica generator: one seed, replica index as stream.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

/// Magnetization trajectories of independent replicas, recorded at the
/// given (ascending) times. Replicas are independent streams of one seed,
/// so output is reproducible regardless of thread scheduling.
pub fn run_replicas(
    spec: &PartitionSpec,
    start: StartConfig,
    t_grid: &[usize],
    replicas: usize,
    seed: u64,
    work_cap: Option<u64>,
) -> Result<Vec<Vec<(usize, Vec<f64>)>>, Error> {
    debug_assert!(t_grid.windows(2).all(|w| w[0] <= w[1]));
    check_work_cap(spec.n(), t_grid.last().copied().unwrap_or(0), replicas, work_cap)?;
    let runs = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r as u64);
            let mut config = start.build(spec, &mut rng);
            let beta = spec.beta();
            let n = spec.n();
            let mut out = Vec::with_capacity(t_grid.len());
            let mut t_cur = 0usize;
            for &t in t_grid {
                for _ in t_cur..t {
                    let upd = UpdateRandomness::draw(n, &mut rng);
                    glauber_step(&mut config, beta, upd);
                }
                t_cur = t;
                out.push((t, config.s_vector()));
            }
            out
        })
        .collect();
    Ok(runs)
}

/// Grand-coupled pair of replicas from the extreme starts (all-minus,
/// all-plus), recording at each grid time the upper chain's magnetizations
/// and the weighted Hamming distance `sum_i w_i * dist_i(t)` between the
/// two chains. Same determinism contract as [`run_replicas`].
pub fn run_paired_replicas(
    spec: &PartitionSpec,
    weights: &[f64],
    t_grid: &[usize],
    replicas: usize,
    seed: u64,
    work_cap: Option<u64>,
) -> Result<Vec<Vec<(usize, Vec<f64>, f64)>>, Error> {
    debug_assert!(t_grid.windows(2).all(|w| w[0] <= w[1]));
    if weights.len() != spec.m() {
        return Err(Error::Validation(format!(
            "expected {} weights, got {}",
            spec.m(),
            weights.len()
        )));
    }
    check_work_cap(spec.n(), t_grid.last().copied().unwrap_or(0), replicas, work_cap)?;
    let runs = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r as u64);
            let mut pair = [SpinConfig::all_minus(spec), SpinConfig::all_plus(spec)];
            let beta = spec.beta();
            let n = spec.n();
            let mut out = Vec::with_capacity(t_grid.len());
            let mut t_cur = 0usize;
            for &t in t_grid {
                for _ in t_cur..t {
                    let upd = UpdateRandomness::draw(n, &mut rng);
                    grand_coupling_step(&mut pair, beta, upd);
                }
                t_cur = t;
                let dist_w = pair[0]
                    .hamming_profile(&pair[1])
                    .iter()
                    .zip(weights)
                    .map(|(&d, w)| w * d as f64)
                    .sum();
                out.push((t, pair[1].s_vector(), dist_w));
            }
            out
        })
        .collect();
    Ok(runs)
}

/// Renders trajectories as CSV with header `replica,t,S_1,...,S_m[,dist_w]`.
/// Pass single-replica records as `(t, s, None)` and paired records as
/// `(t, s, Some(dist_w))`; the shape must be uniform across rows.
pub fn trajectory_csv(m: usize, rows: &[(usize, usize, Vec<f64>, Option<f64>)]) -> String {
    let mut out = String::from("replica,t");
    for i in 1..=m {
        out.push_str(&format!(",S_{}", i));
    }
    if rows.first().map_or(false, |r| r.3.is_some()) {
        out.push_str(",dist_w");
    }
    out.push('\n');
    for (replica, t, s, dist_w) in rows {
        out.push_str(&format!("{},{}", replica, t));
        for v in s {
            out.push_str(&format!(",{}", v));
        }
        if let Some(d) = dist_w {
            out.push_str(&format!(",{}", d));
        }
        out.push('\n');
    }
    out
}
