//! Couplings of two Glauber chains: the modified matching/update, the
//! three-phase magnetization coupling, and the post-magnetization coupling
//! that coalesces the 2m agreement coordinates while keeping the
//! magnetizations identical. Coalescence tails from the composed coupling
//! upper-bound the worst-case TV distance from good starts.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coordchain::CoordRef;
use crate::glauber::{glauber_step, replica_rng, SpinConfig, UpdateRandomness};
use crate::spectral::{PartitionSpec, SpectralData};

/// Two configurations on the same spec, coupled through the per-partition
/// modified matching (recomputed on demand from the current spins).
#[derive(Debug, Clone)]
pub struct MatchedPair {
    pub a: SpinConfig,
    pub b: SpinConfig,
    site_lo: Vec<usize>,
    np: Vec<usize>,
}

impl MatchedPair {
    pub fn new(spec: &PartitionSpec, a: SpinConfig, b: SpinConfig) -> Self {
        let np = spec.np_all();
        let mut site_lo = Vec::with_capacity(np.len());
        let mut lo = 0;
        for &k in &np {
            site_lo.push(lo);
            lo += k;
        }
        Self { a, b, site_lo, np }
    }

    pub fn coalesced_magnetizations(&self) -> bool {
        self.a.plus_counts() == self.b.plus_counts()
    }

    /// Per-partition matching: plus-sites paired to plus-sites in index
    /// order as far as counts allow, leftovers paired in index order.
    pub fn partition_matching(&self, i: usize) -> Vec<(usize, usize)> {
        let lo = self.site_lo[i];
        let hi = lo + self.np[i];
        let plus_a: Vec<usize> = (lo..hi).filter(|&v| self.a.get(v)).collect();
        let plus_b: Vec<usize> = (lo..hi).filter(|&v| self.b.get(v)).collect();
        let c = plus_a.len().min(plus_b.len());
        let mut pairs: Vec<(usize, usize)> = plus_a[..c]
            .iter()
            .zip(&plus_b[..c])
            .map(|(&x, &y)| (x, y))
            .collect();
        let mut left_a: Vec<usize> = plus_a[c..].to_vec();
        left_a.extend((lo..hi).filter(|&v| !self.a.get(v)));
        left_a.sort_unstable();
        let mut left_b: Vec<usize> = plus_b[c..].to_vec();
        left_b.extend((lo..hi).filter(|&v| !self.b.get(v)));
        left_b.sort_unstable();
        pairs.extend(left_a.into_iter().zip(left_b));
        pairs
    }

    /// Image of one site under the current modified matching.
    pub fn matched_site(&self, v: usize) -> usize {
        let i = self.a.partition_of(v);
        self.partition_matching(i)
            .into_iter()
            .find(|&(x, _)| x == v)
            .map(|(_, y)| y)
            .expect("site belongs to its partition's matching")
    }

    /// Full matching as a site -> site map; test helper.
    pub fn full_matching(&self) -> Vec<usize> {
        let mut f = vec![0usize; self.a.n()];
        for i in 0..self.np.len() {
            for (x, y) in self.partition_matching(i) {
                f[x] = y;
            }
        }
        f
    }
}

/// One modified monotone update: shared site `I` in the first chain, its
/// matched site in the second; the chain with the smaller field decides
/// `+1`, the larger `-1`, and the middle event is the discordant
/// `(-1, +1)` (or `(+1, -1)` when the field order is reversed).
pub fn modified_monotone_step(pair: &mut MatchedPair, beta: f64, upd: UpdateRandomness) {
    let i = pair.a.partition_of(upd.site);
    let w = pair.matched_site(upd.site);
    let ra = 0.5 * (1.0 + (beta * pair.a.field(i)).tanh());
    let rb = 0.5 * (1.0 + (beta * pair.b.field(i)).tanh());
    let (spin_a, spin_b) = if ra <= rb {
        if upd.u < ra {
            (true, true)
        } else if upd.u >= rb {
            (false, false)
        } else {
            (false, true)
        }
    } else if upd.u < rb {
        (true, true)
    } else if upd.u >= ra {
        (false, false)
    } else {
        (true, false)
    };
    pair.a.set(upd.site, spin_a);
    pair.b.set(w, spin_b);
}

/// Outcome of a coupling run; `None` step counts mean "not reached before
/// `t_max`" and set the censored flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingRecord {
    pub tau_mag: Option<usize>,
    pub tau_i_c: Vec<Option<usize>>,
    pub tau_tot_c: Option<usize>,
    pub censored: bool,
}

/// Magnetization coupling in three phases: plain monotone coupling until
/// `t_n = ceil(n ln n / (2 upsilon))`; then a split step (shared-site
/// modified update on partitions whose magnetization gap is at most one
/// site, independent-site update on the rest) until every gap is at most
/// one; then modified monotone updates until the magnetizations agree.
/// Returns the record plus the coupled pair at the stopping time so a
/// second coupling can continue from it.
pub fn mag_coupling_run_with_rng(
    sigma: SpinConfig,
    sigma2: SpinConfig,
    spec: &PartitionSpec,
    sd: &SpectralData,
    t_max: usize,
    rng: &mut ChaCha8Rng,
) -> (CouplingRecord, MatchedPair, usize) {
    if spec.beta() >= sd.beta_cr {
        eprintln!(
            "mag coupling: beta = {} is not below beta_cr = {}; coalescence may be very slow",
            spec.beta(),
            sd.beta_cr
        );
    }
    let n = spec.n();
    let nf = n as f64;
    let t_n = (nf * nf.ln() / (2.0 * sd.upsilon)).ceil() as usize;
    let m = spec.m();
    let mut pair = MatchedPair::new(spec, sigma, sigma2);

    let gap_over_one = |pair: &MatchedPair| -> bool {
        (0..m).any(|i| {
            let (u, v) = (pair.a.plus_counts()[i], pair.b.plus_counts()[i]);
            u.abs_diff(v) > 1
        })
    };

    for t in 0..=t_max {
        if pair.coalesced_magnetizations() {
            let rec = CouplingRecord {
                tau_mag: Some(t),
                tau_i_c: vec![None; m],
                tau_tot_c: None,
                censored: false,
            };
            return (rec, pair, t);
        }
        if t == t_max {
            break;
        }
        if t < t_n {
            // phase 1: plain monotone coupling, shared site and threshold
            let upd = UpdateRandomness::draw(n, rng);
            glauber_step(&mut pair.a, spec.beta(), upd);
            glauber_step(&mut pair.b, spec.beta(), upd);
        } else if gap_over_one(&pair) {
            // phase 2: split by per-partition magnetization gap
            let upd = UpdateRandomness::draw(n, rng);
            let i = pair.a.partition_of(upd.site);
            let gap = pair.a.plus_counts()[i].abs_diff(pair.b.plus_counts()[i]);
            if gap <= 1 {
                modified_monotone_step(&mut pair, spec.beta(), upd);
            } else {
                // chosen site is in the large-gap block: update the chains
                // at independent sites with independent thresholds, the
                // second site uniform over the pre-step large-gap block
                let large: Vec<usize> = (0..m)
                    .filter(|&j| {
                        pair.a.plus_counts()[j].abs_diff(pair.b.plus_counts()[j]) > 1
                    })
                    .collect();
                let total: usize = large.iter().map(|&j| pair.np[j]).sum();
                let mut k = rng.gen_range(0..total);
                let mut site2 = 0;
                for &j in &large {
                    if k < pair.np[j] {
                        site2 = pair.site_lo[j] + k;
                        break;
                    }
                    k -= pair.np[j];
                }
                let upd2 = UpdateRandomness { site: site2, u: rng.gen::<f64>() };
                glauber_step(&mut pair.a, spec.beta(), upd);
                glauber_step(&mut pair.b, spec.beta(), upd2);
            }
        } else {
            // phase 3: modified monotone coupling until coalescence
            let upd = UpdateRandomness::draw(n, rng);
            modified_monotone_step(&mut pair, spec.beta(), upd);
        }
    }
    let rec = CouplingRecord {
        tau_mag: None,
        tau_i_c: vec![None; m],
        tau_tot_c: None,
        censored: true,
    };
    (rec, pair, t_max)
}

pub fn mag_coupling_run(
    sigma: SpinConfig,
    sigma2: SpinConfig,
    spec: &PartitionSpec,
    sd: &SpectralData,
    t_max: usize,
    seed: u64,
) -> CouplingRecord {
    let mut rng = replica_rng(seed, 0);
    mag_coupling_run_with_rng(sigma, sigma2, spec, sd, t_max, &mut rng).0
}

/// Reference configuration whose plus-sites are the first `tilde_u_i` of
/// each partition, matching the coordinate-chain conventions.
pub fn reference_config(spec: &PartitionSpec, reference: &CoordRef) -> SpinConfig {
    let mut c = SpinConfig::all_minus(spec);
    let np = spec.np_all();
    let mut lo = 0;
    for (i, &k) in np.iter().enumerate() {
        for v in lo..lo + reference.tilde_u[i] {
            c.set(v, true);
        }
        lo += k;
    }
    c
}

/// Probability that the coordinate gap `R_i` decreases by one in one step
/// of the post-magnetization coupling, as a function of the coordinate
/// state. `rp` is the plus-update rate at the partition's field.
pub fn r_down_prob(
    tilde_u: usize,
    tilde_v: usize,
    u: usize,
    v: usize,
    r: i64,
    rp: f64,
    n: usize,
) -> f64 {
    let rm = 1.0 - rp;
    let (tu, tv, uf, vf, rf, nf) =
        (tilde_u as f64, tilde_v as f64, u as f64, v as f64, r as f64, n as f64);
    let mut p = 0.0;
    if tu - uf > 0.0 {
        p += (tu - uf) / nf * ((vf + rf) / (tu - uf + vf)) * rp;
    }
    if tv - vf > 0.0 {
        p += (tv - vf) / nf * ((uf + rf) / (tv - vf + uf)) * rm;
    }
    p
}

/// Probability that `R_i` increases by one in one step.
pub fn r_up_prob(
    tilde_u: usize,
    tilde_v: usize,
    u: usize,
    v: usize,
    r: i64,
    rp: f64,
    n: usize,
) -> f64 {
    let rm = 1.0 - rp;
    let (tu, tv, uf, vf, rf, nf) =
        (tilde_u as f64, tilde_v as f64, u as f64, v as f64, r as f64, n as f64);
    let mut p = 0.0;
    if uf > 0.0 {
        p += uf / nf * ((tv - vf - rf) / (uf + tv - vf)) * rm;
    }
    if vf > 0.0 {
        p += vf / nf * ((tu - uf - rf) / (tu - uf + vf)) * rp;
    }
    p
}

/// Per-site agreement classes of a configuration against a reference:
/// 0 = both plus, 1 = spin minus/ref plus, 2 = spin plus/ref minus,
/// 3 = both minus. Supports O(1) flips and uniform sampling.
struct Classes {
    class_of: Vec<u8>,
    members: Vec<[Vec<usize>; 4]>,
    pos: Vec<usize>,
    part: Vec<usize>,
}

impl Classes {
    fn new(config: &SpinConfig, reference: &SpinConfig, spec: &PartitionSpec) -> Self {
        let n = spec.n();
        let mut class_of = vec![0u8; n];
        let mut members: Vec<[Vec<usize>; 4]> =
            (0..spec.m()).map(|_| Default::default()).collect();
        let mut pos = vec![0usize; n];
        let mut part = vec![0usize; n];
        for v in 0..n {
            let i = config.partition_of(v);
            part[v] = i;
            let c = match (config.get(v), reference.get(v)) {
                (true, true) => 0u8,
                (false, true) => 1,
                (true, false) => 2,
                (false, false) => 3,
            };
            class_of[v] = c;
            pos[v] = members[i][c as usize].len();
            members[i][c as usize].push(v);
        }
        Self { class_of, members, pos, part }
    }

    fn class_sizes(&self, i: usize) -> [usize; 4] {
        [0, 1, 2, 3].map(|c| self.members[i][c].len())
    }

    /// Moves site `v` to the class matching its new spin.
    fn flip(&mut self, v: usize, new_plus: bool) {
        let old = self.class_of[v];
        let new = match old {
            0 | 1 => {
                if new_plus {
                    0
                } else {
                    1
                }
            }
            _ => {
                if new_plus {
                    2
                } else {
                    3
                }
            }
        };
        if new == old {
            return;
        }
        let i = self.part[v];
        let list = &mut self.members[i][old as usize];
        let p = self.pos[v];
        let last = *list.last().unwrap();
        list[p] = last;
        self.pos[last] = p;
        list.pop();
        self.pos[v] = self.members[i][new as usize].len();
        self.members[i][new as usize].push(v);
        self.class_of[v] = new;
    }

    /// Uniform site among the partition's sites in any of the classes.
    fn sample(&self, i: usize, classes: &[u8], rng: &mut impl Rng) -> usize {
        let total: usize = classes.iter().map(|&c| self.members[i][c as usize].len()).sum();
        let mut k = rng.gen_range(0..total);
        for &c in classes {
            let list = &self.members[i][c as usize];
            if k < list.len() {
                return list[k];
            }
            k -= list.len();
        }
        unreachable!("sample index within total")
    }
}

/// Post-magnetization coupling: requires equal magnetizations and keeps
/// them equal at every step while the agreement coordinates against the
/// reference coalesce partition by partition. Once a partition's gap
/// `R_i = U'_i - U_i` hits zero it is frozen by refining the site match
/// to exact agreement classes, which keeps the gap at zero.
pub fn post_mag_coupling_run(
    sigma: SpinConfig,
    sigma2: SpinConfig,
    reference: &CoordRef,
    spec: &PartitionSpec,
    t_max: usize,
    rng: &mut ChaCha8Rng,
) -> CouplingRecord {
    assert_eq!(
        sigma.plus_counts(),
        sigma2.plus_counts(),
        "post-magnetization coupling needs equal magnetizations"
    );
    let refc = reference_config(spec, reference);
    let m = spec.m();
    let n = spec.n();
    let beta = spec.beta();
    let mut a = sigma;
    let mut b = sigma2;
    let mut ca = Classes::new(&a, &refc, spec);
    let mut cb = Classes::new(&b, &refc, spec);

    let mut tau: Vec<Option<usize>> = vec![None; m];
    let mut frozen = vec![false; m];
    let mut open = 0usize;
    for i in 0..m {
        if ca.class_sizes(i)[0] == cb.class_sizes(i)[0] {
            tau[i] = Some(0);
            frozen[i] = true;
        } else {
            open += 1;
        }
    }

    for t in 0..t_max {
        if open == 0 {
            break;
        }
        let upd = UpdateRandomness::draw(n, rng);
        let i = a.partition_of(upd.site);
        let rp = 0.5 * (1.0 + (beta * a.field(i)).tanh());
        let spin = upd.u < rp;
        let old_spin = a.get(upd.site);
        let site2 = if frozen[i] {
            // same exact agreement class: coordinate moves mirror exactly
            cb.sample(i, &[ca.class_of[upd.site]], rng)
        } else {
            // any site with the same current spin
            let classes: [u8; 2] = if old_spin { [0, 2] } else { [1, 3] };
            cb.sample(i, &classes, rng)
        };
        a.set(upd.site, spin);
        ca.flip(upd.site, spin);
        b.set(site2, spin);
        cb.flip(site2, spin);
        assert_eq!(a.plus_counts(), b.plus_counts(), "magnetizations must stay equal");
        if !frozen[i] && ca.class_sizes(i)[0] == cb.class_sizes(i)[0] {
            tau[i] = Some(t + 1);
            frozen[i] = true;
            open -= 1;
        }
    }

    let tau_tot = if tau.iter().all(|t| t.is_some()) {
        tau.iter().map(|t| t.unwrap()).max()
    } else {
        None
    };
    CouplingRecord {
        tau_mag: Some(0),
        tau_i_c: tau,
        tau_tot_c: tau_tot,
        censored: tau_tot.is_none(),
    }
}

/// Empirical tail of the total coalescence time for the composed coupling
/// (magnetization coupling, then post-magnetization coupling against the
/// given good reference), starting from the reference configuration and
/// the all-plus configuration. Returns `(t, tail, ci_lo, ci_hi)` rows with
/// normal-approximation 95% intervals; runs censored at the last grid time
/// count as not yet coalesced everywhere.
pub fn upper_bound_curve(
    spec: &PartitionSpec,
    sd: &SpectralData,
    reference: &CoordRef,
    t_grid: &[usize],
    replicas: usize,
    seed: u64,
) -> Vec<(usize, f64, f64, f64)> {
    let t_max = *t_grid.last().expect("non-empty time grid");
    let times: Vec<Option<usize>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r as u64);
            let sigma = reference_config(spec, reference);
            let sigma2 = SpinConfig::all_plus(spec);
            let (rec, pair, t_used) =
                mag_coupling_run_with_rng(sigma, sigma2, spec, sd, t_max, &mut rng);
            let tau_mag = rec.tau_mag?;
            debug_assert_eq!(tau_mag, t_used);
            let rec2 = post_mag_coupling_run(
                pair.a,
                pair.b,
                reference,
                spec,
                t_max - tau_mag,
                &mut rng,
            );
            rec2.tau_tot_c.map(|d| tau_mag + d)
        })
        .collect();
    t_grid
        .iter()
        .map(|&t| {
            let exceed = times.iter().filter(|x| x.map_or(true, |tc| tc > t)).count();
            let p = exceed as f64 / replicas as f64;
            let se = (p * (1.0 - p) / replicas as f64).sqrt();
            (t, p, (p - 1.96 * se).max(0.0), (p + 1.96 * se).min(1.0))
        })
        .collect()
}
