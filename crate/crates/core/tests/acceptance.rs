//! End-to-end acceptance checks. Each test prints a single PASS/FAIL line
//! for its criterion; run with `-- --nocapture` to see them on success.

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use mpising::bounds::{critical_beta_scan, conductance_cut, lower_bound_at};
use mpising::coordchain::{CoordKernel, CoordRef, FullChainOracle};
use mpising::coupling::{
    mag_coupling_run_with_rng, post_mag_coupling_run, r_down_prob, r_up_prob, reference_config,
};
use mpising::glauber::{replica_rng, SpinConfig};
use mpising::magchain::MagKernel;
use mpising::spectral::{perron, verify_identities};
use mpising::PartitionSpec;

fn report(criterion: &str, pass: bool) {
    println!("criterion {}: {}", criterion, if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {} failed", criterion);
}

#[test]
fn criterion_1_spectral_identities() {
    let cases: Vec<Vec<Ratio<i64>>> = vec![
        vec![Ratio::new(1, 1)],
        vec![Ratio::new(1, 2), Ratio::new(1, 2)],
        vec![Ratio::new(1, 4), Ratio::new(3, 4)],
        vec![Ratio::new(1, 8), Ratio::new(7, 8)],
        vec![Ratio::new(1, 3), Ratio::new(1, 3), Ratio::new(1, 3)],
        vec![Ratio::new(1, 4), Ratio::new(1, 4), Ratio::new(1, 2)],
        vec![Ratio::new(1, 8), Ratio::new(3, 8), Ratio::new(1, 2)],
    ];
    let mut ok = true;
    for p in cases {
        let denom: i64 = p.iter().map(|r| *r.denom()).product();
        let n = (24 / denom.min(24)).max(1) as usize * denom as usize;
        let spec = PartitionSpec::new(p, n, 1.0).unwrap();
        let sd = perron(&spec).unwrap();
        let rep = verify_identities(&sd, &spec, 1e-10).unwrap();
        ok &= rep.all_pass();
    }
    let equal = perron(&PartitionSpec::equal(2, 8, 1.0).unwrap()).unwrap();
    ok &= (equal.beta_cr - 2.0).abs() < 1e-10;
    let skew = perron(
        &PartitionSpec::new(vec![Ratio::new(1, 4), Ratio::new(3, 4)], 8, 1.0).unwrap(),
    )
    .unwrap();
    ok &= (skew.beta_cr - 4.0 / 3.0_f64.sqrt()).abs() < 1e-10;
    report("1 spectral identities", ok);
}

#[test]
fn criterion_2_oracle_equivalence() {
    let mut worst: f64 = 0.0;
    for n in [8usize, 10, 12] {
        for beta in [0.0, 1.0, 3.0] {
            let spec = PartitionSpec::equal(2, n, beta).unwrap();
            let oracle = FullChainOracle::new(&spec).unwrap();
            let mk = MagKernel::new(&spec).unwrap();

            // stationary law under lumping
            let mu = oracle.stationary();
            let pi = mk.stationary();
            let lumped = oracle.lump_to_mag(&mu, &mk);
            for (a, b) in lumped.iter().zip(&pi) {
                worst = worst.max((a - b).abs());
            }

            // one-step kernels agree fiber by fiber (start anywhere on a fiber)
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            for _ in 0..20 {
                let mask = rng.gen_range(0..oracle.n_states());
                let mut d = vec![0.0; oracle.n_states()];
                d[mask] = 1.0;
                let start_mag = oracle.lump_to_mag(&d, &mk);
                let start_u = {
                    let idx = start_mag.iter().position(|&w| w > 0.5).unwrap();
                    let mut u = vec![0usize; 2];
                    mk.space.unindex(idx, &mut u);
                    u
                };
                oracle.evolve(&mut d, 1);
                let full_next = oracle.lump_to_mag(&d, &mk);
                let mut lumped_next = mk.point_mass(&start_u);
                mk.evolve(&mut lumped_next, 1);
                for (a, b) in full_next.iter().zip(&lumped_next) {
                    worst = worst.max((a - b).abs());
                }
            }

            // TV curves: magnetization chain and coordinate chain
            let grid: Vec<usize> = vec![0, 1, 2, 4, 8, 16, 32, 64, 128];
            let full = oracle.tv_curve(oracle.all_plus(), &grid);
            let lumped_curve = mk.tv_curve(&mk.all_plus(), &grid);
            for (a, b) in full.iter().zip(&lumped_curve) {
                worst = worst.max((a.1 - b.1).abs());
            }
            let reference = CoordRef::balanced(&spec);
            let ck = CoordKernel::new(&spec, reference.clone()).unwrap();
            let start = ck.start_at_reference();
            let mask = oracle.mask_with_coords(&start, &reference);
            let coord_curve = ck.exact_tv_full(&start, &grid);
            let full_curve = oracle.tv_curve(mask, &grid);
            for (a, b) in coord_curve.iter().zip(&full_curve) {
                worst = worst.max((a.1 - b.1).abs());
            }
        }
    }
    println!("criterion 2 worst residual {:e}", worst);
    report("2 oracle equivalence", worst < 1e-10);
}

#[test]
fn criterion_3_drift_identities() {
    let mut ok = true;
    // magnetization drift vs one-step kernel expectation
    let spec = PartitionSpec::new(
        vec![Ratio::new(1, 4), Ratio::new(1, 4), Ratio::new(1, 2)],
        24,
        1.2,
    )
    .unwrap();
    let kernel = MagKernel::new(&spec).unwrap();
    let np = spec.np_all();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let u: Vec<usize> = np.iter().map(|&k| rng.gen_range(0..=k)).collect();
        let drift = kernel.drift(&u);
        let from_kernel = kernel.drift_from_kernel(&u);
        for (a, b) in drift.iter().zip(&from_kernel) {
            ok &= (a - b).abs() <= 1e-14;
        }
    }
    // coordinate-gap drift identity
    for _ in 0..1000 {
        let tu = rng.gen_range(2..50usize);
        let tv = rng.gen_range(2..50usize);
        let n = tu + tv + rng.gen_range(0..40usize);
        let u = rng.gen_range(0..=tu);
        let v = rng.gen_range(0..=tv);
        let r_lo = -(u.min(v) as i64);
        let r_hi = ((tu - u).min(tv - v)) as i64;
        if r_lo > r_hi {
            continue;
        }
        let r = rng.gen_range(r_lo..=r_hi);
        let rp = rng.gen::<f64>();
        let drift = r_up_prob(tu, tv, u, v, r, rp, n) - r_down_prob(tu, tv, u, v, r, rp, n);
        ok &= (drift + r as f64 / n as f64).abs() <= 1e-14;
    }
    report("3 drift identities", ok);
}

#[test]
fn criterion_4_variance_bound() {
    let mut ok = true;
    for n in [64usize, 128, 256] {
        let spec = PartitionSpec::equal(2, n, 1.0).unwrap();
        let sd = perron(&spec).unwrap();
        let bound = 4.0 * 2.0 * sd.a[0] * sd.a[0] / (sd.upsilon * sd.a[1] * sd.a[1]);
        let nf = n as f64;
        let t_n = nf * nf.ln() / (2.0 * sd.upsilon);
        let horizon = (5.0 * t_n).ceil() as usize;
        let kernel = MagKernel::new(&spec).unwrap();
        let grid: Vec<usize> = (0..=horizon).collect();
        let traj = kernel.variance_trajectory(&kernel.all_plus(), &grid);
        let peak = traj
            .iter()
            .map(|&(_, sum_var)| nf * sum_var)
            .fold(0.0, f64::max);
        println!("criterion 4: n={} peak n*sum_var={:.4} bound={:.4}", n, peak, bound);
        ok &= peak <= bound;
    }
    report("4 variance bound", ok);
}

#[test]
fn criterion_5_cutoff_trend() {
    let ladder = [64usize, 128, 256, 512];
    let mut t25s = Vec::new();
    let mut t75s = Vec::new();
    for &n in &ladder {
        let spec = PartitionSpec::equal(2, n, 1.0).unwrap();
        let kernel = MagKernel::new(&spec).unwrap();
        let nf = n as f64;
        let t_max = (6.0 * nf * nf.ln()).ceil() as usize;
        let times = kernel
            .mixing_times(&kernel.all_plus(), &[0.25, 0.75], t_max)
            .unwrap();
        println!("criterion 5: n={} t_mix(.25)={} t_mix(.75)={}", n, times[0], times[1]);
        t25s.push(times[0] as f64);
        t75s.push(times[1] as f64);
    }
    let ratios: Vec<f64> = t25s.iter().zip(&t75s).map(|(a, b)| a / b).collect();
    let a_ok = ratios.windows(2).all(|w| w[1] < w[0]);

    let scaled: Vec<f64> = ladder
        .iter()
        .zip(&t25s)
        .map(|(&n, t)| t / (n as f64 * (n as f64).ln()))
        .collect();
    let in_range = scaled.iter().all(|&x| (0.8..=1.6).contains(&x));
    let spread_shrinks = scaled
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .collect::<Vec<_>>()
        .windows(2)
        .all(|d| d[1] <= d[0]);
    let b_ok = in_range && spread_shrinks;

    let windows_n: Vec<f64> = ladder
        .iter()
        .zip(t25s.iter().zip(&t75s))
        .map(|(&n, (a, b))| (a - b) / n as f64)
        .collect();
    let wmax = windows_n.iter().fold(0.0f64, |a, &b| a.max(b));
    let wmin = windows_n.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let windows_nlogn: Vec<f64> = ladder
        .iter()
        .zip(t25s.iter().zip(&t75s))
        .map(|(&n, (a, b))| (a - b) / (n as f64 * (n as f64).ln()))
        .collect();
    let c1_ok = wmax / wmin <= 2.0;
    let c2_ok = windows_nlogn[3] * 2.0 <= windows_nlogn[0];

    println!(
        "criterion 5: ratios {:?} scaled {:?} window/n {:?} window/(n ln n) {:?}",
        ratios, scaled, windows_n, windows_nlogn
    );
    println!(
        "criterion 5 clauses: (a) ratio strictly decreasing: {} | (b) scaled in [0.8,1.6] \
         with shrinking spread: {} | (c) window/n within factor 2: {} | (c) window/(n ln n) \
         shrinks >= 2x (max possible for a Theta(n) window over this ladder is \
         ln 512 / ln 64 = 1.5x): {}",
        a_ok, b_ok, c1_ok, c2_ok
    );
    report("5 cutoff trend", a_ok && b_ok && c1_ok && c2_ok);
}

#[test]
fn criterion_6_lower_bound_engine() {
    let spec = PartitionSpec::equal(2, 256, 1.0).unwrap();
    let sd = perron(&spec).unwrap();
    let mut ok = true;
    let mut by_gamma = Vec::new();
    for gamma in [1.0, 2.0, 3.0, 4.0] {
        for zeta in [0.25, 0.5, 0.75] {
            let res = lower_bound_at(&spec, &sd, gamma, Some(zeta)).unwrap();
            ok &= res.tv_lower <= res.tv_exact + 1e-12;
            if (zeta - 0.5).abs() < 1e-12 {
                by_gamma.push(res.tv_lower);
            }
        }
    }
    println!("criterion 6: tv_lower by gamma {:?}", by_gamma);
    ok &= by_gamma[3] > by_gamma[0];
    report("6 lower bound engine", ok);
}

#[test]
fn criterion_7_coupling_upper_bound() {
    let replicas = 2000usize;
    let mut ok = true;
    for n in [128usize, 256] {
        let spec = PartitionSpec::equal(2, n, 1.0).unwrap();
        let sd = perron(&spec).unwrap();
        let nf = n as f64;
        let t_n = (nf * nf.ln() / (2.0 * sd.upsilon)).ceil() as usize;
        let t_max = t_n + 17 * n;

        // magnetization coalescence tails from the extreme starts
        let taus: Vec<Option<usize>> = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let mut rng = replica_rng(71, r as u64);
                mag_coupling_run_with_rng(
                    SpinConfig::all_plus(&spec),
                    SpinConfig::all_minus(&spec),
                    &spec,
                    &sd,
                    t_max,
                    &mut rng,
                )
                .0
                .tau_mag
            })
            .collect();
        let mut prev = f64::INFINITY;
        let mut chat = Vec::new();
        for gamma in [1.0, 4.0, 9.0, 16.0] {
            let cut = t_n + (gamma * nf) as usize;
            let tail = taus.iter().filter(|t| t.map_or(true, |x| x > cut)).count() as f64
                / replicas as f64;
            let c = gamma.sqrt() * tail;
            chat.push(c);
            ok &= c <= prev + 1e-12;
            prev = c;
        }
        println!("criterion 7: n={} sqrt(gamma)*tail {:?}", n, chat);

        // total coalescence tail of the composed coupling
        let reference = CoordRef::balanced(&spec);
        let cut = t_n + 10 * n;
        let tot: Vec<Option<usize>> = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let mut rng = replica_rng(72, r as u64);
                let sigma = reference_config(&spec, &reference);
                let sigma2 = SpinConfig::all_plus(&spec);
                let (rec, pair, _) =
                    mag_coupling_run_with_rng(sigma, sigma2, &spec, &sd, t_max, &mut rng);
                let tau_mag = rec.tau_mag?;
                post_mag_coupling_run(pair.a, pair.b, &reference, &spec, t_max - tau_mag, &mut rng)
                    .tau_tot_c
                    .map(|d| tau_mag + d)
            })
            .collect();
        let tail = tot.iter().filter(|t| t.map_or(true, |x| x > cut)).count() as f64
            / replicas as f64;
        let se = (tail * (1.0 - tail) / replicas as f64).sqrt();
        println!(
            "criterion 7: n={} P(tau_tot,c > t_n + 10n) = {:.4} (95% CI +-{:.4})",
            n,
            tail,
            1.96 * se
        );
        ok &= tail + 1.96 * se <= 0.35;
    }
    report("7 coupling upper bound", ok);
}

#[test]
fn criterion_8_low_temperature() {
    // exact conductance decay: ln(1/phi_A) linear in n with R^2 > 0.99
    let ladder = [16usize, 32, 64, 128];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut last = None;
    for &n in &ladder {
        let spec = PartitionSpec::equal(2, n, 3.0).unwrap();
        let res = conductance_cut(&spec).unwrap();
        xs.push(n as f64);
        ys.push((1.0 / res.phi_a).ln());
        last = Some(res);
    }
    let mx = xs.iter().sum::<f64>() / 4.0;
    let my = ys.iter().sum::<f64>() / 4.0;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    println!("criterion 8: slope={:.4} R^2={:.6}", slope, r2);
    let mut ok = slope > 0.0 && r2 > 0.99;

    // the mixing-time bound dwarfs the high-temperature timescale n ln n
    let n = 128f64;
    ok &= last.unwrap().tmix_lower > 10.0 * n * n.ln();

    // profile root recovers the spectral critical beta
    for p in [
        vec![Ratio::new(1, 2), Ratio::new(1, 2)],
        vec![Ratio::new(1, 4), Ratio::new(3, 4)],
        vec![Ratio::new(1, 4), Ratio::new(1, 4), Ratio::new(1, 2)],
        vec![Ratio::new(1, 8), Ratio::new(3, 8), Ratio::new(1, 2)],
    ] {
        let spec = PartitionSpec::new(p, 8, 1.0).unwrap();
        let sd = perron(&spec).unwrap();
        let root = critical_beta_scan(&spec, &sd, 1e-3, sd.beta_cr * 4.0).unwrap();
        ok &= (root - sd.beta_cr).abs() <= 1e-8;
    }
    report("8 low temperature", ok);
}

#[test]
fn criterion_9_determinism() {
    // byte-identical rerun of a stochastic subcommand; exercised through
    // the real binary
    let bin = env!("CARGO_BIN_EXE_mpising");
    let run = || {
        std::process::Command::new(bin)
            .args([
                "coupling", "--m", "2", "--beta", "1", "--n", "48", "--t-max", "2000",
                "--replicas", "64", "--seed", "9",
            ])
            .output()
            .expect("binary runs")
    };
    let a = run();
    let b = run();
    let ok = a.status.success() && a.stdout == b.stdout && !a.stdout.is_empty();
    report("9 determinism", ok);
}
