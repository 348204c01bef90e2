//! Command-line front end: parses experiment configs, dispatches to the
//! analysis modules, and writes CSV/JSON results with reproducibility
//! headers. Exit codes: 0 success, 1 runtime failure, 2 invalid config.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use num_rational::Ratio;

use crate::bounds::{conductance_cut, critical_beta_scan, lower_bound_at};
use crate::coordchain::{CoordKernel, CoordRef, FullChainOracle};
use crate::coupling::{mag_coupling_run_with_rng, post_mag_coupling_run, reference_config};
use crate::error::{Error, Result};
use crate::glauber::{replica_rng, SpinConfig};
use crate::magchain::{MagKernel, DEFAULT_STATE_CAP};
use crate::spectral::{perron, verify_identities, PartitionSpec};

#[derive(Parser, Debug)]
#[command(name = "mpising", version, about = "Glauber dynamics on complete multipartite graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Perron data of the contraction matrix and its identity checks (JSON)
    Spectral(CommonArgs),
    /// Exact TV-to-stationarity curve of the magnetization chain (CSV)
    Tv(CommonArgs),
    /// Mixing times at eps = 0.25/0.75 across an n-ladder (CSV)
    CutoffScan(CommonArgs),
    /// Coalescence times of the composed coupling, one row per replica (CSV)
    Coupling(CommonArgs),
    /// TV lower bound from the distinguishing statistic, per gamma (CSV)
    Lower(CommonArgs),
    /// Conductance of the positive-magnetization cut across n (CSV)
    Conductance(CommonArgs),
    /// Lumped chains vs the 2^n brute-force oracle at small n
    OracleCheck(CommonArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Number of partitions (equal proportions unless --p is given)
    #[arg(long)]
    pub m: Option<usize>,
    /// Partition proportions as fractions, e.g. 1/4,3/4
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Vertex count
    #[arg(long)]
    pub n: Option<usize>,
    /// Doubling ladder start:stop, e.g. 16:128
    #[arg(long = "n-ladder")]
    pub n_ladder: Option<String>,
    #[arg(long = "t-max")]
    pub t_max: Option<usize>,
    /// Comma-separated gamma values
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// State-space cap for exact kernels (number of lumped states)
    #[arg(long = "mem-cap")]
    pub mem_cap: Option<usize>,
    /// key=value config file; explicit flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl CommonArgs {
    /// Fills unset fields from a key=value config file.
    fn merge_config(&mut self) -> Result<()> {
        let Some(path) = &self.config else { return Ok(()) };
        let text = std::fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Validation(format!("config line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim().to_string());
            let bad = |what: &str| Error::Validation(format!("config {}: bad {}", key, what));
            match key {
                "m" => fill(&mut self.m, value.parse().map_err(|_| bad("integer"))?),
                "p" => fill(&mut self.p, value),
                "beta" => fill(&mut self.beta, value.parse().map_err(|_| bad("real"))?),
                "n" => fill(&mut self.n, value.parse().map_err(|_| bad("integer"))?),
                "n-ladder" => fill(&mut self.n_ladder, value),
                "t-max" => fill(&mut self.t_max, value.parse().map_err(|_| bad("integer"))?),
                "gamma" => fill(&mut self.gamma, value),
                "zeta" => fill(&mut self.zeta, value.parse().map_err(|_| bad("real"))?),
                "replicas" => fill(&mut self.replicas, value.parse().map_err(|_| bad("integer"))?),
                "seed" => fill(&mut self.seed, value.parse().map_err(|_| bad("integer"))?),
                "out" => fill(&mut self.out, PathBuf::from(value)),
                "mem-cap" => fill(&mut self.mem_cap, value.parse().map_err(|_| bad("integer"))?),
                other => {
                    return Err(Error::Validation(format!("unknown config key '{}'", other)))
                }
            }
        }
        Ok(())
    }

    fn proportions(&self) -> Result<Vec<Ratio<i64>>> {
        match (&self.p, self.m) {
            (Some(p), m) => {
                let parts: Result<Vec<Ratio<i64>>> = p
                    .split(',')
                    .map(|tok| {
                        Ratio::<i64>::from_str(tok.trim()).map_err(|_| {
                            Error::Validation(format!("cannot parse proportion '{}'", tok))
                        })
                    })
                    .collect();
                let parts = parts?;
                if let Some(m) = m {
                    if m != parts.len() {
                        return Err(Error::Validation(format!(
                            "--m {} disagrees with {} proportions",
                            m,
                            parts.len()
                        )));
                    }
                }
                Ok(parts)
            }
            (None, Some(m)) => {
                if m == 0 {
                    return Err(Error::Validation("m must be positive".into()));
                }
                Ok(vec![Ratio::new(1, m as i64); m])
            }
            (None, None) => Err(Error::Validation("need --m or --p".into())),
        }
    }

    fn spec_at(&self, n: usize) -> Result<PartitionSpec> {
        let beta = self
            .beta
            .ok_or_else(|| Error::Validation("need --beta".into()))?;
        PartitionSpec::new(self.proportions()?, n, beta)
    }

    fn spec(&self) -> Result<PartitionSpec> {
        let n = self.n.ok_or_else(|| Error::Validation("need --n".into()))?;
        self.spec_at(n)
    }

    fn ladder(&self) -> Result<Vec<usize>> {
        if let Some(s) = &self.n_ladder {
            let (a, b) = s
                .split_once(':')
                .ok_or_else(|| Error::Validation("n-ladder must be start:stop".into()))?;
            let (start, stop): (usize, usize) = (
                a.parse().map_err(|_| Error::Validation("bad ladder start".into()))?,
                b.parse().map_err(|_| Error::Validation("bad ladder stop".into()))?,
            );
            if start == 0 || stop < start {
                return Err(Error::Validation("need 0 < start <= stop".into()));
            }
            let mut out = Vec::new();
            let mut n = start;
            while n <= stop {
                out.push(n);
                n *= 2;
            }
            Ok(out)
        } else if let Some(n) = self.n {
            Ok(vec![n])
        } else {
            Err(Error::Validation("need --n or --n-ladder".into()))
        }
    }

    fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Validation("stochastic runs need an explicit --seed".into()))
    }

    fn gammas(&self) -> Result<Vec<f64>> {
        match &self.gamma {
            None => Ok(vec![1.0, 2.0, 3.0, 4.0]),
            Some(s) => s
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Validation(format!("bad gamma '{}'", tok)))
                })
                .collect(),
        }
    }

    fn cap(&self) -> usize {
        self.mem_cap.unwrap_or(DEFAULT_STATE_CAP)
    }

    /// Stable one-line restatement of the effective config for headers.
    fn describe(&self, cmd: &str) -> String {
        let mut s = format!("cmd={}", cmd);
        let mut add = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                let _ = write!(s, " {}={}", k, v);
            }
        };
        add("m", self.m.map(|v| v.to_string()));
        add("p", self.p.clone());
        add("beta", self.beta.map(|v| v.to_string()));
        add("n", self.n.map(|v| v.to_string()));
        add("n-ladder", self.n_ladder.clone());
        add("t-max", self.t_max.map(|v| v.to_string()));
        add("gamma", self.gamma.clone());
        add("zeta", self.zeta.map(|v| v.to_string()));
        add("replicas", self.replicas.map(|v| v.to_string()));
        add("seed", self.seed.map(|v| v.to_string()));
        add("mem-cap", self.mem_cap.map(|v| v.to_string()));
        s
    }
}

fn fill<T>(slot: &mut Option<T>, value: T) {
    if slot.is_none() {
        *slot = Some(value);
    }
}

fn header(args: &CommonArgs, cmd: &str) -> String {
    format!(
        "# mpising {}\n# {}\n",
        env!("CARGO_PKG_VERSION"),
        args.describe(cmd)
    )
}

fn emit(args: &CommonArgs, text: &str) -> Result<()> {
    match &args.out {
        Some(path) => {
            std::fs::write(path, text)?;
        }
        None => print!("{}", text),
    }
    Ok(())
}

fn default_t_max(spec: &PartitionSpec, upsilon: f64) -> usize {
    let n = spec.n() as f64;
    // ten mixing-time scales past the cutoff window
    (10.0 * n * n.ln() / (2.0 * upsilon.max(0.05)) + 10.0 * n).ceil() as usize
}

fn cmd_spectral(args: &CommonArgs) -> Result<()> {
    let spec = args.spec()?;
    let sd = perron(&spec)?;
    let report = verify_identities(&sd, &spec, 1e-10)?;
    let beta_cr = if sd.beta_cr.is_finite() {
        serde_json::json!(sd.beta_cr)
    } else {
        serde_json::json!("inf")
    };
    let checks: Vec<_> = report
        .checks
        .iter()
        .map(|c| serde_json::json!({"name": c.name, "residual": c.residual, "pass": c.pass}))
        .collect();
    let doc = serde_json::json!({
        "schema": "mpising.spectral.v1",
        "m": spec.m(),
        "n": spec.n(),
        "beta": spec.beta(),
        "lambda": sd.lambda,
        "g": sd.g,
        "upsilon": sd.upsilon,
        "beta_cr": beta_cr,
        "a": sd.a,
        "identities": checks,
    });
    let mut text = header(args, "spectral");
    text.push_str(&serde_json::to_string_pretty(&doc).expect("serializable"));
    text.push('\n');
    emit(args, &text)?;
    if !report.checks.iter().all(|c| c.pass) {
        return Err(Error::NonConvergence {
            iterations: 0,
            residual: report
                .checks
                .iter()
                .map(|c| c.residual)
                .fold(0.0, f64::max),
        });
    }
    Ok(())
}

fn cmd_tv(args: &CommonArgs) -> Result<()> {
    let spec = args.spec()?;
    let sd = perron(&spec)?;
    let t_max = args.t_max.unwrap_or_else(|| default_t_max(&spec, sd.upsilon));
    let kernel = MagKernel::with_cap(&spec, args.cap())?;
    let pi = kernel.stationary();
    let mut dist = kernel.point_mass(&kernel.all_plus());
    let mut text = header(args, "tv");
    text.push_str("t,tv\n");
    for t in 0..=t_max {
        if t > 0 {
            kernel.evolve(&mut dist, 1);
        }
        let _ = writeln!(text, "{},{:.12e}", t, MagKernel::tv(&dist, &pi));
    }
    emit(args, &text)
}

fn cmd_cutoff_scan(args: &CommonArgs) -> Result<()> {
    let mut text = header(args, "cutoff-scan");
    text.push_str("n,t_mix_25,t_mix_75,ratio,t_mix_25_over_t_n,window_over_n,window_over_n_ln_n\n");
    for n in args.ladder()? {
        let spec = args.spec_at(n)?;
        let sd = perron(&spec)?;
        let t_max = args.t_max.unwrap_or_else(|| default_t_max(&spec, sd.upsilon));
        let kernel = MagKernel::with_cap(&spec, args.cap())?;
        let times = kernel.mixing_times(&kernel.all_plus(), &[0.25, 0.75], t_max)?;
        let (t25, t75) = (times[0], times[1]);
        let nf = n as f64;
        let t_n = nf * nf.ln() / (2.0 * sd.upsilon);
        let window = t25 as f64 - t75 as f64;
        let _ = writeln!(
            text,
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            n,
            t25,
            t75,
            t25 as f64 / t75 as f64,
            t25 as f64 / t_n,
            window / nf,
            window / (nf * nf.ln())
        );
    }
    emit(args, &text)
}

fn cmd_coupling(args: &CommonArgs) -> Result<()> {
    let spec = args.spec()?;
    let sd = perron(&spec)?;
    let seed = args.seed()?;
    let replicas = args.replicas.unwrap_or(200);
    let t_max = args.t_max.unwrap_or_else(|| default_t_max(&spec, sd.upsilon));
    let reference = CoordRef::balanced(&spec);
    let mut text = header(args, "coupling");
    text.push_str("replica,tau_mag,tau_tot,censored\n");
    use rayon::prelude::*;
    let rows: Vec<(Option<usize>, Option<usize>)> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r as u64);
            let sigma = reference_config(&spec, &reference);
            let sigma2 = SpinConfig::all_plus(&spec);
            let (rec, pair, _) =
                mag_coupling_run_with_rng(sigma, sigma2, &spec, &sd, t_max, &mut rng);
            let Some(tau_mag) = rec.tau_mag else { return (None, None) };
            let rec2 = post_mag_coupling_run(
                pair.a,
                pair.b,
                &reference,
                &spec,
                t_max - tau_mag,
                &mut rng,
            );
            (Some(tau_mag), rec2.tau_tot_c.map(|d| tau_mag + d))
        })
        .collect();
    let show = |x: Option<usize>| x.map_or("inf".to_string(), |v| v.to_string());
    for (r, (tau_mag, tau_tot)) in rows.iter().enumerate() {
        let censored = tau_tot.is_none() as u8;
        let _ = writeln!(text, "{},{},{},{}", r, show(*tau_mag), show(*tau_tot), censored);
    }
    emit(args, &text)
}

fn cmd_lower(args: &CommonArgs) -> Result<()> {
    let spec = args.spec()?;
    let sd = perron(&spec)?;
    let mut text = header(args, "lower");
    text.push_str("n,beta,gamma,zeta,t_star,r,tv_lower,tv_exact\n");
    for gamma in args.gammas()? {
        let res = lower_bound_at(&spec, &sd, gamma, args.zeta)?;
        let _ = writeln!(
            text,
            "{},{},{},{:.9},{},{:.9},{:.9},{:.9}",
            spec.n(),
            spec.beta(),
            gamma,
            res.zeta,
            res.t_star,
            res.r,
            res.tv_lower,
            res.tv_exact
        );
    }
    emit(args, &text)
}

fn cmd_conductance(args: &CommonArgs) -> Result<()> {
    let mut text = header(args, "conductance");
    text.push_str("n,beta,phi_A,mu_A,mu_B,tmix_lower\n");
    for n in args.ladder()? {
        let spec = args.spec_at(n)?;
        let res = conductance_cut(&spec)?;
        let _ = writeln!(
            text,
            "{},{},{:.12e},{:.9},{:.9},{:.6e}",
            n,
            spec.beta(),
            res.phi_a,
            res.mu_a,
            res.mu_b,
            res.tmix_lower
        );
    }
    emit(args, &text)
}

fn cmd_oracle_check(args: &CommonArgs) -> Result<()> {
    let n = args.n.unwrap_or(8);
    if n > 14 {
        return Err(Error::Validation(format!(
            "oracle-check enumerates 2^n states; n = {} is too large (max 14)",
            n
        )));
    }
    let betas = match args.beta {
        Some(b) => vec![b],
        None => vec![0.0, 1.0, 3.0],
    };
    let mut text = header(args, "oracle-check");
    let mut all_ok = true;
    for beta in betas {
        let spec = PartitionSpec::new(args.proportions().unwrap_or_else(|_| {
            vec![Ratio::new(1, 2), Ratio::new(1, 2)]
        }), n, beta)?;
        let oracle = FullChainOracle::new(&spec)?;
        let mk = MagKernel::new(&spec)?;
        let mut worst: f64 = 0.0;

        // stationary law agreement under lumping
        let mu = oracle.stationary();
        let lumped = oracle.lump_to_mag(&mu, &mk);
        let pi = mk.stationary();
        worst = worst.max(
            lumped.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        );

        // TV curves from the all-plus start
        let grid: Vec<usize> = (0..8).map(|k| k * k).collect();
        let full = oracle.tv_curve(oracle.all_plus(), &grid);
        let lumped_curve = mk.tv_curve(&mk.all_plus(), &grid);
        for (a, b) in full.iter().zip(&lumped_curve) {
            worst = worst.max((a.1 - b.1).abs());
        }

        // coordinate chain against the same oracle
        let reference = CoordRef::balanced(&spec);
        let ck = CoordKernel::new(&spec, reference.clone())?;
        let start = ck.start_at_reference();
        let mask = oracle.mask_with_coords(&start, &reference);
        let coord_curve = ck.exact_tv_full(&start, &grid);
        let full_curve = oracle.tv_curve(mask, &grid);
        for (a, b) in coord_curve.iter().zip(&full_curve) {
            worst = worst.max((a.1 - b.1).abs());
        }

        let ok = worst < 1e-10;
        all_ok &= ok;
        let _ = writeln!(
            text,
            "beta={} n={} worst_residual={:.3e} {}",
            beta,
            n,
            worst,
            if ok { "ok" } else { "FAIL" }
        );
    }
    // the f''(0)-root cross-check rides along: two routes to beta_cr
    {
        let spec = PartitionSpec::new(args.proportions().unwrap_or_else(|_| {
            vec![Ratio::new(1, 2), Ratio::new(1, 2)]
        }), n, 1.0)?;
        let sd = perron(&spec)?;
        if sd.beta_cr.is_finite() {
            let root = critical_beta_scan(&spec, &sd, 1e-3, sd.beta_cr * 4.0)?;
            let ok = (root - sd.beta_cr).abs() <= 1e-8;
            all_ok &= ok;
            let _ = writeln!(
                text,
                "beta_cr spectral={:.12} profile_root={:.12} {}",
                sd.beta_cr,
                root,
                if ok { "ok" } else { "FAIL" }
            );
        }
    }
    emit(args, &text)?;
    if all_ok {
        Ok(())
    } else {
        Err(Error::NonConvergence { iterations: 0, residual: f64::NAN })
    }
}

/// Runs a parsed command; maps errors to process exit codes.
pub fn run(cli: Cli) -> u8 {
    let (mut args, name, f): (CommonArgs, &str, fn(&CommonArgs) -> Result<()>) = match cli.cmd {
        Cmd::Spectral(a) => (a, "spectral", cmd_spectral),
        Cmd::Tv(a) => (a, "tv", cmd_tv),
        Cmd::CutoffScan(a) => (a, "cutoff-scan", cmd_cutoff_scan),
        Cmd::Coupling(a) => (a, "coupling", cmd_coupling),
        Cmd::Lower(a) => (a, "lower", cmd_lower),
        Cmd::Conductance(a) => (a, "conductance", cmd_conductance),
        Cmd::OracleCheck(a) => (a, "oracle-check", cmd_oracle_check),
    };
    let outcome = args.merge_config().and_then(|()| f(&args));
    match outcome {
        Ok(()) => 0,
        Err(e @ Error::Validation(_)) => {
            eprintln!("{}: {}", name, e);
            2
        }
        Err(e) => {
            eprintln!("{}: {}", name, e);
            1
        }
    }
}
