//! The `simulate`, `estimate`, `ladder` and `replay` commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use skewlab::convergence::{run_ladder, LadderReport};
use skewlab::flows::FnObservable;
use skewlab::limit_laws::{
    brownian_diagnostics, check_ldp_bound, estimate_ldp, estimate_sigma_ensemble, estimate_sigma_green_kubo,
    ldp_x_uniformity, CovarianceEstimate, LdpEstimate,
};
use skewlab::measure::{center_f0, ergodic_average, estimate_f, sample_mu, DEFAULT_BATCHES};
use skewlab::ode::{integrate_skew, integrate_skew_with, IntegratorConfig};
use skewlab::rng::SeedLog;
use skewlab::sde::{
    matrix_sqrt_psd, padded_box, tabulate_drift, BenchmarkDrift, Drift, GridDrift, SdeSpec, ZeroDrift,
};
use skewlab::trajectory::fmt_f64;
use skewlab::FlowSystem;

use crate::config::{Centering, CouplingConfig, DriftMode, RunConfig, SigmaMethodName, SigmaSource};
use crate::manifest::{RunManifest, Timing, MANIFEST_NAME};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Sigma,
    F,
    Ldp,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Sigma => "sigma",
            Target::F => "F",
            Target::Ldp => "ldp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sigma" => Some(Target::Sigma),
            "F" | "f" => Some(Target::F),
            "ldp" => Some(Target::Ldp),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Estimate(Target),
    Ladder { check: bool },
}

impl Command {
    pub fn words(&self) -> Vec<String> {
        match self {
            Command::Simulate => vec!["simulate".into()],
            Command::Estimate(t) => vec!["estimate".into(), t.name().into()],
            Command::Ladder { check } => {
                let mut w = vec!["ladder".to_string()];
                if *check {
                    w.push("--check".into());
                }
                w
            }
        }
    }

    pub fn from_words(words: &[String]) -> Result<Self, CliError> {
        let w: Vec<&str> = words.iter().map(String::as_str).collect();
        match w.as_slice() {
            ["simulate"] => Ok(Command::Simulate),
            ["estimate", t] => Target::parse(t)
                .map(Command::Estimate)
                .ok_or_else(|| CliError::Config(format!("unknown estimate target `{t}`"))),
            ["ladder"] => Ok(Command::Ladder { check: false }),
            ["ladder", "--check"] => Ok(Command::Ladder { check: true }),
            _ => Err(CliError::Config(format!("cannot replay command {words:?}"))),
        }
    }
}

/// Result of one command.
#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    /// The text report, also written to the output directory.
    pub report: String,
    /// Acceptance checks, when the command has any.
    pub checks_passed: Option<bool>,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    integ: IntegratorConfig,
    seeds: SeedLog,
    timings: Vec<Timing>,
    out: PathBuf,
    files: Vec<String>,
    report: String,
}

impl Ctx<'_> {
    fn seed(&mut self, tag: &str, index: u64) -> u64 {
        self.seeds.derive(self.cfg.root_seed, tag, index)
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T, CliError>) -> Result<T, CliError> {
        let start = Instant::now();
        let r = f(self)?;
        self.timings.push(Timing {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(r)
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        fs::write(self.out.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn line(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.report, "{key}: {value}");
    }

    /// `mu`-sample of one fast state, keyed by `tag`.
    fn mu_point(&mut self, system: &FlowSystem, tag: &str) -> Result<Vec<f64>, CliError> {
        let seed = self.seed(tag, 0);
        let s = sample_mu(system, &self.cfg.sampler.to_sampler(seed), 1, &self.integ)?;
        Ok(s.states.into_iter().next().expect("one sample"))
    }
}

fn list(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(", "))
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(skewlab::Error::from)?;
    for r in rows {
        w.write_record(r).map_err(skewlab::Error::from)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

/// Runs `cmd` with outputs in `out_dir` and writes the manifest last.
pub fn run(cfg: &RunConfig, cmd: &Command, out_dir: &Path) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    // a stale manifest must not describe this run's partial outputs
    let stale = out_dir.join(MANIFEST_NAME);
    if stale.exists() {
        fs::remove_file(&stale)?;
    }
    let mut ctx = Ctx {
        cfg,
        integ: cfg.integrator.to_config(),
        seeds: SeedLog::default(),
        timings: Vec::new(),
        out: out_dir.to_path_buf(),
        files: Vec::new(),
        report: String::new(),
    };
    let start = Instant::now();
    ctx.line("command", cmd.words().join(" "));
    ctx.line("root_seed", cfg.root_seed);
    ctx.line("config_hash", cfg.hash()?);
    let system = ctx.timed("system", prepare_system)?;
    let checks_passed = match cmd {
        Command::Simulate => {
            simulate(&mut ctx, &system)?;
            None
        }
        Command::Estimate(Target::Sigma) => {
            estimate_sigma(&mut ctx, &system)?;
            None
        }
        Command::Estimate(Target::F) => {
            estimate_drift_table(&mut ctx, &system)?;
            None
        }
        Command::Estimate(Target::Ldp) => Some(estimate_ldp_cmd(&mut ctx, &system)?),
        Command::Ladder { .. } => Some(ladder(&mut ctx, &system)?),
    };
    ctx.timings.push(Timing {
        stage: "total".into(),
        seconds: start.elapsed().as_secs_f64(),
    });

    let report_name = format!("{}.txt", report_stem(cmd));
    let report = ctx.report.clone();
    ctx.write(&report_name, report.as_bytes())?;

    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: cmd.words(),
        config_hash: cfg.hash()?,
        root_seed: cfg.root_seed,
        config: cfg.to_toml()?,
        seeds: Vec::new(),
        timings: ctx.timings.clone(),
        outputs: Vec::new(),
    };
    manifest.record_seeds(&ctx.seeds);
    for f in &ctx.files {
        manifest.record_output(out_dir, f)?;
    }
    manifest.write_atomic(out_dir)?;
    Ok(RunOutcome {
        out_dir: out_dir.to_path_buf(),
        manifest,
        report,
        checks_passed,
    })
}

fn report_stem(cmd: &Command) -> &'static str {
    match cmd {
        Command::Simulate => "simulate",
        Command::Estimate(Target::Sigma) => "sigma",
        Command::Estimate(Target::F) => "drift",
        Command::Estimate(Target::Ldp) => "ldp",
        Command::Ladder { .. } => "ladder",
    }
}

/// Re-runs the command recorded in `manifest_path` into `out_dir` and
/// compares every output file against the recorded hashes.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> Result<(RunOutcome, Vec<String>), CliError> {
    let manifest = RunManifest::load(manifest_path)?;
    let cfg = RunConfig::from_toml(&manifest.config, &[])?;
    if cfg.hash()? != manifest.config_hash {
        return Err(CliError::Config("manifest config does not match its recorded hash".into()));
    }
    let cmd = Command::from_words(&manifest.command)?;
    let outcome = run(&cfg, &cmd, out_dir)?;
    let mismatches = manifest.mismatches(out_dir);
    Ok((outcome, mismatches))
}

fn prepare_system(ctx: &mut Ctx) -> Result<FlowSystem, CliError> {
    let base = ctx.cfg.build_system()?;
    if ctx.cfg.system.f0.center == Centering::None {
        return Ok(base);
    }
    let eta = ctx.mu_point(&base, "center/mu")?;
    let (sys, avg) = center_f0(&base, ctx.cfg.system.f0.center_horizon, &eta, &ctx.integ)?;
    ctx.line("f0_center.value", list(&avg.value));
    ctx.line("f0_center.std_err", list(&avg.std_err));
    Ok(sys)
}

fn simulate(ctx: &mut Ctx, system: &FlowSystem) -> Result<(), CliError> {
    let s = &ctx.cfg.simulate;
    let xi = s.xi.clone().unwrap_or_else(|| vec![0.0; system.d]);
    let eta = match &s.eta {
        Some(e) => e.clone(),
        None => ctx.mu_point(system, "simulate/mu")?,
    };
    let (horizon, formulation) = (s.horizon, s.formulation.into());
    let integ = ctx.integ;
    let run = ctx.timed("integrate", |_| Ok(integrate_skew_with(system, &xi, &eta, horizon, &integ, formulation)?))?;
    let mut buf = Vec::new();
    run.x.write_csv(&mut buf, "x")?;
    ctx.write("x.csv", &buf)?;
    buf.clear();
    run.y.write_csv(&mut buf, "y")?;
    ctx.write("y.csv", &buf)?;
    buf.clear();
    run.x.write_binary(&mut buf)?;
    ctx.write("x.trj", &buf)?;
    buf.clear();
    run.y.write_binary(&mut buf)?;
    ctx.write("y.trj", &buf)?;
    ctx.line("eps", fmt_f64(system.eps));
    ctx.line("horizon", fmt_f64(horizon));
    ctx.line("xi", list(&xi));
    ctx.line("eta", list(&eta));
    ctx.line("grid_points", run.x.len());
    ctx.line("dt", fmt_f64(run.x.dt));
    ctx.line("x_end", list(run.x.last()));
    ctx.line("f_max", fmt_f64(run.f_max));
    Ok(())
}

fn sigma_rows(est: &CovarianceEstimate, rows: &mut Vec<Vec<String>>) {
    let d = est.sigma.nrows();
    for i in 0..d {
        for j in 0..d {
            rows.push(vec![
                est.method.name().to_string(),
                (i + 1).to_string(),
                (j + 1).to_string(),
                fmt_f64(est.sigma[(i, j)]),
                fmt_f64(est.std_err[(i, j)]),
            ]);
        }
    }
}

fn sigma_lines(ctx: &mut Ctx, est: &CovarianceEstimate) {
    let p = est.method.name();
    let d = est.sigma.nrows();
    for i in 0..d {
        let row: Vec<f64> = (0..d).map(|j| est.sigma[(i, j)]).collect();
        ctx.line(&format!("{p}.sigma[{}]", i + 1), list(&row));
    }
    ctx.line(&format!("{p}.n_samples"), est.n_samples);
    ctx.line(&format!("{p}.symmetric"), est.is_symmetric());
    ctx.line(&format!("{p}.min_eigenvalue"), fmt_f64(est.min_eigenvalue()));
    ctx.line(&format!("{p}.clipped_mass"), fmt_f64(est.clipped_mass));
}

fn ensemble_sigma(ctx: &mut Ctx, system: &FlowSystem, write_samples: bool) -> Result<CovarianceEstimate, CliError> {
    let s = ctx.cfg.sigma.clone();
    let seed = ctx.seed("sigma/mu", 0);
    let sampler = ctx.cfg.sampler.to_sampler(seed);
    let integ = ctx.integ;
    let (est, ens) = ctx.timed("sigma_ensemble", |_| Ok(estimate_sigma_ensemble(system, s.n, s.ensemble, &sampler, &integ)?))?;
    if write_samples {
        let samples = sample_mu(system, &sampler, s.ensemble, &integ)?;
        let mut buf = Vec::new();
        samples.write_binary(&mut buf)?;
        ctx.write("mu_samples.mus", &buf)?;
        ctx.line("mu_samples.correlated", samples.correlated);
    }
    let b = brownian_diagnostics(&ens)?;
    ctx.line("wip.n", fmt_f64(s.n));
    ctx.line("wip.mean_w1", list(&b.mean));
    ctx.line("wip.mean_w1_se", list(&b.mean_se));
    ctx.line("wip.var_ratio_half", list(&b.var_ratio_half));
    ctx.line("wip.increment_corr", list(&b.increment_corr));
    ctx.line("wip.increment_corr_se", fmt_f64(b.increment_corr_se));
    if let Some(r) = &b.var_ratio_two {
        ctx.line("wip.var_ratio_two", list(r));
    }
    Ok(est)
}

fn green_kubo_sigma(ctx: &mut Ctx, system: &FlowSystem) -> Result<CovarianceEstimate, CliError> {
    let gk = ctx.cfg.sigma.green_kubo();
    let eta = ctx.mu_point(system, "sigma/gk-mu")?;
    let integ = ctx.integ;
    ctx.timed("sigma_green_kubo", |_| Ok(estimate_sigma_green_kubo(system, &gk, &eta, &integ)?))
}

fn estimate_sigma(ctx: &mut Ctx, system: &FlowSystem) -> Result<(), CliError> {
    let method = ctx.cfg.sigma.method;
    let mut rows = Vec::new();
    let mut ests = Vec::new();
    if matches!(method, SigmaMethodName::Ensemble | SigmaMethodName::Both) {
        ests.push(ensemble_sigma(ctx, system, true)?);
    }
    if matches!(method, SigmaMethodName::GreenKubo | SigmaMethodName::Both) {
        ests.push(green_kubo_sigma(ctx, system)?);
    }
    for e in &ests {
        sigma_lines(ctx, e);
        sigma_rows(e, &mut rows);
    }
    if let [a, b] = ests.as_slice() {
        ctx.line("relative_frobenius", fmt_f64(a.relative_frobenius(b)));
    }
    let header: Vec<String> = ["method", "i", "j", "value", "std_err"].iter().map(|s| s.to_string()).collect();
    let bytes = csv_bytes(&header, &rows)?;
    ctx.write("sigma.csv", &bytes)
}

fn drift_box(ctx: &Ctx, d: usize) -> (Vec<f64>, Vec<f64>) {
    let dr = &ctx.cfg.drift;
    (
        dr.lo.clone().unwrap_or_else(|| vec![-3.0; d]),
        dr.hi.clone().unwrap_or_else(|| vec![3.0; d]),
    )
}

fn estimate_drift_table(ctx: &mut Ctx, system: &FlowSystem) -> Result<(), CliError> {
    let d = system.d;
    let (lo, hi) = drift_box(ctx, d);
    let points = ctx.cfg.drift.points;
    let horizon = ctx.cfg.drift.horizon;
    let eta = ctx.mu_point(system, "drift/mu")?;
    let integ = ctx.integ;
    let nodes = GridDrift::nodes(&lo, &hi, points);
    let values = ctx.timed("drift", |_| {
        nodes
            .par_iter()
            .map(|x| estimate_f(system, x, horizon, &eta, &integ))
            .collect::<skewlab::Result<Vec<_>>>()
            .map_err(CliError::from)
    })?;
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.extend((1..=d).map(|j| format!("F{j}")));
    header.extend((1..=d).map(|j| format!("se{j}")));
    let rows: Vec<Vec<String>> = nodes
        .iter()
        .zip(&values)
        .map(|(x, v)| x.iter().chain(&v.value).chain(&v.std_err).map(|a| fmt_f64(*a)).collect())
        .collect();
    let bytes = csv_bytes(&header, &rows)?;
    ctx.write("drift.csv", &bytes)?;
    let f_max = values.iter().map(|v| skewlab::max_norm(&v.value)).fold(0.0, f64::max);
    let se_max = values.iter().map(|v| skewlab::max_norm(&v.std_err)).fold(0.0, f64::max);
    ctx.line("drift.nodes", nodes.len());
    ctx.line("drift.lo", list(&lo));
    ctx.line("drift.hi", list(&hi));
    ctx.line("drift.horizon", fmt_f64(values[0].t_used));
    ctx.line("drift.max_abs", fmt_f64(f_max));
    ctx.line("drift.max_std_err", fmt_f64(se_max));
    ctx.line("drift.f_sup", fmt_f64(system.bounds.f_sup));
    Ok(())
}

fn estimate_ldp_cmd(ctx: &mut Ctx, system: &FlowSystem) -> Result<bool, CliError> {
    let l = ctx.cfg.ldp.clone();
    let xs = ctx.cfg.ldp_xs();
    let integ = ctx.integ;
    let f_eta = ctx.mu_point(system, "ldp/f-mu")?;
    let f_hats = xs
        .iter()
        .map(|x| estimate_f(system, x, l.f_horizon, &f_eta, &integ).map(|a| a.value))
        .collect::<skewlab::Result<Vec<_>>>()?;
    let seed = ctx.seed("ldp/mu", 0);
    let sampler = ctx.cfg.sampler.to_sampler(seed);
    let (ests, spread) = ctx.timed("ldp", |_| {
        Ok(ldp_x_uniformity(system, &xs, &f_hats, &l.a_grid, &l.t_grid, l.n_windows, &sampler, &integ)?)
    })?;
    let mut rows = Vec::new();
    for (xi, e) in ests.iter().enumerate() {
        ldp_rows(xi, e, &mut rows);
    }
    let header: Vec<String> = ["x_index", "a", "T", "b_hat", "std_err", "n_windows"].iter().map(|s| s.to_string()).collect();
    let bytes = csv_bytes(&header, &rows)?;
    ctx.write("ldp.csv", &bytes)?;

    let threshold = 2.0 * system.bounds.f_sup;
    let mut ok = true;
    for (xi, e) in ests.iter().enumerate() {
        let p = format!("ldp[{xi}]");
        let mono = e.monotone_in_a();
        let zero = e.zero_above(threshold);
        ok &= mono && zero;
        ctx.line(&format!("{p}.x"), list(&e.x));
        ctx.line(&format!("{p}.f_hat"), list(&f_hats[xi]));
        ctx.line(&format!("{p}.monotone_in_a"), mono);
        ctx.line(&format!("{p}.zero_above_2f_sup"), zero);
        for (ai, a) in e.a_grid.iter().enumerate() {
            ctx.line(&format!("{p}.decays_in_t[a={a}]"), e.decays_in_t(ai, 2.0));
        }
    }
    ctx.line("ldp.x_spread", fmt_f64(spread));

    let (x0, f0) = (&xs[xs.len() / 2], &f_hats[xs.len() / 2]);
    let single = estimate_ldp(system, x0, f0, &[l.check_a], &[l.check_t], l.n_windows, &sampler, &integ)?;
    let b = single.b_hat[0][0];
    let check_seed = ctx.seed("ldp/check-mu", 0);
    let check_sampler = ctx.cfg.sampler.to_sampler(check_seed);
    let p = ctx.timed("ldp_check", |_| {
        Ok(check_ldp_bound(system, x0, f0, l.check_a, l.check_t, b, l.check_ensemble, l.check_shift, &check_sampler, &integ)?)
    })?;
    ctx.line("bound_check.a", fmt_f64(p.a));
    ctx.line("bound_check.T", fmt_f64(p.t));
    ctx.line("bound_check.b_hat", fmt_f64(p.b_hat));
    ctx.line("bound_check.lhs", fmt_f64(p.lhs));
    ctx.line("bound_check.lhs_std_err", fmt_f64(p.lhs_se));
    ctx.line("bound_check.rhs", fmt_f64(p.rhs));
    ctx.line("bound_check.slack", fmt_f64(p.slack));
    ctx.line("bound_check.shift", p.shift);
    ctx.line("bound_check.lhs_shifted", fmt_f64(p.lhs_shifted));
    ctx.line("bound_check.shift_z", fmt_f64(p.shift_z()));
    Ok(ok)
}

fn ldp_rows(xi: usize, e: &LdpEstimate, rows: &mut Vec<Vec<String>>) {
    for (ti, t) in e.t_grid.iter().enumerate() {
        for (ai, a) in e.a_grid.iter().enumerate() {
            rows.push(vec![
                xi.to_string(),
                fmt_f64(*a),
                fmt_f64(*t),
                fmt_f64(e.b_hat[ti][ai]),
                fmt_f64(e.binomial_se(ti, ai)),
                e.n_windows.to_string(),
            ]);
        }
    }
}

/// `Sigma` for the ladder's limiting SDE.
fn ladder_sigma(ctx: &mut Ctx, system: &FlowSystem) -> Result<DMatrix<f64>, CliError> {
    let est = match ctx.cfg.ladder.sigma_source {
        SigmaSource::Given => {
            let m = ctx.cfg.ladder.sigma.clone().expect("validated");
            let d = m.len();
            return Ok(DMatrix::from_fn(d, d, |i, j| m[i][j]));
        }
        SigmaSource::GreenKubo => green_kubo_sigma(ctx, system)?,
        SigmaSource::Ensemble => ensemble_sigma(ctx, system, false)?,
    };
    sigma_lines(ctx, &est);
    Ok(est.sigma)
}

fn ladder_drift(ctx: &mut Ctx, system: &FlowSystem) -> Result<Arc<dyn Drift>, CliError> {
    let d = system.d;
    let integ = ctx.integ;
    let horizon = ctx.cfg.drift.horizon;
    if ctx.cfg.drift.mode == DriftMode::Analytic {
        return Ok(match ctx.cfg.system.f {
            CouplingConfig::Benchmark { c, kappa } => {
                let eta = ctx.mu_point(system, "drift/mu")?;
                let forcing = FnObservable::new(1, |y: &[f64], out: &mut [f64]| out[0] = (y[0] / 10.0).sin());
                let m = ergodic_average(system, &forcing, horizon, &eta, &integ, DEFAULT_BATCHES)?;
                ctx.line("drift.forcing_mean", fmt_f64(m.value[0]));
                ctx.line("drift.forcing_mean_std_err", fmt_f64(m.std_err[0]));
                Arc::new(BenchmarkDrift {
                    d,
                    c,
                    kappa,
                    forcing_mean: m.value[0],
                })
            }
            CouplingConfig::TanhRelaxation { c } => Arc::new(BenchmarkDrift {
                d,
                c,
                kappa: 0.0,
                forcing_mean: 0.0,
            }),
            CouplingConfig::Zero => Arc::new(ZeroDrift { d }),
        });
    }
    let (lo, hi) = match (&ctx.cfg.drift.lo, &ctx.cfg.drift.hi) {
        (Some(lo), Some(hi)) => (lo.clone(), hi.clone()),
        _ => pilot_box(ctx, system)?,
    };
    let eta = ctx.mu_point(system, "drift/mu")?;
    let points = ctx.cfg.drift.points;
    ctx.line("drift.lo", list(&lo));
    ctx.line("drift.hi", list(&hi));
    let grid = ctx.timed("drift", |_| Ok(tabulate_drift(system, &lo, &hi, points, horizon, &eta, &integ)?))?;
    Ok(Arc::new(grid))
}

/// Box spanned by a small skew-product ensemble at the largest `eps`,
/// padded by `drift.pad`.
fn pilot_box(ctx: &mut Ctx, system: &FlowSystem) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let lc = ctx.cfg.ladder_config();
    let sys = system.with_eps(lc.eps_ladder[0])?;
    let seed = ctx.seed("drift/pilot-mu", 0);
    let count = 32.min(lc.ensemble);
    let integ = ctx.integ;
    let etas = sample_mu(&sys, &ctx.cfg.sampler.to_sampler(seed), count, &integ)?;
    let xs = etas
        .states
        .par_iter()
        .map(|eta| integrate_skew(&sys, &lc.xi, eta, lc.horizon, &integ).map(|r| r.x.states().map(<[f64]>::to_vec).collect::<Vec<_>>()))
        .collect::<skewlab::Result<Vec<_>>>()?;
    let all: Vec<Vec<f64>> = xs.into_iter().flatten().collect();
    Ok(padded_box(&all, ctx.cfg.drift.pad))
}

fn ladder(ctx: &mut Ctx, system: &FlowSystem) -> Result<bool, CliError> {
    let sigma = ladder_sigma(ctx, system)?;
    let drift = ladder_drift(ctx, system)?;
    let lc = ctx.cfg.ladder_config();
    let spec = SdeSpec::new(drift, &sigma, lc.xi.clone())?;
    let sampler = ctx.cfg.sampler.to_sampler(0);
    let integ = ctx.integ;
    let rep = ctx.timed("ladder", |_| Ok(run_ladder(&lc, system, &spec, &sampler, &integ)?))?;
    ctx.seeds.extend(rep.seeds.clone());
    let _ = write!(ctx.report, "{}", rep.to_text());
    let csv = rep.to_csv()?;
    ctx.write("ladder.csv", csv.as_bytes())?;
    if ctx.cfg.ladder.keep_marginals {
        let bytes = marginals_csv(&rep)?;
        ctx.write("ladder_marginals.csv", &bytes)?;
    }
    let root = matrix_sqrt_psd(&sigma)?;
    let d = root.nrows();
    for i in 0..d {
        let row: Vec<f64> = (0..d).map(|j| root[(i, j)]).collect();
        ctx.line(&format!("noise_root[{}]", i + 1), list(&row));
    }
    Ok(rep.passed())
}

fn marginals_csv(rep: &LadderReport) -> Result<Vec<u8>, CliError> {
    let mut header: Vec<String> = ["source", "eps", "time", "member"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=rep.d).map(|j| format!("x{j}")));
    let mut rows = Vec::new();
    let times = &rep.config.eval_times;
    let mut push = |source: &str, eps: String, marg: &[Vec<Vec<f64>>]| {
        for (ti, members) in marg.iter().enumerate() {
            for (m, x) in members.iter().enumerate() {
                let mut r = vec![source.to_string(), eps.clone(), fmt_f64(times[ti]), m.to_string()];
                r.extend(x.iter().map(|v| fmt_f64(*v)));
                rows.push(r);
            }
        }
    };
    push("sde", String::new(), &rep.reference.marginals);
    for l in &rep.levels {
        push("skew", fmt_f64(l.eps), &l.marginals);
    }
    csv_bytes(&header, &rows)
}
