use std::fmt::Write as _;

use rayon::prelude::*;

use super::decompose::{analytic_bounds, decompose_z, g_oracle_residual};
use super::distance::{ks_noise_floor, two_sample_distance};
use crate::error::{Error, Result};
use crate::flows::FlowSystem;
use crate::measure::{sample_mu, MuSampler};
use crate::ode::{integrate_skew, IntegratorConfig};
use crate::rng::SeedLog;
use crate::sde::{euler_maruyama, NoisePath, SdeSpec};
use crate::stats;
use crate::trajectory::fmt_f64;

/// Tolerance added to the deterministic bounds on `I0` and `I1`.
pub const BOUND_TOL: f64 = 1e-6;
pub const ORACLE_TOL: f64 = 1e-4;
pub const TELESCOPING_TOL: f64 = 1e-8;
pub const KS_FINAL_MAX: f64 = 0.10;

#[derive(Clone, Debug, PartialEq)]
pub struct LadderConfig {
    /// Strictly decreasing values of `eps` in `(0, 1]`.
    pub eps_ladder: Vec<f64>,
    /// Trajectories per `eps`, and SDE paths for the reference.
    pub ensemble: usize,
    pub horizon: f64,
    pub eval_times: Vec<f64>,
    /// `delta = eps^delta_exponent`.
    pub delta_exponent: f64,
    pub xi: Vec<f64>,
    /// Euler-Maruyama step for the reference ensemble.
    pub sde_step: f64,
    /// Trajectories per `eps` on which the `G` identity is checked.
    pub oracle_count: usize,
    pub root_seed: u64,
}

impl LadderConfig {
    pub fn new(d: usize) -> Self {
        LadderConfig {
            eps_ladder: vec![0.5, 0.25, 0.125],
            ensemble: 2000,
            horizon: 1.0,
            eval_times: vec![0.25, 0.5, 1.0],
            delta_exponent: 1.5,
            xi: vec![0.0; d],
            sde_step: 1e-3,
            oracle_count: 50,
            root_seed: 0,
        }
    }

    pub fn delta(&self, eps: f64) -> f64 {
        eps.powf(self.delta_exponent)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.eps_ladder.is_empty() || self.eps_ladder.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return bad("eps ladder must be nonempty with entries in (0, 1]".into());
        }
        if self.eps_ladder.windows(2).any(|w| w[1] >= w[0]) {
            return bad("eps ladder must be strictly decreasing".into());
        }
        if self.ensemble < 2 {
            return bad(format!("ensemble size must be at least 2, got {}", self.ensemble));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.eval_times.is_empty() || self.eval_times.iter().any(|t| !(*t > 0.0 && *t <= self.horizon)) {
            return bad("evaluation times must lie in (0, T]".into());
        }
        if !(self.delta_exponent > 0.0) {
            return bad("delta exponent must be positive".into());
        }
        if self.xi.len() != d || self.xi.iter().any(|v| !v.is_finite()) {
            return bad(format!("xi must be a finite vector of length {d}"));
        }
        let whole = |t: f64| ((t / self.sde_step).round() * self.sde_step - t).abs() <= 1e-9 * t.max(1.0);
        if !(self.sde_step > 0.0) || !whole(self.horizon) || !self.eval_times.iter().all(|&t| whole(t)) {
            return bad("SDE step must divide the horizon and every evaluation time".into());
        }
        Ok(())
    }
}

/// Statistics of one rung of the ladder.
#[derive(Clone, Debug)]
pub struct LevelStats {
    pub eps: f64,
    pub delta: f64,
    pub b0: f64,
    pub b1: f64,
    pub z_sup_mean: f64,
    pub z_sup_se: f64,
    pub i0_sup_max: f64,
    pub i1_sup_max: f64,
    pub i2_sup_mean: f64,
    pub telescoping_max: f64,
    /// Trajectories on which `I0` or `I1` exceeded its bound by more than
    /// [`BOUND_TOL`].
    pub i0_violations: usize,
    pub i1_violations: usize,
    pub oracle_max: f64,
    pub oracle_count: usize,
    /// `ks[time][coord]` against the reference ensemble.
    pub ks: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    pub mean_end: Vec<f64>,
    pub var_end: Vec<f64>,
    /// `marginals[time][member]` is `x(t)`.
    pub marginals: Vec<Vec<Vec<f64>>>,
    pub mu_seed: u64,
}

#[derive(Clone, Debug)]
pub struct ReferenceStats {
    pub mean_end: Vec<f64>,
    pub var_end: Vec<f64>,
    pub marginals: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct LadderCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct LadderReport {
    pub config: LadderConfig,
    pub d: usize,
    pub levels: Vec<LevelStats>,
    pub reference: ReferenceStats,
    pub noise_floor: f64,
    pub seeds: SeedLog,
}

fn moments(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = samples[0].len();
    (0..d)
        .map(|j| {
            let col: Vec<f64> = samples.iter().map(|r| r[j]).collect();
            (stats::mean(&col), stats::variance(&col))
        })
        .unzip()
}

struct TrajectoryOutcome {
    z_sup: f64,
    i0_sup: f64,
    i1_sup: f64,
    i2_sup: f64,
    telescoping: f64,
    i0_ok: bool,
    i1_ok: bool,
    oracle: Option<f64>,
    marginals: Vec<Vec<f64>>,
}

/// Runs the skew product for each `eps` and the limiting SDE, and compares
/// their marginals at the evaluation times. `sde` carries the drift and
/// noise root the skew product is compared against; `sampler.seed` is
/// ignored in favour of seeds derived from `config.root_seed`.
pub fn run_ladder(
    config: &LadderConfig,
    system: &FlowSystem,
    sde: &SdeSpec,
    sampler: &MuSampler,
    cfg: &IntegratorConfig,
) -> Result<LadderReport> {
    let d = system.d;
    config.validate(d)?;
    if sde.dim() != d {
        return Err(Error::Dimension {
            context: "limiting SDE",
            expected: d,
            got: sde.dim(),
        });
    }
    let sde = SdeSpec {
        xi: config.xi.clone(),
        ..sde.clone()
    };
    let m = config.ensemble;
    let mut seeds = SeedLog::default();
    let reference = reference_ensemble(config, &sde, &mut seeds)?;

    let mut levels = Vec::with_capacity(config.eps_ladder.len());
    for (li, &eps) in config.eps_ladder.iter().enumerate() {
        let sys = system.with_eps(eps)?;
        let delta = config.delta(eps);
        let mu_seed = seeds.derive(config.root_seed, "ladder/mu", li as u64);
        let etas = sample_mu(&sys, &sampler.with_seed(mu_seed), m, cfg).map_err(|e| e.in_job(format!("ladder eps={eps} mu-sampling"), mu_seed))?;
        let outcomes = etas
            .states
            .par_iter()
            .enumerate()
            .map(|(i, eta)| {
                trajectory(config, &sys, &sde, eta, delta, i < config.oracle_count, cfg)
                    .map_err(|e| e.in_job(format!("ladder eps={eps} trajectory={i}"), mu_seed))
            })
            .collect::<Result<Vec<_>>>()?;
        levels.push(level_stats(config, &sys, delta, mu_seed, outcomes, &reference)?);
    }

    Ok(LadderReport {
        config: config.clone(),
        d,
        levels,
        reference,
        noise_floor: ks_noise_floor(m, m),
        seeds,
    })
}

fn trajectory(
    config: &LadderConfig,
    sys: &FlowSystem,
    sde: &SdeSpec,
    eta: &[f64],
    delta: f64,
    oracle: bool,
    cfg: &IntegratorConfig,
) -> Result<TrajectoryOutcome> {
    let run = integrate_skew(sys, &config.xi, eta, config.horizon, cfg)?;
    let z = decompose_z(&run.x, &run.y, sys, &*sde.drift, delta)?;
    let oracle = if oracle { Some(g_oracle_residual(&run, &*sde.drift)?) } else { None };
    let marginals = config.eval_times.iter().map(|&t| run.x.state(run.x.index_of(t)).to_vec()).collect();
    Ok(TrajectoryOutcome {
        z_sup: z.z_sup,
        i0_sup: z.i0_sup,
        i1_sup: z.i1_sup,
        i2_sup: z.i2_sup,
        telescoping: z.telescoping,
        i0_ok: z.i0_within(BOUND_TOL),
        i1_ok: z.i1_within(BOUND_TOL),
        oracle,
        marginals,
    })
}

fn reference_ensemble(config: &LadderConfig, sde: &SdeSpec, seeds: &mut SeedLog) -> Result<ReferenceStats> {
    let h = config.sde_step;
    let steps = (config.horizon / h).round() as usize;
    let noise_seeds: Vec<u64> = (0..config.ensemble)
        .map(|i| seeds.derive(config.root_seed, "ladder/sde", i as u64))
        .collect();
    let paths = noise_seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let noise = NoisePath::generate(seed, sde.dim(), steps, h);
            let path = euler_maruyama(sde, config.horizon, h, &noise).map_err(|e| e.in_job(format!("sde path={i}"), seed))?;
            Ok(config.eval_times.iter().map(|&t| path.state(path.index_of(t)).to_vec()).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let marginals = transpose(paths);
    let (mean_end, var_end) = moments(&marginals[end_index(config)]);
    Ok(ReferenceStats {
        mean_end,
        var_end,
        marginals,
    })
}

/// `[member][time]` to `[time][member]`.
fn transpose(rows: Vec<Vec<Vec<f64>>>) -> Vec<Vec<Vec<f64>>> {
    let times = rows[0].len();
    let mut out = vec![Vec::with_capacity(rows.len()); times];
    for row in rows {
        for (slot, v) in out.iter_mut().zip(row) {
            slot.push(v);
        }
    }
    out
}

/// Index of the evaluation time closest to the horizon.
fn end_index(config: &LadderConfig) -> usize {
    let mut best = 0;
    for (i, t) in config.eval_times.iter().enumerate() {
        if (config.horizon - t).abs() < (config.horizon - config.eval_times[best]).abs() {
            best = i;
        }
    }
    best
}

fn level_stats(
    config: &LadderConfig,
    sys: &FlowSystem,
    delta: f64,
    mu_seed: u64,
    outcomes: Vec<TrajectoryOutcome>,
    reference: &ReferenceStats,
) -> Result<LevelStats> {
    let (b0, b1) = analytic_bounds(sys, config.horizon, delta);
    let z_sups: Vec<f64> = outcomes.iter().map(|o| o.z_sup).collect();
    let i2: Vec<f64> = outcomes.iter().map(|o| o.i2_sup).collect();
    let max_of = |f: fn(&TrajectoryOutcome) -> f64| outcomes.iter().map(f).fold(0.0_f64, f64::max);
    let oracles: Vec<f64> = outcomes.iter().filter_map(|o| o.oracle).collect();
    let marginals = transpose(outcomes.iter().map(|o| o.marginals.clone()).collect());
    let mut ks = Vec::with_capacity(marginals.len());
    let mut energy = Vec::with_capacity(marginals.len());
    for (a, b) in marginals.iter().zip(&reference.marginals) {
        let dist = two_sample_distance(a, b)?;
        ks.push(dist.ks);
        energy.push(dist.energy);
    }
    let (mean_end, var_end) = moments(&marginals[end_index(config)]);
    Ok(LevelStats {
        eps: sys.eps,
        delta,
        b0,
        b1,
        z_sup_mean: stats::mean(&z_sups),
        z_sup_se: stats::std_err(&z_sups),
        i0_sup_max: max_of(|o| o.i0_sup),
        i1_sup_max: max_of(|o| o.i1_sup),
        i2_sup_mean: stats::mean(&i2),
        telescoping_max: max_of(|o| o.telescoping),
        i0_violations: outcomes.iter().filter(|o| !o.i0_ok).count(),
        i1_violations: outcomes.iter().filter(|o| !o.i1_ok).count(),
        oracle_max: oracles.iter().cloned().fold(0.0, f64::max),
        oracle_count: oracles.len(),
        ks,
        energy,
        mean_end,
        var_end,
        marginals,
        mu_seed,
    })
}

impl LadderReport {
    pub fn checks(&self) -> Vec<LadderCheck> {
        let lv = &self.levels;
        let mut out = Vec::new();

        let viol: usize = lv.iter().map(|l| l.i0_violations + l.i1_violations).sum();
        out.push(LadderCheck {
            name: "decomposition_bounds",
            passed: viol == 0,
            detail: lv
                .iter()
                .map(|l| format!("eps={}: I0 {:.3e}/{:.3e}, I1 {:.3e}/{:.3e}", l.eps, l.i0_sup_max, l.b0, l.i1_sup_max, l.b1))
                .collect::<Vec<_>>()
                .join("; "),
        });

        let want = self.config.oracle_count.min(self.config.ensemble);
        out.push(LadderCheck {
            name: "g_oracle",
            passed: lv.iter().all(|l| l.oracle_count >= want && l.oracle_max <= ORACLE_TOL),
            detail: lv
                .iter()
                .map(|l| format!("eps={}: max {:.3e} over {}", l.eps, l.oracle_max, l.oracle_count))
                .collect::<Vec<_>>()
                .join("; "),
        });

        out.push(LadderCheck {
            name: "telescoping",
            passed: lv.iter().all(|l| l.telescoping_max <= TELESCOPING_TOL),
            detail: format!("max {:.3e}", lv.iter().map(|l| l.telescoping_max).fold(0.0, f64::max)),
        });

        out.push(LadderCheck {
            name: "z_vanishing",
            passed: lv.windows(2).all(|w| w[1].z_sup_mean < w[0].z_sup_mean),
            detail: lv
                .iter()
                .map(|l| format!("eps={}: {:.4e} +- {:.1e}", l.eps, l.z_sup_mean, l.z_sup_se))
                .collect::<Vec<_>>()
                .join("; "),
        });

        out.push(LadderCheck {
            name: "bounds_shrink",
            passed: lv.windows(2).all(|w| w[1].b0 < w[0].b0 && w[1].b1 < w[0].b1),
            detail: lv
                .iter()
                .map(|l| format!("eps={}: B0 {:.3e}, B1 {:.3e}", l.eps, l.b0, l.b1))
                .collect::<Vec<_>>()
                .join("; "),
        });

        let floor = self.noise_floor;
        let ks_mono = lv.windows(2).all(|w| {
            w[1].ks.iter().flatten().zip(w[0].ks.iter().flatten()).all(|(b, a)| *b <= *a + floor)
        });
        out.push(LadderCheck {
            name: "ks_monotone",
            passed: ks_mono,
            detail: format!("noise floor {floor:.4}"),
        });

        let last_max = lv.last().map(|l| l.ks.iter().flatten().cloned().fold(0.0, f64::max)).unwrap_or(0.0);
        out.push(LadderCheck {
            name: "ks_final",
            passed: last_max <= KS_FINAL_MAX,
            detail: format!("max KS at smallest eps {last_max:.4} (limit {KS_FINAL_MAX})"),
        });
        out
    }

    pub fn passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "root_seed: {}", c.root_seed);
        let _ = writeln!(s, "eps_ladder: [{}]", list(&c.eps_ladder));
        let _ = writeln!(s, "ensemble: {}", c.ensemble);
        let _ = writeln!(s, "horizon: {}", c.horizon);
        let _ = writeln!(s, "eval_times: [{}]", list(&c.eval_times));
        let _ = writeln!(s, "delta_exponent: {}", c.delta_exponent);
        let _ = writeln!(s, "xi: [{}]", list(&c.xi));
        let _ = writeln!(s, "sde_step: {}", c.sde_step);
        let _ = writeln!(s, "oracle_count: {}", c.oracle_count);
        let _ = writeln!(s, "ks_noise_floor: {:.6}", self.noise_floor);
        let _ = writeln!(s, "reference.mean_end: [{}]", list(&self.reference.mean_end));
        let _ = writeln!(s, "reference.var_end: [{}]", list(&self.reference.var_end));
        for l in &self.levels {
            let p = format!("eps[{}]", l.eps);
            let _ = writeln!(s, "{p}.delta: {}", fmt_f64(l.delta));
            let _ = writeln!(s, "{p}.mu_seed: {}", l.mu_seed);
            let _ = writeln!(s, "{p}.z_sup_mean: {} +- {}", fmt_f64(l.z_sup_mean), fmt_f64(l.z_sup_se));
            let _ = writeln!(s, "{p}.i0_sup_max: {} (bound {})", fmt_f64(l.i0_sup_max), fmt_f64(l.b0));
            let _ = writeln!(s, "{p}.i1_sup_max: {} (bound {})", fmt_f64(l.i1_sup_max), fmt_f64(l.b1));
            let _ = writeln!(s, "{p}.i2_sup_mean: {}", fmt_f64(l.i2_sup_mean));
            let _ = writeln!(s, "{p}.telescoping_max: {}", fmt_f64(l.telescoping_max));
            let _ = writeln!(s, "{p}.oracle_max: {} over {}", fmt_f64(l.oracle_max), l.oracle_count);
            for (ti, t) in c.eval_times.iter().enumerate() {
                let _ = writeln!(s, "{p}.ks[t={t}]: [{}]", list(&l.ks[ti]));
                let _ = writeln!(s, "{p}.energy[t={t}]: {}", fmt_f64(l.energy[ti]));
            }
            let _ = writeln!(s, "{p}.mean_end: [{}]", list(&l.mean_end));
            let _ = writeln!(s, "{p}.var_end: [{}]", list(&l.var_end));
        }
        for chk in self.checks() {
            let _ = writeln!(s, "check.{}: {} ({})", chk.name, if chk.passed { "PASS" } else { "FAIL" }, chk.detail);
        }
        s
    }

    /// Long-format CSV: `eps,statistic,time,coord,value`; the reference
    /// rows have an empty `eps`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["eps", "statistic", "time", "coord", "value"])?;
        let mut row = |eps: Option<f64>, stat: &str, t: Option<f64>, j: Option<usize>, v: f64| {
            w.write_record([
                eps.map(fmt_f64).unwrap_or_default(),
                stat.to_string(),
                t.map(fmt_f64).unwrap_or_default(),
                j.map(|j| (j + 1).to_string()).unwrap_or_default(),
                fmt_f64(v),
            ])
        };
        let end_t = self.config.eval_times[end_index(&self.config)];
        for j in 0..self.d {
            row(None, "mean", Some(end_t), Some(j), self.reference.mean_end[j])?;
            row(None, "var", Some(end_t), Some(j), self.reference.var_end[j])?;
        }
        for l in &self.levels {
            let e = Some(l.eps);
            for (name, v) in [
                ("delta", l.delta),
                ("bound_i0", l.b0),
                ("bound_i1", l.b1),
                ("z_sup_mean", l.z_sup_mean),
                ("z_sup_se", l.z_sup_se),
                ("i0_sup_max", l.i0_sup_max),
                ("i1_sup_max", l.i1_sup_max),
                ("i2_sup_mean", l.i2_sup_mean),
                ("telescoping_max", l.telescoping_max),
                ("oracle_max", l.oracle_max),
            ] {
                row(e, name, None, None, v)?;
            }
            for (ti, &t) in self.config.eval_times.iter().enumerate() {
                for (j, v) in l.ks[ti].iter().enumerate() {
                    row(e, "ks", Some(t), Some(j), *v)?;
                }
                row(e, "energy", Some(t), None, l.energy[ti])?;
            }
            for j in 0..self.d {
                row(e, "mean", Some(end_t), Some(j), l.mean_end[j])?;
                row(e, "var", Some(end_t), Some(j), l.var_end[j])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}
