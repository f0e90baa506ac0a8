//! Fixed-step RK4 integration of the fast flow and of the full skew product.
//!
//! The skew product is integrated in fast time `tau = t / eps^2`, where
//!
//! ```text
//! dx/dtau = eps f0(y) + eps^2 f(x, y),    dy/dtau = g(y)
//! ```
//!
//! has O(1) rates, and the output is relabelled to slow time. Alongside `x`
//! the integrator carries the running integrals `W(t) = int_0^t eps^-1 f0 ds`
//! and `B(t) = int_0^t f(x, y) ds` through the same RK4 stages, so
//! `x = xi + W + B` holds to roundoff.

use crate::error::{Error, Result};
use crate::flows::{FlowSystem, Observable};
use crate::trajectory::{TimeFrame, TrajectoryGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    /// Fast-time step.
    pub h_tau: f64,
    pub method: Method,
    /// Store every k-th step.
    pub record_stride: usize,
    /// Upper limit on stored f64 values per trajectory.
    pub max_values: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            h_tau: 0.005,
            method: Method::Rk4,
            record_stride: 1,
            max_values: 50_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_tau > 0.0 && self.h_tau.is_finite()) {
            return Err(Error::Config(format!("h_tau must be positive, got {}", self.h_tau)));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record_stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Step count and effective step for covering `duration` exactly with a
    /// whole number of recorded strides, using steps no longer than `h_tau`.
    pub fn plan(&self, duration: f64) -> Result<(usize, f64)> {
        self.validate()?;
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Input(format!("duration must be positive, got {duration}")));
        }
        let stride = self.record_stride as f64;
        let records = (duration / (self.h_tau * stride) - 1e-9).ceil().max(1.0);
        let n = records as usize * self.record_stride;
        Ok((n, duration / n as f64))
    }
}

/// Reusable RK4 stage buffers.
#[derive(Clone, Debug)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Rk4 {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// One classical RK4 step in place. Elementwise arithmetic only, so the
    /// update of a component depends on the other components solely through
    /// `rhs`.
    #[inline]
    pub fn step<F>(&mut self, rhs: &mut F, state: &mut [f64], h: f64)
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let half = 0.5 * h;
        let sixth = h / 6.0;
        rhs(state, &mut self.k1);
        for i in 0..state.len() {
            self.tmp[i] = state[i] + half * self.k1[i];
        }
        rhs(&self.tmp, &mut self.k2);
        for i in 0..state.len() {
            self.tmp[i] = state[i] + half * self.k2[i];
        }
        rhs(&self.tmp, &mut self.k3);
        for i in 0..state.len() {
            self.tmp[i] = state[i] + h * self.k3[i];
        }
        rhs(&self.tmp, &mut self.k4);
        for i in 0..state.len() {
            state[i] += sixth * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Single RK4 step of `field` from `state`; errors if the result is not finite.
pub fn rk4_step<F>(mut field: F, state: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if !(h > 0.0) {
        return Err(Error::Input(format!("step must be positive, got {h}")));
    }
    let mut out = state.to_vec();
    Rk4::new(state.len()).step(&mut field, &mut out, h);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::Blowup { time: h })
    }
}

/// Streaming integrator of `dy/dtau = g(y)` that optionally carries the
/// running integral of an observable through the RK4 stages.
pub struct FastStepper<'a> {
    system: &'a FlowSystem,
    obs: Option<&'a dyn Observable>,
    state: Vec<f64>,
    rk: Rk4,
    obs_buf: Vec<f64>,
    h: f64,
    steps: usize,
    radius_sq: f64,
}

impl<'a> FastStepper<'a> {
    pub fn new(system: &'a FlowSystem, eta: &[f64], h: f64) -> Result<Self> {
        Self::build(system, eta, h, None)
    }

    /// Also integrates `I(tau) = int_0^tau obs(y) dtau'`.
    pub fn with_integral(system: &'a FlowSystem, eta: &[f64], h: f64, obs: &'a dyn Observable) -> Result<Self> {
        Self::build(system, eta, h, Some(obs))
    }

    fn build(system: &'a FlowSystem, eta: &[f64], h: f64, obs: Option<&'a dyn Observable>) -> Result<Self> {
        system.check_fast_state(eta)?;
        if !(h > 0.0) {
            return Err(Error::Input(format!("step must be positive, got {h}")));
        }
        let k = obs.map_or(0, |o| o.dim_out());
        let mut state = eta.to_vec();
        state.resize(eta.len() + k, 0.0);
        let r = system.trap_radius();
        Ok(FastStepper {
            system,
            obs,
            rk: Rk4::new(state.len()),
            state,
            obs_buf: vec![0.0; k],
            h,
            steps: 0,
            radius_sq: r * r,
        })
    }

    pub fn y(&self) -> &[f64] {
        &self.state[..self.system.ell]
    }

    /// Running integral of the observable (empty without one).
    pub fn integral(&self) -> &[f64] {
        &self.state[self.system.ell..]
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.h
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn advance(&mut self) -> Result<()> {
        let ell = self.system.ell;
        let g = &*self.system.g;
        match self.obs {
            None => {
                let mut rhs = |s: &[f64], out: &mut [f64]| g.eval(s, out);
                self.rk.step(&mut rhs, &mut self.state, self.h);
            }
            Some(obs) => {
                let buf = &mut self.obs_buf;
                let mut rhs = |s: &[f64], out: &mut [f64]| {
                    g.eval(&s[..ell], &mut out[..ell]);
                    obs.eval(&s[..ell], buf);
                    out[ell..].copy_from_slice(buf);
                };
                self.rk.step(&mut rhs, &mut self.state, self.h);
            }
        }
        self.steps += 1;
        self.check()
    }

    pub fn advance_n(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            self.advance()?;
        }
        Ok(())
    }

    fn check(&self) -> Result<()> {
        if !self.state.iter().all(|v| v.is_finite()) {
            return Err(Error::Blowup { time: self.time() });
        }
        let r2: f64 = self.y().iter().map(|v| v * v).sum();
        if r2 > self.radius_sq {
            return Err(Error::TrapExit {
                time: self.time(),
                norm: r2.sqrt(),
                radius: self.radius_sq.sqrt(),
            });
        }
        Ok(())
    }
}

/// Trajectory of `dy/dtau = g(y)`, `y(0) = eta` on `[0, t_tau]`, in fast time.
pub fn integrate_fast(system: &FlowSystem, eta: &[f64], t_tau: f64, cfg: &IntegratorConfig) -> Result<TrajectoryGrid> {
    let (n, h) = cfg.plan(t_tau)?;
    let rows = n / cfg.record_stride + 1;
    check_capacity(rows * system.ell, cfg)?;
    let mut grid = TrajectoryGrid::with_capacity(0.0, h * cfg.record_stride as f64, system.ell, TimeFrame::Fast, rows);
    let mut stepper = FastStepper::new(system, eta, h)?;
    grid.push(stepper.y())?;
    for i in 1..=n {
        stepper.advance()?;
        if i % cfg.record_stride == 0 {
            grid.push(stepper.y())?;
        }
    }
    Ok(grid)
}

/// Output of a skew-product run, all on the same slow-time grid.
#[derive(Clone, Debug)]
pub struct SkewRun {
    pub eps: f64,
    pub xi: Vec<f64>,
    pub x: TrajectoryGrid,
    pub y: TrajectoryGrid,
    /// `W(t) = int_0^t eps^-1 f0(y(s)) ds`.
    pub w: TrajectoryGrid,
    /// `B(t) = int_0^t f(x(s), y(s)) ds`.
    pub fint: TrajectoryGrid,
    /// Largest `|f(x, y)|` seen at any RK4 stage.
    pub f_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Formulation {
    /// Rescaled fast time (the default).
    FastTime,
    /// The unscaled equations in slow time with step `eps^2 h_tau`; only
    /// sensible for moderate `eps`, kept for cross-checks.
    SlowTime,
}

/// Integrates the skew product on `[0, T]` (slow time) from `(xi, eta)`.
pub fn integrate_skew(system: &FlowSystem, xi: &[f64], eta: &[f64], horizon: f64, cfg: &IntegratorConfig) -> Result<SkewRun> {
    integrate_skew_with(system, xi, eta, horizon, cfg, Formulation::FastTime)
}

pub fn integrate_skew_with(
    system: &FlowSystem,
    xi: &[f64],
    eta: &[f64],
    horizon: f64,
    cfg: &IntegratorConfig,
    formulation: Formulation,
) -> Result<SkewRun> {
    system.check_slow_state(xi)?;
    system.check_fast_state(eta)?;
    if !(horizon > 0.0) {
        return Err(Error::Input(format!("horizon must be positive, got {horizon}")));
    }
    let (d, ell, eps) = (system.d, system.ell, system.eps);
    let eps2 = eps * eps;
    let (n, h_tau) = cfg.plan(horizon / eps2)?;
    let rows = n / cfg.record_stride + 1;
    check_capacity(rows * (3 * d + ell), cfg)?;

    // per-unit-time coefficients on f0, f, g and the step actually taken
    let (c_f0, c_f, c_g, h) = match formulation {
        Formulation::FastTime => (eps, eps2, 1.0, h_tau),
        Formulation::SlowTime => (1.0 / eps, 1.0, 1.0 / eps2, h_tau * eps2),
    };
    let dt_rec = h_tau * eps2 * cfg.record_stride as f64;

    // z = [x | y | W | B]
    let (ix, iy, iw, ib) = (0, d, d + ell, 2 * d + ell);
    let mut z = vec![0.0; 3 * d + ell];
    z[ix..iy].copy_from_slice(xi);
    z[iy..iw].copy_from_slice(eta);

    let mut grids: [TrajectoryGrid; 4] = [
        TrajectoryGrid::with_capacity(0.0, dt_rec, d, TimeFrame::Slow, rows),
        TrajectoryGrid::with_capacity(0.0, dt_rec, ell, TimeFrame::Slow, rows),
        TrajectoryGrid::with_capacity(0.0, dt_rec, d, TimeFrame::Slow, rows),
        TrajectoryGrid::with_capacity(0.0, dt_rec, d, TimeFrame::Slow, rows),
    ];
    let record = |z: &[f64], grids: &mut [TrajectoryGrid; 4]| -> Result<()> {
        grids[0].push(&z[ix..iy])?;
        grids[1].push(&z[iy..iw])?;
        grids[2].push(&z[iw..ib])?;
        grids[3].push(&z[ib..])
    };
    record(&z, &mut grids)?;

    let (g, f0, f) = (&*system.g, &*system.f0, &*system.f);
    let mut f0_buf = vec![0.0; d];
    let mut f_buf = vec![0.0; d];
    let mut f_max = 0.0_f64;
    let mut rhs = |s: &[f64], out: &mut [f64]| {
        let (x, y) = (&s[ix..iy], &s[iy..iw]);
        g.eval(y, &mut out[iy..iw]);
        if c_g != 1.0 {
            for v in &mut out[iy..iw] {
                *v *= c_g;
            }
        }
        f0.eval(y, &mut f0_buf);
        f.eval(x, y, &mut f_buf);
        f_max = f_max.max(crate::max_norm(&f_buf));
        for i in 0..d {
            let a = c_f0 * f0_buf[i];
            let b = c_f * f_buf[i];
            out[ix + i] = a + b;
            out[iw + i] = a;
            out[ib + i] = b;
        }
    };

    let mut rk = Rk4::new(z.len());
    let r = system.trap_radius();
    for step in 1..=n {
        rk.step(&mut rhs, &mut z, h);
        let t = step as f64 * h_tau * eps2;
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::Blowup { time: t });
        }
        let r2: f64 = z[iy..iw].iter().map(|v| v * v).sum();
        if r2 > r * r {
            return Err(Error::TrapExit {
                time: t,
                norm: r2.sqrt(),
                radius: r,
            });
        }
        if step % cfg.record_stride == 0 {
            record(&z, &mut grids)?;
        }
    }
    if f_max > system.bounds.f_sup * (1.0 + 1e-12) {
        return Err(Error::BoundViolation {
            what: "|f(x, y)|",
            value: f_max,
            bound: system.bounds.f_sup,
        });
    }
    let [x, y, w, fint] = grids;
    Ok(SkewRun {
        eps,
        xi: xi.to_vec(),
        x,
        y,
        w,
        fint,
        f_max,
    })
}

fn check_capacity(values: usize, cfg: &IntegratorConfig) -> Result<()> {
    if values > cfg.max_values {
        Err(Error::Capacity {
            requested: values,
            limit: cfg.max_values,
        })
    } else {
        Ok(())
    }
}
