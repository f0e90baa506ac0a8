use crate::error::{Error, Result};
use crate::flows::FlowSystem;
use crate::ode::SkewRun;
use crate::sde::{apply_g, Drift};
use crate::trajectory::TrajectoryGrid;

/// Block decomposition of `Z(t) = int_0^t g(x(s), y(s)) ds`, with
/// `g(x, y) = f(x, y) - F(x)`, into the tail `I0` on `[N delta, t]`, the
/// freezing error `I1` and the window-average error `I2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ZDecomposition {
    pub delta: f64,
    /// Block width in grid steps; the block length `block_steps * dt` never
    /// exceeds `delta`.
    pub block_steps: usize,
    pub blocks: usize,
    pub z_sup: f64,
    pub i0_sup: f64,
    pub i1_sup: f64,
    pub i2_sup: f64,
    /// `sup_t |Z(t) - (I0 + I1 + I2)(t)|`.
    pub telescoping: f64,
    /// `2 |f|_inf delta`.
    pub b0: f64,
    /// `2 L (|f0|_inf + |f|_inf) T delta / eps`.
    pub b1: f64,
}

impl ZDecomposition {
    pub fn i0_within(&self, tol: f64) -> bool {
        self.i0_sup <= self.b0 + tol
    }

    pub fn i1_within(&self, tol: f64) -> bool {
        self.i1_sup <= self.b1 + tol
    }
}

/// `I0 <= 2|f|_inf delta` and `I1 <= 2 L (|f0|_inf + |f|_inf) T delta / eps`.
pub fn analytic_bounds(system: &FlowSystem, horizon: f64, delta: f64) -> (f64, f64) {
    let b = &system.bounds;
    let b0 = 2.0 * b.f_sup * delta;
    let b1 = 2.0 * b.lip_f * (b.f0_sup + b.f_sup) * horizon * delta / system.eps;
    (b0, b1)
}

/// Quadrature is the trapezoid rule on the common slow grid of `x` and `y`.
pub fn decompose_z(x: &TrajectoryGrid, y: &TrajectoryGrid, system: &FlowSystem, drift: &dyn Drift, delta: f64) -> Result<ZDecomposition> {
    let d = system.d;
    if x.dim() != d || y.dim() != system.ell || drift.dim() != d {
        return Err(Error::Dimension {
            context: "decompose_z",
            expected: d,
            got: x.dim(),
        });
    }
    if x.len() != y.len() || x.t0 != y.t0 || x.dt != y.dt || x.frame != y.frame || x.len() < 2 {
        return Err(Error::Input("slow and fast trajectories are not on the same grid".into()));
    }
    let dt = x.dt;
    if !(delta >= 10.0 * dt) {
        return Err(Error::Input(format!("delta = {delta} must be at least 10 grid steps ({dt})")));
    }
    let kb = ((delta / dt) * (1.0 + 1e-12)).floor() as usize;
    let (b0, b1) = analytic_bounds(system, x.t_end() - x.t0, delta);

    let (f, n) = (&*system.f, x.len());
    let mut bf = vec![0.0; d];
    let mut bd = vec![0.0; d];
    let mut g = |xs: &[f64], ys: &[f64], out: &mut [f64]| {
        f.eval(xs, ys, &mut bf);
        drift.eval(xs, &mut bd);
        for i in 0..d {
            out[i] = bf[i] - bd[i];
        }
    };

    let mut out = ZDecomposition {
        delta,
        block_steps: kb,
        blocks: (n - 1) / kb,
        z_sup: 0.0,
        i0_sup: 0.0,
        i1_sup: 0.0,
        i2_sup: 0.0,
        telescoping: 0.0,
        b0,
        b1,
    };
    let zeros = || vec![0.0; d];
    let (mut z, mut i1, mut i2) = (zeros(), zeros(), zeros());
    // running integrals over the open block
    let (mut open_path, mut open_diff, mut open_frozen) = (zeros(), zeros(), zeros());
    let (mut gp0, mut gp1, mut gf0, mut gf1) = (zeros(), zeros(), zeros(), zeros());
    let mut sum = zeros();
    g(x.state(0), y.state(0), &mut gp0);
    for k in 1..n {
        let anchor = x.state(((k - 1) / kb) * kb);
        g(x.state(k), y.state(k), &mut gp1);
        g(anchor, y.state(k - 1), &mut gf0);
        g(anchor, y.state(k), &mut gf1);
        for i in 0..d {
            let seg = 0.5 * dt * (gp0[i] + gp1[i]);
            z[i] += seg;
            open_path[i] += seg;
            open_diff[i] += 0.5 * dt * ((gp0[i] - gf0[i]) + (gp1[i] - gf1[i]));
            open_frozen[i] += 0.5 * dt * (gf0[i] + gf1[i]);
        }
        if k % kb == 0 {
            for i in 0..d {
                i1[i] += open_diff[i];
                i2[i] += open_frozen[i];
            }
            open_path.fill(0.0);
            open_diff.fill(0.0);
            open_frozen.fill(0.0);
        }
        for i in 0..d {
            sum[i] = z[i] - (open_path[i] + i1[i] + i2[i]);
        }
        out.z_sup = out.z_sup.max(crate::max_norm(&z));
        out.i0_sup = out.i0_sup.max(crate::max_norm(&open_path));
        out.i1_sup = out.i1_sup.max(crate::max_norm(&i1));
        out.i2_sup = out.i2_sup.max(crate::max_norm(&i2));
        out.telescoping = out.telescoping.max(crate::max_norm(&sum));
        std::mem::swap(&mut gp0, &mut gp1);
    }
    Ok(out)
}

/// `sup_t |x(t) - G(W + Z)(t)|` for a skew-product run, with
/// `Z = int f(x, y) ds - int F(x) ds` (the second integral by the
/// trapezoid rule on the output grid, matching the quadrature in `G`).
pub fn g_oracle_residual(run: &SkewRun, drift: &dyn Drift) -> Result<f64> {
    let d = run.xi.len();
    let n = run.x.len();
    let dt = run.x.dt;
    let mut u = TrajectoryGrid::with_capacity(run.x.t0, dt, d, run.x.frame, n);
    let mut quad = vec![0.0; d];
    let mut prev = vec![0.0; d];
    let mut cur = vec![0.0; d];
    let mut row = vec![0.0; d];
    drift.eval(run.x.state(0), &mut prev);
    for k in 0..n {
        if k > 0 {
            drift.eval(run.x.state(k), &mut cur);
            for i in 0..d {
                quad[i] += 0.5 * dt * (prev[i] + cur[i]);
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        let (w, b) = (run.w.state(k), run.fint.state(k));
        for i in 0..d {
            row[i] = w[i] + b[i] - quad[i];
        }
        u.push(&row)?;
    }
    let v = apply_g(&u, &run.xi, drift)?;
    v.sup_distance(&run.x)
}
