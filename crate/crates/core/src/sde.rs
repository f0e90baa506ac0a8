//! The limiting SDE `X(t) = xi + int_0^t F(X(s)) ds + sqrt(Sigma) W(t)` and
//! the pathwise solution map `G(u) = v`, `v(t) = xi + u(t) + int_0^t F(v(s)) ds`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flows::FlowSystem;
use crate::measure::estimate_f;
use crate::ode::IntegratorConfig;
use crate::rng::rng_from_seed;
use crate::trajectory::{TimeFrame, TrajectoryGrid};

/// Drift `F : R^d -> R^d` of the limiting SDE.
pub trait Drift: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Clone, Copy, Debug)]
pub struct ZeroDrift {
    pub d: usize,
}

impl Drift for ZeroDrift {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// `F(x) = -rate * x`.
#[derive(Clone, Copy, Debug)]
pub struct LinearDrift {
    pub d: usize,
    pub rate: f64,
}

impl Drift for LinearDrift {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -self.rate * v;
        }
    }
}

/// Averaged benchmark coupling: `F_i(x) = -c tanh(x_i) + kappa * m`, where
/// `m` is the `mu`-mean of `sin(y1 / 10)`, computed once.
#[derive(Clone, Copy, Debug)]
pub struct BenchmarkDrift {
    pub d: usize,
    pub c: f64,
    pub kappa: f64,
    pub forcing_mean: f64,
}

impl Drift for BenchmarkDrift {
    fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let k = self.kappa * self.forcing_mean;
        for (o, v) in out.iter_mut().zip(x) {
            *o = -self.c * v.tanh() + k;
        }
    }
}

pub struct FnDrift<F> {
    d: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Send + Sync> FnDrift<F> {
    pub fn new(d: usize, f: F) -> Self {
        FnDrift { d, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Send + Sync> Drift for FnDrift<F> {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

/// `F` tabulated on a tensor grid and evaluated by multilinear
/// interpolation; points outside the box are clamped to it.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDrift {
    d: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    points: usize,
    /// Node values, node index `sum_k i_k * points^k`, each of length `d`.
    values: Vec<Vec<f64>>,
}

impl GridDrift {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, points: usize, values: Vec<Vec<f64>>) -> Result<Self> {
        let d = lo.len();
        if d == 0 || hi.len() != d || points < 2 {
            return Err(Error::Input("grid drift needs matching bounds and >= 2 points per axis".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(b > a)) {
            return Err(Error::Input("grid drift bounds must satisfy lo < hi".into()));
        }
        if values.len() != points.pow(d as u32) || values.iter().any(|v| v.len() != d) {
            return Err(Error::Input("grid drift value table has the wrong shape".into()));
        }
        Ok(GridDrift { d, lo, hi, points, values })
    }

    /// Node coordinates in table order.
    pub fn nodes(lo: &[f64], hi: &[f64], points: usize) -> Vec<Vec<f64>> {
        let d = lo.len();
        (0..points.pow(d as u32))
            .map(|mut idx| {
                (0..d)
                    .map(|k| {
                        let i = idx % points;
                        idx /= points;
                        lo[k] + (hi[k] - lo[k]) * i as f64 / (points - 1) as f64
                    })
                    .collect()
            })
            .collect()
    }
}

impl Drift for GridDrift {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            let cells = (self.points - 1) as f64;
            let s = ((x[k] - self.lo[k]) / (self.hi[k] - self.lo[k]) * cells).clamp(0.0, cells);
            let i = (s.floor() as usize).min(self.points - 2);
            base[k] = i;
            frac[k] = s - i as f64;
        }
        out.fill(0.0);
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            let mut stride = 1;
            for k in 0..d {
                let bit = (corner >> k) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                idx += (base[k] + bit) * stride;
                stride *= self.points;
            }
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(&self.values[idx]) {
                    *o += w * v;
                }
            }
        }
    }
}

/// Tabulates `F_hat` with [`estimate_f`] at every node of a `points^d` grid
/// on the box `[lo, hi]`.
pub fn tabulate_drift(
    system: &FlowSystem,
    lo: &[f64],
    hi: &[f64],
    points: usize,
    horizon: f64,
    eta: &[f64],
    cfg: &IntegratorConfig,
) -> Result<GridDrift> {
    let nodes = GridDrift::nodes(lo, hi, points);
    let values = nodes
        .par_iter()
        .map(|x| estimate_f(system, x, horizon, eta, cfg).map(|a| a.value))
        .collect::<Result<Vec<_>>>()?;
    GridDrift::new(lo.to_vec(), hi.to_vec(), points, values)
}

/// Box spanned by `xs`, padded by `pad` of its width on every side.
pub fn padded_box(xs: &[Vec<f64>], pad: f64) -> (Vec<f64>, Vec<f64>) {
    let d = xs[0].len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for x in xs {
        for k in 0..d {
            lo[k] = lo[k].min(x[k]);
            hi[k] = hi[k].max(x[k]);
        }
    }
    for k in 0..d {
        let w = (hi[k] - lo[k]).max(1e-6);
        lo[k] -= pad * w;
        hi[k] += pad * w;
    }
    (lo, hi)
}

const SYMMETRY_TOL: f64 = 1e-10;
const EIGEN_TOL: f64 = 1e-10;

/// Symmetric PSD square root `S` with `S S^T = S^2 = Sigma`, by spectral
/// decomposition. Eigenvalues in `[-1e-10 scale, 0)` are clipped to zero.
pub fn matrix_sqrt_psd(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma.is_square() {
        return Err(Error::Input("covariance matrix must be square".into()));
    }
    let scale = sigma.amax().max(1.0);
    let asym = (sigma - sigma.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Input(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut roots = eig.eigenvalues.clone();
    for l in roots.iter_mut() {
        if *l < -EIGEN_TOL * scale {
            return Err(Error::Input(format!("matrix is not positive semidefinite (eigenvalue {l:e})")));
        }
        *l = l.max(0.0).sqrt();
    }
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

#[derive(Clone)]
pub struct SdeSpec {
    pub drift: Arc<dyn Drift>,
    pub noise_root: DMatrix<f64>,
    pub xi: Vec<f64>,
}

impl SdeSpec {
    /// Builds the spec from `Sigma`, checking that the root reproduces it.
    pub fn new(drift: Arc<dyn Drift>, sigma: &DMatrix<f64>, xi: Vec<f64>) -> Result<Self> {
        let d = xi.len();
        if drift.dim() != d || sigma.nrows() != d {
            return Err(Error::Dimension {
                context: "SDE spec",
                expected: d,
                got: sigma.nrows(),
            });
        }
        let s = matrix_sqrt_psd(sigma)?;
        let resid = (&s * s.transpose() - sigma).norm();
        if resid > 1e-10 * sigma.norm().max(1.0) {
            return Err(Error::Input(format!("square root reproduces Sigma only to {resid:e}")));
        }
        Ok(SdeSpec {
            drift,
            noise_root: s,
            xi,
        })
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }
}

/// Increments of a standard `d`-dimensional Brownian motion on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub seed: u64,
    pub d: usize,
    pub h: f64,
    /// `steps * d` values, each `N(0, h)`.
    pub increments: Vec<f64>,
}

impl NoisePath {
    pub fn generate(seed: u64, d: usize, steps: usize, h: f64) -> Self {
        let mut rng = rng_from_seed(seed);
        let sd = h.sqrt();
        let increments = (0..steps * d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
            .collect();
        NoisePath { seed, d, h, increments }
    }

    pub fn steps(&self) -> usize {
        self.increments.len() / self.d
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.d..(k + 1) * self.d]
    }

    /// The Brownian path `W(t_k)` itself, starting at 0.
    pub fn path(&self) -> TrajectoryGrid {
        let mut grid = TrajectoryGrid::with_capacity(0.0, self.h, self.d, TimeFrame::Slow, self.steps() + 1);
        let mut w = vec![0.0; self.d];
        grid.push(&w).unwrap();
        for k in 0..self.steps() {
            for (a, b) in w.iter_mut().zip(self.increment(k)) {
                *a += b;
            }
            grid.push(&w).unwrap();
        }
        grid
    }

    /// The same Brownian path on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        if factor == 0 || !self.steps().is_multiple_of(factor) {
            return Err(Error::Input(format!("cannot coarsen {} steps by {factor}", self.steps())));
        }
        let steps = self.steps() / factor;
        let mut increments = vec![0.0; steps * self.d];
        for k in 0..steps {
            for m in 0..factor {
                for (a, b) in increments[k * self.d..(k + 1) * self.d].iter_mut().zip(self.increment(k * factor + m)) {
                    *a += b;
                }
            }
        }
        Ok(NoisePath {
            seed: self.seed,
            d: self.d,
            h: self.h * factor as f64,
            increments,
        })
    }
}

/// `X_{k+1} = X_k + h F(X_k) + S dW_k` on `[0, T]`.
pub fn euler_maruyama(spec: &SdeSpec, horizon: f64, h: f64, noise: &NoisePath) -> Result<TrajectoryGrid> {
    let d = spec.dim();
    if !(h > 0.0) {
        return Err(Error::Input(format!("step must be positive, got {h}")));
    }
    let steps = (horizon / h).round() as usize;
    if steps == 0 || (steps as f64 * h - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::Input(format!("horizon {horizon} is not a whole number of steps {h}")));
    }
    if noise.d != d || noise.steps() != steps || (noise.h - h).abs() > 1e-15 * h {
        return Err(Error::Input("noise path does not match the (T, h) grid".into()));
    }
    let s = &spec.noise_root;
    let mut x = spec.xi.clone();
    let mut f = vec![0.0; d];
    let mut grid = TrajectoryGrid::with_capacity(0.0, h, d, TimeFrame::Slow, steps + 1);
    grid.push(&x)?;
    for k in 0..steps {
        spec.drift.eval(&x, &mut f);
        let dw = noise.increment(k);
        for i in 0..d {
            let mut noise_i = 0.0;
            for j in 0..d {
                noise_i += s[(i, j)] * dw[j];
            }
            x[i] += h * f[i] + noise_i;
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Blowup { time: (k + 1) as f64 * h });
        }
        grid.push(&x)?;
    }
    Ok(grid)
}

const G_MAX_ITER: usize = 50;

/// Solves `v(t) = xi + u(t) + int_0^t F(v(s)) ds` on the grid of `u`:
/// trapezoid quadrature of `F(v)`, with the implicit end-point value found
/// by fixed-point correction from an explicit predictor.
pub fn apply_g(u: &TrajectoryGrid, xi: &[f64], drift: &dyn Drift) -> Result<TrajectoryGrid> {
    let d = xi.len();
    if u.dim() != d || drift.dim() != d {
        return Err(Error::Dimension {
            context: "apply_g",
            expected: d,
            got: u.dim(),
        });
    }
    let h = u.dt;
    let mut out = TrajectoryGrid::with_capacity(u.t0, h, d, u.frame, u.len());
    let mut v: Vec<f64> = xi.iter().zip(u.state(0)).map(|(a, b)| a + b).collect();
    out.push(&v)?;
    let mut quad = vec![0.0; d];
    let mut f_prev = vec![0.0; d];
    let mut f_next = vec![0.0; d];
    let mut base = vec![0.0; d];
    let mut cand = vec![0.0; d];
    drift.eval(&v, &mut f_prev);
    for k in 1..u.len() {
        let uk = u.state(k);
        for i in 0..d {
            base[i] = xi[i] + uk[i] + quad[i] + 0.5 * h * f_prev[i];
            cand[i] = xi[i] + uk[i] + quad[i] + h * f_prev[i];
        }
        let mut converged = false;
        for _ in 0..G_MAX_ITER {
            drift.eval(&cand, &mut f_next);
            let mut change = 0.0_f64;
            let mut size = 0.0_f64;
            for i in 0..d {
                let nv = base[i] + 0.5 * h * f_next[i];
                change = change.max((nv - cand[i]).abs());
                size = size.max(nv.abs());
                cand[i] = nv;
            }
            if !(change.is_finite() && size.is_finite()) || cand.iter().any(|c| !c.is_finite()) {
                break;
            }
            if change <= 1e-15 * (1.0 + size) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergent { step: k });
        }
        drift.eval(&cand, &mut f_next);
        for i in 0..d {
            quad[i] += 0.5 * h * (f_prev[i] + f_next[i]);
        }
        v.copy_from_slice(&cand);
        std::mem::swap(&mut f_prev, &mut f_next);
        out.push(&v)?;
    }
    Ok(out)
}
