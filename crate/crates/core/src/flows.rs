//! Vector fields of the skew-product system and the [`FlowSystem`] container.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// The autonomous fast field `g : R^l -> R^l`.
pub trait FastField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, y: &[f64], out: &mut [f64]);

    /// Radius of an absorbing ball; leaving it means the integrator failed.
    fn trap_radius(&self) -> f64 {
        f64::INFINITY
    }

    /// Rough decorrelation time in fast-time units, used to flag sample
    /// spacings that are too short.
    fn decorrelation_time(&self) -> f64 {
        1.0
    }
}

/// An observable `R^l -> R^k` of the fast state (used for `f0` and for
/// ergodic averages).
pub trait Observable: Send + Sync {
    fn dim_out(&self) -> usize;
    fn eval(&self, y: &[f64], out: &mut [f64]);
}

/// The coupling field `f : R^d x R^l -> R^d`.
pub trait Coupling: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub trap_radius: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        LorenzParams {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            trap_radius: 100.0,
        }
    }
}

impl LorenzParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.sigma, self.rho, self.beta, self.trap_radius]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("Lorenz parameters must be positive: {self:?}")))
        }
    }

    /// The two nontrivial equilibria `C+` and `C-` (requires `rho > 1`).
    pub fn equilibria(&self) -> [[f64; 3]; 2] {
        let r = (self.beta * (self.rho - 1.0)).sqrt();
        [[r, r, self.rho - 1.0], [-r, -r, self.rho - 1.0]]
    }
}

/// The Lorenz vector field `(s(y2 - y1), y1(r - y3) - y2, y1 y2 - b y3)`.
pub fn lorenz_g(p: &LorenzParams, y: &[f64]) -> Result<[f64; 3]> {
    if y.len() != 3 {
        return Err(Error::Dimension {
            context: "lorenz_g",
            expected: 3,
            got: y.len(),
        });
    }
    let mut out = [0.0; 3];
    Lorenz(*p).eval(y, &mut out);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lorenz(pub LorenzParams);

impl FastField for Lorenz {
    fn dim(&self) -> usize {
        3
    }

    #[inline]
    fn eval(&self, y: &[f64], out: &mut [f64]) {
        let p = &self.0;
        out[0] = p.sigma * (y[1] - y[0]);
        out[1] = y[0] * (p.rho - y[2]) - y[1];
        out[2] = y[0] * y[1] - p.beta * y[2];
    }

    fn trap_radius(&self) -> f64 {
        self.0.trap_radius
    }

    fn decorrelation_time(&self) -> f64 {
        // one Lyapunov time at the classical parameters (lambda_max ~ 0.906)
        1.0 / 0.9056
    }
}

/// `g(y) = -rate * y`; has a closed-form flow, used for checking the
/// integrators.
#[derive(Clone, Copy, Debug)]
pub struct LinearDecay {
    pub dim: usize,
    pub rate: f64,
}

impl FastField for LinearDecay {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(y) {
            *o = -self.rate * v;
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ZeroField {
    pub dim: usize,
}

impl FastField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Default fluctuation field on the Lorenz attractor: `y2` for `d = 1`,
/// `(y1, y2)` for `d = 2`. Both are odd under `(y1, y2, y3) -> (-y1, -y2, y3)`,
/// which preserves the invariant measure, so they have mean zero.
pub fn default_f0(y: &[f64], d: usize) -> Result<Vec<f64>> {
    let f0 = DefaultF0::new(d)?;
    if y.len() != 3 {
        return Err(Error::Dimension {
            context: "default_f0",
            expected: 3,
            got: y.len(),
        });
    }
    let mut out = vec![0.0; d];
    f0.eval(y, &mut out);
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct DefaultF0 {
    d: usize,
}

impl DefaultF0 {
    pub fn new(d: usize) -> Result<Self> {
        match d {
            1 | 2 => Ok(DefaultF0 { d }),
            _ => Err(Error::Config(format!(
                "default f0 supports d in {{1, 2}}, got {d}; supply a custom f0"
            ))),
        }
    }
}

impl Observable for DefaultF0 {
    fn dim_out(&self) -> usize {
        self.d
    }

    #[inline]
    fn eval(&self, y: &[f64], out: &mut [f64]) {
        if self.d == 1 {
            out[0] = y[1];
        } else {
            out[0] = y[0];
            out[1] = y[1];
        }
    }
}

/// First `d` coordinates of `y`. Has no mean-zero guarantee in general; wrap
/// it in [`Centered`].
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub d: usize,
}

impl Observable for Projection {
    fn dim_out(&self) -> usize {
        self.d
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&y[..self.d]);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ZeroObservable {
    pub dim: usize,
}

impl Observable for ZeroObservable {
    fn dim_out(&self) -> usize {
        self.dim
    }

    fn eval(&self, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// `f0 - m` for an estimated mean `m` (runtime centering).
#[derive(Clone)]
pub struct Centered {
    pub inner: Arc<dyn Observable>,
    pub mean: Vec<f64>,
}

impl Observable for Centered {
    fn dim_out(&self) -> usize {
        self.inner.dim_out()
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) {
        self.inner.eval(y, out);
        for (o, m) in out.iter_mut().zip(&self.mean) {
            *o -= m;
        }
    }
}

/// Closure-backed observable.
pub struct FnObservable<F> {
    dim_out: usize,
    f: F,
}

impl<F> FnObservable<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim_out: usize, f: F) -> Self {
        FnObservable { dim_out, f }
    }
}

impl<F> Observable for FnObservable<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn dim_out(&self) -> usize {
        self.dim_out
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) {
        (self.f)(y, out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchmarkParams {
    pub c: f64,
    pub kappa: f64,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        BenchmarkParams { c: 1.0, kappa: 1.0 }
    }
}

/// Default test coupling: `f_i(x, y) = -c tanh(x_i) + kappa sin(y1 / 10)`.
#[derive(Clone, Copy, Debug)]
pub struct Benchmark {
    pub d: usize,
    pub params: BenchmarkParams,
}

impl Benchmark {
    pub fn new(d: usize, params: BenchmarkParams) -> Result<Self> {
        if !(params.c >= 0.0 && params.kappa >= 0.0) {
            return Err(Error::Config(format!(
                "benchmark coupling needs c, kappa >= 0, got {params:?}"
            )));
        }
        Ok(Benchmark { d, params })
    }

    /// `|f|_inf <= c + kappa`.
    pub fn sup_bound(&self) -> f64 {
        self.params.c + self.params.kappa
    }

    /// Lipschitz constant: `c` in `x`, `kappa / 10` in `y`.
    pub fn lipschitz(&self) -> f64 {
        self.params.c.max(self.params.kappa / 10.0)
    }
}

impl Coupling for Benchmark {
    fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let forcing = self.params.kappa * (y[0] / 10.0).sin();
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -self.params.c * xi.tanh() + forcing;
        }
    }
}

pub fn benchmark_f(x: &[f64], y: &[f64], params: BenchmarkParams) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(Error::Dimension {
            context: "benchmark_f",
            expected: 1,
            got: 0,
        });
    }
    let b = Benchmark::new(x.len(), params)?;
    let mut out = vec![0.0; x.len()];
    b.eval(x, y, &mut out);
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct ZeroCoupling {
    pub d: usize,
}

impl Coupling for ZeroCoupling {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// `f(x, y) = -c tanh(x)`, independent of `y`.
#[derive(Clone, Copy, Debug)]
pub struct TanhRelaxation {
    pub d: usize,
    pub c: f64,
}

impl Coupling for TanhRelaxation {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, x: &[f64], _y: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -self.c * xi.tanh();
        }
    }
}

pub struct FnCoupling<F> {
    d: usize,
    f: F,
}

impl<F> FnCoupling<F>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(d: usize, f: F) -> Self {
        FnCoupling { d, f }
    }
}

impl<F> Coupling for FnCoupling<F>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.f)(x, y, out)
    }
}

/// Declared bounds: `|f|_inf`, `|f0|_inf` on the trapping region, and the
/// Lipschitz constant `L` of `f`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub f_sup: f64,
    pub f0_sup: f64,
    pub lip_f: f64,
}

/// The full skew-product system `(g, f0, f, eps)` with its bound metadata.
#[derive(Clone)]
pub struct FlowSystem {
    pub d: usize,
    pub ell: usize,
    pub eps: f64,
    pub g: Arc<dyn FastField>,
    pub f0: Arc<dyn Observable>,
    pub f: Arc<dyn Coupling>,
    pub bounds: Bounds,
}

impl fmt::Debug for FlowSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowSystem")
            .field("d", &self.d)
            .field("ell", &self.ell)
            .field("eps", &self.eps)
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}

impl FlowSystem {
    pub fn new(
        g: Arc<dyn FastField>,
        f0: Arc<dyn Observable>,
        f: Arc<dyn Coupling>,
        eps: f64,
        bounds: Bounds,
    ) -> Result<Self> {
        let ell = g.dim();
        let d = f0.dim_out();
        if d == 0 || ell == 0 {
            return Err(Error::Config("d and ell must be at least 1".into()));
        }
        if f.dim() != d {
            return Err(Error::Dimension {
                context: "coupling field",
                expected: d,
                got: f.dim(),
            });
        }
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::Config(format!("eps must lie in (0, 1], got {eps}")));
        }
        let b = bounds;
        if !(b.f_sup >= 0.0 && b.f0_sup >= 0.0 && b.lip_f >= 0.0) {
            return Err(Error::Config(format!("bounds must be nonnegative: {b:?}")));
        }
        Ok(FlowSystem {
            d,
            ell,
            eps,
            g,
            f0,
            f,
            bounds,
        })
    }

    /// Lorenz fast flow, default `f0`, benchmark coupling.
    pub fn lorenz_benchmark(d: usize, eps: f64, lorenz: LorenzParams, params: BenchmarkParams) -> Result<Self> {
        lorenz.validate()?;
        let f = Benchmark::new(d, params)?;
        let bounds = Bounds {
            f_sup: f.sup_bound(),
            f0_sup: lorenz.trap_radius,
            lip_f: f.lipschitz(),
        };
        FlowSystem::new(
            Arc::new(Lorenz(lorenz)),
            Arc::new(DefaultF0::new(d)?),
            Arc::new(f),
            eps,
            bounds,
        )
    }

    /// Same fields with a different scale separation.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        FlowSystem::new(self.g.clone(), self.f0.clone(), self.f.clone(), eps, self.bounds)
    }

    pub fn with_f0(&self, f0: Arc<dyn Observable>) -> Result<Self> {
        FlowSystem::new(self.g.clone(), f0, self.f.clone(), self.eps, self.bounds)
    }

    pub fn with_coupling(&self, f: Arc<dyn Coupling>, bounds: Bounds) -> Result<Self> {
        FlowSystem::new(self.g.clone(), self.f0.clone(), f, self.eps, bounds)
    }

    pub fn trap_radius(&self) -> f64 {
        self.g.trap_radius()
    }

    pub fn check_fast_state(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.ell {
            return Err(Error::Dimension {
                context: "fast state",
                expected: self.ell,
                got: y.len(),
            });
        }
        crate::ensure_finite(y, "fast state")
    }

    pub fn check_slow_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Dimension {
                context: "slow state",
                expected: self.d,
                got: x.len(),
            });
        }
        crate::ensure_finite(x, "slow state")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn lorenz_examples() {
        let p = LorenzParams::default();
        assert_eq!(lorenz_g(&p, &[0.0, 0.0, 0.0]).unwrap(), [0.0, 0.0, 0.0]);
        let v = lorenz_g(&p, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 26.0);
        assert!((v[2] + 5.0 / 3.0).abs() < 1e-15);
        assert!(matches!(lorenz_g(&p, &[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn lorenz_vanishes_at_equilibria() {
        let p = LorenzParams::default();
        for c in p.equilibria() {
            let v = lorenz_g(&p, &c).unwrap();
            assert!(crate::max_norm(&v) <= 1e-12, "{v:?}");
        }
    }

    #[test]
    fn lorenz_equivariant_under_rotation() {
        let p = LorenzParams::default();
        let mut rng = rng_from_seed(11);
        for _ in 0..1000 {
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-30.0..30.0)).collect();
            let sy = [-y[0], -y[1], y[2]];
            let gy = lorenz_g(&p, &y).unwrap();
            let gsy = lorenz_g(&p, &sy).unwrap();
            assert_eq!(gsy, [-gy[0], -gy[1], gy[2]]);
        }
    }

    #[test]
    fn default_f0_projections() {
        assert_eq!(default_f0(&[1.0, 2.0, 3.0], 1).unwrap(), vec![2.0]);
        assert_eq!(default_f0(&[0.0, 0.0, 17.0], 2).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(default_f0(&[1.0, 2.0, 3.0], 3), Err(Error::Config(_))));
    }

    #[test]
    fn benchmark_examples() {
        let p = BenchmarkParams { c: 1.0, kappa: 1.0 };
        assert_eq!(benchmark_f(&[0.0], &[0.0, 5.0, 9.0], p).unwrap(), vec![0.0]);
        let sat = BenchmarkParams { c: 1.0, kappa: 0.0 };
        let mut prev = 0.0;
        for x in [1.0, 2.0, 5.0, 10.0, 40.0] {
            let v = benchmark_f(&[x], &[3.0, 0.0, 0.0], sat).unwrap()[0];
            assert!(v < prev && v >= -1.0);
            prev = v;
        }
        assert!((prev + 1.0).abs() < 1e-15);
        assert!(Benchmark::new(1, BenchmarkParams { c: -1.0, kappa: 0.0 }).is_err());
    }

    #[test]
    fn system_validation() {
        let p = LorenzParams::default();
        assert!(FlowSystem::lorenz_benchmark(2, 0.0, p, BenchmarkParams::default()).is_err());
        assert!(FlowSystem::lorenz_benchmark(2, 1.5, p, BenchmarkParams::default()).is_err());
        let s = FlowSystem::lorenz_benchmark(2, 0.25, p, BenchmarkParams::default()).unwrap();
        assert_eq!((s.d, s.ell), (2, 3));
        assert_eq!(s.bounds.f_sup, 2.0);
        assert_eq!(s.bounds.lip_f, 1.0);
        let bad = FlowSystem::new(
            s.g.clone(),
            s.f0.clone(),
            Arc::new(ZeroCoupling { d: 1 }),
            0.5,
            s.bounds,
        );
        assert!(matches!(bad, Err(Error::Dimension { .. })));
    }

    proptest! {
        #[test]
        fn benchmark_lipschitz_in_x(
            x in prop::collection::vec(-50.0f64..50.0, 2),
            xp in prop::collection::vec(-50.0f64..50.0, 2),
            y1 in -30.0f64..30.0,
            c in 0.0f64..3.0,
            kappa in 0.0f64..3.0,
        ) {
            let p = BenchmarkParams { c, kappa };
            let y = [y1, 0.0, 0.0];
            let a = benchmark_f(&x, &y, p).unwrap();
            let b = benchmark_f(&xp, &y, p).unwrap();
            let dx: Vec<f64> = x.iter().zip(&xp).map(|(u, v)| u - v).collect();
            let df: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u - v).collect();
            prop_assert!(crate::max_norm(&df) <= c * crate::max_norm(&dx) + 1e-12);
            prop_assert!(crate::max_norm(&a) <= c + kappa + 1e-12);
        }
    }
}
