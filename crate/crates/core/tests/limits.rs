use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use skewlab::convergence::{ks_noise_floor, ks_two_sample};
use skewlab::flows::{BenchmarkParams, LorenzParams};
use skewlab::limit_laws::{estimate_sigma_ensemble, estimate_sigma_green_kubo, GreenKuboConfig};
use skewlab::measure::{sample_mu, MuSampler};
use skewlab::ode::IntegratorConfig;
use skewlab::rng::{derive_seed, rng_from_seed};
use skewlab::sde::{
    apply_g, euler_maruyama, matrix_sqrt_psd, tabulate_drift, BenchmarkDrift, Drift, LinearDrift, NoisePath, SdeSpec,
    ZeroDrift,
};
use skewlab::{FlowSystem, TimeFrame, TrajectoryGrid};

fn lorenz(d: usize) -> FlowSystem {
    FlowSystem::lorenz_benchmark(d, 1.0, LorenzParams::default(), BenchmarkParams::default()).unwrap()
}

fn drift() -> BenchmarkDrift {
    BenchmarkDrift {
        d: 2,
        c: 1.0,
        kappa: 1.0,
        forcing_mean: 0.02,
    }
}

fn scaled(noise: &NoisePath, s: &DMatrix<f64>) -> TrajectoryGrid {
    let w = noise.path();
    let rows: Vec<Vec<f64>> = w
        .states()
        .map(|x| (s * DVector::from_column_slice(x)).as_slice().to_vec())
        .collect();
    TrajectoryGrid::from_rows(0.0, w.dt, TimeFrame::Slow, &rows).unwrap()
}

#[test]
fn green_kubo_has_a_plateau() {
    let sys = lorenz(2);
    let eta = sample_mu(&sys, &MuSampler::default(), 1, &IntegratorConfig::default()).unwrap().states.remove(0);
    let cfg = IntegratorConfig::default();
    let gk = |t_corr: f64| {
        let c = GreenKuboConfig {
            t_corr,
            ..GreenKuboConfig::default()
        };
        estimate_sigma_green_kubo(&sys, &c, &eta, &cfg).unwrap()
    };
    let (a, b) = (gk(10.0), gk(20.0));
    assert!(a.is_symmetric() && b.is_symmetric());
    let rel = (&a.sigma - &b.sigma).norm() / b.sigma.norm();
    assert!(rel <= 0.05, "t_corr 10 -> 20 changes Sigma by {rel}");
}

#[test]
fn scalar_ensemble_sigma_is_nonnegative() {
    let sys = lorenz(1);
    let (est, _) = estimate_sigma_ensemble(&sys, 20.0, 40, &MuSampler::default(), &IntegratorConfig::default()).unwrap();
    assert_eq!(est.sigma.shape(), (1, 1));
    assert!(est.sigma[(0, 0)] >= 0.0);
}

#[test]
fn linear_drift_without_noise_decays_at_first_order() {
    let spec = SdeSpec::new(Arc::new(LinearDrift { d: 1, rate: 1.0 }), &DMatrix::zeros(1, 1), vec![1.0]).unwrap();
    let err = |h: f64| {
        let steps = (1.0 / h).round() as usize;
        let x = euler_maruyama(&spec, 1.0, h, &NoisePath::generate(1, 1, steps, h)).unwrap();
        (x.last()[0] - (-1.0f64).exp()).abs()
    };
    let ratio = err(0.01) / err(0.005);
    assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
}

#[test]
fn ornstein_uhlenbeck_variance() {
    let (s, h, m) = (1.3, 1e-3, 5000);
    let spec = SdeSpec::new(Arc::new(LinearDrift { d: 1, rate: 1.0 }), &DMatrix::from_element(1, 1, s * s), vec![0.0]).unwrap();
    let ends: Vec<f64> = (0..m)
        .map(|i| euler_maruyama(&spec, 1.0, h, &NoisePath::generate(derive_seed(3, "ou", i), 1, 1000, h)).unwrap().last()[0])
        .collect();
    let mean = ends.iter().sum::<f64>() / m as f64;
    let sq: Vec<f64> = ends.iter().map(|x| (x - mean).powi(2)).collect();
    let var = sq.iter().sum::<f64>() / (m - 1) as f64;
    let sd_sq = (sq.iter().map(|v| (v - var).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
    let exact = s * s * (1.0 - (-2.0f64).exp()) / 2.0;
    assert!((var - exact).abs() <= 3.0 * sd_sq / (m as f64).sqrt(), "{var} vs {exact}");
}

#[test]
fn g_map_and_euler_maruyama_agree_at_first_order() {
    let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
    let s = matrix_sqrt_psd(&sigma).unwrap();
    let spec = SdeSpec::new(Arc::new(drift()), &sigma, vec![0.3, -0.4]).unwrap();
    let fine = 1 << 12;
    let hs: Vec<f64> = [64usize, 32, 16, 8].iter().map(|f| *f as f64 / fine as f64).collect();
    let mut errs = vec![0.0; hs.len()];
    for path in 0..8 {
        let noise = NoisePath::generate(derive_seed(5, "g-vs-em", path), 2, fine, 1.0 / fine as f64);
        for (k, f) in [64usize, 32, 16, 8].iter().enumerate() {
            let coarse = noise.coarsen(*f).unwrap();
            let em = euler_maruyama(&spec, 1.0, coarse.h, &coarse).unwrap();
            let g = apply_g(&scaled(&coarse, &s), &spec.xi, &drift()).unwrap();
            errs[k] += em.sup_distance(&g).unwrap() / 8.0;
        }
    }
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let order = skewlab::stats::covariance(&xs, &ys) / skewlab::stats::variance(&xs);
    assert!(order >= 0.9, "order {order}, errors {errs:?}");
}

#[test]
fn tabulated_drift_respects_coupling_bound() {
    let sys = lorenz(1);
    let eta = sample_mu(&sys, &MuSampler::default(), 1, &IntegratorConfig::default()).unwrap().states.remove(0);
    let grid = tabulate_drift(&sys, &[-5.0], &[5.0], 11, 200.0, &eta, &IntegratorConfig::default()).unwrap();
    let h = 1e-3;
    let mut out = [0.0];
    for x in [-7.0, -5.0, -0.3, 0.0, 2.2, 5.0, 9.0] {
        grid.eval(&[x], &mut out);
        assert!((h * out[0]).abs() <= h * sys.bounds.f_sup, "x {x}: {out:?}");
    }
}

#[test]
fn ks_calibrates_on_identical_laws() {
    let critical = 1.63 * (2.0f64 / 2000.0).sqrt();
    let trials = 200;
    let below = (0..trials)
        .filter(|&i| {
            let mut rng = rng_from_seed(derive_seed(11, "ks-calibration", i));
            let mut draw = || -> Vec<f64> { (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect() };
            let (a, b) = (draw(), draw());
            ks_two_sample(&a, &b).unwrap() < critical
        })
        .count();
    assert!(below as f64 >= 0.95 * trials as f64, "{below} of {trials}");
    assert!(ks_noise_floor(2000, 2000) < critical);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn g_map_is_gronwall_continuous(seed in any::<u64>(), delta in 0.001f64..0.5, freq in 0.5f64..20.0) {
        let h = 1e-3;
        let noise = NoisePath::generate(seed, 2, 1000, h);
        let s = DMatrix::from_diagonal_element(2, 2, 1.5);
        let u = scaled(&noise, &s);
        let rows: Vec<Vec<f64>> = u
            .states()
            .enumerate()
            .map(|(k, x)| {
                let bump = delta * (freq * k as f64 * h).sin();
                vec![x[0] + bump, x[1] - bump]
            })
            .collect();
        let u2 = TrajectoryGrid::from_rows(0.0, h, TimeFrame::Slow, &rows).unwrap();
        let gap = u.sup_distance(&u2).unwrap();
        let xi = [0.2, -0.1];
        let a = apply_g(&u, &xi, &drift()).unwrap();
        let b = apply_g(&u2, &xi, &drift()).unwrap();
        let bound = 1.1 * gap * 1.0f64.exp() + 10.0 * h * gap;
        prop_assert!(a.sup_distance(&b).unwrap() <= bound);
    }

    #[test]
    fn noise_paths_reproduce_from_seed(seed in any::<u64>(), steps in 1usize..200) {
        prop_assert_eq!(NoisePath::generate(seed, 2, steps, 0.01), NoisePath::generate(seed, 2, steps, 0.01));
    }

    #[test]
    fn zero_drift_g_is_a_shift(seed in any::<u64>()) {
        let u = NoisePath::generate(seed, 1, 100, 0.01).path();
        let v = apply_g(&u, &[0.7], &ZeroDrift { d: 1 }).unwrap();
        for k in 0..u.len() {
            prop_assert_eq!(v.state(k)[0], 0.7 + u.state(k)[0]);
        }
        prop_assert_eq!(ZeroDrift { d: 1 }.dim(), 1);
    }
}
