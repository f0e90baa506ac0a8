use std::sync::Arc;

use proptest::prelude::*;
use skewlab::flows::{
    benchmark_f, Benchmark, BenchmarkParams, Bounds, FnCoupling, FnObservable, LinearDecay, LorenzParams, Observable,
    Projection, ZeroCoupling,
};
use skewlab::measure::{
    ergodic_average, estimate_f, sample_average, sample_mu, stationarity_check, MuSampler, DEFAULT_BATCHES,
};
use skewlab::ode::{integrate_fast, integrate_skew, integrate_skew_with, rk4_step, FastStepper, Formulation, IntegratorConfig};
use skewlab::rng::derive_seed;
use skewlab::{max_norm, FlowSystem};

fn lorenz(d: usize) -> FlowSystem {
    FlowSystem::lorenz_benchmark(d, 1.0, LorenzParams::default(), BenchmarkParams::default()).unwrap()
}

fn cfg() -> IntegratorConfig {
    IntegratorConfig::default()
}

fn sampler(tag: &str) -> MuSampler {
    MuSampler::default().with_seed(derive_seed(7, tag, 0))
}

fn eta(sys: &FlowSystem, tag: &str) -> Vec<f64> {
    sample_mu(sys, &sampler(tag), 1, &cfg()).unwrap().states.remove(0)
}

fn decay_system(eps: f64) -> FlowSystem {
    let bounds = Bounds {
        f_sup: 0.0,
        f0_sup: 10.0,
        lip_f: 0.0,
    };
    FlowSystem::new(
        Arc::new(LinearDecay { dim: 1, rate: 1.0 }),
        Arc::new(Projection { d: 1 }),
        Arc::new(ZeroCoupling { d: 1 }),
        eps,
        bounds,
    )
    .unwrap()
}

#[test]
fn rk4_fitted_order_on_exponential() {
    let err = |n: usize| {
        let h = 1.0 / n as f64;
        let mut y = vec![1.0];
        for _ in 0..n {
            y = rk4_step(|s: &[f64], o: &mut [f64]| o[0] = -s[0], &y, h).unwrap();
        }
        (y[0] - (-1.0f64).exp()).abs()
    };
    let errs: Vec<f64> = [8, 16, 32, 64].iter().map(|&n| err(n)).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 3.8, "halving order {order}");
    }
}

#[test]
fn lorenz_stays_in_trap_for_long_runs() {
    let sys = lorenz(2);
    let mut s = FastStepper::new(&sys, &[1.0, 1.0, 1.0], 0.005).unwrap();
    let mut peak = 0.0_f64;
    for _ in 0..2_000 {
        s.advance_n(1000).unwrap();
        peak = peak.max(max_norm(s.y()));
    }
    assert!((s.time() - 1.0e4).abs() < 1e-6);
    assert!(peak <= 100.0 && peak > 10.0, "peak {peak}");
}

#[test]
fn skew_y_path_is_rescaled_fast_path() {
    let sys = lorenz(2).with_eps(0.25).unwrap();
    let e = eta(&sys, "rescale");
    let run = integrate_skew(&sys, &[0.0, 0.0], &e, 0.5, &cfg()).unwrap();
    let fast = integrate_fast(&sys, &e, 0.5 / 0.0625, &cfg()).unwrap();
    assert_eq!(run.y.len(), fast.len());
    assert_eq!(run.y.as_flat(), fast.as_flat());
}

#[test]
fn fast_and_slow_formulations_agree_at_unit_eps() {
    let sys = lorenz(2);
    let e = eta(&sys, "unit-eps");
    let a = integrate_skew_with(&sys, &[0.3, -0.2], &e, 2.0, &cfg(), Formulation::FastTime).unwrap();
    let b = integrate_skew_with(&sys, &[0.3, -0.2], &e, 2.0, &cfg(), Formulation::SlowTime).unwrap();
    assert!(a.x.sup_distance(&b.x).unwrap() <= 1e-10);
    assert!(a.y.sup_distance(&b.y).unwrap() <= 1e-10);
}

#[test]
fn linear_fast_flow_has_closed_form_slow_path() {
    // g = -y, f0 = y, f = 0: x(t) = xi + eps * eta * (1 - exp(-t / eps^2))
    for eps in [1.0, 0.5, 0.2] {
        let sys = decay_system(eps);
        let run = integrate_skew(&sys, &[0.4], &[2.0], 1.0, &cfg()).unwrap();
        let worst = (0..run.x.len())
            .map(|k| {
                let t = run.x.time(k);
                let exact = 0.4 + eps * 2.0 * (1.0 - (-t / (eps * eps)).exp());
                (run.x.state(k)[0] - exact).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst <= 1e-6, "eps {eps}: {worst}");
    }
}

#[test]
fn runs_are_bit_identical() {
    let sys = lorenz(2).with_eps(0.5).unwrap();
    let e = eta(&sys, "determinism");
    let a = integrate_skew(&sys, &[0.1, 0.2], &e, 1.0, &cfg()).unwrap();
    let b = integrate_skew(&sys, &[0.1, 0.2], &e, 1.0, &cfg()).unwrap();
    assert_eq!(a.x.as_flat(), b.x.as_flat());
    assert_eq!(a.w.as_flat(), b.w.as_flat());
}

#[test]
fn mu_samples_are_symmetric_in_y1() {
    let sys = lorenz(2);
    let s = sample_mu(&sys, &sampler("mu-y1").with_spacing(2.0), 10_000, &cfg()).unwrap();
    assert_eq!(s.len(), 10_000);
    assert!(s.states.iter().all(|y| max_norm(y) <= 100.0));
    let m = s.states.iter().map(|y| y[0]).sum::<f64>() / s.len() as f64;
    assert!(m.abs() <= 0.1, "mean y1 {m}");
}

#[test]
fn y3_mean_agrees_across_seeds() {
    let sys = lorenz(2);
    let y3 = FnObservable::new(1, |y: &[f64], o: &mut [f64]| o[0] = y[2]);
    let a = sample_average(&y3, &sample_mu(&sys, &sampler("y3-a"), 2000, &cfg()).unwrap().states);
    let b = sample_average(&y3, &sample_mu(&sys, &sampler("y3-b"), 2000, &cfg()).unwrap().states);
    let se = (a.std_err[0].powi(2) + b.std_err[0].powi(2)).sqrt();
    assert!((a.value[0] - b.value[0]).abs() <= 3.0 * se, "{:?} vs {:?}", a, b);
    assert!(a.value[0] > 15.0 && a.value[0] < 30.0);
}

#[test]
fn f0_time_average_is_centred_and_stable_under_doubling() {
    let sys = lorenz(2);
    let e = eta(&sys, "f0-mean");
    let one = ergodic_average(&sys, &*sys.f0, 1.0e4, &e, &cfg(), DEFAULT_BATCHES).unwrap();
    let two = ergodic_average(&sys, &*sys.f0, 2.0e4, &e, &cfg(), DEFAULT_BATCHES).unwrap();
    for k in 0..2 {
        assert!(one.value[k].abs() <= 3.0 * one.std_err[k], "{one:?}");
        assert!(two.value[k].abs() <= 3.0 * two.std_err[k], "{two:?}");
    }
}

#[test]
fn second_moment_is_stable_under_doubling() {
    let sys = lorenz(1);
    let e = eta(&sys, "y1-squared");
    let sq = FnObservable::new(1, |y: &[f64], o: &mut [f64]| o[0] = y[0] * y[0]);
    let a = ergodic_average(&sys, &sq, 2000.0, &e, &cfg(), DEFAULT_BATCHES).unwrap();
    let b = ergodic_average(&sys, &sq, 4000.0, &e, &cfg(), DEFAULT_BATCHES).unwrap();
    assert!(a.value[0] > 0.0);
    let se = (a.std_err[0].powi(2) + b.std_err[0].powi(2)).sqrt();
    assert!((a.value[0] - b.value[0]).abs() <= 3.0 * se, "{a:?} vs {b:?}");
}

#[test]
fn symmetric_coupling_averages_out() {
    // f(x, y) = y2 for every coordinate: F = E y2 = 0 for all x
    let sys = lorenz(1);
    let bounds = Bounds {
        f_sup: 100.0,
        ..sys.bounds
    };
    let sys = sys
        .with_coupling(Arc::new(FnCoupling::new(1, |_x: &[f64], y: &[f64], o: &mut [f64]| o[0] = y[1])), bounds)
        .unwrap();
    let e = eta(&sys, "y2-coupling");
    for x in [-2.0, 0.0, 3.0] {
        let f = estimate_f(&sys, &[x], 1.0e5, &e, &cfg()).unwrap();
        assert!(f.value[0].abs() <= 0.05, "x {x}: {f:?}");
    }
}

#[test]
fn forcing_mean_agrees_between_independent_runs() {
    let sys = lorenz(1);
    let forcing = FnObservable::new(1, |y: &[f64], o: &mut [f64]| o[0] = (y[0] / 10.0).sin());
    let a = ergodic_average(&sys, &forcing, 1.0e4, &eta(&sys, "forcing-a"), &cfg(), DEFAULT_BATCHES).unwrap();
    let b = ergodic_average(&sys, &forcing, 1.0e4, &eta(&sys, "forcing-b"), &cfg(), DEFAULT_BATCHES).unwrap();
    let se = (a.std_err[0].powi(2) + b.std_err[0].powi(2)).sqrt();
    assert!((a.value[0] - b.value[0]).abs() <= 2.0 * se, "{a:?} vs {b:?}");
    let f = estimate_f(&sys, &[0.7], 1.0e4, &eta(&sys, "forcing-a"), &cfg()).unwrap();
    let expected = -(0.7f64).tanh() + a.value[0];
    assert!((f.value[0] - expected).abs() <= 1e-12);
}

#[test]
fn averaged_drift_time_and_sample_estimators_agree() {
    let sys = lorenz(2);
    let x = [0.5, -1.0];
    let time = estimate_f(&sys, &x, 1.0e4, &eta(&sys, "two-estimators"), &cfg()).unwrap();
    let samples = sample_mu(&sys, &sampler("two-estimators-mc"), 4000, &cfg()).unwrap();
    let fx = FnObservable::new(2, move |y: &[f64], o: &mut [f64]| {
        o.copy_from_slice(&benchmark_f(&x, y, BenchmarkParams::default()).unwrap())
    });
    let mc = sample_average(&fx, &samples.states);
    for k in 0..2 {
        let se = (time.std_err[k].powi(2) + mc.std_err[k].powi(2)).sqrt();
        assert!((time.value[k] - mc.value[k]).abs() <= 3.0 * se, "{time:?} vs {mc:?}");
    }
}

#[test]
fn averaged_drift_is_lipschitz_and_bounded() {
    let sys = lorenz(1);
    let e = eta(&sys, "lipschitz");
    let xs = [-4.0, -1.5, -0.2, 0.0, 0.3, 2.0, 6.0];
    let est: Vec<_> = xs.iter().map(|&x| estimate_f(&sys, &[x], 2000.0, &e, &cfg()).unwrap()).collect();
    let l = Benchmark::new(1, BenchmarkParams::default()).unwrap().lipschitz();
    for (i, a) in est.iter().enumerate() {
        assert!(a.value[0].abs() <= sys.bounds.f_sup + 3.0 * a.std_err[0]);
        for (j, b) in est.iter().enumerate() {
            let gap = (a.value[0] - b.value[0]).abs();
            assert!(gap <= l * (xs[i] - xs[j]).abs() + 6.0 * (a.std_err[0] + b.std_err[0]));
        }
    }
}

#[test]
fn mu_is_stationary_under_the_flow() {
    let sys = lorenz(2);
    let s = sample_mu(&sys, &sampler("stationarity"), 1500, &cfg()).unwrap();
    let coords = FnObservable::new(3, |y: &[f64], o: &mut [f64]| o.copy_from_slice(y));
    for shift in [0.37, 3.0] {
        let st = stationarity_check(&sys, &s.states, &coords as &dyn Observable, shift, &cfg()).unwrap();
        assert!(st.passes(3.0), "shift {shift}: {:?}", st.z);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lorenz_symmetry_commutes_with_flow(y in prop::array::uniform3(-20.0f64..20.0), t in 0.01f64..0.5) {
        let sys = lorenz(2);
        let y = [y[0], y[1], y[2] + 25.0];
        let flipped = [-y[0], -y[1], y[2]];
        let a = integrate_fast(&sys, &y, t, &cfg()).unwrap();
        let b = integrate_fast(&sys, &flipped, t, &cfg()).unwrap();
        let (a, b) = (a.last(), b.last());
        prop_assert_eq!(a[0], -b[0]);
        prop_assert_eq!(a[1], -b[1]);
        prop_assert_eq!(a[2], b[2]);
    }

    #[test]
    fn seeds_do_not_depend_on_call_order(root in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        let a = derive_seed(root, "tag", i);
        let _ = derive_seed(root, "tag", j);
        prop_assert_eq!(a, derive_seed(root, "tag", i));
        prop_assert_ne!(derive_seed(root, "tag", i), derive_seed(root, "other", i));
    }
}
