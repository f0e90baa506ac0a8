use rayon::prelude::*;

use crate::error::{Error, Result};

/// Two-sample distances between empirical distributions on `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoSampleDistance {
    /// Kolmogorov-Smirnov statistic per coordinate.
    pub ks: Vec<f64>,
    pub energy: f64,
}

fn check_sample(s: &[f64], name: &str) -> Result<()> {
    if s.is_empty() {
        return Err(Error::Input(format!("{name} is empty")));
    }
    if s.iter().any(|v| v.is_nan()) {
        return Err(Error::Input(format!("{name} contains NaN")));
    }
    Ok(())
}

/// Exact two-sample KS statistic `sup_z |F_a(z) - F_b(z)|` by a merge of
/// the sorted samples; ties are stepped over together.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    check_sample(a, "first sample")?;
    check_sample(b, "second sample")?;
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0_f64;
    while i < a.len() && j < b.len() {
        let z = a[i].min(b[j]);
        while i < a.len() && a[i] == z {
            i += 1;
        }
        while j < b.len() && b[j] == z {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Approximate 5% critical value of the two-sample KS statistic,
/// `1.36 sqrt((m + n) / (m n))`.
pub fn ks_noise_floor(m: usize, n: usize) -> f64 {
    let (m, n) = (m as f64, n as f64);
    1.36 * ((m + n) / (m * n)).sqrt()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

fn mean_pair_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let total: f64 = a
        .par_iter()
        .map(|p| b.iter().map(|q| euclid(p, q)).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / (a.len() as f64 * b.len() as f64)
}

fn check_rows(rows: &[Vec<f64>], name: &str) -> Result<usize> {
    let d = rows.first().map(Vec::len).ok_or_else(|| Error::Input(format!("{name} is empty")))?;
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension {
            context: "two-sample rows",
            expected: d,
            got: bad.len(),
        });
    }
    Ok(d)
}

/// Energy distance `2 E|X - Y| - E|X - X'| - E|Y - Y'|` with the plain
/// double-sum (V-statistic) estimator, clamped at zero.
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let da = check_rows(a, "first sample")?;
    let db = check_rows(b, "second sample")?;
    if da != db {
        return Err(Error::Dimension {
            context: "energy distance",
            expected: da,
            got: db,
        });
    }
    let e = 2.0 * mean_pair_distance(a, b) - mean_pair_distance(a, a) - mean_pair_distance(b, b);
    Ok(e.max(0.0))
}

pub fn two_sample_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<TwoSampleDistance> {
    let energy = energy_distance(a, b)?;
    let d = a[0].len();
    let ks = (0..d)
        .map(|j| {
            let ca: Vec<f64> = a.iter().map(|r| r[j]).collect();
            let cb: Vec<f64> = b.iter().map(|r| r[j]).collect();
            ks_two_sample(&ca, &cb)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TwoSampleDistance { ks, energy })
}
