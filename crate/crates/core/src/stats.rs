//! Small descriptive-statistics helpers shared by the estimators.

/// Incremental mean. A constant input stream yields that constant exactly.
#[derive(Clone, Debug, Default)]
pub struct RunningMean {
    mean: Vec<f64>,
    count: usize,
}

impl RunningMean {
    pub fn new(dim: usize) -> Self {
        RunningMean {
            mean: vec![0.0; dim],
            count: 0,
        }
    }

    #[inline]
    pub fn push(&mut self, v: &[f64]) {
        self.count += 1;
        let k = self.count as f64;
        for (m, x) in self.mean.iter_mut().zip(v) {
            *m += (x - *m) / k;
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (`n - 1` denominator); zero for fewer than two
/// points.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the mean, `sd / sqrt(n)`.
pub fn std_err(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1) as f64
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let denom = (variance(xs) * variance(ys)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        covariance(xs, ys) / denom
    }
}

/// Sample covariance of each `(i, j)` pair of columns together with its
/// leave-one-out jackknife standard error. `rows[m]` is one observation.
pub fn covariance_with_jackknife(rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let m = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let mut cov = vec![vec![0.0; d]; d];
    let mut se = vec![vec![0.0; d]; d];
    if m < 3 {
        return (cov, se);
    }
    let mf = m as f64;
    for i in 0..d {
        for j in i..d {
            let xi: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            let xj: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let c = covariance(&xi, &xj);
            // leave-one-out covariances from running sums
            let (si, sj) = (xi.iter().sum::<f64>(), xj.iter().sum::<f64>());
            let sij: f64 = xi.iter().zip(&xj).map(|(a, b)| a * b).sum();
            let loo: Vec<f64> = (0..m)
                .map(|k| {
                    let (a, b) = (si - xi[k], sj - xj[k]);
                    (sij - xi[k] * xj[k] - a * b / (mf - 1.0)) / (mf - 2.0)
                })
                .collect();
            let lm = mean(&loo);
            let var = (mf - 1.0) / mf * loo.iter().map(|v| (v - lm) * (v - lm)).sum::<f64>();
            cov[i][j] = c;
            cov[j][i] = c;
            se[i][j] = var.sqrt();
            se[j][i] = var.sqrt();
        }
    }
    (cov, se)
}

/// Binomial standard error of a proportion.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}
