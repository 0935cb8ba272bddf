//! Moment accumulation and small fitting helpers.

/// One-pass Welford accumulator. Merging follows the pairwise update so
/// partial accumulators can be combined in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMoments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningMoments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n1 = self.n as f64;
        let n2 = other.n as f64;
        let delta = other.mean - self.mean;
        let total = n1 + n2;
        self.mean += delta * n2 / total;
        self.m2 += other.m2 + delta * delta * n1 * n2 / total;
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Accumulates `values` in index order; deterministic regardless of how
/// the values were produced.
pub fn moments_of(values: &[f64]) -> RunningMoments {
    let mut acc = RunningMoments::new();
    for &v in values {
        acc.push(v);
    }
    acc
}

/// Least-squares slope of log(y) against log(x).
pub fn fit_log_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (a.ln(), b.max(1e-300).ln()))
        .collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Median by sorting a copy.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn welford_matches_two_pass() {
        let data: Vec<f64> = (0..1000).map(|i| ((i * 37 % 97) as f64).sin()).collect();
        let m = moments_of(&data);
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (data.len() - 1) as f64;
        assert_relative_eq!(m.mean(), mean, max_relative = 1e-12);
        assert_relative_eq!(m.variance(), var, max_relative = 1e-12);
        assert_relative_eq!(m.stderr(), (var / 1000.0).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn merge_agrees_with_sequential() {
        let data: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).cos()).collect();
        let mut left = moments_of(&data[..200]);
        let right = moments_of(&data[200..]);
        left.merge(&right);
        let all = moments_of(&data);
        assert_relative_eq!(left.mean(), all.mean(), max_relative = 1e-12);
        assert_relative_eq!(left.variance(), all.variance(), max_relative = 1e-12);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [0.5, 0.25, 0.125, 0.0625];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v.powf(0.5)).collect();
        assert_relative_eq!(fit_log_slope(&x, &y), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
