//! Small statistical helpers shared by the estimators and the test suites.

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // rounding can put a bound a hair past p at the extremes
    (
        (center - half).max(0.0).min(p),
        (center + half).min(1.0).max(p),
    )
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn from_slice(xs: &[f64]) -> Self {
        let mut m = Moments::default();
        for &x in xs {
            m.push(x);
        }
        m
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; 0 for fewer than two values.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// One-sample Kolmogorov–Smirnov statistic of `xs` against `cdf`.
/// Sorts `xs` in place.
pub fn ks_statistic<F: Fn(f64) -> f64>(xs: &mut [f64], cdf: F) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Asymptotic p-value of a KS statistic `d` from `n` samples, using the
/// Stephens small-sample correction.
pub fn kolmogorov_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// z-score of the difference of two independent proportions.
pub fn two_proportion_z(s1: u64, n1: u64, s2: u64, n2: u64) -> f64 {
    let p1 = s1 as f64 / n1 as f64;
    let p2 = s2 as f64 / n2 as f64;
    let se = (p1 * (1.0 - p1) / n1 as f64 + p2 * (1.0 - p2) / n2 as f64).sqrt();
    if se == 0.0 {
        if p1 == p2 {
            0.0
        } else {
            f64::INFINITY.copysign(p1 - p2)
        }
    } else {
        (p1 - p2) / se
    }
}

/// Least-squares line through `(x, y)`: returns `(slope, intercept, r2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (slope, my - slope * mx, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn wilson_matches_closed_form() {
        // 5/10 at z = 1.96: center 0.5, half-width 1.96/(1+0.38416)*sqrt(0.025+0.0096)
        let (lo, hi) = wilson(5, 10, 1.96);
        let half =
            1.96 / (1.0 + 1.96f64.powi(2) / 10.0) * (0.25 / 10.0 + 1.96f64.powi(2) / 400.0).sqrt();
        assert!((lo - (0.5 - half)).abs() < 1e-12);
        assert!((hi - (0.5 + half)).abs() < 1e-12);
    }

    #[test]
    fn moments_agree_with_two_pass() {
        let xs = [1.0, 4.0, 9.0, 16.0, 25.0];
        let m = Moments::from_slice(&xs);
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((m.mean() - mean).abs() < 1e-12);
        assert!((m.variance() - var).abs() < 1e-9);
    }

    #[test]
    fn ks_accepts_uniforms_and_rejects_shifted() {
        let mut rng = crate::rng::rng_from_seed(9);
        let mut u: Vec<f64> = (0..20_000).map(|_| rng.random()).collect();
        let d = ks_statistic(&mut u, |x| x.clamp(0.0, 1.0));
        assert!(kolmogorov_pvalue(d, u.len()) > 1e-3);
        let mut v: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>().powf(1.1)).collect();
        let d = ks_statistic(&mut v, |x| x.clamp(0.0, 1.0));
        assert!(kolmogorov_pvalue(d, v.len()) < 1e-3);
    }

    #[test]
    fn kolmogorov_tail_reference() {
        // Q_KS(1.36) is the familiar 5% point.
        let p = kolmogorov_pvalue(1.36 / (1e8f64).sqrt(), 100_000_000);
        assert!((p - 0.0494).abs() < 1e-3, "{p}");
    }

    #[test]
    fn fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 2.0).collect();
        let (s, b, r2) = linear_fit(&x, &y);
        assert!((s - 3.0).abs() < 1e-12 && (b + 2.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_proportions_have_zero_z() {
        assert_eq!(two_proportion_z(0, 10, 0, 20), 0.0);
        assert!(two_proportion_z(60, 100, 40, 100) > 2.0);
    }
}
