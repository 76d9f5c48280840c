//! Small statistical helpers: running moments, proportions, line fits, goodness of fit.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Estimate {
        Estimate { value, stderr: 0.0 }
    }
}

/// Welford accumulator; `merge` is associative so replicas reduce in any grouping.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanAcc {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanAcc {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, o: &MeanAcc) -> MeanAcc {
        if self.n == 0 {
            return *o;
        }
        if o.n == 0 {
            return *self;
        }
        let n = self.n + o.n;
        let delta = o.mean - self.mean;
        let mean = self.mean + delta * o.n as f64 / n as f64;
        let m2 = self.m2 + o.m2 + delta * delta * (self.n as f64 * o.n as f64) / n as f64;
        MeanAcc { n, mean, m2 }
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
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> Estimate {
        let se = if self.n < 2 { 0.0 } else { (self.variance() / self.n as f64).sqrt() };
        Estimate { value: self.mean, stderr: se }
    }
}

impl FromIterator<f64> for MeanAcc {
    fn from_iter<I: IntoIterator<Item = f64>>(it: I) -> MeanAcc {
        let mut a = MeanAcc::default();
        for x in it {
            a.push(x);
        }
        a
    }
}

/// Frequency with binomial standard error.
pub fn proportion(successes: u64, trials: u64) -> Estimate {
    if trials == 0 {
        return Estimate { value: f64::NAN, stderr: f64::NAN };
    }
    let p = successes as f64 / trials as f64;
    Estimate { value: p, stderr: (p * (1.0 - p) / trials as f64).sqrt() }
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

pub fn student_t_quantile(p: f64, dof: f64) -> f64 {
    if dof <= 0.0 {
        return f64::INFINITY;
    }
    StudentsT::new(0.0, 1.0, dof).expect("student t").inverse_cdf(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub residuals: Vec<f64>,
    /// Two-sided 95% interval on the slope (Student t with n-2 dof).
    pub slope_ci: (f64, f64),
}

/// Ordinary least squares of `y` on `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("line fit needs at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(invalid("line fit needs distinct abscissae"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - intercept - slope * a).collect();
    let (slope_stderr, half) = if x.len() > 2 {
        let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / (n - 2.0);
        let se = (s2 / sxx).sqrt();
        (se, se * student_t_quantile(0.975, n - 2.0))
    } else {
        (0.0, 0.0)
    };
    Ok(LineFit { slope, intercept, slope_stderr, residuals, slope_ci: (slope - half, slope + half) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson test of observed cell counts against cell probabilities (summing to one).
/// Adjacent cells are pooled until every expected count is at least 5.
pub fn chi_square(observed: &[u64], probs: &[f64]) -> Result<ChiSquareTest> {
    if observed.len() != probs.len() || observed.is_empty() {
        return Err(invalid("chi-square needs matching nonempty cells"));
    }
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return Err(invalid("chi-square needs observations"));
    }
    let n = total as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (o, p) in observed.iter().zip(probs) {
        o_acc += *o as f64;
        e_acc += p * n;
        if e_acc >= 5.0 {
            cells.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => cells.push((o_acc, e_acc)),
        }
    }
    if cells.len() < 2 {
        return Ok(ChiSquareTest { statistic: 0.0, dof: 0, p_value: 1.0 });
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len() - 1;
    let p_value = ChiSquared::new(dof as f64).expect("dof > 0").sf(statistic);
    Ok(ChiSquareTest { statistic, dof, p_value })
}

/// Poisson(mean) probabilities for 0..k_max, with the upper tail folded into the last cell.
pub fn poisson_cells(mean: f64, k_max: usize) -> Vec<f64> {
    let mut probs = Vec::with_capacity(k_max + 1);
    let mut p = (-mean).exp();
    let mut acc: f64 = 0.0;
    for k in 0..=k_max {
        if k > 0 {
            p *= mean / k as f64;
        }
        if k == k_max {
            probs.push((1.0 - acc).max(0.0));
        } else {
            probs.push(p);
            acc += p;
        }
    }
    probs
}

/// Goodness of fit of integer observations to Poisson(mean).
pub fn poisson_gof(samples: &[u64], mean: f64) -> Result<ChiSquareTest> {
    let k_max = (mean + 8.0 * mean.sqrt() + 10.0).ceil() as usize;
    let mut counts = vec![0u64; k_max + 1];
    for &s in samples {
        counts[(s as usize).min(k_max)] += 1;
    }
    chi_square(&counts, &poisson_cells(mean, k_max))
}

/// Spearman rank correlation (average ranks on ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_merge_matches_direct() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 * 0.5).collect();
        let all: MeanAcc = xs.iter().copied().collect();
        let a: MeanAcc = xs[..40].iter().copied().collect();
        let b: MeanAcc = xs[40..].iter().copied().collect();
        let m = a.merge(&b);
        assert!((m.mean() - all.mean()).abs() < 1e-12);
        assert!((m.variance() - all.variance()).abs() < 1e-10);
        let direct = xs.iter().sum::<f64>() / 100.0;
        assert!((all.mean() - direct).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_planted_line() {
        let x: Vec<f64> = (0..5).map(|i| (16.0 * 2f64.powi(i)).ln()).collect();
        let y: Vec<f64> = x.iter().map(|a| -0.5 * a + 0.25).collect();
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.intercept - 0.25).abs() < 1e-12);
    }

    #[test]
    fn poisson_cells_sum_to_one() {
        let c = poisson_cells(3.2, 20);
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((c[0] - (-3.2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn chi_square_rejects_wrong_law() {
        let samples: Vec<u64> = (0..2000).map(|i| (i % 3) as u64 * 4).collect();
        let t = poisson_gof(&samples, 4.0).unwrap();
        assert!(t.p_value < 1e-6);
    }

    #[test]
    fn quantiles() {
        assert!((normal_quantile(0.975) - 1.959964).abs() < 1e-5);
        assert!((student_t_quantile(0.975, 3.0) - 3.182446).abs() < 1e-5);
    }

    #[test]
    fn spearman_monotone() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[10.0, 20.0, 30.0, 40.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }
}
