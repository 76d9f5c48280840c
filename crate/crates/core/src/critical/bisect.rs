//! Finite-size critical intensity: the u at which the crossing curve passes θ.

use serde::{Deserialize, Serialize};

use super::crossing::{crossing_thresholds, CrossingEvent, CrossingPlan, CrossingThresholds};
use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use crate::stats::normal_quantile;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BisectOptions {
    pub theta: f64,
    /// stop when the bracket is narrower than tol·u
    pub tol: f64,
    /// geometric scan start and limits u_scan·2^j, j ∈ [−max_scan, max_scan]
    pub u_scan: f64,
    pub max_scan: u32,
    /// two-sided confidence for the indistinguishability test
    pub confidence: f64,
}

impl Default for BisectOptions {
    fn default() -> Self {
        BisectOptions { theta: 0.5, tol: 0.05, u_scan: 1.0 / 64.0, max_scan: 20, confidence: 0.95 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UStarProxy {
    pub t: f64,
    pub n: u32,
    pub theta: f64,
    pub u_estimate: f64,
    pub bracket: (f64, f64),
    pub tolerance: f64,
    pub reps: usize,
    /// The curve became statistically indistinguishable from θ before the bracket
    /// reached the tolerance; the bracket was widened to the quantile interval.
    pub widened: bool,
    /// Order-statistic confidence interval for the θ-quantile.
    pub quantile_ci: (f64, f64),
    pub steps: usize,
    pub event: CrossingEvent,
}

impl UStarProxy {
    pub fn relative_width(&self) -> f64 {
        (self.bracket.1 - self.bracket.0) / self.u_estimate
    }
}

/// Bisection on the empirical coupled crossing curve of `th`.
pub fn bisect_thresholds(th: &CrossingThresholds, opts: &BisectOptions) -> Result<UStarProxy> {
    let theta = opts.theta;
    if !(theta > 0.0 && theta < 1.0) {
        return Err(invalid(format!("θ must lie in (0,1), got {theta}")));
    }
    if !(opts.tol > 0.0) || !(opts.u_scan > 0.0) {
        return Err(invalid("tolerance and scan start must be positive"));
    }
    let reps = th.reps();
    let p = |u: f64| th.count_at(u) as f64 / reps as f64;
    let no_bracket = || Error::NoBracket(format!("T={} N={} θ={theta}: crossing curve does not pass θ within the scan", th.plan.t, th.plan.n));

    let (mut lo, mut hi) = if p(opts.u_scan) >= theta {
        let mut hi = opts.u_scan;
        let mut j = 0;
        loop {
            let lo = hi / 2.0;
            if p(lo) < theta {
                break (lo, hi);
            }
            j += 1;
            if j > opts.max_scan {
                return Err(no_bracket());
            }
            hi = lo;
        }
    } else {
        let mut lo = opts.u_scan;
        let mut j = 0;
        loop {
            let hi = lo * 2.0;
            if p(hi) >= theta {
                break (lo, hi);
            }
            j += 1;
            if j > opts.max_scan {
                return Err(no_bracket());
            }
            lo = hi;
        }
    };

    let z = normal_quantile(0.5 + opts.confidence / 2.0);
    let sigma = (theta * (1.0 - theta) / reps as f64).sqrt();
    let half = z * (reps as f64 * theta * (1.0 - theta)).sqrt();
    let ql = th.order_stat((reps as f64 * theta - half).floor() as usize);
    let qh = th.order_stat((reps as f64 * theta + half).ceil() as usize);
    let mut widened = false;
    let mut steps = 0;
    while hi - lo > opts.tol * 0.5 * (lo + hi) {
        let mid = 0.5 * (lo + hi);
        let pm = p(mid);
        steps += 1;
        if (pm - theta).abs() <= z * sigma {
            widened = true;
            lo = lo.min(ql);
            hi = hi.max(qh);
            break;
        }
        if pm >= theta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let u_estimate = if widened { th.order_stat((reps as f64 * theta).ceil() as usize) } else { 0.5 * (lo + hi) };
    Ok(UStarProxy {
        t: th.plan.t,
        n: th.plan.n,
        theta,
        u_estimate,
        bracket: (lo, hi),
        tolerance: opts.tol,
        reps,
        widened,
        quantile_ci: (ql, qh),
        steps,
        event: th.event,
    })
}

/// Samples `plan.reps` replicates and bisects their crossing curve.
pub fn bisect_u_star(plan: &CrossingPlan, event: CrossingEvent, opts: &BisectOptions, stream: &RngStream) -> Result<UStarProxy> {
    let outcomes = crossing_thresholds(plan, stream)?;
    bisect_thresholds(&CrossingThresholds::new(*plan, event, &outcomes), opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(values: Vec<f64>) -> CrossingThresholds {
        let mut sorted = values;
        sorted.sort_by(f64::total_cmp);
        CrossingThresholds { plan: CrossingPlan::new(3, 16.0, 4, sorted.len()), event: CrossingEvent::Origin, sorted }
    }

    #[test]
    fn finds_the_quantile_of_a_sharp_curve() {
        // all replicates cross at 0.3: curve jumps from 0 to 1
        let th = synthetic(vec![0.3; 100]);
        let r = bisect_thresholds(&th, &BisectOptions::default()).unwrap();
        assert!(!r.widened);
        assert!(r.bracket.0 < 0.3 && 0.3 <= r.bracket.1);
        assert!(r.relative_width() <= 0.05 + 1e-12);
        assert!(th.probability(r.bracket.0).value < 0.5 && th.probability(r.bracket.1).value >= 0.5);
    }

    #[test]
    fn noisy_curve_widens() {
        let values: Vec<f64> = (1..=200).map(|i| 0.01 * i as f64).collect();
        let r = bisect_thresholds(&synthetic(values), &BisectOptions { tol: 1e-4, ..Default::default() }).unwrap();
        assert!(r.widened);
        assert!(r.bracket.0 <= r.quantile_ci.0 && r.quantile_ci.1 <= r.bracket.1);
        assert!(r.bracket.0 < r.u_estimate && r.u_estimate < r.bracket.1);
    }

    #[test]
    fn never_crossing_gives_no_bracket() {
        let th = synthetic(vec![f64::INFINITY; 50]);
        assert!(matches!(bisect_thresholds(&th, &BisectOptions::default()), Err(Error::NoBracket(_))));
        let always = synthetic(vec![0.0; 50]);
        assert!(matches!(bisect_thresholds(&always, &BisectOptions::default()), Err(Error::NoBracket(_))));
    }

    #[test]
    fn forced_empty_sampler_has_no_bracket() {
        // no doublings beyond a tiny first level: every replicate reports no crossing
        let plan = CrossingPlan { u_first: 1e-9, max_doublings: 0, ..CrossingPlan::new(3, 16.0, 4, 20) };
        let r = bisect_u_star(&plan, CrossingEvent::Origin, &BisectOptions::default(), &RngStream::new(1, 0));
        assert!(matches!(r, Err(Error::NoBracket(_))));
    }

    #[test]
    fn quantiles_are_ordered_and_deterministic() {
        let plan = CrossingPlan::new(3, 16.0, 8, 80);
        let s = RngStream::new(3, 1);
        let outcomes = crossing_thresholds(&plan, &s).unwrap();
        let th = CrossingThresholds::new(plan, CrossingEvent::Origin, &outcomes);
        let q25 = bisect_thresholds(&th, &BisectOptions { theta: 0.25, ..Default::default() }).unwrap();
        let q75 = bisect_thresholds(&th, &BisectOptions { theta: 0.75, ..Default::default() }).unwrap();
        assert!(q25.u_estimate <= q75.u_estimate);
        let again = bisect_u_star(&plan, CrossingEvent::Origin, &BisectOptions { theta: 0.25, ..Default::default() }, &s).unwrap();
        assert_eq!(again, q25);
    }
}
