//! Power-law fits of the finite-size critical intensity against T.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bisect::{bisect_u_star, BisectOptions, UStarProxy};
use super::crossing::{CrossingEvent, CrossingPlan};
use crate::error::{invalid, Result};
use crate::rng::RngStream;
use crate::stats::{fit_line, LineFit};
use crate::walk::n_t;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPlan {
    pub d: usize,
    pub t_grid: Vec<f64>,
    /// N = box_factor · n_T
    pub box_factor: u32,
    pub reps: usize,
    pub bisect: BisectOptions,
    pub event: CrossingEvent,
    pub u_first: f64,
    pub max_doublings: u32,
    pub seed: u64,
    /// Write measured wall times into the CSV (which then differs between runs).
    pub record_wall_time: bool,
}

impl ScalingPlan {
    pub fn new(d: usize, t_grid: Vec<f64>, seed: u64) -> ScalingPlan {
        let base = CrossingPlan::new(d, 16.0, 1, 1);
        ScalingPlan {
            d,
            t_grid,
            box_factor: 4,
            reps: 200,
            bisect: BisectOptions::default(),
            event: CrossingEvent::Origin,
            u_first: base.u_first,
            max_doublings: base.max_doublings,
            seed,
            record_wall_time: false,
        }
    }

    pub fn crossing_plan(&self, t: f64) -> CrossingPlan {
        CrossingPlan { d: self.d, t, n: self.box_factor * n_t(t), reps: self.reps, u_first: self.u_first, max_doublings: self.max_doublings }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_grid.len() < 4 {
            return Err(invalid("scaling study needs at least 4 values of T"));
        }
        if self.t_grid.iter().any(|&t| !(t > 1.0 && t.is_finite())) {
            return Err(invalid("every T in the grid must exceed 1"));
        }
        let ratios: Vec<f64> = self.t_grid.windows(2).map(|w| w[1] / w[0]).collect();
        if ratios.iter().any(|&r| !(r > 1.0) || (r / ratios[0] - 1.0).abs() > 1e-9) {
            return Err(invalid("T grid must be increasing and geometrically spaced"));
        }
        if self.box_factor == 0 {
            return Err(invalid("box factor must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub proxy: UStarProxy,
    /// half-width of the quantile interval over 1.96
    pub stderr: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub d: usize,
    pub plan: ScalingPlan,
    pub rows: Vec<ScalingRow>,
    /// Grid points whose bisection failed, with the error.
    pub failures: Vec<(f64, String)>,
    /// log u against log T; the slope is the exponent.
    pub fit: Option<LineFit>,
    /// max/min of u·T/ln T over the grid (reported for d = 4).
    pub log_corrected_spread: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingCsvRow {
    pub d: usize,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "N")]
    pub n: u32,
    pub theta: f64,
    pub u_lo: f64,
    pub u_hi: f64,
    pub u_est: f64,
    pub reps: usize,
    pub seed: u64,
    pub wall_time: Option<f64>,
}

impl ScalingResult {
    pub fn exponent(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.slope)
    }

    pub fn csv_rows(&self) -> Vec<ScalingCsvRow> {
        self.rows
            .iter()
            .map(|r| ScalingCsvRow {
                d: self.d,
                t: r.proxy.t,
                n: r.proxy.n,
                theta: r.proxy.theta,
                u_lo: r.proxy.bracket.0,
                u_hi: r.proxy.bracket.1,
                u_est: r.proxy.u_estimate,
                reps: r.proxy.reps,
                seed: self.plan.seed,
                wall_time: self.plan.record_wall_time.then_some(r.wall_time),
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(out);
        for r in self.csv_rows() {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Least-squares slope of log u against log T.
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.iter().any(|&(t, u)| !(t > 0.0 && u > 0.0)) {
        return Err(invalid("exponent fit needs positive T and u"));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    fit_line(&x, &y)
}

/// max/min over the grid of u·T/ln T.
pub fn log_corrected_spread(points: &[(f64, f64)]) -> f64 {
    let r: Vec<f64> = points.iter().map(|&(t, u)| u * t / t.ln()).collect();
    r.iter().copied().fold(0.0, f64::max) / r.iter().copied().fold(f64::INFINITY, f64::min)
}

/// One bisection per T (grid points in parallel), then the exponent fit. Failed
/// grid points are listed and the fit uses the rest.
pub fn scaling_study(plan: &ScalingPlan) -> Result<ScalingResult> {
    plan.validate()?;
    let root = RngStream::new(plan.seed, 0).tagged("scaling");
    let outcomes: Vec<(f64, std::result::Result<ScalingRow, String>)> = plan
        .t_grid
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let start = Instant::now();
            let r = bisect_u_star(&plan.crossing_plan(t), plan.event, &plan.bisect, &root.child(i as u64))
                .map(|proxy| {
                    let z = crate::stats::normal_quantile(0.5 + plan.bisect.confidence / 2.0);
                    let stderr = (proxy.quantile_ci.1 - proxy.quantile_ci.0) / (2.0 * z);
                    ScalingRow { proxy, stderr, wall_time: start.elapsed().as_secs_f64() }
                })
                .map_err(|e| e.to_string());
            (t, r)
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (t, r) in outcomes {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => failures.push((t, e)),
        }
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.proxy.t, r.proxy.u_estimate)).collect();
    let fit = if points.len() >= 2 { Some(fit_exponent(&points)?) } else { None };
    let log_corrected_spread = (plan.d == 4 && !points.is_empty()).then(|| log_corrected_spread(&points));
    Ok(ScalingResult { d: plan.d, plan: plan.clone(), rows, failures, fit, log_corrected_spread })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fitter_recovers_planted_slope() {
        let pts: Vec<(f64, f64)> = [16.0, 32.0, 64.0, 128.0, 256.0].iter().map(|&t: &f64| (t, t.powf(-0.5))).collect();
        let f = fit_exponent(&pts).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-9);
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-9));
        let pts: Vec<(f64, f64)> = [16.0, 32.0, 64.0, 128.0].iter().map(|&t: &f64| (t, 3.0 * t.ln() / t)).collect();
        assert!((log_corrected_spread(&pts) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validates_grid() {
        assert!(ScalingPlan::new(3, vec![16.0, 32.0, 64.0], 1).validate().is_err());
        assert!(ScalingPlan::new(3, vec![16.0, 32.0, 64.0, 100.0], 1).validate().is_err());
        assert!(ScalingPlan::new(3, vec![16.0, 32.0, 64.0, 128.0], 1).validate().is_ok());
    }

    #[test]
    fn small_study_is_deterministic_and_keeps_failures() {
        let mut plan = ScalingPlan::new(3, vec![4.0, 8.0, 16.0, 32.0], 5);
        plan.reps = 40;
        let a = scaling_study(&plan).unwrap();
        assert_eq!(a.rows.len() + a.failures.len(), 4);
        assert!(a.fit.is_some());
        let b = scaling_study(&plan).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        assert!(String::from_utf8(x).unwrap().starts_with("d,T,N,theta,u_lo,u_hi,u_est,reps,seed,wall_time\n"));

        plan.max_doublings = 0;
        plan.u_first = 1e-9;
        let failed = scaling_study(&plan).unwrap();
        assert_eq!(failed.failures.len(), 4);
        assert!(failed.fit.is_none());
    }
}
