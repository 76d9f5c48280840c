//! Capacities of random walk ranges: fixed-length and killed ranges, and unions of
//! walks stopped at a ball exit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::escape::{capacity_auto, CapBudget, CapEstimate, McBudget};
use super::green::GreenTable;
use crate::critical::law::f_d;
use crate::error::{invalid, Error, Result};
use crate::lattice::{Point, SiteSet};
use crate::rng::RngStream;
use crate::stats::{Estimate, MeanAcc};
use crate::walk::{random_direction, sample_killed_unchecked, sample_srw};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RangeParam {
    /// X[0,n]
    Steps(usize),
    /// X[0,N_T]
    Killed(f64),
}

impl RangeParam {
    pub fn scale(&self) -> f64 {
        match *self {
            RangeParam::Steps(n) => n as f64,
            RangeParam::Killed(t) => t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Moments {
    First,
    FirstAndSecond,
}

/// Solver and fallback settings shared by the range experiments.
#[derive(Clone, Copy, Debug)]
pub struct RangeBudget<'a> {
    pub table: &'a GreenTable,
    pub solver_cap: usize,
    /// (reps per site, horizon) for the Monte-Carlo fallback above the solver cap.
    pub mc_fallback: Option<(u64, u64)>,
}

impl<'a> RangeBudget<'a> {
    pub fn exact(table: &'a GreenTable) -> RangeBudget<'a> {
        RangeBudget { table, solver_cap: super::escape::DEFAULT_SOLVER_CAP, mc_fallback: None }
    }

    fn cap_budget(&self, stream: &RngStream) -> CapBudget<'a> {
        CapBudget {
            table: Some(self.table),
            mc: self.mc_fallback.map(|(reps, horizon)| McBudget { reps, horizon, stream: stream.tagged("mc-fallback") }),
            solver_cap: self.solver_cap,
        }
    }

    pub(crate) fn capacity(&self, sites: &[Point], stream: &RngStream) -> Result<CapEstimate> {
        capacity_auto(sites, self.table, &self.cap_budget(stream))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeStats {
    pub d: usize,
    pub param: RangeParam,
    pub reps: usize,
    pub mean: Estimate,
    pub second_moment: Option<Estimate>,
    /// F_d at the scale parameter, when it is defined (scale > 1).
    pub f_d: Option<f64>,
    pub mean_set_size: f64,
    pub max_set_size: usize,
    pub mc_fallbacks: usize,
    pub values: Vec<f64>,
}

fn distinct(mut v: Vec<Point>) -> Vec<Point> {
    v.sort_unstable();
    v.dedup();
    v
}

/// Sample moments of cap (free table) or cap^T (killed table) of a walk range from the origin.
pub fn range_capacity_stats(
    d: usize,
    param: RangeParam,
    moments: Moments,
    reps: usize,
    budget: &RangeBudget,
    stream: &RngStream,
) -> Result<RangeStats> {
    if reps < 30 {
        return Err(invalid(format!("range statistics need at least 30 replicas, got {reps}")));
    }
    if budget.table.d != d {
        return Err(Error::DimensionMismatch { expected: d, found: budget.table.d });
    }
    match param {
        RangeParam::Steps(_) if budget.table.kill.is_finite() => {
            return Err(invalid("fixed-length ranges use the free Green table"));
        }
        RangeParam::Killed(t) => {
            if !(t > 0.0) {
                return Err(invalid(format!("T must be positive, got {t}")));
            }
            if budget.table.kill != super::green::KillMean::Finite(t) {
                return Err(Error::GreenUnavailable(format!("killed ranges need the T={t} table")));
            }
        }
        _ => {}
    }
    let results: Vec<Result<(f64, usize, bool)>> = (0..reps)
        .into_par_iter()
        .map(|i| {
            let s = stream.child(i as u64);
            let mut rng = s.rng();
            let o = Point::origin(d);
            let sites = match param {
                RangeParam::Steps(n) => distinct(sample_srw(o, n, &mut rng).into_vertices()),
                RangeParam::Killed(t) => distinct(sample_killed_unchecked(o, t, &mut rng).vertices().collect()),
            };
            let c = budget.capacity(&sites, &s)?;
            Ok((c.value, sites.len(), c.method == super::escape::CapMethod::McEscape))
        })
        .collect();
    let mut values = Vec::with_capacity(reps);
    let mut first = MeanAcc::default();
    let mut second = MeanAcc::default();
    let mut sizes = MeanAcc::default();
    let mut max_set_size = 0;
    let mut mc_fallbacks = 0;
    for r in results {
        let (v, n, mc) = r?;
        values.push(v);
        first.push(v);
        second.push(v * v);
        sizes.push(n as f64);
        max_set_size = max_set_size.max(n);
        mc_fallbacks += mc as usize;
    }
    let scale = param.scale();
    Ok(RangeStats {
        d,
        param,
        reps,
        mean: first.estimate(),
        second_moment: (moments == Moments::FirstAndSecond).then(|| second.estimate()),
        f_d: if scale > 1.0 { f_d(d, scale).ok() } else { None },
        mean_set_size: sizes.mean(),
        max_set_size,
        mc_fallbacks,
        values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppedUnionStats {
    pub walks: usize,
    pub n: usize,
    pub reps: usize,
    pub mean: Estimate,
    /// min{N·n·F_d(n), n^(d-2)}
    pub reference: f64,
    pub ratio: f64,
    pub max_set_size: usize,
}

/// Walk from `start` until min(⌊n²/2⌋, first time at l∞ distance ≥ n from the start).
pub fn stopped_walk<R: rand::Rng + ?Sized>(start: Point, n: usize, rng: &mut R) -> Vec<Point> {
    let d = start.dim();
    let limit = n * n / 2;
    let mut x = start;
    let mut out = vec![x];
    for _ in 0..limit {
        if (x - start).norm_inf() >= n as i64 {
            break;
        }
        x = x.step(random_direction(d, rng));
        out.push(x);
    }
    out
}

/// Mean free capacity of the union of `starts.len()` independent stopped walks.
pub fn stopped_union_capacity(n: usize, starts: &[Point], reps: usize, budget: &RangeBudget, stream: &RngStream) -> Result<StoppedUnionStats> {
    if starts.is_empty() {
        return Err(Error::EmptySet);
    }
    if n < 2 || reps == 0 {
        return Err(invalid("stopped unions need n ≥ 2 and reps ≥ 1"));
    }
    if budget.table.kill.is_finite() {
        return Err(invalid("stopped unions use the free Green table"));
    }
    let d = starts[0].dim();
    let results: Vec<Result<(f64, usize)>> = (0..reps)
        .into_par_iter()
        .map(|i| {
            let s = stream.child(i as u64);
            let mut rng = s.rng();
            let mut set = SiteSet::default();
            for &x in starts {
                set.extend(stopped_walk(x, n, &mut rng));
            }
            let sites: Vec<Point> = set.into_iter().collect();
            let c = budget.capacity(&sites, &s)?;
            Ok((c.value, sites.len()))
        })
        .collect();
    let mut acc = MeanAcc::default();
    let mut max_set_size = 0;
    for r in results {
        let (v, k) = r?;
        acc.push(v);
        max_set_size = max_set_size.max(k);
    }
    let nf = n as f64;
    let reference = (starts.len() as f64 * nf * f_d(d, nf)?).min(nf.powi(d as i32 - 2));
    let mean = acc.estimate();
    Ok(StoppedUnionStats { walks: starts.len(), n, reps, mean, reference, ratio: mean.value / reference, max_set_size })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::green::{GreenBuild, KillMean};
    use crate::capacity::escape::escape_exact;
    use std::sync::OnceLock;

    fn free3() -> &'static GreenTable {
        static F: OnceLock<GreenTable> = OnceLock::new();
        F.get_or_init(|| GreenTable::build(3, KillMean::Infinite, GreenBuild { table_radius: 16, tolerance: 1e-4, max_points: 1_000_000 }).unwrap())
    }

    #[test]
    fn zero_steps_is_singleton_capacity() {
        let t = free3();
        let s = range_capacity_stats(3, RangeParam::Steps(0), Moments::FirstAndSecond, 30, &RangeBudget::exact(t), &RngStream::new(1, 0)).unwrap();
        let single = escape_exact(&[Point::origin(3)], t).unwrap().total();
        assert!((s.mean.value - single).abs() < 1e-12);
        assert_eq!(s.mean.stderr, 0.0);
        assert!(s.f_d.is_none());
    }

    #[test]
    fn rejects_few_reps_and_wrong_table() {
        let t = free3();
        let b = RangeBudget::exact(t);
        assert!(range_capacity_stats(3, RangeParam::Steps(4), Moments::First, 10, &b, &RngStream::new(1, 0)).is_err());
        assert!(range_capacity_stats(3, RangeParam::Killed(4.0), Moments::First, 30, &b, &RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn deterministic_and_grows() {
        let b = RangeBudget::exact(free3());
        let s = RngStream::new(9, 3);
        let a = range_capacity_stats(3, RangeParam::Steps(16), Moments::First, 40, &b, &s).unwrap();
        let again = range_capacity_stats(3, RangeParam::Steps(16), Moments::First, 40, &b, &s).unwrap();
        assert_eq!(a, again);
        let big = range_capacity_stats(3, RangeParam::Steps(64), Moments::First, 40, &b, &s).unwrap();
        assert!(big.mean.value > a.mean.value);
    }

    #[test]
    fn stopped_walk_respects_both_stops() {
        let mut rng = RngStream::new(4, 4).rng();
        for _ in 0..200 {
            let w = stopped_walk(Point::origin(3), 3, &mut rng);
            assert!(w.len() <= 3 * 3 / 2 + 1);
            let inner = &w[..w.len() - 1];
            assert!(inner.iter().all(|p| p.norm_inf() < 3));
        }
    }

    #[test]
    fn stopped_union_bounded_by_ball_and_nondecreasing() {
        let b = RangeBudget::exact(free3());
        let s = RngStream::new(5, 0);
        let one = stopped_union_capacity(2, &[Point::origin(3)], 200, &b, &s).unwrap();
        let ball = crate::lattice::box_sites(&crate::lattice::LatticeBox::plain(Point::new(&[-2, -2, -2]), 5), 3).unwrap();
        let ball_cap = escape_exact(&ball, free3()).unwrap().total();
        assert!(one.mean.value > 0.0 && one.mean.value <= ball_cap);
        let mut prev = 0.0;
        for k in [1usize, 2, 4, 8] {
            let starts = vec![Point::origin(3); k];
            let m = stopped_union_capacity(16, &starts, 60, &b, &s).unwrap().mean.value;
            assert!(m >= prev, "N={k}: {m} < {prev}");
            prev = m;
        }
    }
}
