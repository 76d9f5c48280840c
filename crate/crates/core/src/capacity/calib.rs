//! Empirical prefactors: box-capacity ratio bounds and the constants of the range
//! and union capacity estimates, each with the sample sizes and seed used.

use std::path::Path as FsPath;

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::boxcap::box_capacity;
use super::escape::{capacity_auto, CapBudget};
use super::green::{GreenCache, KillMean};
use super::ranges::{range_capacity_stats, stopped_union_capacity, Moments, RangeBudget, RangeParam};
use crate::critical::law::f_d;
use crate::error::{invalid, Result};
use crate::lattice::{box_sites, BoxKind, LatticeBox, Point, SiteSet};
use crate::rng::RngStream;
use crate::stats::{normal_quantile, MeanAcc};
use crate::walk::{n_t, sample_killed_unchecked};

/// Safety factor applied to the smallest measured box ratio to get the explorer threshold.
pub const C1_SAFETY: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedConstant {
    pub name: String,
    pub value: f64,
    /// 95% normal interval.
    pub ci: (f64, f64),
    pub samples: usize,
    pub grid: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConstants {
    pub d: usize,
    pub seed: u64,
    /// min over the box grid of cap(B_0(n))/n^(d-2)
    pub c1_hat: f64,
    /// max over the box grid of the same ratio
    pub c2_hat: f64,
    pub box_ratios: Vec<(u32, f64)>,
    pub fits: Vec<FittedConstant>,
    pub provenance: String,
}

impl CalibrationConstants {
    pub fn c1_threshold(&self) -> f64 {
        C1_SAFETY * self.c1_hat
    }

    pub fn get(&self, name: &str) -> Option<&FittedConstant> {
        self.fits.iter().find(|f| f.name == name)
    }

    pub fn file_name(d: usize) -> String {
        format!("calibration_d{d}.json")
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &FsPath) -> Result<CalibrationConstants> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPlan {
    pub box_sides: Vec<u32>,
    pub range_steps: Vec<usize>,
    pub kill_means: Vec<f64>,
    pub reps: usize,
    pub stopped_n: usize,
    pub stopped_walks: Vec<usize>,
    pub union_kill_mean: f64,
    pub union_u_hat: f64,
    pub union_reps: usize,
}

impl Default for CalibrationPlan {
    fn default() -> Self {
        CalibrationPlan {
            box_sides: vec![4, 8, 16, 32],
            range_steps: vec![64, 128, 256, 512],
            kill_means: vec![16.0, 64.0, 256.0],
            reps: 200,
            stopped_n: 16,
            stopped_walks: vec![1, 2, 4, 8],
            union_kill_mean: 64.0,
            union_u_hat: 4.0,
            union_reps: 100,
        }
    }
}

fn extreme(name: &str, points: &[(f64, f64, f64)], lower: bool, samples: usize) -> FittedConstant {
    // points: (grid value, ratio, stderr of ratio)
    let z = normal_quantile(0.975);
    let pick = points
        .iter()
        .copied()
        .reduce(|a, b| if (b.1 < a.1) == lower { b } else { a })
        .expect("nonempty grid");
    FittedConstant {
        name: name.to_string(),
        value: pick.1,
        ci: (pick.1 - z * pick.2, pick.1 + z * pick.2),
        samples,
        grid: points.iter().map(|p| p.0).collect(),
    }
}

/// Mean free capacity of the union of stopped trajectories started in the side-n_T box
/// at `spacing·n_T·e_1` that live at least 2T steps and reach `B_0(n_T)` within 2T steps,
/// each cut at min(exit of the enlarged start box, ⌊T⌋). Returned per û·n_T^(d-2).
pub fn hitting_union_ratio(
    d: usize,
    t: f64,
    u_hat: f64,
    spacing: u32,
    reps: usize,
    cache: &GreenCache,
    stream: &RngStream,
) -> Result<FittedConstant> {
    if !(u_hat > 0.0) || reps < 2 {
        return Err(invalid("hitting-union ratio needs û > 0 and reps ≥ 2"));
    }
    let n = n_t(t);
    let table = cache.get(d, KillMean::Infinite)?;
    let u = u_hat / f_d(d, t)?;
    let per_site = Poisson::new(2.0 * d as f64 * u / (t + 1.0)).map_err(|e| invalid(e.to_string()))?;
    let target: SiteSet = box_sites(&LatticeBox::plain(Point::origin(d), n), d)?.into_iter().collect();
    let start_box = LatticeBox::plain(Point::axis(d, 0, (spacing * n) as i32), n);
    let enlarged = LatticeBox::new(start_box.corner, n, BoxKind::Enlarged)?.bounds();
    let starts = box_sites(&start_box, d)?;
    let mut acc = MeanAcc::default();
    for i in 0..reps {
        let s = stream.child(i as u64);
        let mut rng = s.rng();
        let mut union = SiteSet::default();
        for &x in &starts {
            let k = per_site.sample(&mut rng) as usize;
            for _ in 0..k {
                let w = sample_killed_unchecked(x, t, &mut rng);
                if (w.lifetime() as f64) < 2.0 * t {
                    continue;
                }
                let verts: Vec<Point> = w.vertices().collect();
                let limit = (2.0 * t).floor() as usize;
                if !verts.iter().take(limit + 1).any(|p| target.contains(p)) {
                    continue;
                }
                let exit = verts.iter().position(|p| enlarged.on_inner_boundary(p)).unwrap_or(usize::MAX);
                let stop = exit.min(t.floor() as usize).min(verts.len() - 1);
                union.extend(verts[..=stop].iter().copied());
            }
        }
        let sites: Vec<Point> = union.into_iter().collect();
        let c = capacity_auto(&sites, &table, &CapBudget::exact(&table))?;
        acc.push(c.value);
    }
    let norm = u_hat * (n as f64).powi(d as i32 - 2);
    let e = acc.estimate();
    let z = normal_quantile(0.975);
    Ok(FittedConstant {
        name: "c6".into(),
        value: e.value / norm,
        ci: ((e.value - z * e.stderr) / norm, (e.value + z * e.stderr) / norm),
        samples: reps,
        grid: vec![t],
    })
}

/// Runs the plan; Green tables come from (and are added to) `cache`.
pub fn calibrate(d: usize, plan: &CalibrationPlan, cache: &GreenCache, seed: u64) -> Result<CalibrationConstants> {
    if d < 3 {
        return Err(invalid("calibration needs d ≥ 3"));
    }
    if plan.box_sides.is_empty() || plan.range_steps.is_empty() {
        return Err(invalid("calibration grids must be nonempty"));
    }
    let root = RngStream::new(seed, 0);
    let mut box_ratios = Vec::new();
    for &n in &plan.box_sides {
        let c = box_capacity(d, n, KillMean::Infinite)?;
        box_ratios.push((n, c.value / (n as f64).powi(d as i32 - 2)));
    }
    let c1_hat = box_ratios.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let c2_hat = box_ratios.iter().map(|r| r.1).fold(0.0, f64::max);

    let mut fits = Vec::new();
    let free = cache.get(d, KillMean::Infinite)?;
    let budget = RangeBudget::exact(&free);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (i, &n) in plan.range_steps.iter().enumerate() {
        let s = range_capacity_stats(d, RangeParam::Steps(n), Moments::FirstAndSecond, plan.reps, &budget, &root.tagged("range").child(i as u64))?;
        let f = f_d(d, n as f64)?;
        first.push((n as f64, s.mean.value / f, s.mean.stderr / f));
        let m2 = s.second_moment.expect("second moment requested");
        second.push((n as f64, m2.value / (f * f), m2.stderr / (f * f)));
    }
    fits.push(extreme("C4", &first, true, plan.reps));
    fits.push(extreme("C5", &first, false, plan.reps));
    fits.push(extreme("C10", &second, false, plan.reps));

    if d >= 4 && !plan.kill_means.is_empty() {
        let mut killed = Vec::new();
        for (i, &t) in plan.kill_means.iter().enumerate() {
            let table = cache.get(d, KillMean::Finite(t))?;
            let s = range_capacity_stats(d, RangeParam::Killed(t), Moments::First, plan.reps, &RangeBudget::exact(&table), &root.tagged("killed").child(i as u64))?;
            let f = f_d(d, t)?;
            killed.push((t, s.mean.value / f, s.mean.stderr / f));
        }
        fits.push(extreme("C6", &killed, false, plan.reps));
    }

    if !plan.stopped_walks.is_empty() {
        let mut stopped = Vec::new();
        for (i, &k) in plan.stopped_walks.iter().enumerate() {
            let starts = vec![Point::origin(d); k];
            let s = stopped_union_capacity(plan.stopped_n, &starts, plan.reps, &budget, &root.tagged("stopped").child(i as u64))?;
            stopped.push((k as f64, s.ratio, s.mean.stderr / s.reference));
        }
        fits.push(extreme("c5", &stopped, true, plan.reps));
    }

    if plan.union_reps >= 2 {
        fits.push(hitting_union_ratio(d, plan.union_kill_mean, plan.union_u_hat, 10, plan.union_reps, cache, &root.tagged("union"))?);
    }

    Ok(CalibrationConstants {
        d,
        seed,
        c1_hat,
        c2_hat,
        box_ratios,
        fits,
        provenance: format!("calibrate d={d} seed={seed} plan={}", serde_json::to_string(plan)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::green::{GreenBuild, GreenTable};

    #[test]
    fn small_plan_runs_and_round_trips() {
        let cache = GreenCache::in_memory();
        cache.insert(GreenTable::build(3, KillMean::Infinite, GreenBuild { table_radius: 16, tolerance: 1e-4, max_points: 1_000_000 }).unwrap());
        let plan = CalibrationPlan {
            box_sides: vec![2, 4],
            range_steps: vec![16, 32],
            kill_means: vec![],
            reps: 30,
            stopped_n: 4,
            stopped_walks: vec![1, 2],
            union_kill_mean: 16.0,
            union_u_hat: 50.0,
            union_reps: 5,
        };
        let c = calibrate(3, &plan, &cache, 7).unwrap();
        assert!(c.c1_hat > 0.0 && c.c1_hat <= c.c2_hat);
        assert!((c.c1_threshold() - 0.9 * c.c1_hat).abs() < 1e-15);
        for name in ["C4", "C5", "C10", "c5", "c6"] {
            let f = c.get(name).unwrap();
            assert!(f.ci.0 <= f.value && f.value <= f.ci.1, "{name}");
        }
        assert!(c.get("C4").unwrap().value <= c.get("C5").unwrap().value);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(CalibrationConstants::file_name(3));
        c.save(&p).unwrap();
        assert_eq!(CalibrationConstants::load(&p).unwrap(), c);
    }
}
