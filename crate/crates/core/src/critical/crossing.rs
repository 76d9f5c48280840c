//! Crossing of the box [−N,N)^d from the origin, computed per replicate as the
//! smallest intensity at which it happens.
//!
//! The cloud is revealed lazily around the origin with intensity labels, and the
//! cluster is grown by always adding the lowest-labelled trajectory piece touching
//! it (invasion). The running maximum of added labels when the cluster first
//! reaches |x|_∞ ≥ N is the crossing intensity: at level u the origin crosses iff
//! that value is ≤ u. All levels share one sample, so crossing curves are exactly
//! monotone in u.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::crossing;
use crate::error::{invalid, Result};
use crate::fri::{sample_window, sample_window_increment, truncation_report, FriConfig};
use crate::lattice::{LatticeBox, Point, SiteMap, SiteSet};
use crate::reveal::{Revealed, Revealer};
use crate::rng::RngStream;
use crate::stats::{proportion, Estimate};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingPlan {
    pub d: usize,
    pub t: f64,
    /// box radius N
    pub n: u32,
    pub reps: usize,
    /// First intensity level; later levels double it.
    pub u_first: f64,
    /// Number of doublings after which the replicate is reported as not crossing.
    pub max_doublings: u32,
}

impl CrossingPlan {
    pub fn new(d: usize, t: f64, n: u32, reps: usize) -> CrossingPlan {
        CrossingPlan { d, t, n, reps, u_first: 1.0 / 1024.0, max_doublings: 24 }
    }

    pub fn u_max(&self) -> f64 {
        self.u_first * 2f64.powi(self.max_doublings as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 3 {
            return Err(invalid(format!("crossing needs d ≥ 3, got {}", self.d)));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(invalid(format!("T must be positive, got {}", self.t)));
        }
        if self.n == 0 || self.reps == 0 {
            return Err(invalid("crossing needs N ≥ 1 and reps ≥ 1"));
        }
        if !(self.u_first > 0.0) {
            return Err(invalid("first intensity level must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvasionOutcome {
    /// Smallest u at which the origin crosses; infinite if not by the last level.
    pub u_cross: f64,
    /// Smallest u at which some trajectory uses an edge at the origin.
    pub u_occupied: f64,
    /// Crossing intensity when the lowest-labelled trajectory at the origin is
    /// present regardless of its label.
    pub u_cross_occupied: f64,
    pub revealed: usize,
    pub candidates: u64,
    pub pieces: usize,
}

struct Piece {
    label: f64,
    sites: Vec<Point>,
    exits: bool,
    queued: bool,
}

struct Invasion {
    n: i64,
    reached: SiteSet,
    pieces: Vec<Piece>,
    pending: SiteMap<Vec<u32>>,
    heap: BinaryHeap<Reverse<(u64, u32)>>,
}

impl Invasion {
    fn inside(&self, p: &Point) -> bool {
        p.norm_inf() < self.n
    }

    /// Splits a trajectory into maximal runs of interior sites, each with the
    /// outside sites adjacent to it along the trajectory.
    fn add(&mut self, w: &Revealed) {
        let v = &w.vertices;
        let mut i = 0;
        while i < v.len() {
            if !self.inside(&v[i]) {
                i += 1;
                continue;
            }
            let start = i;
            while i < v.len() && self.inside(&v[i]) {
                i += 1;
            }
            let exits = start > 0 || i < v.len();
            if !exits && i - start == 1 {
                continue;
            }
            self.push_piece(Piece { label: w.label, sites: v[start..i].to_vec(), exits, queued: false });
        }
    }

    fn push_piece(&mut self, piece: Piece) {
        let id = self.pieces.len() as u32;
        let touching = piece.sites.iter().any(|p| self.reached.contains(p));
        if touching {
            self.heap.push(Reverse((piece.label.to_bits(), id)));
            self.pieces.push(Piece { queued: true, ..piece });
        } else {
            for p in &piece.sites {
                self.pending.entry(*p).or_default().push(id);
            }
            self.pieces.push(piece);
        }
    }

    fn reach(&mut self, p: Point, rev: &mut Revealer) {
        if !self.reached.insert(p) {
            return;
        }
        if let Some(ids) = self.pending.remove(&p) {
            for id in ids {
                let piece = &mut self.pieces[id as usize];
                if !piece.queued {
                    piece.queued = true;
                    self.heap.push(Reverse((piece.label.to_bits(), id)));
                }
            }
        }
        for w in rev.reveal(p) {
            self.add(&w);
        }
    }
}

/// Crossing intensity of one replicate.
pub fn invade(plan: &CrossingPlan, stream: &RngStream) -> Result<InvasionOutcome> {
    plan.validate()?;
    let d = plan.d;
    let mut rev = Revealer::new(d, plan.t, vec![plan.u_first], stream.clone())?;
    let mut inv = Invasion { n: plan.n as i64, reached: SiteSet::default(), pieces: Vec::new(), pending: SiteMap::default(), heap: BinaryHeap::new() };
    inv.reach(Point::origin(d), &mut rev);
    let mut level = 0.0f64;
    let mut occupied = f64::INFINITY;
    let mut beyond = 0.0f64;
    let mut doublings = 0;
    loop {
        let Some(Reverse((bits, id))) = inv.heap.pop() else {
            if doublings >= plan.max_doublings {
                return Ok(InvasionOutcome { u_cross: f64::INFINITY, u_occupied: occupied, u_cross_occupied: f64::INFINITY, revealed: rev.revealed().len(), candidates: rev.candidates_drawn(), pieces: inv.pieces.len() });
            }
            doublings += 1;
            let next = rev.top_level() * 2.0;
            for w in rev.raise(next, &SiteSet::default())? {
                inv.add(&w);
            }
            continue;
        };
        let label = f64::from_bits(bits);
        level = level.max(label);
        if occupied.is_finite() {
            beyond = beyond.max(label);
        }
        occupied = occupied.min(level);
        let piece = &inv.pieces[id as usize];
        if piece.exits {
            return Ok(InvasionOutcome { u_cross: level, u_occupied: occupied, u_cross_occupied: beyond, revealed: rev.revealed().len(), candidates: rev.candidates_drawn(), pieces: inv.pieces.len() });
        }
        let sites = std::mem::take(&mut inv.pieces[id as usize].sites);
        for p in sites {
            inv.reach(p, &mut rev);
        }
    }
}

/// Crossing intensities of `plan.reps` independent replicates, in replicate order.
pub fn crossing_thresholds(plan: &CrossingPlan, stream: &RngStream) -> Result<Vec<InvasionOutcome>> {
    plan.validate()?;
    (0..plan.reps).into_par_iter().map(|i| invade(plan, &stream.child(i as u64))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub u: f64,
    pub p: f64,
    pub stderr: f64,
    pub reps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingCurve {
    pub t: f64,
    pub n: u32,
    pub points: Vec<CurvePoint>,
}

/// Which crossing event a curve describes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingEvent {
    /// The origin is joined to |x|_∞ ≥ N.
    #[default]
    Origin,
    /// The same, with the origin's lowest-labelled trajectory always present.
    OriginOccupied,
}

impl CrossingEvent {
    pub fn threshold(&self, o: &InvasionOutcome) -> f64 {
        match self {
            CrossingEvent::Origin => o.u_cross,
            CrossingEvent::OriginOccupied => o.u_cross_occupied,
        }
    }
}

/// Empirical crossing probability from shared replicates: the fraction crossing by u.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingThresholds {
    pub plan: CrossingPlan,
    pub event: CrossingEvent,
    /// sorted ascending, infinite for replicates that never crossed
    pub sorted: Vec<f64>,
}

impl CrossingThresholds {
    pub fn new(plan: CrossingPlan, event: CrossingEvent, outcomes: &[InvasionOutcome]) -> CrossingThresholds {
        let mut sorted: Vec<f64> = outcomes.iter().map(|o| event.threshold(o)).collect();
        sorted.sort_by(f64::total_cmp);
        CrossingThresholds { plan, event, sorted }
    }

    pub fn reps(&self) -> usize {
        self.sorted.len()
    }

    pub fn count_at(&self, u: f64) -> usize {
        self.sorted.partition_point(|&x| x <= u)
    }

    pub fn probability(&self, u: f64) -> Estimate {
        proportion(self.count_at(u) as u64, self.reps() as u64)
    }

    /// k-th smallest threshold, 1-based.
    pub fn order_stat(&self, k: usize) -> f64 {
        self.sorted[k.clamp(1, self.reps()) - 1]
    }

    pub fn curve(&self, us: &[f64]) -> CrossingCurve {
        let points = us
            .iter()
            .map(|&u| {
                let e = self.probability(u);
                CurvePoint { u, p: e.value, stderr: e.stderr, reps: self.reps() }
            })
            .collect();
        CrossingCurve { t: self.plan.t, n: self.plan.n, points }
    }
}

/// P(0 ↔ |x|_∞ ≥ N) at intensity u from `reps` replicates, with binomial stderr.
pub fn crossing_probability(u: f64, t: f64, d: usize, n: u32, reps: usize, stream: &RngStream) -> Result<Estimate> {
    if !(u >= 0.0) {
        return Err(invalid("intensity must be nonnegative"));
    }
    if u == 0.0 {
        return Ok(Estimate::exact(0.0));
    }
    let plan = CrossingPlan { u_first: u, max_doublings: 0, ..CrossingPlan::new(d, t, n, reps) };
    let outcomes = crossing_thresholds(&plan, stream)?;
    Ok(CrossingThresholds::new(plan, CrossingEvent::Origin, &outcomes).probability(u))
}

/// The same probability from padded window samples; the coupled pair uses the
/// sample at `u` superposed with an independent increment up to `u_high`.
pub fn crossing_probability_window(u: f64, u_high: Option<f64>, t: f64, d: usize, n: u32, reps: usize, stream: &RngStream) -> Result<(Estimate, Option<Estimate>)> {
    if !(u > 0.0) {
        return Err(invalid("window crossing needs u > 0"));
    }
    let window = LatticeBox::plain(Point::new(&vec![-(n as i32); d]), 2 * n + 1);
    let results: Vec<Result<(bool, Option<bool>)>> = (0..reps)
        .into_par_iter()
        .map(|i| {
            let s = stream.child(i as u64);
            let mut cfg = FriConfig::new(d, u_high.unwrap_or(u).max(u), t, window, i as u64);
            cfg.padding = Some(truncation_report(&cfg)?.padding);
            cfg.u = u;
            let mut sample = sample_window(&cfg, &s.tagged("base"))?;
            let low = crossing(&sample, n)?;
            let high = match u_high {
                Some(uh) => {
                    let inc = sample_window_increment(&FriConfig { u: uh, ..cfg }, u, &s.tagged("increment"))?;
                    sample.superpose(inc)?;
                    Some(crossing(&sample, n)?)
                }
                None => None,
            };
            Ok((low, high))
        })
        .collect();
    let mut lo = 0u64;
    let mut hi = 0u64;
    for r in results {
        let (a, b) = r?;
        lo += a as u64;
        hi += b.unwrap_or(false) as u64;
    }
    Ok((proportion(lo, reps as u64), u_high.map(|_| proportion(hi, reps as u64))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_intensity_never_crosses() {
        assert_eq!(crossing_probability(0.0, 16.0, 3, 4, 10, &RngStream::new(1, 1)).unwrap(), Estimate::exact(0.0));
    }

    #[test]
    fn saturates_at_high_intensity() {
        // 5 starts per site on average
        let u = 5.0 * 5.0 / 6.0;
        let p = crossing_probability(u, 4.0, 3, 2, 200, &RngStream::new(2, 0)).unwrap();
        assert!(p.value >= 0.99, "{p:?}");
    }

    #[test]
    fn thresholds_are_deterministic_and_curve_monotone() {
        let plan = CrossingPlan::new(3, 9.0, 3, 60);
        let a = crossing_thresholds(&plan, &RngStream::new(4, 0)).unwrap();
        let b = crossing_thresholds(&plan, &RngStream::new(4, 0)).unwrap();
        assert_eq!(a, b);
        let th = CrossingThresholds::new(plan, CrossingEvent::Origin, &a);
        let us: Vec<f64> = (0..40).map(|j| 1e-3 * 1.3f64.powi(j)).collect();
        let c = th.curve(&us);
        assert!(c.points.windows(2).all(|w| w[0].p <= w[1].p));
        assert!(c.points[0].p < 0.1 && c.points.last().unwrap().p > 0.9);
        for o in &a {
            assert!(o.u_occupied <= o.u_cross && o.u_cross_occupied <= o.u_cross);
        }
    }

    #[test]
    fn one_step_radius_needs_an_edge_at_the_origin() {
        let (p, _) = crossing_probability_window(0.2, None, 3.0, 3, 1, 600, &RngStream::new(5, 0)).unwrap();
        let q = crossing_probability(0.2, 3.0, 3, 1, 2000, &RngStream::new(6, 0)).unwrap();
        assert!((p.value - q.value).abs() < 4.0 * (p.stderr.hypot(q.stderr)), "{p:?} {q:?}");
    }

    #[test]
    fn matches_window_sampler() {
        for (u, t, n) in [(0.15, 4.0, 3u32)] {
            let (p, _) = crossing_probability_window(u, None, t, 3, n, 500, &RngStream::new(7, 0)).unwrap();
            let q = crossing_probability(u, t, 3, n, 2000, &RngStream::new(8, 0)).unwrap();
            assert!((p.value - q.value).abs() < 4.0 * p.stderr.hypot(q.stderr) + 1e-3, "u={u} T={t}: {p:?} {q:?}");
        }
    }

    #[test]
    fn window_coupling_is_monotone() {
        let s = RngStream::new(9, 0);
        for i in 0..30u64 {
            let (lo, hi) = crossing_probability_window(0.1, Some(0.2), 4.0, 3, 2, 1, &s.child(i)).unwrap();
            assert!(hi.unwrap().value >= lo.value);
        }
    }
}
