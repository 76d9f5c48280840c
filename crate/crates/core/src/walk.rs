//! Simple and geometrically killed random walks, hitting times and walk-level estimators.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{Point, SiteSet};
use crate::rng::RngStream;
use crate::stats::{proportion, Estimate};

/// Nearest-neighbour vertex sequence. Length is the number of steps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path {
    vertices: Vec<Point>,
}

impl Path {
    pub fn new(vertices: Vec<Point>) -> Result<Path> {
        if vertices.is_empty() {
            return Err(Error::EmptySet);
        }
        for w in vertices.windows(2) {
            if !w[0].is_adjacent(&w[1]) {
                return Err(Error::NotNearestNeighbour(w[0].to_string(), w[1].to_string()));
            }
        }
        Ok(Path { vertices })
    }

    pub(crate) fn from_trusted(vertices: Vec<Point>) -> Path {
        debug_assert!(!vertices.is_empty());
        debug_assert!(vertices.windows(2).all(|w| w[0].is_adjacent(&w[1])));
        Path { vertices }
    }

    pub fn single(p: Point) -> Path {
        Path { vertices: vec![p] }
    }

    pub fn len(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn start(&self) -> Point {
        self.vertices[0]
    }

    pub fn end(&self) -> Point {
        *self.vertices.last().expect("nonempty path")
    }

    pub fn into_vertices(self) -> Vec<Point> {
        self.vertices
    }
}

/// Killed walk stored as start plus step directions (`0..2d`, see [`Point::step`]).
#[derive(Clone, Debug, PartialEq)]
pub struct KilledWalk {
    pub start: Point,
    pub steps: Vec<u8>,
    pub mean_length: f64,
}

impl KilledWalk {
    pub fn lifetime(&self) -> usize {
        self.steps.len()
    }

    pub fn vertices(&self) -> impl Iterator<Item = Point> + '_ {
        let mut cur = self.start;
        std::iter::once(cur).chain(self.steps.iter().map(move |&s| {
            cur = cur.step(s);
            cur
        }))
    }

    pub fn path(&self) -> Path {
        Path::from_trusted(self.vertices().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HitVariant {
    /// Scan from index 0.
    FirstHit,
    /// Scan from index 1.
    Entrance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HittingResult {
    /// `None` stands for "never" (min ∅ = ∞).
    pub index: Option<usize>,
    pub variant: HitVariant,
}

pub fn hitting_time(p: &Path, a: &SiteSet, variant: HitVariant) -> Result<HittingResult> {
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    let from = match variant {
        HitVariant::FirstHit => 0,
        HitVariant::Entrance => 1,
    };
    let index = p.vertices.iter().enumerate().skip(from).find(|(_, v)| a.contains(v)).map(|(i, _)| i);
    Ok(HittingResult { index, variant })
}

#[inline]
pub fn random_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> u8 {
    rng.random_range(0..2 * d as u8)
}

pub fn sample_srw<R: Rng + ?Sized>(start: Point, steps: usize, rng: &mut R) -> Path {
    let d = start.dim();
    let mut v = Vec::with_capacity(steps + 1);
    let mut cur = start;
    v.push(cur);
    for _ in 0..steps {
        cur = cur.step(random_direction(d, rng));
        v.push(cur);
    }
    Path::from_trusted(v)
}

/// Geo(1/(T+1)) on {0,1,...} by inversion of one uniform.
pub fn geometric_lifetime<R: Rng + ?Sized>(t: f64, rng: &mut R) -> usize {
    let u: f64 = 1.0 - rng.random::<f64>(); // in (0,1]
    let q = (t / (t + 1.0)).ln();
    if q == 0.0 {
        return usize::MAX;
    }
    let k = (u.ln() / q).floor();
    if k >= usize::MAX as f64 {
        usize::MAX
    } else {
        k as usize
    }
}

fn check_t(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("mean length T must be positive and finite, got {t}")))
    }
}

pub fn sample_killed<R: Rng + ?Sized>(start: Point, t: f64, rng: &mut R) -> Result<KilledWalk> {
    check_t(t)?;
    Ok(sample_killed_unchecked(start, t, rng))
}

pub(crate) fn sample_killed_unchecked<R: Rng + ?Sized>(start: Point, t: f64, rng: &mut R) -> KilledWalk {
    let n = geometric_lifetime(t, rng);
    let d = start.dim();
    let steps = (0..n).map(|_| random_direction(d, rng)).collect();
    KilledWalk { start, steps, mean_length: t }
}

/// ⌊√T⌋, at least 1.
pub fn n_t(t: f64) -> u32 {
    (t.sqrt().floor() as u32).max(1)
}

/// Monte-Carlo estimate of P(max_i |X_i|_∞ ≥ t·n_T) for the killed walk from 0.
pub fn diameter_tail(d: usize, t_mean: f64, t: f64, reps: u64, stream: &RngStream) -> Result<Estimate> {
    check_t(t_mean)?;
    if reps == 0 {
        return Err(invalid("reps must be positive"));
    }
    if !(t >= 0.0) {
        return Err(invalid("t must be nonnegative"));
    }
    let radius = (t * n_t(t_mean) as f64).ceil() as i64;
    let hits: u64 = (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.child(i).rng();
            let n = geometric_lifetime(t_mean, &mut rng);
            let mut cur = Point::origin(d);
            if radius <= 0 {
                return 1;
            }
            for _ in 0..n {
                cur = cur.step(random_direction(d, &mut rng));
                if cur.norm_inf() >= radius {
                    return 1;
                }
            }
            0
        })
        .sum();
    Ok(proportion(hits, reps))
}

/// Chernoff bound on P(max_i |X_i|_∞ ≥ r) for the killed walk, via the exponential
/// martingale of one coordinate and the generating function of the lifetime.
pub fn killed_max_tail_bound(d: usize, t_mean: f64, r: f64) -> f64 {
    if r <= 0.0 {
        return 1.0;
    }
    let lambda = t_mean / (t_mean + 1.0);
    let dd = d as f64;
    // λ·φ(θ) < 1  ⇔  cosh θ < 1 + d(1/λ − 1)
    let theta_max = (1.0 + dd * (1.0 / lambda - 1.0)).acosh();
    let mut best = f64::INFINITY;
    let steps = 400;
    for k in 1..steps {
        let th = theta_max * k as f64 / steps as f64;
        let phi = 1.0 - 1.0 / dd + th.cosh() / dd;
        let denom = 1.0 - lambda * phi;
        if denom <= 0.0 {
            continue;
        }
        let b = 2.0 * dd * (-th * r).exp() * (1.0 - lambda) / denom;
        best = best.min(b);
    }
    best.min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionEstimates {
    pub p_self: Estimate,
    pub p_two_walk_avoid: Estimate,
    pub horizon: usize,
}

/// d = 4 only: P[X[0,n] ∩ X[2n, 2n+L] ≠ ∅] and P[X[1,n] ∩ X'[1,n] = ∅].
/// `horizon` is L; `None` means the default n².
pub fn intersection_probs(
    d: usize,
    n: usize,
    reps: u64,
    horizon: Option<usize>,
    stream: &RngStream,
) -> Result<IntersectionEstimates> {
    if d != 4 {
        return Err(Error::UnsupportedDimension(d));
    }
    if n < 2 || reps == 0 {
        return Err(invalid("need n ≥ 2 and reps ≥ 1"));
    }
    let horizon = horizon.unwrap_or(n * n);
    let (hits, avoids): (u64, u64) = (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.child(i).rng();
            let first = sample_srw(Point::origin(d), n, &mut rng);
            let seen: SiteSet = first.vertices().iter().copied().collect();
            let mut cur = first.end();
            for _ in n..2 * n {
                cur = cur.step(random_direction(d, &mut rng));
            }
            let mut hit = seen.contains(&cur);
            let mut k = 0;
            while !hit && k < horizon {
                cur = cur.step(random_direction(d, &mut rng));
                hit = seen.contains(&cur);
                k += 1;
            }
            let one: SiteSet = first.vertices()[1..].iter().copied().collect();
            let other = sample_srw(Point::origin(d), n, &mut rng);
            let avoid = other.vertices()[1..].iter().all(|v| !one.contains(v));
            (hit as u64, avoid as u64)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(IntersectionEstimates { p_self: proportion(hits, reps), p_two_walk_avoid: proportion(avoids, reps), horizon })
}
