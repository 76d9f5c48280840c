//! Exact lazy sampling of the infinite-volume cloud, one vertex at a time.
//!
//! Revealing `v` produces exactly the trajectories through `v` that avoid every
//! vertex revealed before it. A trajectory through `v` splits at its first visit to
//! `v` into a reversed killed walk (the past) and a killed walk (the future); the
//! pair has intensity 2du·P⊗P restricted to pasts that avoid `v` at steps ≥ 1. So
//! each vertex draws Pois(2d·Δu) candidate pairs per intensity increment, keeps
//! the past only if it avoids the revealed set and `v` at steps ≥ 1, and drops the
//! pair if the future meets an earlier revealed vertex (that trajectory was already
//! produced there).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::capacity::escape::escape_exact;
use crate::capacity::green::{GreenTable, KillMean};
use crate::error::{invalid, Result};
use crate::lattice::{Point, SiteMap, SiteSet};
use crate::rng::RngStream;
use crate::walk::{geometric_lifetime, random_direction};

/// A trajectory produced by a reveal, as its full vertex sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Revealed {
    pub vertices: Vec<Point>,
    pub label: f64,
    /// Index in `vertices` of the first visit to the vertex that produced it.
    pub entry: usize,
}

impl Revealed {
    pub fn vertex_set(&self) -> SiteSet {
        self.vertices.iter().copied().collect()
    }
}

/// Intensity increments (levels[j-1], levels[j]] with levels[-1] = 0.
pub struct Revealer {
    d: usize,
    t: f64,
    levels: Vec<f64>,
    stream: RngStream,
    index: SiteMap<usize>,
    order: Vec<Point>,
    candidates_drawn: u64,
}

impl Revealer {
    pub fn new(d: usize, t: f64, levels: Vec<f64>, stream: RngStream) -> Result<Revealer> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid(format!("mean length T must be positive, got {t}")));
        }
        if levels.windows(2).any(|w| !(w[1] > w[0])) || levels.first().is_some_and(|&u| !(u >= 0.0)) {
            return Err(invalid("intensity levels must be increasing and nonnegative"));
        }
        Ok(Revealer { d, t, levels, stream, index: SiteMap::default(), order: Vec::new(), candidates_drawn: 0 })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn top_level(&self) -> f64 {
        self.levels.last().copied().unwrap_or(0.0)
    }

    pub fn is_revealed(&self, p: &Point) -> bool {
        self.index.contains_key(p)
    }

    pub fn revealed(&self) -> &[Point] {
        &self.order
    }

    pub fn candidates_drawn(&self) -> u64 {
        self.candidates_drawn
    }

    /// Marks `p` revealed without sampling; its trajectories must have been produced
    /// by other means (see [`sample_forced_hits`]).
    pub fn mark(&mut self, p: Point) {
        if !self.index.contains_key(&p) {
            self.index.insert(p, self.order.len());
            self.order.push(p);
        }
    }

    fn increment(&self, j: usize) -> (f64, f64) {
        (if j == 0 { 0.0 } else { self.levels[j - 1] }, self.levels[j])
    }

    /// Candidates of increment `j` at `v`, where vertices with reveal index < `rank`
    /// count as earlier and `v` itself has index `rank`.
    fn candidates(&mut self, v: Point, rank: usize, j: usize, out: &mut Vec<Revealed>) {
        let (lo, hi) = self.increment(j);
        let mean = 2.0 * self.d as f64 * (hi - lo);
        if mean <= 0.0 {
            return;
        }
        let mut rng: ChaCha8Rng = self.stream.child(j as u64).child(v.stream_key()).rng();
        let k = Poisson::new(mean).expect("positive mean").sample(&mut rng) as usize;
        self.candidates_drawn += k as u64;
        let earlier = |p: &Point, index: &SiteMap<usize>| index.get(p).is_some_and(|&i| i < rank);
        for _ in 0..k {
            let label = lo + (hi - lo) * (1.0 - rng.random::<f64>());
            let back_len = geometric_lifetime(self.t, &mut rng);
            let mut past = Vec::with_capacity(back_len + 1);
            past.push(v);
            let mut cur = v;
            let mut ok = true;
            for _ in 0..back_len {
                cur = cur.step(random_direction(self.d, &mut rng));
                if cur == v || earlier(&cur, &self.index) {
                    ok = false;
                    break;
                }
                past.push(cur);
            }
            if !ok {
                continue;
            }
            let fwd_len = geometric_lifetime(self.t, &mut rng);
            let mut future = Vec::with_capacity(fwd_len);
            cur = v;
            for _ in 0..fwd_len {
                cur = cur.step(random_direction(self.d, &mut rng));
                if earlier(&cur, &self.index) {
                    ok = false;
                    break;
                }
                future.push(cur);
            }
            if !ok {
                continue;
            }
            let entry = past.len() - 1;
            past.reverse();
            past.extend(future);
            out.push(Revealed { vertices: past, label, entry });
        }
    }

    /// Reveals `v` at every current level; returns the new trajectories through it.
    pub fn reveal(&mut self, v: Point) -> Vec<Revealed> {
        if self.index.contains_key(&v) {
            return Vec::new();
        }
        let rank = self.order.len();
        self.index.insert(v, rank);
        self.order.push(v);
        let mut out = Vec::new();
        for j in 0..self.levels.len() {
            self.candidates(v, rank, j, &mut out);
        }
        out
    }

    /// Adds the increment (top level, u] at every revealed vertex, in reveal order.
    /// Vertices marked without sampling are skipped.
    pub fn raise(&mut self, u: f64, marked: &SiteSet) -> Result<Vec<Revealed>> {
        if !(u > self.top_level()) {
            return Err(invalid("new level must exceed the current top level"));
        }
        self.levels.push(u);
        let j = self.levels.len() - 1;
        let mut out = Vec::new();
        for rank in 0..self.order.len() {
            let v = self.order[rank];
            if !marked.contains(&v) {
                self.candidates(v, rank, j, &mut out);
            }
        }
        Ok(out)
    }
}

/// The trajectories meeting `k` at intensity `u`, conditioned to be at least one.
/// Returns P(at least one) = 1 − e^{−μ}, μ = 2du·cap^T(k), and the trajectories.
pub fn sample_forced_hits(k: &[Point], u: f64, table: &GreenTable, stream: &RngStream) -> Result<(f64, Vec<Revealed>)> {
    let t = match table.kill {
        KillMean::Finite(t) => t,
        KillMean::Infinite => return Err(invalid("forced hits need a killed Green table")),
    };
    if !(u > 0.0) {
        return Err(invalid("forced hits need a positive intensity"));
    }
    let esc = escape_exact(k, table)?;
    let d = table.d;
    let cap = esc.total();
    let mu = 2.0 * d as f64 * u * cap;
    let mut rng = stream.rng();
    // zero-truncated Poisson by inversion
    let p0 = (-mu).exp();
    let target = p0 + (1.0 - p0) * rng.random::<f64>();
    let mut m = 0usize;
    let mut p = p0;
    let mut cdf = p0;
    while cdf < target && m < 1_000_000 {
        m += 1;
        p *= mu / m as f64;
        cdf += p;
    }
    let m = m.max(1);
    let set: SiteSet = esc.sites.iter().copied().collect();
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let mut pick = rng.random::<f64>() * cap;
        let mut x = esc.sites[esc.sites.len() - 1];
        for (s, e) in esc.sites.iter().zip(&esc.values) {
            if pick < *e {
                x = *s;
                break;
            }
            pick -= e;
        }
        let past = loop {
            let n = geometric_lifetime(t, &mut rng);
            let mut path = vec![x];
            let mut cur = x;
            let mut ok = true;
            for _ in 0..n {
                cur = cur.step(random_direction(d, &mut rng));
                if set.contains(&cur) {
                    ok = false;
                    break;
                }
                path.push(cur);
            }
            if ok {
                break path;
            }
        };
        let n = geometric_lifetime(t, &mut rng);
        let mut cur = x;
        let mut vertices = past;
        let entry = vertices.len() - 1;
        vertices.reverse();
        for _ in 0..n {
            cur = cur.step(random_direction(d, &mut rng));
            vertices.push(cur);
        }
        out.push(Revealed { vertices, label: u * rng.random::<f64>(), entry });
    }
    Ok((1.0 - p0, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::green::GreenBuild;
    use crate::stats::{poisson_gof, MeanAcc};

    fn table(d: usize, t: f64) -> GreenTable {
        GreenTable::build(d, KillMean::Finite(t), GreenBuild { table_radius: 10, tolerance: 1e-4, max_points: 1_000_000 }).unwrap()
    }

    #[test]
    fn first_reveal_count_is_poisson_with_capacity_mean() {
        let tab = table(3, 5.0);
        let u = 0.4;
        let mean = 6.0 * u / tab.at_origin();
        let counts: Vec<u64> = (0..3000)
            .map(|i| {
                let mut r = Revealer::new(3, 5.0, vec![u], RngStream::new(11, i)).unwrap();
                r.reveal(Point::origin(3)).len() as u64
            })
            .collect();
        let t = poisson_gof(&counts, mean).unwrap();
        assert!(t.p_value > 1e-3, "{t:?} mean {mean}");
    }

    #[test]
    fn trajectories_pass_through_and_avoid_earlier() {
        let mut r = Revealer::new(3, 8.0, vec![1.0], RngStream::new(3, 0)).unwrap();
        let a = Point::origin(3);
        let b = Point::new(&[1, 0, 0]);
        let first = r.reveal(a);
        let second = r.reveal(b);
        for w in &first {
            assert_eq!(w.vertices[w.entry], a);
            assert!(w.vertices[..w.entry].iter().all(|p| *p != a));
        }
        for w in &second {
            assert_eq!(w.vertices[w.entry], b);
            assert!(w.vertices.iter().all(|p| *p != a));
            assert!(w.vertices.windows(2).all(|p| p[0].is_adjacent(&p[1])));
        }
        assert!(r.reveal(a).is_empty());
    }

    #[test]
    fn pair_count_matches_two_point_capacity() {
        // trajectories meeting {a,b}: revealing a then b gives Pois(2du·cap^T({a,b}))
        let tab = table(3, 5.0);
        let a = Point::origin(3);
        let b = Point::new(&[2, 0, 0]);
        let cap = escape_exact(&[a, b], &tab).unwrap().total();
        let u = 0.3;
        let acc: MeanAcc = (0..4000)
            .map(|i| {
                let mut r = Revealer::new(3, 5.0, vec![u], RngStream::new(12, i)).unwrap();
                (r.reveal(a).len() + r.reveal(b).len()) as f64
            })
            .collect();
        let mean = 6.0 * u * cap;
        assert!((acc.mean() - mean).abs() < 3.5 * (mean / 4000.0).sqrt(), "{} vs {mean}", acc.mean());
    }

    #[test]
    fn raising_matches_direct_level() {
        let tab = table(3, 5.0);
        let a = Point::origin(3);
        let mean = 6.0 * 0.6 / tab.at_origin();
        let acc: MeanAcc = (0..3000)
            .map(|i| {
                let mut r = Revealer::new(3, 5.0, vec![0.2], RngStream::new(13, i)).unwrap();
                let n0 = r.reveal(a).len();
                (n0 + r.raise(0.6, &SiteSet::default()).unwrap().len()) as f64
            })
            .collect();
        assert!((acc.mean() - mean).abs() < 3.5 * (mean / 3000.0).sqrt());
    }

    #[test]
    fn forced_hits_weight_and_shape() {
        let tab = table(5, 16.0);
        let o = Point::origin(5);
        let (w, hits) = sample_forced_hits(&[o], 1e-3, &tab, &RngStream::new(1, 2)).unwrap();
        let mu = 10.0 * 1e-3 / tab.at_origin();
        assert!((w - (1.0 - (-mu).exp())).abs() < 1e-15);
        assert!(!hits.is_empty());
        for h in &hits {
            assert_eq!(h.vertices[h.entry], o);
            assert!(h.vertices[..h.entry].iter().all(|p| *p != o));
        }
    }
}
