//! Connectivity over trajectory edge sets: clusters, crossing, and the layers of
//! trajectories around a base set.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::green::{GreenTable, KillMean};
use crate::capacity::ranges::RangeBudget;
use crate::critical::law::f_d;
use crate::error::{invalid, Error, Result};
use crate::fri::FriSample;
use crate::lattice::{Bounds, EdgeSet, Point, SiteMap, SiteSet};
use crate::reveal::{sample_forced_hits, Revealed, Revealer};
use crate::rng::RngStream;
use crate::stats::{Estimate, MeanAcc};

/// Disjoint sets with path compression and union by size.
#[derive(Clone, Debug, Default)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> UnionFind {
        UnionFind { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn push(&mut self) -> usize {
        self.parent.push(self.parent.len());
        self.size.push(1);
        self.parent.len() - 1
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    /// Returns true if the two were in different sets.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        true
    }

    pub fn set_size(&mut self, x: usize) -> usize {
        let r = self.find(x);
        self.size[r]
    }
}

/// Connected components of (V(E), E). Cluster ids are ordered by the
/// lexicographically smallest member, so they do not depend on edge order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClusterMap {
    ids: SiteMap<usize>,
    sizes: Vec<usize>,
    smallest: Vec<Point>,
    pub edge_count: usize,
}

impl ClusterMap {
    pub fn id(&self, p: &Point) -> Option<usize> {
        self.ids.get(p).copied()
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn site_count(&self) -> usize {
        self.ids.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn representative(&self, id: usize) -> Point {
        self.smallest[id]
    }

    pub fn largest(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(0)
    }

    pub fn members(&self, id: usize) -> Vec<Point> {
        let mut v: Vec<Point> = self.ids.iter().filter(|(_, &c)| c == id).map(|(p, _)| *p).collect();
        v.sort_unstable();
        v
    }

    /// Sites of every cluster meeting `a`.
    pub fn touching(&self, a: &[Point]) -> SiteSet {
        let want: std::collections::BTreeSet<usize> = a.iter().filter_map(|p| self.id(p)).collect();
        self.ids.iter().filter(|(_, c)| want.contains(c)).map(|(p, _)| *p).collect()
    }
}

pub fn clusters(e: &EdgeSet) -> ClusterMap {
    let mut index = SiteMap::<usize>::default();
    let mut sites = Vec::new();
    let mut uf = UnionFind::default();
    let mut slot = |p: Point, uf: &mut UnionFind| -> usize {
        *index.entry(p).or_insert_with(|| {
            sites.push(p);
            uf.push()
        })
    };
    for edge in e.iter() {
        let (x, y) = edge.endpoints();
        let a = slot(x, &mut uf);
        let b = slot(y, &mut uf);
        uf.union(a, b);
    }
    let mut smallest = SiteMap::<Point>::default();
    let mut roots = Vec::with_capacity(sites.len());
    for (i, &p) in sites.iter().enumerate() {
        let r = uf.find(i);
        roots.push(r);
        let s = smallest.entry(sites[r]).or_insert(p);
        if p < *s {
            *s = p;
        }
    }
    let mut reps: Vec<(Point, Point)> = smallest.into_iter().collect();
    reps.sort_unstable_by(|a, b| a.1.cmp(&b.1));
    let order: SiteMap<usize> = reps.iter().enumerate().map(|(i, (root, _))| (*root, i)).collect();
    let mut sizes = vec![0; reps.len()];
    let mut ids = SiteMap::default();
    for (i, &p) in sites.iter().enumerate() {
        let c = order[&sites[roots[i]]];
        sizes[c] += 1;
        ids.insert(p, c);
    }
    ClusterMap { ids, sizes, smallest: reps.into_iter().map(|r| r.1).collect(), edge_count: e.len() }
}

/// A ∩ B ≠ ∅, or some cluster of E meets both.
pub fn connected(a: &[Point], b: &[Point], e: &EdgeSet) -> bool {
    let bs: SiteSet = b.iter().copied().collect();
    if a.iter().any(|p| bs.contains(p)) {
        return true;
    }
    let c = clusters(e);
    let ids: std::collections::BTreeSet<usize> = a.iter().filter_map(|p| c.id(p)).collect();
    b.iter().filter_map(|p| c.id(p)).any(|i| ids.contains(&i))
}

/// Sites reachable from `from` through `e`, by breadth-first search.
pub fn reachable(from: &Point, e: &EdgeSet) -> SiteSet {
    let mut adj = SiteMap::<Vec<Point>>::default();
    for edge in e.iter() {
        let (x, y) = edge.endpoints();
        adj.entry(x).or_default().push(y);
        adj.entry(y).or_default().push(x);
    }
    let mut seen = SiteSet::default();
    seen.insert(*from);
    let mut queue = std::collections::VecDeque::from([*from]);
    while let Some(x) = queue.pop_front() {
        for y in adj.get(&x).into_iter().flatten() {
            if seen.insert(*y) {
                queue.push_back(*y);
            }
        }
    }
    seen
}

/// The origin is joined through the sample's edges to a site with |x|_∞ ≥ N.
pub fn crossing(sample: &FriSample, n: u32) -> Result<bool> {
    crossing_edges(&sample.edges(), sample.config.d, &sample.config.window.bounds(), n)
}

pub fn crossing_edges(e: &EdgeSet, d: usize, window: &Bounds, n: u32) -> Result<bool> {
    if n == 0 {
        return Err(invalid("crossing radius must be at least 1"));
    }
    let target = Bounds::centred(d, n as i32);
    if !window.contains_bounds(&target) {
        return Err(Error::WindowTooSmall { window: format!("{window:?}"), radius: n as i64 });
    }
    Ok(reachable(&Point::origin(d), e).iter().any(|p| p.norm_inf() >= n as i64))
}

/// Layers of trajectories (as indices into the sample) around a base set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSeq {
    pub base: Vec<Point>,
    pub layers: Vec<Vec<usize>>,
    /// An empty layer was reached (so all later layers are empty too).
    pub exhausted: bool,
}

impl LayerSeq {
    pub fn layer_vertices(&self, sample: &FriSample, k: usize) -> SiteSet {
        self.layers[k].iter().flat_map(|&i| sample.trajectories[i].vertices()).collect()
    }

    /// K together with every vertex of every layer.
    pub fn span(&self, sample: &FriSample) -> SiteSet {
        let mut s: SiteSet = self.base.iter().copied().collect();
        for l in &self.layers {
            for &i in l {
                s.extend(sample.trajectories[i].vertices());
            }
        }
        s
    }
}

/// Π_1 = trajectories meeting K; Π_k = unused trajectories meeting V(Π_{k-1}).
/// A trajectory not in an earlier layer cannot meet K or an earlier layer's
/// vertices, so "unused" is the same as the exclusion in the recursion.
pub fn layered_decomposition(k: &[Point], sample: &FriSample, k_max: usize) -> LayerSeq {
    let mut through = SiteMap::<Vec<u32>>::default();
    for (i, w) in sample.trajectories.iter().enumerate() {
        let mut seen = SiteSet::default();
        for p in w.vertices() {
            if seen.insert(p) {
                through.entry(p).or_default().push(i as u32);
            }
        }
    }
    let mut used = vec![false; sample.len()];
    let mut covered: SiteSet = k.iter().copied().collect();
    let mut fresh: Vec<Point> = {
        let mut v: Vec<Point> = covered.iter().copied().collect();
        v.sort_unstable();
        v
    };
    let mut layers = Vec::new();
    let mut exhausted = false;
    while layers.len() < k_max {
        let mut layer = Vec::new();
        for p in &fresh {
            for &i in through.get(p).into_iter().flatten() {
                if !used[i as usize] {
                    used[i as usize] = true;
                    layer.push(i as usize);
                }
            }
        }
        if layer.is_empty() {
            exhausted = true;
            break;
        }
        layer.sort_unstable();
        fresh.clear();
        for &i in &layer {
            for p in sample.trajectories[i].vertices() {
                if covered.insert(p) {
                    fresh.push(p);
                }
            }
        }
        layers.push(layer);
    }
    let seq = LayerSeq { base: k.to_vec(), layers, exhausted };
    #[cfg(debug_assertions)]
    check_layers(&seq);
    seq
}

#[cfg(debug_assertions)]
fn check_layers(seq: &LayerSeq) {
    let mut seen = std::collections::HashSet::new();
    for l in &seq.layers {
        assert!(!l.is_empty(), "empty layer stored");
        for &i in l {
            assert!(seen.insert(i), "trajectory {i} in two layers");
        }
    }
}

/// Intensity v/F_d(T) and mean T-capacity of successive layers around K in the
/// infinite-volume cloud, sampled exactly with a forced first layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSeries {
    pub d: usize,
    pub t: f64,
    pub v: f64,
    pub u: f64,
    pub base: Vec<Point>,
    pub reps: usize,
    /// P(Π_1 ≠ ∅); replicate values are weighted by it.
    pub first_layer_prob: f64,
    /// mean and stderr of cap^T(V(Π_k)), k = 1..=k_max
    pub means: Vec<Estimate>,
    /// Σ_{k≥2} m_k / Σ_{k<k_max} m_k, exact for a geometric sequence.
    pub ratio: f64,
    /// 95% percentile bootstrap over replicates.
    pub ratio_ci: (f64, f64),
    pub mc_fallbacks: usize,
    pub max_set_size: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerCsvRow {
    pub run_id: String,
    pub k: usize,
    pub mean_cap_t: f64,
    pub stderr: f64,
    pub reps: usize,
    pub u: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub d: usize,
}

impl LayerSeries {
    pub fn csv_rows(&self, run_id: &str) -> Vec<LayerCsvRow> {
        self.means
            .iter()
            .enumerate()
            .map(|(i, m)| LayerCsvRow { run_id: run_id.into(), k: i + 1, mean_cap_t: m.value, stderr: m.stderr, reps: self.reps, u: self.u, t: self.t, d: self.d })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, run_id: &str, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(out);
        for r in self.csv_rows(run_id) {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn layer_ratio(rows: &[Vec<f64>], pick: impl Iterator<Item = usize>) -> f64 {
    let k_max = rows.first().map_or(0, |r| r.len());
    let mut sums = vec![0.0; k_max];
    for i in pick {
        for (s, v) in sums.iter_mut().zip(&rows[i]) {
            *s += v;
        }
    }
    let den: f64 = sums[..k_max - 1].iter().sum();
    if den > 0.0 {
        sums[1..].iter().sum::<f64>() / den
    } else {
        f64::NAN
    }
}

const BOOTSTRAP_RESAMPLES: usize = 2000;

/// One replicate: weighted cap^T of each layer, and the largest set solved.
fn layer_replicate(k: &[Point], u: f64, k_max: usize, budget: &RangeBudget, stream: &RngStream) -> Result<(f64, Vec<f64>, usize, usize)> {
    let table = budget.table;
    let t = match table.kill {
        KillMean::Finite(t) => t,
        KillMean::Infinite => unreachable!("checked by caller"),
    };
    let (weight, first) = sample_forced_hits(k, u, table, &stream.tagged("first"))?;
    let mut rev = Revealer::new(table.d, t, vec![u], stream.tagged("reveal"))?;
    for p in k {
        rev.mark(*p);
    }
    let mut layer: Vec<Revealed> = first;
    let mut out = Vec::with_capacity(k_max);
    let mut mc = 0;
    let mut largest = 0;
    for j in 0..k_max {
        if layer.is_empty() {
            out.push(0.0);
            continue;
        }
        let mut verts = Vec::new();
        let mut seen = SiteSet::default();
        for w in &layer {
            for p in &w.vertices {
                if seen.insert(*p) {
                    verts.push(*p);
                }
            }
        }
        largest = largest.max(verts.len());
        let c = budget.capacity(&verts, &stream.child(j as u64))?;
        mc += (c.method == crate::capacity::escape::CapMethod::McEscape) as usize;
        out.push(weight * c.value);
        if j + 1 < k_max {
            let mut next = Vec::new();
            for p in verts {
                next.extend(rev.reveal(p));
            }
            layer = next;
        }
    }
    Ok((weight, out, mc, largest))
}

pub fn layer_capacity_series(v: f64, k: &[Point], k_max: usize, reps: usize, budget: &RangeBudget, stream: &RngStream) -> Result<LayerSeries> {
    let table: &GreenTable = budget.table;
    let t = match table.kill {
        KillMean::Finite(t) => t,
        KillMean::Infinite => return Err(invalid("layer capacities need the killed Green table")),
    };
    if k.is_empty() {
        return Err(Error::EmptySet);
    }
    if !(v > 0.0) || k_max < 2 || reps < 2 {
        return Err(invalid("layer series needs v > 0, k_max ≥ 2 and reps ≥ 2"));
    }
    let d = table.d;
    if let Some(p) = k.iter().find(|p| p.dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: p.dim() });
    }
    let u = v / f_d(d, t)?;
    let results: Vec<Result<(f64, Vec<f64>, usize, usize)>> =
        (0..reps).into_par_iter().map(|i| layer_replicate(k, u, k_max, budget, &stream.child(i as u64))).collect();
    let mut rows = Vec::with_capacity(reps);
    let mut weight = 0.0;
    let mut mc_fallbacks = 0;
    let mut max_set_size = 0;
    for r in results {
        let (w, row, mc, big) = r?;
        weight = w;
        rows.push(row);
        mc_fallbacks += mc;
        max_set_size = max_set_size.max(big);
    }
    let means: Vec<Estimate> = (0..k_max).map(|j| rows.iter().map(|r| r[j]).collect::<MeanAcc>().estimate()).collect();
    let ratio = layer_ratio(&rows, 0..reps);
    let mut rng = stream.tagged("bootstrap").rng();
    let mut boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let pick: Vec<usize> = (0..reps).map(|_| rng.random_range(0..reps)).collect();
            layer_ratio(&rows, pick.into_iter())
        })
        .filter(|r| r.is_finite())
        .collect();
    boot.sort_by(f64::total_cmp);
    let ratio_ci = if boot.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let at = |q: f64| boot[((q * boot.len() as f64) as usize).min(boot.len() - 1)];
        (at(0.025), at(0.975))
    };
    Ok(LayerSeries { d, t, v, u, base: k.to_vec(), reps, first_layer_prob: weight, means, ratio, ratio_ci, mc_fallbacks, max_set_size })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::green::GreenBuild;
    use crate::fri::{sample_window, FriConfig};
    use crate::lattice::{Edge, LatticeBox};
    use crate::walk::KilledWalk;
    use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};

    fn path_edges(pts: &[[i32; 3]]) -> EdgeSet {
        pts.windows(2).map(|w| Edge::new(Point::new(&w[0]), Point::new(&w[1])).unwrap()).collect()
    }

    fn walk(start: [i32; 3], steps: &[u8]) -> KilledWalk {
        KilledWalk { start: Point::new(&start), steps: steps.to_vec(), mean_length: 4.0 }
    }

    fn fixture(walks: Vec<KilledWalk>) -> FriSample {
        let cfg = FriConfig { padding: Some(20), ..FriConfig::new(3, 0.1, 4.0, LatticeBox::plain(Point::new(&[-4, -4, -4]), 8), 1) };
        let truncation = crate::fri::truncation_report(&cfg).unwrap();
        let labels = vec![0.05; walks.len()];
        FriSample { config: cfg, truncation, trajectories: walks, labels }
    }

    fn bfs_partition(e: &EdgeSet) -> Vec<Vec<Point>> {
        let mut left = e.vertices();
        let mut parts = Vec::new();
        while let Some(&p) = left.iter().min() {
            let mut c: Vec<Point> = reachable(&p, e).into_iter().collect();
            c.sort_unstable();
            for q in &c {
                left.remove(q);
            }
            parts.push(c);
        }
        parts
    }

    #[test]
    fn cluster_examples() {
        assert!(clusters(&EdgeSet::new()).is_empty());
        let line: Vec<[i32; 3]> = (0..6).map(|i| [i, 0, 0]).collect();
        let c = clusters(&path_edges(&line));
        assert_eq!(c.sizes(), &[6]);
        let mut e = path_edges(&[[0, 0, 0], [1, 0, 0], [1, 1, 0]]);
        e.extend(&path_edges(&[[5, 5, 5], [5, 5, 6]]));
        let c = clusters(&e);
        assert_eq!(c.len(), 2);
        e.extend(&path_edges(&[[1, 1, 0], [1, 1, 1], [1, 1, 2]]));
        assert_eq!(clusters(&e).len(), 2);
        assert_eq!(clusters(&e).representative(0), Point::origin(3));
    }

    #[test]
    fn connected_examples() {
        let o = Point::origin(3);
        let x = Point::new(&[3, 0, 0]);
        assert!(connected(&[o], &[o, x], &EdgeSet::new()));
        assert!(!connected(&[o], &[x], &EdgeSet::new()));
        let e = path_edges(&[[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]]);
        assert!(connected(&[o], &[x], &e));
    }

    #[test]
    fn crossing_examples() {
        assert!(!crossing(&fixture(vec![]), 2).unwrap());
        assert!(crossing(&fixture(vec![walk([0, 0, 0], &[0])]), 1).unwrap());
        assert!(crossing(&fixture(vec![walk([0, 0, -1], &[4])]), 1).unwrap());
        assert!(!crossing(&fixture(vec![walk([0, 0, 0], &[0])]), 2).unwrap());
        assert!(matches!(crossing(&fixture(vec![]), 5), Err(Error::WindowTooSmall { .. })));
    }

    #[test]
    fn chain_fixture_has_unit_layers() {
        // K = {origin}; each walk meets only its predecessor
        let walks = vec![walk([0, 0, 0], &[0, 0]), walk([2, 0, 0], &[2, 2]), walk([2, 2, 0], &[4, 4]), walk([9, 9, 9], &[0])];
        let s = fixture(walks);
        let l = layered_decomposition(&[Point::origin(3)], &s, 10);
        assert_eq!(l.layers, vec![vec![0], vec![1], vec![2]]);
        assert!(l.exhausted);
        let none = layered_decomposition(&[Point::new(&[-3, -3, -3])], &s, 10);
        assert!(none.layers.is_empty() && none.exhausted);
        let cut = layered_decomposition(&[Point::origin(3)], &s, 2);
        assert_eq!(cut.layers.len(), 2);
        assert!(!cut.exhausted);
    }

    #[test]
    fn layers_span_clusters_on_samples() {
        for seed in 0..20u64 {
            let cfg = FriConfig::new(3, 0.3, 6.0, LatticeBox::plain(Point::new(&[-3, -3, -3]), 6), seed);
            let s = sample_window(&cfg, &RngStream::new(seed, 1)).unwrap();
            let k = vec![Point::origin(3), Point::new(&[1, 1, 0])];
            let l = layered_decomposition(&k, &s, usize::MAX);
            let mut gamma = clusters(&s.edges()).touching(&k);
            gamma.extend(k.iter().copied());
            assert_eq!(l.span(&s), gamma, "seed {seed}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn union_find_matches_bfs(seed in 0u64..1000) {
            let mut rng = RngStream::new(seed, 77).rng();
            let mut e = EdgeSet::new();
            for _ in 0..rng.random_range(0..300) {
                let x = Point::new(&[rng.random_range(-4..4), rng.random_range(-4..4), rng.random_range(-4..4)]);
                e.insert(Edge::from_step(x, rng.random_range(0..6)));
            }
            let c = clusters(&e);
            let want = bfs_partition(&e);
            prop_assert_eq!(c.len(), want.len());
            for (i, part) in want.iter().enumerate() {
                prop_assert_eq!(&c.members(i), part);
            }
        }
    }

    #[test]
    fn layer_series_small_v_is_nearly_flat_zero() {
        let tab = GreenTable::build(3, KillMean::Finite(8.0), GreenBuild { table_radius: 10, tolerance: 1e-4, max_points: 1_000_000 }).unwrap();
        let s = layer_capacity_series(1e-4, &[Point::origin(3)], 4, 50, &RangeBudget::exact(&tab), &RngStream::new(2, 0)).unwrap();
        assert!(s.means[0].value > 0.0);
        assert!(s.means[1..].iter().all(|m| m.value < 1e-3 * s.means[0].value.max(1e-300) + 1e-12));
        let again = layer_capacity_series(1e-4, &[Point::origin(3)], 4, 50, &RangeBudget::exact(&tab), &RngStream::new(2, 0)).unwrap();
        assert_eq!(s, again);
        let mut buf = Vec::new();
        s.write_csv("r1", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("run_id,k,mean_cap_t,stderr,reps,u,T,d\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
