//! Poisson clouds of killed walks: window samples, samples of the trajectories that
//! hit a finite set, and the run-file format.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path as FsPath;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::escape::{escape_exact, EscapeVector};
use crate::capacity::green::{GreenTable, KillMean};
use crate::error::{invalid, Error, Result};
use crate::lattice::{Bounds, Edge, EdgeSet, LatticeBox, Point};
use crate::rng::RngStream;
use crate::walk::{killed_max_tail_bound, n_t, sample_killed_unchecked, KilledWalk};

/// Default bound on the expected number of omitted trajectories touching the window.
pub const DEFAULT_REPORT_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FriConfig {
    pub d: usize,
    pub u: f64,
    pub t: f64,
    pub window: LatticeBox,
    /// `None` picks the smallest padding meeting `report_tolerance`.
    pub padding: Option<u32>,
    pub report_tolerance: f64,
    pub seed: u64,
}

impl FriConfig {
    pub fn new(d: usize, u: f64, t: f64, window: LatticeBox, seed: u64) -> FriConfig {
        FriConfig { d, u, t, window, padding: None, report_tolerance: DEFAULT_REPORT_TOLERANCE, seed }
    }

    pub fn n_t(&self) -> u32 {
        n_t(self.t)
    }

    /// Mean number of trajectories started at each site, 2du/(T+1).
    pub fn per_site_mean(&self) -> f64 {
        2.0 * self.d as f64 * self.u / (self.t + 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.d > crate::lattice::MAX_DIM {
            return Err(Error::UnsupportedDimension(self.d));
        }
        self.window.corner.check_dim(self.d)?;
        if !(self.u >= 0.0 && self.u.is_finite()) {
            return Err(invalid(format!("intensity must be nonnegative, got {}", self.u)));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(invalid(format!("mean length T must be positive, got {}", self.t)));
        }
        if !(self.report_tolerance > 0.0) {
            return Err(invalid("report tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub padding: u32,
    /// padding / n_T
    pub t_star: f64,
    /// Upper bound on the expected number (hence the probability) of trajectories
    /// started outside the padded window that touch the window.
    pub omitted_hit_bound: f64,
    pub tolerance: f64,
}

/// Bound on the expected number of trajectories started outside `window.padded(pad)`
/// that reach `window`, from the Chernoff tail of the killed walk's maximum.
pub fn omitted_hit_bound(d: usize, t: f64, per_site: f64, window: &Bounds, pad: u32) -> f64 {
    if per_site == 0.0 {
        return 0.0;
    }
    let sides: Vec<f64> = (0..d).map(|i| window.side(i) as f64).collect();
    let shell = |r: f64| sides.iter().map(|s| s + 2.0 * r).product::<f64>() - sides.iter().map(|s| s + 2.0 * r - 2.0).product::<f64>();
    let mut total = 0.0;
    let mut r = pad as f64 + 1.0;
    loop {
        let term = per_site * shell(r) * killed_max_tail_bound(d, t, r);
        total += term;
        if term < 1e-6 * total.max(1e-300) || r > 1e7 {
            break;
        }
        r += 1.0;
    }
    total
}

/// Smallest padding whose omitted-hit bound is at most `tol`.
pub fn default_padding(d: usize, t: f64, per_site: f64, window: &Bounds, tol: f64) -> (u32, f64) {
    let ok = |p: u32| omitted_hit_bound(d, t, per_site, window, p) <= tol;
    if ok(0) {
        return (0, omitted_hit_bound(d, t, per_site, window, 0));
    }
    let mut hi = 1u32;
    while !ok(hi) {
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (hi, omitted_hit_bound(d, t, per_site, window, hi))
}

pub fn truncation_report(cfg: &FriConfig) -> Result<TruncationReport> {
    cfg.validate()?;
    let w = cfg.window.bounds();
    let lam = cfg.per_site_mean();
    let (padding, bound) = match cfg.padding {
        Some(p) => {
            let b = omitted_hit_bound(cfg.d, cfg.t, lam, &w, p);
            if b > cfg.report_tolerance {
                let (floor, _) = default_padding(cfg.d, cfg.t, lam, &w, cfg.report_tolerance);
                return Err(Error::PaddingTooSmall { padding: p as i64, floor: floor as i64 });
            }
            (p, b)
        }
        None => default_padding(cfg.d, cfg.t, lam, &w, cfg.report_tolerance),
    };
    Ok(TruncationReport { padding, t_star: padding as f64 / cfg.n_t() as f64, omitted_hit_bound: bound, tolerance: cfg.report_tolerance })
}

/// A realized cloud of trajectories. `labels[i]` is the intensity level at which
/// trajectory `i` appears; restricting to labels ≤ u gives the sample at level u.
#[derive(Clone, Debug, PartialEq)]
pub struct FriSample {
    pub config: FriConfig,
    pub truncation: TruncationReport,
    pub trajectories: Vec<KilledWalk>,
    pub labels: Vec<f64>,
}

impl FriSample {
    pub fn padded_window(&self) -> Bounds {
        self.config.window.bounds().padded(self.truncation.padding as i32)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Trajectories with label ≤ u.
    pub fn at_level(&self, u: f64) -> FriSample {
        let mut out = FriSample { config: FriConfig { u: u.min(self.config.u), ..self.config }, truncation: self.truncation, trajectories: Vec::new(), labels: Vec::new() };
        for (w, &l) in self.trajectories.iter().zip(&self.labels) {
            if l <= u {
                out.trajectories.push(w.clone());
                out.labels.push(l);
            }
        }
        out
    }

    /// Union with an independent sample on the same window (intensities add).
    pub fn superpose(&mut self, other: FriSample) -> Result<()> {
        if other.config.d != self.config.d || other.config.t != self.config.t || other.padded_window() != self.padded_window() {
            return Err(invalid("superposed samples must share d, T and padded window"));
        }
        self.config.u += other.config.u;
        self.truncation.omitted_hit_bound += other.truncation.omitted_hit_bound;
        self.trajectories.extend(other.trajectories);
        self.labels.extend(other.labels);
        Ok(())
    }

    pub fn edges(&self) -> EdgeSet {
        edges_of(&self.trajectories)
    }

    /// Start counts per site of the padded window, in lexicographic site order.
    pub fn start_counts(&self) -> Vec<u64> {
        let b = self.padded_window();
        let mut idx = crate::lattice::SiteMap::<usize>::default();
        for (i, p) in b.sites().enumerate() {
            idx.insert(p, i);
        }
        let mut c = vec![0u64; idx.len()];
        for w in &self.trajectories {
            c[idx[&w.start]] += 1;
        }
        c
    }
}

/// Union of the edge sets of the trajectories; length-0 paths contribute nothing.
pub fn edges_of(walks: &[KilledWalk]) -> EdgeSet {
    let mut e = EdgeSet::new();
    for w in walks {
        let mut cur = w.start;
        for &s in &w.steps {
            e.insert(Edge::from_step(cur, s));
            cur = cur.step(s);
        }
    }
    e
}

fn uniform_in_slab<R: Rng + ?Sized>(b: &Bounds, first: i32, rng: &mut R) -> Point {
    let mut p = b.lo;
    p.set(0, first);
    for i in 1..b.dim() {
        p.set(i, rng.random_range(b.lo.get(i)..b.hi.get(i)));
    }
    p
}

/// Trajectories with labels uniform in (u_from, u_to], started in `b`. Each slab
/// x^(1) = const draws its Poisson total and then uniform sites, which gives
/// independent Poisson counts per site.
fn sample_region(d: usize, t: f64, u_from: f64, u_to: f64, b: &Bounds, stream: &RngStream) -> Result<(Vec<KilledWalk>, Vec<f64>)> {
    let lam = 2.0 * d as f64 * (u_to - u_from) / (t + 1.0);
    if lam <= 0.0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let slab_volume = b.volume() / b.side(0) as u64;
    let pois = Poisson::new(lam * slab_volume as f64).map_err(|e| invalid(e.to_string()))?;
    let slabs: Vec<(Vec<KilledWalk>, Vec<f64>)> = (b.lo.get(0)..b.hi.get(0))
        .into_par_iter()
        .map(|x0| {
            let mut rng = stream.child((x0 as i64 - b.lo.get(0) as i64) as u64).rng();
            let k = pois.sample(&mut rng) as usize;
            let mut items: Vec<(Point, f64, KilledWalk)> = (0..k)
                .map(|_| {
                    let s = uniform_in_slab(b, x0, &mut rng);
                    let label = u_from + (u_to - u_from) * (1.0 - rng.random::<f64>());
                    let w = sample_killed_unchecked(s, t, &mut rng);
                    (s, label, w)
                })
                .collect();
            items.sort_by(|a, b| a.0.cmp(&b.0));
            items.into_iter().map(|(_, l, w)| (w, l)).unzip()
        })
        .collect();
    let mut walks = Vec::new();
    let mut labels = Vec::new();
    for (w, l) in slabs {
        walks.extend(w);
        labels.extend(l);
    }
    Ok((walks, labels))
}

/// FRI at intensity `cfg.u` started in the padded window.
pub fn sample_window(cfg: &FriConfig, stream: &RngStream) -> Result<FriSample> {
    sample_window_increment(cfg, 0.0, stream)
}

/// Trajectories with labels in (u_from, cfg.u]: an independent increment that
/// superposes onto a sample at level u_from.
pub fn sample_window_increment(cfg: &FriConfig, u_from: f64, stream: &RngStream) -> Result<FriSample> {
    let truncation = truncation_report(cfg)?;
    if !(u_from >= 0.0 && u_from <= cfg.u) {
        return Err(invalid("increment must satisfy 0 ≤ u_from ≤ u"));
    }
    let b = cfg.window.bounds().padded(truncation.padding as i32);
    let (trajectories, labels) = sample_region(cfg.d, cfg.t, u_from, cfg.u, &b, stream)?;
    Ok(FriSample { config: FriConfig { u: cfg.u - u_from, ..*cfg }, truncation, trajectories, labels })
}

/// All trajectories started in the box (no padding), as used by the slab explorer.
pub fn sample_box_starts(d: usize, u: f64, t: f64, b: &LatticeBox, stream: &RngStream) -> Result<Vec<KilledWalk>> {
    Ok(sample_box_starts_labelled(d, u, t, b, stream)?.0)
}

/// The same with intensity labels, uniform in (0, u].
pub fn sample_box_starts_labelled(d: usize, u: f64, t: f64, b: &LatticeBox, stream: &RngStream) -> Result<(Vec<KilledWalk>, Vec<f64>)> {
    b.corner.check_dim(d)?;
    if !(u >= 0.0) {
        return Err(invalid(format!("intensity must be nonnegative, got {u}")));
    }
    sample_region(d, t, 0.0, u, &b.bounds(), stream)
}

/// Sample of the trajectories that hit `K`, each from its first visit to `K` on.
#[derive(Clone, Debug, PartialEq)]
pub struct HittingSample {
    pub target: Vec<Point>,
    pub u: f64,
    pub t: f64,
    pub escape: EscapeVector,
    /// Per target site (in `escape.sites` order).
    pub counts: Vec<u64>,
    pub trajectories: Vec<KilledWalk>,
}

impl HittingSample {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Per-site Poisson means 2d·u·Es_K^T(x).
    pub fn means(&self) -> Vec<f64> {
        let d = self.target.first().map_or(0, |p| p.dim()) as f64;
        self.escape.values.iter().map(|e| 2.0 * d * self.u * e).collect()
    }

    pub fn edges(&self) -> EdgeSet {
        edges_of(&self.trajectories)
    }
}

/// Per-site counts Pois(2d·u·Es_K^T(x)) and an independent killed walk per count.
pub fn sample_hitting(k: &[Point], u: f64, table: &GreenTable, stream: &RngStream) -> Result<HittingSample> {
    let t = match table.kill {
        KillMean::Finite(t) => t,
        KillMean::Infinite => return Err(invalid("hitting samples need a killed Green table")),
    };
    if !(u >= 0.0 && u.is_finite()) {
        return Err(invalid(format!("intensity must be nonnegative, got {u}")));
    }
    let escape = escape_exact(k, table)?;
    let d = table.d as f64;
    let mut counts = Vec::with_capacity(escape.sites.len());
    let mut trajectories = Vec::new();
    for (i, (x, e)) in escape.sites.iter().zip(&escape.values).enumerate() {
        let mean = 2.0 * d * u * e;
        let mut rng = stream.child(i as u64).rng();
        let c = if mean > 0.0 { Poisson::new(mean).map_err(|e| invalid(e.to_string()))?.sample(&mut rng) as u64 } else { 0 };
        counts.push(c);
        for _ in 0..c {
            trajectories.push(sample_killed_unchecked(*x, t, &mut rng));
        }
    }
    Ok(HittingSample { target: escape.sites.clone(), u, t, escape, counts, trajectories })
}

const RUN_MAGIC: &str = "FRI-RUN 1";

#[derive(Serialize, Deserialize)]
struct RunHeader {
    config: FriConfig,
    truncation: TruncationReport,
    trajectories: usize,
}

/// Header line, JSON line, then per trajectory: start (i32 LE × d), label (f64 LE),
/// lifetime (u64 LE) and the steps packed two per byte.
pub fn write_run(sample: &FriSample, path: &FsPath) -> Result<()> {
    write_run_to(sample, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn write_run_to<W: Write>(sample: &FriSample, mut f: W) -> Result<()> {
    writeln!(f, "{RUN_MAGIC}")?;
    let h = RunHeader { config: sample.config, truncation: sample.truncation, trajectories: sample.trajectories.len() };
    writeln!(f, "{}", serde_json::to_string(&h)?)?;
    for (w, l) in sample.trajectories.iter().zip(&sample.labels) {
        for c in w.start.coords() {
            f.write_all(&c.to_le_bytes())?;
        }
        f.write_all(&l.to_le_bytes())?;
        f.write_all(&(w.steps.len() as u64).to_le_bytes())?;
        for pair in w.steps.chunks(2) {
            let b = pair[0] | pair.get(1).map_or(0, |s| s << 4);
            f.write_all(&[b])?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn read_run(path: &FsPath) -> Result<FriSample> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != RUN_MAGIC {
        return Err(Error::Format(format!("not a run file: {:?}", line.trim_end())));
    }
    line.clear();
    r.read_line(&mut line)?;
    let h: RunHeader = serde_json::from_str(line.trim_end())?;
    let d = h.config.d;
    let mut trajectories = Vec::with_capacity(h.trajectories);
    let mut labels = Vec::with_capacity(h.trajectories);
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    for _ in 0..h.trajectories {
        let mut c = Vec::with_capacity(d);
        for _ in 0..d {
            r.read_exact(&mut b4)?;
            c.push(i32::from_le_bytes(b4));
        }
        r.read_exact(&mut b8)?;
        labels.push(f64::from_le_bytes(b8));
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut packed = vec![0u8; n.div_ceil(2)];
        r.read_exact(&mut packed)?;
        let mut steps = Vec::with_capacity(n);
        for i in 0..n {
            let s = if i % 2 == 0 { packed[i / 2] & 0x0f } else { packed[i / 2] >> 4 };
            if s as usize >= 2 * d {
                return Err(Error::Format(format!("step {s} out of range in d={d}")));
            }
            steps.push(s);
        }
        trajectories.push(KilledWalk { start: Point::new(&c), steps, mean_length: h.config.t });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes in run file", rest.len())));
    }
    Ok(FriSample { config: h.config, truncation: h.truncation, trajectories, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::green::GreenBuild;
    use crate::stats::{chi_square, poisson_cells, spearman, MeanAcc};

    fn cfg(d: usize, u: f64, t: f64, side: u32) -> FriConfig {
        FriConfig::new(d, u, t, LatticeBox::plain(Point::origin(d), side), 1)
    }

    #[test]
    fn padding_bound_decreases_and_meets_tolerance() {
        let w = LatticeBox::plain(Point::origin(3), 8).bounds();
        let a = omitted_hit_bound(3, 16.0, 0.1, &w, 4);
        let b = omitted_hit_bound(3, 16.0, 0.1, &w, 16);
        assert!(b < a);
        let (p, bound) = default_padding(3, 16.0, 0.1, &w, 1e-3);
        assert!(bound <= 1e-3 && p > 0);
        assert!(omitted_hit_bound(3, 16.0, 0.1, &w, p - 1) > 1e-3);
    }

    #[test]
    fn explicit_padding_below_floor_is_rejected() {
        let mut c = cfg(3, 0.5, 16.0, 4);
        c.padding = Some(1);
        assert!(matches!(truncation_report(&c), Err(Error::PaddingTooSmall { .. })));
    }

    #[test]
    fn expected_starts_in_window() {
        let c = cfg(3, 0.2, 4.0, 3);
        let lam = c.per_site_mean();
        let k = LatticeBox::plain(Point::origin(3), 3);
        let acc: MeanAcc = (0..200)
            .map(|i| {
                let s = sample_window(&c, &RngStream::new(2, i)).unwrap();
                s.trajectories.iter().filter(|w| k.contains(&w.start)).count() as f64
            })
            .collect();
        let expect = lam * 27.0;
        let sigma = (expect / 200.0).sqrt();
        assert!((acc.mean() - expect).abs() < 3.0 * sigma, "{} vs {expect}", acc.mean());
    }

    #[test]
    fn tiny_intensity_is_empty() {
        let c = cfg(3, 1e-9, 4.0, 3);
        let empty = (0..200).filter(|&i| sample_window(&c, &RngStream::new(3, i)).unwrap().is_empty()).count();
        assert!(empty >= 199);
    }

    #[test]
    fn seeds_and_streams() {
        let c = cfg(3, 2.0, 4.0, 4);
        let a = sample_window(&c, &RngStream::new(5, 0)).unwrap();
        assert_eq!(a, sample_window(&c, &RngStream::new(5, 0)).unwrap());
        let b = sample_window(&c, &RngStream::new(5, 1)).unwrap();
        assert!(a.len() >= 10);
        assert_ne!(a.len(), b.len());
        let pad = a.padded_window();
        assert!(a.trajectories.iter().all(|w| pad.contains(&w.start)));
    }

    #[test]
    fn per_site_counts_are_poisson() {
        let mut c = cfg(3, 3.0, 1.0, 6);
        c.padding = Some(0);
        c.report_tolerance = f64::INFINITY;
        let lam = c.per_site_mean();
        let mut counts = Vec::new();
        for i in 0..40 {
            counts.extend(sample_window(&c, &RngStream::new(6, i)).unwrap().start_counts());
        }
        let k_max = 25;
        let mut hist = vec![0u64; k_max + 1];
        for &x in &counts {
            hist[(x as usize).min(k_max)] += 1;
        }
        let t = chi_square(&hist, &poisson_cells(lam, k_max)).unwrap();
        assert!(t.p_value > 1e-3, "{t:?}");
        let acc: MeanAcc = counts.iter().map(|&x| x as f64).collect();
        assert!((acc.variance() / acc.mean() - 1.0).abs() < 0.1);
    }

    #[test]
    fn levels_and_superposition() {
        let c = cfg(3, 1.0, 4.0, 4);
        let s = sample_window(&c, &RngStream::new(7, 0)).unwrap();
        let half = s.at_level(0.5);
        assert!(half.len() <= s.len());
        let all = s.edges();
        assert!(half.edges().iter().all(|e| all.contains(e)));
        let mut lo = sample_window(&FriConfig { u: 0.5, padding: Some(s.truncation.padding), ..c }, &RngStream::new(7, 1)).unwrap();
        let inc = sample_window_increment(&FriConfig { padding: Some(s.truncation.padding), ..c }, 0.5, &RngStream::new(7, 2)).unwrap();
        assert!(inc.labels.iter().all(|&l| l > 0.5 && l <= 1.0));
        lo.superpose(inc).unwrap();
        assert!((lo.config.u - 1.0).abs() < 1e-12);
    }

    #[test]
    fn edges_of_examples() {
        assert!(edges_of(&[]).is_empty());
        let o = Point::origin(3);
        let back = KilledWalk { start: o, steps: vec![0, 1, 2], mean_length: 1.0 };
        assert_eq!(edges_of(&[back.clone()]).len(), 2);
        let far = KilledWalk { start: Point::new(&[10, 0, 0]), steps: vec![0, 0], mean_length: 1.0 };
        assert_eq!(edges_of(&[back.clone(), far.clone()]).len(), 4);
        let e = edges_of(&[back, far]);
        let mut twice = e.clone();
        twice.extend(&e);
        assert_eq!(twice, e);
    }

    #[test]
    fn run_file_round_trip() {
        let c = cfg(4, 0.05, 4.0, 3);
        let s = sample_window(&c, &RngStream::new(8, 0)).unwrap();
        assert!(s.len() > 0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.run");
        write_run(&s, &p).unwrap();
        assert_eq!(read_run(&p).unwrap(), s);
        std::fs::write(&p, b"nope\n").unwrap();
        assert!(read_run(&p).is_err());
    }

    #[test]
    fn hitting_counts_follow_escape() {
        let table = GreenTable::build(3, KillMean::Finite(10.0), GreenBuild { table_radius: 12, tolerance: 1e-4, max_points: 1_000_000 }).unwrap();
        let o = Point::origin(3);
        let z = sample_hitting(&[o], 0.0, &table, &RngStream::new(1, 1)).unwrap();
        assert_eq!(z.total(), 0);
        let u = 2.0;
        let mean = 6.0 * u / table.at_origin();
        let acc: MeanAcc = (0..500).map(|i| sample_hitting(&[o], u, &table, &RngStream::new(9, i)).unwrap().total() as f64).collect();
        assert!((acc.mean() - mean).abs() < 3.0 * (mean / 500.0).sqrt());

        let cube = crate::lattice::box_sites(&LatticeBox::plain(Point::new(&[-1, -1, -1]), 3), 3).unwrap();
        let mut sums = vec![0.0; 27];
        let mut es = Vec::new();
        for i in 0..500 {
            let h = sample_hitting(&cube, 0.5, &table, &RngStream::new(10, i)).unwrap();
            for (s, c) in sums.iter_mut().zip(&h.counts) {
                *s += *c as f64;
            }
            es = h.escape.values.clone();
            assert!(h.trajectories.iter().all(|w| cube.contains(&w.start)));
        }
        assert!(spearman(&es, &sums) > 0.5);
    }
}
