//! Geometry of Z^d: points, boxes, boundaries, distances and orders.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 8;

/// A lattice site. The dimension travels with the value; unused slots stay zero.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Point {
    dim: u8,
    c: [i32; MAX_DIM],
}

pub type SiteSet = FxHashSet<Point>;
pub type SiteMap<V> = FxHashMap<Point, V>;

pub fn site_set<I: IntoIterator<Item = Point>>(it: I) -> SiteSet {
    it.into_iter().collect()
}

impl Hash for Point {
    // Mixed-radix packing: 64/d bits per coordinate, offset to be nonnegative.
    // Sites outside the packable range hash through all coordinates instead.
    fn hash<H: Hasher>(&self, state: &mut H) {
        let d = self.dim as usize;
        let bits = 64 / d.max(1);
        let half = 1i64 << (bits - 1);
        let mut key = 0u64;
        for i in 0..d {
            let v = self.c[i] as i64 + half;
            if v < 0 || v >= 2 * half {
                state.write_u8(0xff);
                for x in &self.c[..d] {
                    state.write_i32(*x);
                }
                return;
            }
            key |= (v as u64) << (bits * i);
        }
        state.write_u64(key);
    }
}

impl Point {
    /// Platform-independent 64-bit key, used to address per-site random streams.
    pub fn stream_key(&self) -> u64 {
        self.coords().iter().fold(0x243f_6a88_85a3_08d3_u64, |h, &c| (h ^ c as u32 as u64).wrapping_mul(0x0000_0100_0000_01b3).rotate_left(23))
    }

    pub fn origin(d: usize) -> Point {
        assert!((1..=MAX_DIM).contains(&d), "dimension {d} out of range");
        Point { dim: d as u8, c: [0; MAX_DIM] }
    }

    pub fn new(coords: &[i32]) -> Point {
        let mut p = Point::origin(coords.len());
        p.c[..coords.len()].copy_from_slice(coords);
        p
    }

    pub fn from_i64(coords: &[i64]) -> Result<Point> {
        let mut v = Vec::with_capacity(coords.len());
        for &x in coords {
            v.push(i32::try_from(x).map_err(|_| Error::InvalidParameter(format!("coordinate {x} out of range")))?);
        }
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(Error::UnsupportedDimension(v.len()));
        }
        Ok(Point::new(&v))
    }

    /// `scale` times the i-th unit vector.
    pub fn axis(d: usize, i: usize, scale: i32) -> Point {
        let mut p = Point::origin(d);
        p.c[i] = scale;
        p
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i32] {
        &self.c[..self.dim as usize]
    }

    #[inline]
    pub fn get(&self, i: usize) -> i32 {
        self.c[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: i32) {
        debug_assert!(i < self.dim as usize);
        self.c[i] = v;
    }

    /// Neighbour in direction `dir ∈ 0..2d`: axis `dir/2`, positive for even `dir`.
    #[inline]
    pub fn step(&self, dir: u8) -> Point {
        let mut p = *self;
        let a = (dir >> 1) as usize;
        p.c[a] += if dir & 1 == 0 { 1 } else { -1 };
        p
    }

    pub fn neighbours(&self) -> impl Iterator<Item = Point> + '_ {
        (0..2 * self.dim).map(move |k| self.step(k))
    }

    /// Direction index taking `self` to its neighbour `q`, if adjacent.
    pub fn direction_to(&self, q: &Point) -> Option<u8> {
        if self.dim != q.dim {
            return None;
        }
        let mut found = None;
        for i in 0..self.dim() {
            match q.c[i] - self.c[i] {
                0 => {}
                1 if found.is_none() => found = Some(2 * i as u8),
                -1 if found.is_none() => found = Some(2 * i as u8 + 1),
                _ => return None,
            }
        }
        found
    }

    pub fn is_adjacent(&self, q: &Point) -> bool {
        self.direction_to(q).is_some()
    }

    pub fn linf(&self, q: &Point) -> i64 {
        (0..self.dim()).map(|i| (self.c[i] as i64 - q.c[i] as i64).abs()).max().unwrap_or(0)
    }

    pub fn l1(&self, q: &Point) -> i64 {
        (0..self.dim()).map(|i| (self.c[i] as i64 - q.c[i] as i64).abs()).sum()
    }

    pub fn norm2_sq(&self) -> i64 {
        self.coords().iter().map(|&x| x as i64 * x as i64).sum()
    }

    pub fn norm_inf(&self) -> i64 {
        self.coords().iter().map(|&x| (x as i64).abs()).max().unwrap_or(0)
    }

    pub fn scaled(&self, k: i32) -> Point {
        let mut p = *self;
        for x in &mut p.c[..self.dim()] {
            *x *= k;
        }
        p
    }

    pub(crate) fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() == d {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: d, found: self.dim() })
        }
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(mut self, o: Point) -> Point {
        debug_assert_eq!(self.dim, o.dim);
        for i in 0..self.dim() {
            self.c[i] += o.c[i];
        }
        self
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(mut self, o: Point) -> Point {
        debug_assert_eq!(self.dim, o.dim);
        for i in 0..self.dim() {
            self.c[i] -= o.c[i];
        }
        self
    }
}

impl std::ops::Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        self.scaled(-1)
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, x) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, ")")
    }
}

impl Serialize for Point {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Point, D::Error> {
        let v = Vec::<i32>::deserialize(d)?;
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(serde::de::Error::custom("point dimension out of range"));
        }
        Ok(Point::new(&v))
    }
}

/// Strict lexicographic order on points of equal dimension.
pub fn lex_less(x: &Point, y: &Point) -> Result<bool> {
    y.check_dim(x.dim())?;
    Ok(x.coords() < y.coords())
}

/// Order on finite sets: a proper subset is smaller; otherwise the first
/// differing element of the sorted sequences decides. Equal sets are not less.
pub fn set_lex_less(a: &[Point], b: &[Point]) -> bool {
    let mut a: Vec<Point> = a.to_vec();
    let mut b: Vec<Point> = b.to_vec();
    a.sort_unstable();
    a.dedup();
    b.sort_unstable();
    b.dedup();
    if a == b {
        return false;
    }
    let bs: SiteSet = b.iter().copied().collect();
    if a.iter().all(|p| bs.contains(p)) {
        log::debug!("set order decided by the subset clause ({} ⊂ {})", a.len(), b.len());
        return true;
    }
    let as_: SiteSet = a.iter().copied().collect();
    if b.iter().all(|p| as_.contains(p)) {
        log::debug!("set order decided by the subset clause ({} ⊃ {})", a.len(), b.len());
        return false;
    }
    for (x, y) in a.iter().zip(&b) {
        match x.cmp(y) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
    }
    a.len() < b.len()
}

/// Half-open axis-aligned region `lo ≤ x < hi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: Point,
    pub hi: Point,
}

impl Bounds {
    pub fn new(lo: Point, hi: Point) -> Result<Bounds> {
        hi.check_dim(lo.dim())?;
        if (0..lo.dim()).any(|i| hi.get(i) <= lo.get(i)) {
            return Err(Error::InvalidParameter(format!("empty region {lo}..{hi}")));
        }
        Ok(Bounds { lo, hi })
    }

    /// The cube `[-n, n)^d`.
    pub fn centred(d: usize, n: i32) -> Bounds {
        let mut lo = Point::origin(d);
        let mut hi = Point::origin(d);
        for i in 0..d {
            lo.set(i, -n);
            hi.set(i, n);
        }
        Bounds { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    #[inline]
    pub fn contains(&self, p: &Point) -> bool {
        (0..self.dim()).all(|i| p.get(i) >= self.lo.get(i) && p.get(i) < self.hi.get(i))
    }

    pub fn contains_bounds(&self, o: &Bounds) -> bool {
        (0..self.dim()).all(|i| o.lo.get(i) >= self.lo.get(i) && o.hi.get(i) <= self.hi.get(i))
    }

    /// Site of the region with a neighbour outside it.
    #[inline]
    pub fn on_inner_boundary(&self, p: &Point) -> bool {
        self.contains(p) && (0..self.dim()).any(|i| p.get(i) == self.lo.get(i) || p.get(i) == self.hi.get(i) - 1)
    }

    pub fn side(&self, i: usize) -> i64 {
        self.hi.get(i) as i64 - self.lo.get(i) as i64
    }

    pub fn volume(&self) -> u64 {
        (0..self.dim()).map(|i| self.side(i) as u64).product()
    }

    pub fn padded(&self, r: i32) -> Bounds {
        let mut b = *self;
        for i in 0..self.dim() {
            b.lo.set(i, b.lo.get(i) - r);
            b.hi.set(i, b.hi.get(i) + r);
        }
        b
    }

    /// Sites in lexicographic order.
    pub fn sites(&self) -> SiteIter {
        SiteIter { b: *self, next: Some(self.lo) }
    }
}

pub struct SiteIter {
    b: Bounds,
    next: Option<Point>,
}

impl Iterator for SiteIter {
    type Item = Point;
    fn next(&mut self) -> Option<Point> {
        let cur = self.next?;
        let mut p = cur;
        let d = self.b.dim();
        let mut i = d;
        loop {
            if i == 0 {
                self.next = None;
                break;
            }
            i -= 1;
            let v = p.get(i) + 1;
            if v < self.b.hi.get(i) {
                p.set(i, v);
                self.next = Some(p);
                break;
            }
            p.set(i, self.b.lo.get(i));
        }
        Some(cur)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoxKind {
    Plain,
    Enlarged,
}

/// `x + [0,n)^d` (plain) or `x + [-n,2n)^d` (enlarged).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeBox {
    pub corner: Point,
    pub side: u32,
    pub kind: BoxKind,
}

impl LatticeBox {
    pub fn new(corner: Point, side: u32, kind: BoxKind) -> Result<LatticeBox> {
        if side == 0 {
            return Err(Error::InvalidParameter("box side must be at least 1".into()));
        }
        Ok(LatticeBox { corner, side, kind })
    }

    pub fn plain(corner: Point, side: u32) -> LatticeBox {
        LatticeBox { corner, side: side.max(1), kind: BoxKind::Plain }
    }

    pub fn enlarged(corner: Point, side: u32) -> LatticeBox {
        LatticeBox { corner, side: side.max(1), kind: BoxKind::Enlarged }
    }

    pub fn bounds(&self) -> Bounds {
        let n = self.side as i32;
        let (a, b) = match self.kind {
            BoxKind::Plain => (0, n),
            BoxKind::Enlarged => (-n, 2 * n),
        };
        let mut lo = self.corner;
        let mut hi = self.corner;
        for i in 0..self.corner.dim() {
            lo.set(i, self.corner.get(i) + a);
            hi.set(i, self.corner.get(i) + b);
        }
        Bounds { lo, hi }
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.bounds().contains(p)
    }

    pub fn volume(&self) -> u64 {
        let s = match self.kind {
            BoxKind::Plain => self.side as u64,
            BoxKind::Enlarged => 3 * self.side as u64,
        };
        s.pow(self.corner.dim() as u32)
    }
}

/// Sites of the box in lexicographic order.
pub fn box_sites(b: &LatticeBox, d: usize) -> Result<Vec<Point>> {
    b.corner.check_dim(d)?;
    if b.side == 0 {
        return Err(Error::InvalidParameter("box side must be at least 1".into()));
    }
    Ok(b.bounds().sites().collect())
}

/// Inner and outer vertex boundaries, each sorted lexicographically.
pub fn boundaries(a: &[Point]) -> Result<(Vec<Point>, Vec<Point>)> {
    let first = a.first().ok_or(Error::EmptySet)?;
    let d = first.dim();
    for p in a {
        p.check_dim(d)?;
    }
    let set: SiteSet = a.iter().copied().collect();
    let mut inner = Vec::new();
    let mut outer = SiteSet::default();
    for p in &set {
        let mut on_edge = false;
        for q in p.neighbours() {
            if !set.contains(&q) {
                on_edge = true;
                outer.insert(q);
            }
        }
        if on_edge {
            inner.push(*p);
        }
    }
    inner.sort_unstable();
    let mut outer: Vec<Point> = outer.into_iter().collect();
    outer.sort_unstable();
    Ok((inner, outer))
}

/// Minimum l∞ distance between two nonempty sets.
pub fn set_distance(a: &[Point], b: &[Point]) -> Result<i64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let d = a[0].dim();
    for p in a.iter().chain(b) {
        p.check_dim(d)?;
    }
    let bs: SiteSet = b.iter().copied().collect();
    if a.iter().any(|p| bs.contains(p)) {
        return Ok(0);
    }
    let mut best = i64::MAX;
    for p in a {
        for q in b {
            best = best.min(p.linf(q));
        }
    }
    Ok(best)
}

/// Undirected nearest-neighbour edge, stored as its lower endpoint and axis.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Edge {
    lo: Point,
    axis: u8,
}

impl Edge {
    pub fn new(x: Point, y: Point) -> Result<Edge> {
        let dir = x
            .direction_to(&y)
            .ok_or_else(|| Error::NotNearestNeighbour(x.to_string(), y.to_string()))?;
        Ok(Edge::from_step(x, dir))
    }

    /// The edge traversed by stepping from `x` in direction `dir`.
    #[inline]
    pub fn from_step(x: Point, dir: u8) -> Edge {
        if dir & 1 == 0 {
            Edge { lo: x, axis: dir >> 1 }
        } else {
            Edge { lo: x.step(dir), axis: dir >> 1 }
        }
    }

    pub fn endpoints(&self) -> (Point, Point) {
        (self.lo, self.lo.step(2 * self.axis))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeSet {
    edges: FxHashSet<Edge>,
}

impl EdgeSet {
    pub fn new() -> EdgeSet {
        EdgeSet::default()
    }

    pub fn insert(&mut self, e: Edge) -> bool {
        self.edges.insert(e)
    }

    pub fn contains(&self, e: &Edge) -> bool {
        self.edges.contains(e)
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    pub fn extend(&mut self, other: &EdgeSet) {
        self.edges.extend(other.edges.iter().copied());
    }

    /// All endpoints of all edges.
    pub fn vertices(&self) -> SiteSet {
        let mut v = SiteSet::default();
        for e in &self.edges {
            let (a, b) = e.endpoints();
            v.insert(a);
            v.insert(b);
        }
        v
    }

    pub fn sorted(&self) -> Vec<Edge> {
        let mut v: Vec<Edge> = self.edges.iter().copied().collect();
        v.sort_unstable();
        v
    }
}

impl FromIterator<Edge> for EdgeSet {
    fn from_iter<I: IntoIterator<Item = Edge>>(it: I) -> EdgeSet {
        EdgeSet { edges: it.into_iter().collect() }
    }
}

/// Every edge with both endpoints in the region.
pub fn internal_edges(b: &Bounds) -> Vec<Edge> {
    let mut out = Vec::new();
    for p in b.sites() {
        for a in 0..b.dim() {
            let q = p.step(2 * a as u8);
            if b.contains(&q) {
                out.push(Edge { lo: p, axis: a as u8 });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(c: &[i32]) -> Point {
        Point::new(c)
    }

    #[test]
    fn box_examples() {
        let b = LatticeBox::plain(Point::origin(3), 2);
        let s = box_sites(&b, 3).unwrap();
        assert_eq!(s.len(), 8);
        assert!(s.iter().all(|q| q.coords().iter().all(|&x| x == 0 || x == 1)));

        let e = LatticeBox::enlarged(Point::origin(3), 1);
        let s = box_sites(&e, 3).unwrap();
        assert_eq!(s.len(), 27);
        assert!(s.iter().all(|q| q.norm_inf() <= 1));

        let b = LatticeBox::plain(p(&[5, 0, 0, 0]), 3);
        let s = box_sites(&b, 4).unwrap();
        assert_eq!(s.len(), 81);
        assert_eq!(s[0], p(&[5, 0, 0, 0]));
        assert_eq!(b.volume(), 81);
        assert_eq!(LatticeBox::enlarged(Point::origin(4), 3).volume(), 9u64.pow(4));

        assert!(matches!(box_sites(&b, 3), Err(Error::DimensionMismatch { .. })));
        assert!(LatticeBox::new(Point::origin(3), 0, BoxKind::Plain).is_err());
    }

    #[test]
    fn boundary_examples() {
        let (inner, outer) = boundaries(&[Point::origin(3)]).unwrap();
        assert_eq!(inner, vec![Point::origin(3)]);
        assert_eq!(outer.len(), 6);

        let b3 = box_sites(&LatticeBox::plain(Point::origin(3), 3), 3).unwrap();
        assert_eq!(boundaries(&b3).unwrap().0.len(), 26);

        let b4 = box_sites(&LatticeBox::plain(Point::origin(3), 4), 3).unwrap();
        let (_, outer) = boundaries(&b4).unwrap();
        // brute force: sites of [-1,5)^3 outside the box adjacent to it
        let set: SiteSet = b4.iter().copied().collect();
        let brute = Bounds::new(p(&[-1, -1, -1]), p(&[5, 5, 5]))
            .unwrap()
            .sites()
            .filter(|q| !set.contains(q) && q.neighbours().any(|r| set.contains(&r)))
            .count();
        assert_eq!(outer.len(), brute);
        assert_eq!(outer.len(), 6 * 16);
        assert!(boundaries(&[]).is_err());
    }

    #[test]
    fn outer_boundary_count_for_b4() {
        // sites at l1-distance 1 from the box only: faces, no edges or corners
        let b4 = box_sites(&LatticeBox::plain(Point::origin(3), 4), 3).unwrap();
        let (_, outer) = boundaries(&b4).unwrap();
        assert_eq!(outer.len(), 96);
    }

    #[test]
    fn distance_examples() {
        let o = [Point::origin(3)];
        assert_eq!(set_distance(&o, &o).unwrap(), 0);
        assert_eq!(set_distance(&o, &[p(&[3, 1, -2])]).unwrap(), 3);
        let a = box_sites(&LatticeBox::plain(Point::origin(3), 2), 3).unwrap();
        let b = box_sites(&LatticeBox::plain(p(&[5, 0, 0]), 2), 3).unwrap();
        let brute = a.iter().flat_map(|x| b.iter().map(move |y| x.linf(y))).min().unwrap();
        assert_eq!(set_distance(&a, &b).unwrap(), brute);
        assert_eq!(brute, 4);
        assert!(set_distance(&[], &a).is_err());
    }

    #[test]
    fn lex_examples() {
        assert!(lex_less(&p(&[0, 1, 0]), &p(&[1, 0, 0])).unwrap());
        assert!(!lex_less(&p(&[0, 1, 0]), &p(&[0, 1, 0])).unwrap());
        let mut v = vec![p(&[1, 0]), p(&[0, 2]), p(&[0, 1])];
        v.sort();
        assert_eq!(v, vec![p(&[0, 1]), p(&[0, 2]), p(&[1, 0])]);
        assert!(lex_less(&p(&[0, 1]), &p(&[0, 1, 0])).is_err());
    }

    #[test]
    fn set_order() {
        let a = [p(&[0, 0]), p(&[1, 0])];
        let b = [p(&[0, 0]), p(&[1, 0]), p(&[-5, 0])];
        assert!(set_lex_less(&a, &b));
        assert!(!set_lex_less(&b, &a));
        assert!(!set_lex_less(&a, &a));
        let c = [p(&[0, 1])];
        let e = [p(&[0, 2])];
        assert!(set_lex_less(&c, &e));
        assert!(!set_lex_less(&e, &c));
    }

    #[test]
    fn edges() {
        let x = Point::origin(3);
        let y = x.step(3);
        let e = Edge::new(x, y).unwrap();
        assert_eq!(e, Edge::new(y, x).unwrap());
        assert_eq!(e.endpoints(), (y, x));
        assert!(Edge::new(x, p(&[1, 1, 0])).is_err());
        let set: EdgeSet = [e, Edge::new(x, x.step(0)).unwrap()].into_iter().collect();
        assert_eq!(set.vertices().len(), 3);
        let b = Bounds::centred(3, 1);
        assert_eq!(internal_edges(&b).len(), 3 * 4);
    }

    #[test]
    fn hash_fallback_for_far_points() {
        let far = p(&[1 << 25, 0, 0, 0, 0]);
        let mut s = SiteSet::default();
        s.insert(far);
        s.insert(p(&[0, 0, 0, 0, 0]));
        assert!(s.contains(&far));
        assert_eq!(s.len(), 2);
    }

    fn arb_point(d: usize) -> impl Strategy<Value = Point> {
        proptest::collection::vec(-6i32..6, d).prop_map(|v| Point::new(&v))
    }

    fn arb_set(d: usize) -> impl Strategy<Value = Vec<Point>> {
        proptest::collection::vec(arb_point(d), 1..20)
    }

    proptest! {
        #[test]
        fn boundary_invariants(a in arb_set(3)) {
            let set: SiteSet = a.iter().copied().collect();
            let (inner, outer) = boundaries(&a).unwrap();
            let inner_set: SiteSet = inner.iter().copied().collect();
            for x in &inner { prop_assert!(set.contains(x)); }
            for y in &outer {
                prop_assert!(!set.contains(y));
                prop_assert!(y.neighbours().any(|z| inner_set.contains(&z)));
            }
        }

        #[test]
        fn plain_inside_enlarged(c in arb_point(3), n in 1u32..4) {
            let big = LatticeBox::enlarged(c, n);
            for q in box_sites(&LatticeBox::plain(c, n), 3).unwrap() {
                prop_assert!(big.contains(&q));
            }
        }

        #[test]
        fn lex_total(x in arb_point(4), y in arb_point(4)) {
            let a = lex_less(&x, &y).unwrap();
            let b = lex_less(&y, &x).unwrap();
            prop_assert_eq!([a, b, x == y].iter().filter(|&&t| t).count(), 1);
        }

        #[test]
        fn distance_metric(x in arb_point(3), y in arb_point(3), z in arb_point(3)) {
            let d = |a: Point, b: Point| set_distance(&[a], &[b]).unwrap();
            prop_assert_eq!(d(x, y), d(y, x));
            prop_assert!(d(x, z) <= d(x, y) + d(y, z));
        }

        #[test]
        fn site_iter_matches_volume(lo in arb_point(3), s in proptest::collection::vec(1i32..4, 3)) {
            let hi = Point::new(&[lo.get(0) + s[0], lo.get(1) + s[1], lo.get(2) + s[2]]);
            let b = Bounds::new(lo, hi).unwrap();
            let v: Vec<Point> = b.sites().collect();
            prop_assert_eq!(v.len() as u64, b.volume());
            prop_assert!(v.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
