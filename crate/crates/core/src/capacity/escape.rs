//! Escape probabilities and capacities of finite sets.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::green::{free_return_tail, GreenTable, KillMean};
use crate::error::{invalid, Error, Result};
use crate::lattice::{Bounds, Point, SiteSet};
use crate::rng::RngStream;
use crate::stats::{proportion, Estimate};
use crate::walk::{geometric_lifetime, random_direction};

pub const DEFAULT_SOLVER_CAP: usize = 4096;
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
/// Escape values may leave [0,1] by this much before the solve is rejected; it
/// matches the relative accuracy of the Green tables.
pub const RANGE_SLACK: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeVector {
    /// Sorted, distinct sites.
    pub sites: Vec<Point>,
    pub values: Vec<f64>,
    pub kill: KillMean,
    /// ‖G e − 1‖₂ / √n before clamping.
    pub residual: f64,
}

impl EscapeVector {
    pub fn get(&self, p: &Point) -> Option<f64> {
        self.sites.binary_search(p).ok().map(|i| self.values[i])
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn sorted_distinct(a: &[Point]) -> Result<Vec<Point>> {
    let mut v = a.to_vec();
    v.sort_unstable();
    v.dedup();
    if let Some(f) = v.first() {
        let d = f.dim();
        if let Some(bad) = v.iter().find(|p| p.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: bad.dim() });
        }
    }
    Ok(v)
}

/// Last-exit solve `G_A e = 1` with a dense Cholesky factorisation.
pub fn escape_exact(a: &[Point], table: &GreenTable) -> Result<EscapeVector> {
    escape_exact_capped(a, table, DEFAULT_SOLVER_CAP)
}

pub fn escape_exact_capped(a: &[Point], table: &GreenTable, cap: usize) -> Result<EscapeVector> {
    let sites = sorted_distinct(a)?;
    let n = sites.len();
    if n == 0 {
        return Err(Error::EmptySet);
    }
    if sites[0].dim() != table.d {
        return Err(Error::DimensionMismatch { expected: table.d, found: sites[0].dim() });
    }
    if n > cap {
        return Err(Error::SolverCap { size: n, cap });
    }
    let mut g = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = table.g(&sites[i], &sites[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    let ones = DVector::<f64>::from_element(n, 1.0);
    let chol = nalgebra::linalg::Cholesky::new(g.clone())
        .ok_or(Error::IllConditioned { residual: f64::INFINITY, tolerance: RESIDUAL_TOLERANCE })?;
    let e = chol.solve(&ones);
    let residual = (&g * &e - &ones).norm() / (n as f64).sqrt();
    if !(residual <= RESIDUAL_TOLERANCE) {
        return Err(Error::IllConditioned { residual, tolerance: RESIDUAL_TOLERANCE });
    }
    let slack = RANGE_SLACK;
    let mut values = Vec::with_capacity(n);
    for (p, &v) in sites.iter().zip(e.iter()) {
        if !(v >= -slack && v <= 1.0 + slack) {
            return Err(Error::EscapeOutOfRange { site: p.to_string(), value: v });
        }
        values.push(v.clamp(0.0, 1.0));
    }
    Ok(EscapeVector { sites, values, kill: table.kill, residual })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEscape {
    pub value: f64,
    pub stderr: f64,
    /// Free walk: bound on the upward truncation bias per unit of cap(A).
    /// Zero for killed walks (the lifetime is finite, so nothing is truncated).
    pub bias_per_capacity: f64,
    pub horizon: u64,
}

/// A set prepared for repeated membership tests along walks.
struct Target<'a> {
    set: &'a SiteSet,
    hull: Bounds,
}

impl<'a> Target<'a> {
    fn new(set: &'a SiteSet) -> Result<Target<'a>> {
        let first = set.iter().next().ok_or(Error::EmptySet)?;
        let d = first.dim();
        let mut lo = *first;
        let mut hi = *first;
        for p in set {
            for i in 0..d {
                lo.set(i, lo.get(i).min(p.get(i)));
                hi.set(i, hi.get(i).max(p.get(i) + 1));
            }
        }
        Ok(Target { set, hull: Bounds { lo, hi } })
    }

    #[inline]
    fn contains(&self, p: &Point) -> bool {
        self.hull.contains(p) && self.set.contains(p)
    }
}

/// Frequency of no return to A (after step 0) from `x`, within `horizon` steps for the
/// free walk or before the lifetime ends for the killed walk.
pub fn escape_mc(a: &SiteSet, x: &Point, kill: KillMean, reps: u64, horizon: u64, stream: &RngStream) -> Result<McEscape> {
    if !a.contains(x) {
        return Err(Error::NotInSet(x.to_string()));
    }
    if reps == 0 {
        return Err(invalid("reps must be positive"));
    }
    if !kill.is_finite() && horizon == 0 {
        return Err(invalid("free escape needs a positive horizon"));
    }
    let target = Target::new(a)?;
    let d = x.dim();
    let escapes: u64 = (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.child(i).rng();
            let life = match kill {
                KillMean::Infinite => horizon,
                KillMean::Finite(t) => geometric_lifetime(t, &mut rng) as u64,
            };
            let mut cur = *x;
            for _ in 0..life {
                cur = cur.step(random_direction(d, &mut rng));
                if target.contains(&cur) {
                    return 0;
                }
            }
            1
        })
        .sum();
    let e = proportion(escapes, reps);
    let bias_per_capacity = match kill {
        KillMean::Infinite => free_return_tail(d, horizon),
        KillMean::Finite(_) => 0.0,
    };
    Ok(McEscape { value: e.value, stderr: e.stderr, bias_per_capacity, horizon })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CapMethod {
    LastExitSolve,
    McEscape,
    /// Symmetry-reduced exterior Dirichlet solve (boxes only).
    BoxSolve,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapEstimate {
    pub value: f64,
    pub stderr: f64,
    pub kill: KillMean,
    pub method: CapMethod,
    pub set_size: usize,
    /// Upper bound on one-sided truncation bias (free MC only).
    pub bias_bound: f64,
}

impl CapEstimate {
    pub fn empty(kill: KillMean, method: CapMethod) -> CapEstimate {
        CapEstimate { value: 0.0, stderr: 0.0, kill, method, set_size: 0, bias_bound: 0.0 }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.value, stderr: self.stderr }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McBudget {
    pub reps: u64,
    pub horizon: u64,
    pub stream: RngStream,
}

pub struct CapBudget<'a> {
    pub table: Option<&'a GreenTable>,
    pub mc: Option<McBudget>,
    pub solver_cap: usize,
}

impl<'a> CapBudget<'a> {
    pub fn exact(table: &'a GreenTable) -> CapBudget<'a> {
        CapBudget { table: Some(table), mc: None, solver_cap: DEFAULT_SOLVER_CAP }
    }

    pub fn monte_carlo(mc: McBudget) -> CapBudget<'a> {
        CapBudget { table: None, mc: Some(mc), solver_cap: DEFAULT_SOLVER_CAP }
    }
}

/// cap(A) (or cap^T) as the sum of escape probabilities; the empty set has capacity 0.
pub fn capacity(a: &[Point], kill: KillMean, method: CapMethod, budget: &CapBudget) -> Result<CapEstimate> {
    let sites = sorted_distinct(a)?;
    if sites.is_empty() {
        return Ok(CapEstimate::empty(kill, method));
    }
    match method {
        CapMethod::LastExitSolve => {
            let table = budget.table.ok_or_else(|| Error::GreenUnavailable(format!("T={kill}")))?;
            if table.kill != kill {
                return Err(Error::GreenUnavailable(format!("table is for T={}, asked T={kill}", table.kill)));
            }
            let e = escape_exact_capped(&sites, table, budget.solver_cap)?;
            Ok(CapEstimate { value: e.total(), stderr: 0.0, kill, method, set_size: sites.len(), bias_bound: 0.0 })
        }
        CapMethod::McEscape => {
            let mc = budget.mc.ok_or_else(|| invalid("Monte-Carlo capacity needs an MC budget"))?;
            let set: SiteSet = sites.iter().copied().collect();
            let mut value = 0.0;
            let mut var = 0.0;
            let mut bias_coeff = 0.0;
            for (i, x) in sites.iter().enumerate() {
                let e = escape_mc(&set, x, kill, mc.reps, mc.horizon, &mc.stream.child(i as u64))?;
                value += e.value;
                var += e.stderr * e.stderr;
                bias_coeff += e.bias_per_capacity;
            }
            let stderr = var.sqrt();
            let bias_bound = bias_coeff * (value + 3.0 * stderr);
            Ok(CapEstimate { value, stderr, kill, method, set_size: sites.len(), bias_bound })
        }
        CapMethod::BoxSolve => Err(invalid("box solve applies to boxes; use box_capacity")),
    }
}

/// Exact solve when the set fits the solver cap, otherwise Monte-Carlo escape.
pub fn capacity_auto(a: &[Point], table: &GreenTable, budget: &CapBudget) -> Result<CapEstimate> {
    let n = {
        let mut v = a.to_vec();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    if n <= budget.solver_cap {
        capacity(a, table.kill, CapMethod::LastExitSolve, budget)
    } else if budget.mc.is_some() {
        log::warn!("set of size {n} above solver cap {}; using Monte-Carlo escape", budget.solver_cap);
        capacity(a, table.kill, CapMethod::McEscape, budget)
    } else {
        Err(Error::BudgetExhausted(format!("set of size {n} above solver cap and no MC budget")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::green::GreenBuild;
    use crate::lattice::{box_sites, LatticeBox};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn table(kill: KillMean) -> &'static GreenTable {
        static F: OnceLock<GreenTable> = OnceLock::new();
        static K: OnceLock<GreenTable> = OnceLock::new();
        let opts = GreenBuild { table_radius: 16, tolerance: 1e-4, max_points: 1_000_000 };
        match kill {
            KillMean::Infinite => F.get_or_init(|| GreenTable::build(3, kill, opts).unwrap()),
            KillMean::Finite(_) => K.get_or_init(|| GreenTable::build(3, KillMean::Finite(10.0), opts).unwrap()),
        }
    }

    #[test]
    fn singleton_is_reciprocal_of_green() {
        let o = Point::origin(3);
        let f = table(KillMean::Infinite);
        let e = escape_exact(&[o], f).unwrap();
        assert!((e.values[0] - 1.0 / f.at_origin()).abs() < 1e-12);
        assert!((e.values[0] - 0.6595).abs() < 1e-4);
        let k = table(KillMean::Finite(10.0));
        let e = escape_exact(&[o], k).unwrap();
        assert!((e.values[0] - 1.0 / k.at_origin()).abs() < 1e-12);
    }

    #[test]
    fn interior_of_box_killed() {
        let k = table(KillMean::Finite(10.0));
        let b = box_sites(&LatticeBox::plain(Point::origin(3), 3), 3).unwrap();
        let e = escape_exact(&b, k).unwrap();
        let centre = Point::new(&[1, 1, 1]);
        assert!((e.get(&centre).unwrap() - 1.0 / 11.0).abs() < 1e-9);
        let f = escape_exact(&b, table(KillMean::Infinite)).unwrap();
        assert!(f.get(&centre).unwrap().abs() < 1e-9);
        for (x, y) in e.values.iter().zip(&f.values) {
            assert!(x + 1e-9 >= *y);
        }
    }

    #[test]
    fn capacity_conventions() {
        let f = table(KillMean::Infinite);
        let c = capacity(&[], KillMean::Infinite, CapMethod::LastExitSolve, &CapBudget::exact(f)).unwrap();
        assert_eq!(c.value, 0.0);
        let b = box_sites(&LatticeBox::plain(Point::origin(3), 4), 3).unwrap();
        let k = table(KillMean::Finite(10.0));
        let c = capacity(&b, KillMean::Finite(10.0), CapMethod::LastExitSolve, &CapBudget::exact(k)).unwrap();
        assert!(c.value >= 8.0 / 11.0);
        assert!(c.value <= b.len() as f64);
        assert!(capacity(&b, KillMean::Infinite, CapMethod::LastExitSolve, &CapBudget::exact(k)).is_err());
    }

    #[test]
    fn solver_cap_is_enforced() {
        let b = box_sites(&LatticeBox::plain(Point::origin(3), 3), 3).unwrap();
        assert!(matches!(escape_exact_capped(&b, table(KillMean::Infinite), 10), Err(Error::SolverCap { .. })));
    }

    #[test]
    fn mc_examples() {
        let b: SiteSet = box_sites(&LatticeBox::plain(Point::origin(3), 3), 3).unwrap().into_iter().collect();
        let centre = Point::new(&[1, 1, 1]);
        let s = RngStream::new(3, 0);
        let e = escape_mc(&b, &centre, KillMean::Infinite, 1000, 100, &s).unwrap();
        assert_eq!(e.value, 0.0);
        let e = escape_mc(&b, &centre, KillMean::Finite(10.0), 20_000, 0, &s).unwrap();
        assert!((e.value - 1.0 / 11.0).abs() < 3.0 * e.stderr);
        assert!(escape_mc(&b, &Point::new(&[9, 9, 9]), KillMean::Infinite, 10, 10, &s).is_err());
    }

    #[test]
    fn singleton_mc_matches_exact() {
        let o = Point::origin(3);
        let set: SiteSet = [o].into_iter().collect();
        let s = RngStream::new(4, 0);
        let e = escape_mc(&set, &o, KillMean::Infinite, 40_000, 10_000, &s).unwrap();
        let exact = 1.0 / table(KillMean::Infinite).at_origin();
        let bias = e.bias_per_capacity * exact;
        assert!(e.value - exact <= 3.0 * e.stderr + bias && exact - e.value <= 3.0 * e.stderr, "{e:?} vs {exact}");
    }

    fn arb_set() -> impl Strategy<Value = Vec<Point>> {
        proptest::collection::vec(proptest::collection::vec(-3i32..4, 3).prop_map(|v| Point::new(&v)), 1..40)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn monotone_subadditive_and_killed_dominates(a in arb_set(), b in arb_set()) {
            let f = table(KillMean::Infinite);
            let k = table(KillMean::Finite(10.0));
            let cap = |s: &[Point]| escape_exact(s, f).unwrap().total();
            let capk = |s: &[Point]| escape_exact(s, k).unwrap().total();
            let ab: Vec<Point> = a.iter().chain(&b).copied().collect();
            let tol = 1e-7;
            prop_assert!(cap(&ab) <= cap(&a) + cap(&b) + tol);
            prop_assert!(cap(&a) <= cap(&ab) + tol);
            prop_assert!(capk(&a) + tol >= cap(&a));
            prop_assert!(capk(&ab) <= ab.len() as f64);
        }
    }
}
