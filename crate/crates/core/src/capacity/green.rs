//! Green's functions of the simple random walk, free and geometrically killed.
//!
//! `g(x, y)` is the expected number of visits to `y` by a walk from `x`; the killed
//! version counts visits before the geometric lifetime ends, so it solves
//! `g − (λ/2d)·Σ_e g(·+e) = δ_0` with `λ = T/(T+1)` (λ = 1 for the free walk).
//!
//! Tables are computed on a cube `[-R, R]^d` reduced by the hyperoctahedral
//! symmetry, where a displacement is represented by its absolute coordinates
//! sorted in decreasing order and ranked with the combinatorial number system.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path as FsPath, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::lattice::{Point, MAX_DIM};
use crate::rng::RngStream;
use crate::walk::{geometric_lifetime, random_direction};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum KillMean {
    Infinite,
    Finite(f64),
}

impl KillMean {
    pub fn from_option(t: Option<f64>) -> KillMean {
        t.map_or(KillMean::Infinite, KillMean::Finite)
    }

    /// One-step survival probability λ = T/(T+1); 1 for the free walk.
    pub fn survival(&self) -> f64 {
        match self {
            KillMean::Infinite => 1.0,
            KillMean::Finite(t) => t / (t + 1.0),
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, KillMean::Finite(_))
    }

    /// Probability that the lifetime is zero: 1/(T+1), or 0 when free.
    pub fn death_at_start(&self) -> f64 {
        1.0 - self.survival()
    }

    fn key(&self) -> u64 {
        match self {
            KillMean::Infinite => u64::MAX,
            KillMean::Finite(t) => t.to_bits(),
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match *self {
            KillMean::Infinite if d <= 2 => Err(invalid(format!("free walk is recurrent in d = {d}"))),
            KillMean::Finite(t) if !(t > 0.0 && t.is_finite()) => Err(invalid(format!("kill mean {t} must be positive"))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for KillMean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KillMean::Infinite => write!(f, "inf"),
            KillMean::Finite(t) => write!(f, "{t}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GreenMethod {
    MonteCarlo,
    AbsorbingSolve,
}

/// `a_d` in `g(x) ~ a_d |x|^{2−d}`.
pub fn free_green_constant(d: usize) -> f64 {
    let dd = d as f64;
    dd * gamma(dd / 2.0 - 1.0) / (2.0 * std::f64::consts::PI.powf(dd / 2.0))
}

/// e^z·K_ν(z) by the trapezoid rule on ∫₀^∞ e^{−z(cosh t − 1)} cosh(νt) dt.
pub fn bessel_k_scaled(nu: f64, z: f64) -> f64 {
    let h: f64 = 0.02;
    let mut sum = 0.5;
    let mut t: f64 = h;
    loop {
        let e = -z * (t.cosh() - 1.0) + nu.abs() * t;
        let term = (-z * (t.cosh() - 1.0)).exp() * (nu * t).cosh();
        sum += term;
        if e < -60.0 && t > 1.0 {
            break;
        }
        t += h;
        if t > 60.0 {
            break;
        }
    }
    sum * h
}

/// Continuum approximation of the Green's function at Euclidean distance `r`.
/// Free: `a_d r^{2−d}`. Killed: the Gaussian-kernel resolvent integral, which
/// reduces to a modified Bessel function of order d/2 − 1.
pub fn green_asymptotic(d: usize, kill: KillMean, r: f64) -> f64 {
    let dd = d as f64;
    match kill {
        KillMean::Infinite => free_green_constant(d) * r.powf(2.0 - dd),
        KillMean::Finite(t) => {
            let a = dd * r * r / 2.0;
            let b = (1.0 / t).ln_1p();
            let z = 2.0 * (a * b).sqrt();
            let s = 1.0 - dd / 2.0;
            let pref = (dd / (2.0 * std::f64::consts::PI)).powf(dd / 2.0) * 2.0 * (a / b).powf(s / 2.0);
            pref * bessel_k_scaled(s, z) * (-z).exp()
        }
    }
}

/// Upper bound on Σ_{n>H} p_n(x, y) for the free walk (local limit bound, 10% slack).
pub fn free_return_tail(d: usize, horizon: u64) -> f64 {
    let dd = d as f64;
    1.1 * (dd / (2.0 * std::f64::consts::PI)).powf(dd / 2.0) * (horizon as f64).powf(1.0 - dd / 2.0) / (dd / 2.0 - 1.0)
}

/// Ranking of sorted absolute displacements.
#[derive(Clone, Debug)]
pub(crate) struct Canon {
    d: usize,
    width: usize,
    binom: Vec<u64>,
}

impl Canon {
    pub(crate) fn new(d: usize, max_coord: usize) -> Canon {
        let width = d + 1;
        let nmax = max_coord + d + 2;
        let mut binom = vec![0u64; (nmax + 1) * width];
        for n in 0..=nmax {
            binom[n * width] = 1;
            for k in 1..=d.min(n) {
                let a = binom[(n - 1) * width + k - 1];
                let b = if k <= n - 1 { binom[(n - 1) * width + k] } else { 0 };
                binom[n * width + k] = a.saturating_add(b);
            }
        }
        Canon { d, width, binom }
    }

    #[inline]
    fn c(&self, n: usize, k: usize) -> u64 {
        self.binom[n * self.width + k]
    }

    /// Number of canonical tuples with largest entry ≤ r.
    pub(crate) fn count(&self, r: usize) -> usize {
        self.c(r + self.d, self.d) as usize
    }

    /// Rank of a non-increasing tuple.
    #[inline]
    pub(crate) fn rank(&self, c: &[u32]) -> usize {
        let d = self.d;
        let mut r = 0u64;
        for i in 0..d {
            r += self.c(c[i] as usize + d - 1 - i, d - i);
        }
        r as usize
    }
}

/// Absolute values sorted in decreasing order.
#[inline]
pub(crate) fn canonical(p: &Point) -> [u32; MAX_DIM] {
    let d = p.dim();
    let mut c = [0u32; MAX_DIM];
    for i in 0..d {
        c[i] = p.get(i).unsigned_abs();
    }
    sort_desc(&mut c[..d]);
    c
}

#[inline]
pub(crate) fn sort_desc(c: &mut [u32]) {
    for i in 1..c.len() {
        let v = c[i];
        let mut j = i;
        while j > 0 && c[j - 1] < v {
            c[j] = c[j - 1];
            j -= 1;
        }
        c[j] = v;
    }
}

/// Number of signed permutations of the tuple (the orbit size).
pub(crate) fn orbit_size(c: &[u32]) -> f64 {
    let d = c.len();
    let mut m = (1..=d).product::<usize>() as f64;
    let mut i = 0;
    while i < d {
        let mut j = i;
        while j + 1 < d && c[j + 1] == c[i] {
            j += 1;
        }
        m /= (1..=(j - i + 1)).product::<usize>() as f64;
        i = j + 1;
    }
    m * 2f64.powi(c.iter().filter(|&&x| x > 0).count() as i32)
}

/// All non-increasing tuples of `[0, r]^d`, in rank order (flattened).
pub(crate) fn enumerate_canonical(d: usize, r: u32) -> Vec<u32> {
    let canon = Canon::new(d, r as usize);
    let n = canon.count(r as usize);
    let mut out = vec![0u32; n * d];
    let mut c = vec![0u32; d];
    fn rec(i: usize, max: u32, c: &mut Vec<u32>, canon: &Canon, out: &mut [u32]) {
        let d = c.len();
        if i == d {
            let k = canon.rank(c);
            out[k * d..(k + 1) * d].copy_from_slice(c);
            return;
        }
        for v in 0..=max {
            c[i] = v;
            rec(i + 1, v, c, canon, out);
        }
    }
    rec(0, r, &mut c, &canon, &mut out);
    out
}

pub(crate) const OUTSIDE: u32 = u32::MAX;

/// Sparse symmetric operator `diag(m)·(I − coeff·P)` on the reduced domain.
pub(crate) struct ReducedSystem {
    pub n: usize,
    pub deg: usize,
    pub nbr: Vec<u32>,
    pub weight: Vec<f64>,
    pub coeff: f64,
}

impl ReducedSystem {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let deg = self.deg;
        for i in 0..self.n {
            let mut s = 0.0;
            for &j in &self.nbr[i * deg..(i + 1) * deg] {
                if j != OUTSIDE {
                    s += x[j as usize];
                }
            }
            y[i] = self.weight[i] * (x[i] - self.coeff * s);
        }
    }

    fn diag(&self) -> Vec<f64> {
        let deg = self.deg;
        (0..self.n)
            .map(|i| {
                let loops = self.nbr[i * deg..(i + 1) * deg].iter().filter(|&&j| j as usize == i).count();
                self.weight[i] * (1.0 - self.coeff * loops as f64)
            })
            .collect()
    }

    /// Jacobi-preconditioned conjugate gradients; returns (iterations, relative residual).
    pub(crate) fn solve(&self, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<(usize, f64)> {
        let n = self.n;
        let dinv: Vec<f64> = self.diag().iter().map(|v| 1.0 / v).collect();
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok((0, 0.0));
        }
        let mut r = vec![0.0; n];
        self.apply(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(a, b)| a * b).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ap = vec![0.0; n];
        for it in 0..max_iter {
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
            if rnorm <= tol {
                return Ok((it, rnorm));
            }
            self.apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                return Err(Error::NoConvergence("operator lost positive definiteness".into()));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
                z[i] = r[i] * dinv[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
        Err(Error::NoConvergence(format!("{max_iter} iterations, residual {rnorm:e}")))
    }
}

/// How values outside the solve cube are fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryCondition {
    /// Absorbing (zero) boundary.
    Zero,
    /// Continuum asymptotic values on the boundary.
    Asymptotic,
}

/// Solves for the Green's function on the reduced cube `[-r, r]^d`; returns values in rank order.
pub fn solve_green_cube(d: usize, kill: KillMean, r: u32, bc: BoundaryCondition, tol: f64) -> Result<(Vec<f64>, usize, f64)> {
    kill.validate(d)?;
    if d == 0 || d > MAX_DIM {
        return Err(Error::UnsupportedDimension(d));
    }
    let coords = enumerate_canonical(d, r);
    let canon = Canon::new(d, r as usize + 1);
    let n = coords.len() / d;
    let deg = 2 * d;
    let coeff = kill.survival() / deg as f64;
    let mut nbr = vec![OUTSIDE; n * deg];
    let mut weight = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut tmp = [0u32; MAX_DIM];
    for i in 0..n {
        let c = &coords[i * d..(i + 1) * d];
        weight[i] = orbit_size(c);
        let mut rhs = if i == 0 { 1.0 } else { 0.0 };
        for j in 0..d {
            for sgn in [1i64, -1] {
                tmp[..d].copy_from_slice(c);
                tmp[j] = (c[j] as i64 + sgn).unsigned_abs() as u32;
                sort_desc(&mut tmp[..d]);
                let k = i * deg + 2 * j + (sgn < 0) as usize;
                if tmp[0] > r {
                    if bc == BoundaryCondition::Asymptotic {
                        let rr = tmp[..d].iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
                        rhs += coeff * green_asymptotic(d, kill, rr);
                    }
                } else {
                    nbr[k] = canon.rank(&tmp[..d]) as u32;
                }
            }
        }
        b[i] = weight[i] * rhs;
    }
    let sys = ReducedSystem { n, deg, nbr, weight, coeff };
    let mut x = vec![0.0; n];
    let (it, res) = sys.solve(&b, &mut x, tol, 200_000)?;
    Ok((x, it, res))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Final cube half-width.
    pub solve_radius: u32,
    /// Half-width of the comparison solve.
    pub compare_radius: u32,
    /// Largest relative change of the target entries between the two solves.
    pub max_rel_change: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenBuild {
    pub table_radius: u32,
    /// Relative tolerance for the radius policy.
    pub tolerance: f64,
    /// Hard cap on the number of reduced unknowns.
    pub max_points: usize,
}

impl GreenBuild {
    pub fn default_for(d: usize) -> GreenBuild {
        let table_radius = match d {
            1 | 2 => 256,
            3 => 48,
            4 => 24,
            5 => 16,
            6 => 10,
            _ => 6,
        };
        GreenBuild { table_radius, tolerance: 1e-4, max_points: 3_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TableHeader {
    d: usize,
    kill: KillMean,
    radius: u32,
    method: GreenMethod,
    tolerance: f64,
    count: usize,
    has_stderr: bool,
    report: Option<SolveReport>,
    provenance: String,
}

/// Green's function values for every displacement with `|x|_∞ ≤ radius`;
/// farther displacements use the continuum asymptotic.
#[derive(Clone, Debug)]
pub struct GreenTable {
    pub d: usize,
    pub kill: KillMean,
    pub radius: u32,
    pub method: GreenMethod,
    pub tolerance: f64,
    pub report: Option<SolveReport>,
    pub provenance: String,
    values: Vec<f64>,
    stderr: Option<Vec<f64>>,
    canon: Canon,
}

impl GreenTable {
    /// Absorbing solve with the radius-doubling policy.
    pub fn build(d: usize, kill: KillMean, opts: GreenBuild) -> Result<GreenTable> {
        kill.validate(d)?;
        if d == 0 || d > MAX_DIM {
            return Err(Error::UnsupportedDimension(d));
        }
        let tr = opts.table_radius.max(1);
        let target = Canon::new(d, tr as usize).count(tr as usize / 2);
        let cg_tol = 1e-13;
        let count = |r: u32| Canon::new(d, r as usize).count(r as usize);
        let mut r_small = tr;
        if count(2 * r_small) > opts.max_points {
            return Err(invalid(format!("table radius {tr} too large for d = {d}")));
        }
        let (mut prev, _, _) = solve_green_cube(d, kill, r_small, BoundaryCondition::Asymptotic, cg_tol)?;
        loop {
            let r_big = 2 * r_small;
            let (cur, it, res) = solve_green_cube(d, kill, r_big, BoundaryCondition::Asymptotic, cg_tol)?;
            let floor = 1e-12 * cur[0];
            let change = (0..target)
                .map(|i| (cur[i] - prev[i]).abs() / (cur[i].abs() + floor))
                .fold(0.0, f64::max);
            let converged = change < opts.tolerance;
            if converged || count(2 * r_big) > opts.max_points {
                if !converged {
                    log::warn!("Green table d={d} T={kill}: radius policy stopped at cap with change {change:e}");
                }
                let n = Canon::new(d, tr as usize).count(tr as usize);
                let values = cur[..n].to_vec();
                let report = SolveReport {
                    solve_radius: r_big,
                    compare_radius: r_small,
                    max_rel_change: change,
                    converged,
                    iterations: it,
                    residual: res,
                };
                return Ok(GreenTable {
                    d,
                    kill,
                    radius: tr,
                    method: GreenMethod::AbsorbingSolve,
                    tolerance: opts.tolerance,
                    report: Some(report),
                    provenance: format!("absorbing solve, cube half-width {r_big}, asymptotic boundary"),
                    values,
                    stderr: None,
                    canon: Canon::new(d, tr as usize),
                });
            }
            prev = cur;
            r_small = r_big;
        }
    }

    /// Visit counting along `walks` walks from the origin (truncated at `horizon` steps).
    pub fn monte_carlo(d: usize, kill: KillMean, radius: u32, walks: u64, horizon: u64, stream: &RngStream) -> Result<GreenTable> {
        kill.validate(d)?;
        if walks < 2 {
            return Err(invalid("need at least two walks"));
        }
        let canon = Canon::new(d, radius as usize);
        let n = canon.count(radius as usize);
        let coords = enumerate_canonical(d, radius);
        let chunks = 64u64.min(walks);
        let (sum, sumsq) = (0..chunks)
            .into_par_iter()
            .map(|ch| {
                let mut sum = vec![0.0; n];
                let mut sumsq = vec![0.0; n];
                let mut visits: HashMap<usize, u64> = HashMap::new();
                let lo = walks * ch / chunks;
                let hi = walks * (ch + 1) / chunks;
                for w in lo..hi {
                    let mut rng = stream.child(w).rng();
                    let life = match kill {
                        KillMean::Infinite => horizon,
                        KillMean::Finite(t) => (geometric_lifetime(t, &mut rng) as u64).min(horizon),
                    };
                    visits.clear();
                    let mut cur = Point::origin(d);
                    for k in 0..=life {
                        if k > 0 {
                            cur = cur.step(random_direction(d, &mut rng));
                        }
                        if cur.norm_inf() <= radius as i64 {
                            let c = canonical(&cur);
                            *visits.entry(canon.rank(&c[..d])).or_default() += 1;
                        }
                    }
                    for (&k, &v) in &visits {
                        let x = v as f64 / orbit_size(&coords[k * d..(k + 1) * d]);
                        sum[k] += x;
                        sumsq[k] += x * x;
                    }
                }
                (sum, sumsq)
            })
            .reduce(
                || (vec![0.0; n], vec![0.0; n]),
                |mut a, b| {
                    for i in 0..n {
                        a.0[i] += b.0[i];
                        a.1[i] += b.1[i];
                    }
                    a
                },
            );
        let w = walks as f64;
        let values: Vec<f64> = sum.iter().map(|s| s / w).collect();
        let stderr: Vec<f64> = (0..n)
            .map(|i| {
                let var = (sumsq[i] / w - values[i] * values[i]).max(0.0) * w / (w - 1.0);
                (var / w).sqrt()
            })
            .collect();
        Ok(GreenTable {
            d,
            kill,
            radius,
            method: GreenMethod::MonteCarlo,
            tolerance: 0.0,
            report: None,
            provenance: format!("visit counts, {walks} walks, horizon {horizon}, stream {stream:?}"),
            values,
            stderr: Some(stderr),
            canon,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// g(0, disp).
    #[inline]
    pub fn value(&self, disp: &Point) -> f64 {
        debug_assert_eq!(disp.dim(), self.d);
        let c = canonical(disp);
        if c[0] <= self.radius {
            self.values[self.canon.rank(&c[..self.d])]
        } else {
            let r = disp.norm2_sq() as f64;
            green_asymptotic(self.d, self.kill, r.sqrt())
        }
    }

    /// (value, stderr) for a displacement; the stderr is zero for solved tables.
    pub fn entry(&self, disp: &Point) -> (f64, f64) {
        let c = canonical(disp);
        if c[0] <= self.radius {
            let k = self.canon.rank(&c[..self.d]);
            (self.values[k], self.stderr.as_ref().map_or(0.0, |s| s[k]))
        } else {
            (self.value(disp), 0.0)
        }
    }

    pub fn g(&self, x: &Point, y: &Point) -> f64 {
        self.value(&(*y - *x))
    }

    pub fn at_origin(&self) -> f64 {
        self.values[0]
    }

    pub fn file_name(&self) -> String {
        let method = match self.method {
            GreenMethod::MonteCarlo => "mc",
            GreenMethod::AbsorbingSolve => "solve",
        };
        format!("green_d{}_T{}_r{}_{}_tol{:e}.bin", self.d, self.kill, self.radius, method, self.tolerance)
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        let header = TableHeader {
            d: self.d,
            kill: self.kill,
            radius: self.radius,
            method: self.method,
            tolerance: self.tolerance,
            count: self.values.len(),
            has_stderr: self.stderr.is_some(),
            report: self.report.clone(),
            provenance: self.provenance.clone(),
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "FRI-GREEN 1")?;
        writeln!(f, "{}", serde_json::to_string(&header)?)?;
        for v in self.values.iter().chain(self.stderr.iter().flatten()) {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &FsPath) -> Result<GreenTable> {
        let mut f = BufReader::new(std::fs::File::open(path)?);
        let mut line = String::new();
        f.read_line(&mut line)?;
        if line.trim_end() != "FRI-GREEN 1" {
            return Err(Error::Format(format!("{}: not a Green table (version line {line:?})", path.display())));
        }
        line.clear();
        f.read_line(&mut line)?;
        let h: TableHeader = serde_json::from_str(line.trim_end())?;
        let canon = Canon::new(h.d, h.radius as usize);
        if canon.count(h.radius as usize) != h.count {
            return Err(Error::Format("entry count does not match radius".into()));
        }
        let mut read = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            f.read_exact(&mut buf)?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        };
        let values = read(h.count)?;
        let stderr = if h.has_stderr { Some(read(h.count)?) } else { None };
        Ok(GreenTable {
            d: h.d,
            kill: h.kill,
            radius: h.radius,
            method: h.method,
            tolerance: h.tolerance,
            report: h.report,
            provenance: h.provenance,
            values,
            stderr,
            canon,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenValue {
    pub value: f64,
    pub stderr: f64,
    /// Bound on the one-sided truncation bias (MC only).
    pub bias_bound: f64,
}

/// How to evaluate a single Green's function value.
pub enum GreenBudget<'a> {
    Table(&'a GreenTable),
    MonteCarlo { walks: u64, horizon: u64, stream: RngStream },
}

/// Expected visits to `y` from `x`.
pub fn green(x: &Point, y: &Point, kill: KillMean, budget: &GreenBudget) -> Result<GreenValue> {
    let d = x.dim();
    kill.validate(d)?;
    if y.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: y.dim() });
    }
    match budget {
        GreenBudget::Table(t) => {
            if t.d != d || t.kill != kill {
                return Err(Error::GreenUnavailable(format!("d={d}, T={kill}")));
            }
            let (value, stderr) = t.entry(&(*y - *x));
            Ok(GreenValue { value, stderr, bias_bound: 0.0 })
        }
        GreenBudget::MonteCarlo { walks, horizon, stream } => {
            if *walks < 2 {
                return Err(invalid("need at least two walks"));
            }
            let target = *y - *x;
            let counts: Vec<f64> = (0..*walks)
                .into_par_iter()
                .map(|w| {
                    let mut rng = stream.child(w).rng();
                    let life = match kill {
                        KillMean::Infinite => *horizon,
                        KillMean::Finite(t) => (geometric_lifetime(t, &mut rng) as u64).min(*horizon),
                    };
                    let mut cur = Point::origin(d);
                    let mut c = (cur == target) as u64;
                    for _ in 0..life {
                        cur = cur.step(random_direction(d, &mut rng));
                        c += (cur == target) as u64;
                    }
                    c as f64
                })
                .collect();
            let acc: crate::stats::MeanAcc = counts.into_iter().collect();
            let e = acc.estimate();
            let bias_bound = match kill {
                KillMean::Infinite => free_return_tail(d, *horizon),
                KillMean::Finite(t) => {
                    let lam = t / (t + 1.0);
                    lam.powf(*horizon as f64 + 1.0) * (t + 1.0)
                }
            };
            Ok(GreenValue { value: e.value, stderr: e.stderr, bias_bound })
        }
    }
}

/// Process-wide table store, optionally persisted in a directory.
pub struct GreenCache {
    dir: Option<PathBuf>,
    build_missing: bool,
    tables: Mutex<HashMap<(usize, u64), Arc<GreenTable>>>,
}

impl GreenCache {
    /// Builds missing tables in memory.
    pub fn in_memory() -> GreenCache {
        GreenCache { dir: None, build_missing: true, tables: Mutex::new(HashMap::new()) }
    }

    /// Backed by `dir`; when `build_missing` is false a missing file is an error.
    pub fn at_dir(dir: impl Into<PathBuf>, build_missing: bool) -> GreenCache {
        GreenCache { dir: Some(dir.into()), build_missing, tables: Mutex::new(HashMap::new()) }
    }

    pub fn global() -> &'static GreenCache {
        static CACHE: OnceLock<GreenCache> = OnceLock::new();
        CACHE.get_or_init(GreenCache::in_memory)
    }

    fn stored_path(&self, d: usize, kill: KillMean) -> Option<PathBuf> {
        self.dir.as_ref().map(|dir| dir.join(format!("green_d{d}_T{kill}.bin")))
    }

    pub fn insert(&self, t: GreenTable) -> Arc<GreenTable> {
        let t = Arc::new(t);
        self.tables.lock().expect("cache lock").insert((t.d, t.kill.key()), t.clone());
        t
    }

    /// Writes `t` to the cache directory (if any) and keeps it in memory.
    pub fn store(&self, t: GreenTable) -> Result<Arc<GreenTable>> {
        if let Some(p) = self.stored_path(t.d, t.kill) {
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent)?;
            }
            t.save(&p)?;
        }
        Ok(self.insert(t))
    }

    pub fn contains(&self, d: usize, kill: KillMean) -> bool {
        self.tables.lock().expect("cache lock").contains_key(&(d, kill.key()))
            || self.stored_path(d, kill).is_some_and(|p| p.exists())
    }

    pub fn get(&self, d: usize, kill: KillMean) -> Result<Arc<GreenTable>> {
        // single writer: the lock is held through a build
        let mut map = self.tables.lock().expect("cache lock");
        if let Some(t) = map.get(&(d, kill.key())) {
            return Ok(t.clone());
        }
        if let Some(p) = self.stored_path(d, kill) {
            if p.exists() {
                let t = Arc::new(GreenTable::load(&p)?);
                map.insert((d, kill.key()), t.clone());
                return Ok(t);
            }
        }
        if !self.build_missing {
            return Err(Error::GreenUnavailable(format!("d={d}, T={kill}")));
        }
        let t = GreenTable::build(d, kill, GreenBuild::default_for(d))?;
        if let Some(p) = self.stored_path(d, kill) {
            std::fs::create_dir_all(p.parent().expect("cache dir"))?;
            t.save(&p)?;
        }
        let t = Arc::new(t);
        map.insert((d, kill.key()), t.clone());
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(d: usize, kill: KillMean, r: u32) -> GreenTable {
        GreenTable::build(d, kill, GreenBuild { table_radius: r, tolerance: 1e-4, max_points: 3_000_000 }).unwrap()
    }

    #[test]
    fn canonical_ranks_are_dense() {
        for d in 1..=5 {
            let r = 6;
            let coords = enumerate_canonical(d, r);
            let canon = Canon::new(d, r as usize);
            let n = canon.count(r as usize);
            assert_eq!(coords.len(), n * d);
            for k in 0..n {
                let c = &coords[k * d..(k + 1) * d];
                assert!(c.windows(2).all(|w| w[0] >= w[1]));
                assert_eq!(canon.rank(c), k);
            }
            // total orbit weight is the cube volume
            let total: f64 = (0..n).map(|k| orbit_size(&coords[k * d..(k + 1) * d])).sum();
            assert_eq!(total, ((2 * r + 1) as f64).powi(d as i32));
        }
    }

    #[test]
    fn free_constants() {
        assert!((free_green_constant(3) - 3.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-12);
        assert!((free_green_constant(4) - 2.0 / std::f64::consts::PI.powi(2)).abs() < 1e-12);
        assert!((free_green_constant(5) - 5.0 / (4.0 * std::f64::consts::PI.powi(2))).abs() < 1e-12);
    }

    #[test]
    fn bessel_half_order_closed_form() {
        // K_{1/2}(z) = sqrt(π/(2z)) e^{-z}
        for z in [0.1, 1.0, 5.0, 40.0] {
            let exact = (std::f64::consts::PI / (2.0 * z)).sqrt();
            assert!((bessel_k_scaled(0.5, z) / exact - 1.0).abs() < 1e-10, "z={z}");
        }
    }

    #[test]
    fn killed_asymptotic_tends_to_free() {
        for d in [3, 4, 5] {
            let f = green_asymptotic(d, KillMean::Infinite, 7.0);
            let k = green_asymptotic(d, KillMean::Finite(1e12), 7.0);
            assert!((k / f - 1.0).abs() < 1e-4, "d={d}: {k} vs {f}");
        }
    }

    #[test]
    fn origin_value_d3_matches_watson() {
        let t = small(3, KillMean::Infinite, 24);
        assert!((t.at_origin() - 1.516386).abs() < 2e-5, "{}", t.at_origin());
        let r = t.report.as_ref().unwrap();
        assert!(r.converged);
    }

    #[test]
    fn zero_boundary_extrapolation_agrees() {
        // independent route: absorbing boundary at R and 2R, Richardson in R^{2-d}
        let (a, _, _) = solve_green_cube(3, KillMean::Infinite, 24, BoundaryCondition::Zero, 1e-13).unwrap();
        let (b, _, _) = solve_green_cube(3, KillMean::Infinite, 48, BoundaryCondition::Zero, 1e-13).unwrap();
        let extrap = 2.0 * b[0] - a[0];
        let t = small(3, KillMean::Infinite, 24);
        assert!((extrap - t.at_origin()).abs() < 2e-3, "{extrap} vs {}", t.at_origin());
        assert!(a[0] < b[0] && b[0] < t.at_origin());
    }

    #[test]
    fn harmonic_equation_holds_in_table() {
        for kill in [KillMean::Infinite, KillMean::Finite(10.0)] {
            let t = small(4, kill, 8);
            let lam = kill.survival();
            for p in [Point::new(&[0, 0, 0, 0]), Point::new(&[1, 2, 0, 0]), Point::new(&[3, -1, 2, 5])] {
                let s: f64 = p.neighbours().map(|q| t.value(&q)).sum();
                let lhs = t.value(&p) - lam / 8.0 * s;
                let rhs = if p == Point::origin(4) { 1.0 } else { 0.0 };
                assert!((lhs - rhs).abs() < 1e-10, "{kill} {p}: {lhs}");
            }
        }
    }

    #[test]
    fn table_symmetry_and_bounds() {
        let t = small(3, KillMean::Finite(10.0), 8);
        let f = small(3, KillMean::Infinite, 8);
        let x = Point::new(&[2, -3, 1]);
        assert_eq!(t.value(&x), t.value(&-x));
        assert_eq!(t.value(&x), t.value(&Point::new(&[-1, 3, 2])));
        assert!(t.at_origin() >= 1.0 && t.at_origin() <= 11.0);
        for k in 0..t.len().min(f.len()) {
            assert!(t.values[k] <= f.values[k]);
        }
    }

    #[test]
    fn beyond_table_uses_asymptotic_continuously() {
        let t = small(3, KillMean::Infinite, 24);
        let inside = t.value(&Point::new(&[24, 0, 0]));
        let outside = t.value(&Point::new(&[25, 0, 0]));
        assert!((inside / (outside * 25.0 / 24.0) - 1.0).abs() < 2e-3, "{inside} {outside}");
        let tk = small(4, KillMean::Finite(64.0), 12);
        let inside = tk.value(&Point::new(&[12, 3, 0, 0]));
        let approx = green_asymptotic(4, KillMean::Finite(64.0), (144.0f64 + 9.0).sqrt());
        assert!((inside / approx - 1.0).abs() < 0.06, "{inside} {approx}");
    }

    #[test]
    fn monte_carlo_agrees_with_solve() {
        let s = RngStream::new(11, 0);
        let mc = GreenTable::monte_carlo(3, KillMean::Finite(10.0), 3, 40_000, u64::MAX, &s).unwrap();
        let ex = small(3, KillMean::Finite(10.0), 6);
        for p in [Point::new(&[0, 0, 0]), Point::new(&[1, 0, 0]), Point::new(&[1, 1, 1]), Point::new(&[2, 1, 0])] {
            let (v, se) = mc.entry(&p);
            assert!((v - ex.value(&p)).abs() < 4.0 * se, "{p}: {v}±{se} vs {}", ex.value(&p));
        }
    }

    #[test]
    fn single_value_mc_and_limits() {
        let s = RngStream::new(12, 0);
        let o = Point::origin(3);
        let table = small(3, KillMean::Infinite, 24);
        let mc = green(&o, &o, KillMean::Infinite, &GreenBudget::MonteCarlo { walks: 40_000, horizon: 10_000, stream: s }).unwrap();
        let exact = table.at_origin();
        assert!(mc.value <= exact + 3.0 * mc.stderr && mc.value >= exact - 3.0 * mc.stderr - mc.bias_bound, "{mc:?}");
        let killed_big = small(3, KillMean::Finite(1e6), 24);
        assert!((killed_big.at_origin() - exact).abs() < 3e-3);
        assert!(green(&o, &o, KillMean::Infinite, &GreenBudget::Table(&table)).unwrap().value > 1.0);
        let two = Point::origin(2);
        assert!(green(&two, &two, KillMean::Infinite, &GreenBudget::Table(&table)).is_err());
    }

    #[test]
    fn file_round_trip() {
        let t = small(3, KillMean::Finite(5.0), 6);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(t.file_name());
        t.save(&p).unwrap();
        let u = GreenTable::load(&p).unwrap();
        assert_eq!(u.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), t.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(u.kill, t.kill);
        assert_eq!(u.report, t.report);

        let cache = GreenCache::at_dir(dir.path().join("c"), false);
        assert!(cache.get(3, KillMean::Finite(5.0)).is_err());
        cache.store(t).unwrap();
        let fresh = GreenCache::at_dir(dir.path().join("c"), false);
        assert!(fresh.get(3, KillMean::Finite(5.0)).is_ok());
    }
}
