//! Capacity of the cube `B_0(n)` by an exterior Dirichlet solve.
//!
//! The hitting probability `h` of the cube is computed on a cube of half-width `R`
//! around it, in coordinates folded at the centre and sorted, with `h = 1` on the
//! box and `h = α·g(· − centre)` on the outer shell. Because the problem is linear in
//! α, two solves give `cap(α) = a − αb`, and the self-consistent far field
//! `α = cap` closes the system.

use serde::{Deserialize, Serialize};

use super::escape::{CapEstimate, CapMethod};
use super::green::{enumerate_canonical, green_asymptotic, sort_desc, Canon, KillMean, ReducedSystem, OUTSIDE};
use crate::error::{invalid, Error, Result};
use crate::lattice::MAX_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxCapacity {
    pub value: f64,
    pub side: u32,
    pub solve_radius: u32,
    pub iterations: usize,
    pub residual: f64,
    pub kill: KillMean,
}

impl BoxCapacity {
    pub fn as_estimate(&self, d: usize) -> CapEstimate {
        CapEstimate {
            value: self.value,
            stderr: 0.0,
            kill: self.kill,
            method: CapMethod::BoxSolve,
            set_size: (self.side as usize).pow(d as u32),
            bias_bound: 0.0,
        }
    }
}

/// Default outer half-width in folded units for a side-`n` cube.
pub fn default_box_radius(n: u32) -> u32 {
    2 * n.div_ceil(2) + 8
}

pub fn box_capacity(d: usize, n: u32, kill: KillMean) -> Result<BoxCapacity> {
    box_capacity_with_radius(d, n, kill, default_box_radius(n))
}

pub fn box_capacity_with_radius(d: usize, n: u32, kill: KillMean, radius: u32) -> Result<BoxCapacity> {
    if d < 1 || d > MAX_DIM {
        return Err(Error::UnsupportedDimension(d));
    }
    if n == 0 {
        return Err(invalid("box side must be at least 1"));
    }
    if !kill.is_finite() && d <= 2 {
        return Err(invalid("free capacity needs d ≥ 3"));
    }
    let odd = n % 2 == 1;
    let inside = n.div_ceil(2); // folded values 0..inside lie in the box
    if radius <= inside {
        return Err(invalid("solve radius must exceed the half-side"));
    }
    let offset = |j: u32| if odd { j as f64 } else { j as f64 + 0.5 };
    let mult = |j: u32| if odd && j == 0 { 1.0 } else { 2.0 };
    let weight_of = |c: &[u32]| {
        let mut m = (1..=c.len()).product::<usize>() as f64;
        let mut i = 0;
        while i < c.len() {
            let mut k = i;
            while k + 1 < c.len() && c[k + 1] == c[i] {
                k += 1;
            }
            m /= (1..=(k - i + 1)).product::<usize>() as f64;
            i = k + 1;
        }
        m * c.iter().map(|&j| mult(j)).product::<f64>()
    };

    let coords = enumerate_canonical(d, radius);
    let canon = Canon::new(d, radius as usize + 1);
    let total = coords.len() / d;
    let n_in = canon.count(inside as usize - 1);
    let n_out = total - n_in;
    let deg = 2 * d;
    let lam = kill.survival();
    let coeff = lam / deg as f64;

    // folded moves of coordinate j: j+1, and j−1 reflected at the centre
    let moves = |j: u32| -> [u32; 2] {
        let down = if j > 0 {
            j - 1
        } else if odd {
            1
        } else {
            0
        };
        [j + 1, down]
    };
    let shell_value = |c: &[u32]| {
        let r = c.iter().map(|&j| offset(j) * offset(j)).sum::<f64>().sqrt();
        green_asymptotic(d, kill, r)
    };

    let mut nbr = vec![OUTSIDE; n_out * deg];
    let mut weight = vec![0.0; n_out];
    let mut b_box = vec![0.0; n_out];
    let mut b_shell = vec![0.0; n_out];
    let mut tmp = [0u32; MAX_DIM];
    for u in 0..n_out {
        let k = u + n_in;
        let c = &coords[k * d..(k + 1) * d];
        let w = weight_of(c);
        weight[u] = w;
        for i in 0..d {
            for (s, &j2) in moves(c[i]).iter().enumerate() {
                tmp[..d].copy_from_slice(c);
                tmp[i] = j2;
                sort_desc(&mut tmp[..d]);
                let slot = u * deg + 2 * i + s;
                if tmp[0] > radius {
                    b_shell[u] += w * coeff * shell_value(&tmp[..d]);
                } else if tmp[0] < inside {
                    b_box[u] += w * coeff;
                } else {
                    nbr[slot] = (canon.rank(&tmp[..d]) - n_in) as u32;
                }
            }
        }
    }
    let sys = ReducedSystem { n: n_out, deg, nbr, weight, coeff };
    let tol = 1e-12;
    let mut h0 = vec![0.0; n_out];
    let (it0, r0) = sys.solve(&b_box, &mut h0, tol, 100_000)?;
    let mut h1 = vec![0.0; n_out];
    let (it1, r1) = sys.solve(&b_shell, &mut h1, tol, 100_000)?;

    // cap(α) = a − α·b from the escape flux of the box sites
    let mut a = 0.0;
    let mut b = 0.0;
    for k in 0..n_in {
        let c = &coords[k * d..(k + 1) * d];
        let w = weight_of(c);
        a += w * (1.0 - lam);
        for i in 0..d {
            for &j2 in &moves(c[i]) {
                tmp[..d].copy_from_slice(c);
                tmp[i] = j2;
                sort_desc(&mut tmp[..d]);
                if tmp[0] >= inside {
                    let u = canon.rank(&tmp[..d]) - n_in;
                    a += w * coeff * (1.0 - h0[u]);
                    b += w * coeff * h1[u];
                }
            }
        }
    }
    let value = a / (1.0 + b);
    Ok(BoxCapacity { value, side: n, solve_radius: radius, iterations: it0 + it1, residual: r0.max(r1), kill })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::escape::escape_exact;
    use crate::capacity::green::{GreenBuild, GreenTable};
    use crate::lattice::{box_sites, LatticeBox, Point};

    #[test]
    fn matches_last_exit_solve() {
        for (d, r) in [(3usize, 20u32), (4, 12)] {
            for kill in [KillMean::Infinite, KillMean::Finite(10.0)] {
                let table = GreenTable::build(d, kill, GreenBuild { table_radius: r, tolerance: 1e-4, max_points: 2_000_000 }).unwrap();
                for n in [1u32, 2, 3, 4] {
                    let sites = box_sites(&LatticeBox::plain(Point::origin(d), n), d).unwrap();
                    let exact = escape_exact(&sites, &table).unwrap().total();
                    let solved = box_capacity(d, n, kill).unwrap().value;
                    assert!((solved / exact - 1.0).abs() < 2e-4, "d={d} n={n} T={kill}: {solved} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn radius_insensitive() {
        let a = box_capacity_with_radius(3, 8, KillMean::Infinite, 12).unwrap().value;
        let b = box_capacity_with_radius(3, 8, KillMean::Infinite, 24).unwrap().value;
        assert!((a / b - 1.0).abs() < 1e-3, "{a} {b}");
    }

    #[test]
    fn single_site_is_reciprocal_green() {
        let c = box_capacity(3, 1, KillMean::Infinite).unwrap().value;
        assert!((c - 1.0 / 1.516386).abs() < 1e-4, "{c}");
    }
}
