//! The scaling function F_d.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingLaw {
    pub d: usize,
}

impl ScalingLaw {
    pub fn new(d: usize) -> Result<ScalingLaw> {
        if d < 3 {
            return Err(invalid(format!("F_d is defined for d ≥ 3, got {d}")));
        }
        Ok(ScalingLaw { d })
    }

    /// √a (d=3), a/ln a (d=4), a (d≥5), for a > 1.
    pub fn eval(&self, a: f64) -> Result<f64> {
        if !(a > 1.0) || !a.is_finite() {
            return Err(invalid(format!("F_d needs a > 1, got {a}")));
        }
        Ok(match self.d {
            3 => a.sqrt(),
            4 => a / a.ln(),
            _ => a,
        })
    }
}

pub fn f_d(d: usize, a: f64) -> Result<f64> {
    ScalingLaw::new(d)?.eval(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn branches() {
        assert_eq!(f_d(3, 100.0).unwrap(), 10.0);
        assert_eq!(f_d(5, 7.0).unwrap(), 7.0);
        let e2 = std::f64::consts::E.powi(2);
        assert!((f_d(4, e2).unwrap() - e2 / 2.0).abs() < 1e-12);
        assert!(f_d(4, 1.0).is_err());
        assert!(f_d(3, 0.5).is_err());
        assert!(f_d(2, 4.0).is_err());
    }

    proptest! {
        #[test]
        fn increasing_beyond_e(d in 3usize..8, a in 2.72f64..1e6, step in 1e-3f64..10.0) {
            prop_assert!(f_d(d, a + step).unwrap() > f_d(d, a).unwrap());
        }
    }
}
