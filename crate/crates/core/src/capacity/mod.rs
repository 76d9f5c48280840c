//! Green's functions, escape probabilities and capacities.

pub mod green;

pub use green::{green, GreenBudget, GreenBuild, GreenCache, GreenMethod, GreenTable, KillMean};
pub mod escape;

pub use escape::{capacity, capacity_auto, escape_exact, escape_mc, CapBudget, CapEstimate, CapMethod, EscapeVector, McBudget};
pub mod boxcap;

pub use boxcap::{box_capacity, BoxCapacity};
pub mod ranges;

pub use ranges::{range_capacity_stats, stopped_union_capacity, Moments, RangeBudget, RangeParam, RangeStats, StoppedUnionStats};
pub mod calib;

pub use calib::{calibrate, CalibrationConstants, CalibrationPlan, FittedConstant};
