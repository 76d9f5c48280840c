//! Scaling law, crossing curves and critical-intensity proxies.

pub mod bisect;
pub mod crossing;
pub mod law;
pub mod scaling;

pub use bisect::{bisect_thresholds, bisect_u_star, BisectOptions, UStarProxy};
pub use crossing::{crossing_probability, crossing_thresholds, invade, CrossingCurve, CrossingEvent, CrossingPlan, CrossingThresholds, InvasionOutcome};
pub use law::{f_d, ScalingLaw};
pub use scaling::{fit_exponent, scaling_study, ScalingPlan, ScalingResult};
