//! One parameter struct per command. Every field has a default, and the
//! resolved struct is written back next to the outputs.

use std::sync::Arc;

use fri_core::capacity::boxcap::box_capacity;
use fri_core::capacity::calib::{calibrate, CalibrationConstants, CalibrationPlan};
use fri_core::capacity::escape::DEFAULT_SOLVER_CAP;
use fri_core::capacity::{escape_exact, escape_mc, range_capacity_stats, GreenBuild, GreenCache, GreenTable, KillMean, Moments, RangeBudget, RangeParam, RangeStats};
use fri_core::cluster::layer_capacity_series;
use fri_core::critical::scaling::ScalingCsvRow;
use fri_core::critical::{bisect_u_star, crossing_thresholds, f_d, scaling_study, BisectOptions, CrossingEvent, CrossingPlan, CrossingThresholds, ScalingPlan};
use fri_core::explorer::{run_explorations, write_outcome_log, ExploreConfig, SITE_PC_2D};
use fri_core::fri::{sample_window, write_run_to, FriConfig, DEFAULT_REPORT_TOLERANCE};
use fri_core::lattice::MAX_DIM;
use fri_core::walk::n_t;
use fri_core::{Error, LatticeBox, Point, RngStream, SiteSet};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::Common;
use crate::error::{config_err, CliError, CliResult};
use crate::manifest::Output;

/// Monte-Carlo Green table used in place of a missing cache entry.
const MC_TABLE_RADIUS: u32 = 6;
const MC_TABLE_WALKS: u64 = 20_000;
const MC_TABLE_HORIZON: u64 = 20_000;

pub struct Ctx {
    pub common: Common,
    pub mc_fallback: bool,
}

impl Ctx {
    pub fn stream(&self, tag: &str) -> RngStream {
        RngStream::new(self.common.seed, 0).tagged(tag)
    }

    /// Read-only view of the cache directory.
    pub fn cache(&self) -> GreenCache {
        GreenCache::at_dir(&self.common.cache_dir, false)
    }

    /// The cached table, or with `--mc-fallback` a Monte-Carlo table when it is missing.
    pub fn table(&self, cache: &GreenCache, d: usize, kill: KillMean) -> CliResult<Arc<GreenTable>> {
        match cache.get(d, kill) {
            Ok(t) => Ok(t),
            Err(Error::GreenUnavailable(what)) if self.mc_fallback => {
                warn!("no cached Green table for {what}; using a Monte-Carlo table");
                let horizon = match kill {
                    KillMean::Finite(t) => MC_TABLE_HORIZON.min((40.0 * t).ceil() as u64).max(100),
                    KillMean::Infinite => MC_TABLE_HORIZON,
                };
                let t = GreenTable::monte_carlo(d, kill, MC_TABLE_RADIUS, MC_TABLE_WALKS, horizon, &self.stream("mc-green"))?;
                Ok(cache.insert(t))
            }
            Err(e) => Err(e.into()),
        }
    }
}

pub trait Command: Serialize + DeserializeOwned + Default {
    const NAME: &'static str;

    fn validate(&self) -> CliResult<()>;

    /// Fills parameters that come from the cache so the written config is complete.
    fn resolve(&mut self, _ctx: &Ctx) -> CliResult<()> {
        Ok(())
    }

    fn run(&self, ctx: &Ctx) -> CliResult<Vec<Output>>;
}

fn check_dim(d: usize, min: usize) -> CliResult<()> {
    if d < min || d > MAX_DIM {
        return Err(Error::UnsupportedDimension(d).into());
    }
    Ok(())
}

fn positive(name: &str, x: f64) -> CliResult<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(fri_core::Error::InvalidParameter(format!("{name} must be positive, got {x}")).into())
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    Error::InvalidParameter(msg.into()).into()
}

fn check_points(d: usize, pts: &[Point]) -> CliResult<()> {
    match pts.iter().find(|p| p.dim() != d) {
        Some(p) => Err(Error::DimensionMismatch { expected: d, found: p.dim() }.into()),
        None => Ok(()),
    }
}

fn csv_output<T: Serialize>(name: &str, rows: &[T]) -> CliResult<Output> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    Ok(Output::new(name, bytes))
}

fn written<F: FnOnce(&mut Vec<u8>) -> fri_core::Result<()>>(name: &str, f: F) -> CliResult<Output> {
    let mut bytes = Vec::new();
    f(&mut bytes)?;
    Ok(Output::new(name, bytes))
}

fn range_budget(table: &GreenTable, solver_cap: usize, oversize_mc: bool, mc_reps: u64, mc_horizon: u64) -> RangeBudget<'_> {
    RangeBudget { table, solver_cap, mc_fallback: oversize_mc.then_some((mc_reps, mc_horizon)) }
}

// ---------------------------------------------------------------- sample

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleCmd {
    pub d: usize,
    pub u: f64,
    pub t: f64,
    /// window [0, window_side)^d
    pub window_side: u32,
    pub padding: Option<u32>,
    pub report_tolerance: f64,
}

impl Default for SampleCmd {
    fn default() -> Self {
        SampleCmd { d: 3, u: 0.1, t: 16.0, window_side: 16, padding: None, report_tolerance: DEFAULT_REPORT_TOLERANCE }
    }
}

impl SampleCmd {
    fn config(&self, seed: u64) -> FriConfig {
        let mut c = FriConfig::new(self.d, self.u, self.t, LatticeBox::plain(Point::origin(self.d), self.window_side), seed);
        c.padding = self.padding;
        c.report_tolerance = self.report_tolerance;
        c
    }
}

#[derive(Serialize)]
struct TrajectoryRow {
    index: usize,
    label: f64,
    start: String,
    lifetime: usize,
}

impl Command for SampleCmd {
    const NAME: &'static str = "sample";

    fn validate(&self) -> CliResult<()> {
        check_dim(self.d, 1)?;
        if self.window_side == 0 {
            return Err(invalid("window_side must be positive"));
        }
        Ok(self.config(0).validate()?)
    }

    fn run(&self, ctx: &Ctx) -> CliResult<Vec<Output>> {
        let s = sample_window(&self.config(ctx.common.seed), &ctx.stream("sample"))?;
        info!("{} trajectories, padding {}", s.len(), s.truncation.padding);
        let rows: Vec<TrajectoryRow> = s
            .trajectories
            .iter()
            .zip(&s.labels)
            .enumerate()
            .map(|(index, (w, &label))| TrajectoryRow { index, label, start: w.start.to_string(), lifetime: w.lifetime() })
            .collect();
        let summary = serde_json::json!({
            "trajectories": s.len(),
            "per_site_mean": s.config.per_site_mean(),
            "truncation": s.truncation,
        });
        Ok(vec![written("sample.fri", |b| write_run_to(&s, b))?, csv_output("sample.csv", &rows)?, Output::json("sample.json", &summary)?])
    }
}

// ---------------------------------------------------------------- capacity

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacityCmd {
    pub d: usize,
    /// Kill mean; absent for the free walk.
    pub t: Option<f64>,
    /// Explicit set; the origin when empty and no box is given.
    pub sites: Vec<Point>,
    /// Side of the box [0, n)^d, solved without the cache.
    pub box_side: Option<u32>,
    pub mc_reps: u64,
    pub mc_horizon: u64,
}

impl Default for CapacityCmd {
    fn default() -> Self {
        CapacityCmd { d: 3, t: None, sites: Vec::new(), box_side: None, mc_reps: 20_000, mc_horizon: 100_000 }
    }
}

#[derive(Serialize)]
struct CapacityRow {
    d: usize,
    #[serde(rename = "T")]
    t: Option<f64>,
    set_size: usize,
    method: String,
    cap: f64,
    stderr: f64,
    bias_bound: f64,
}

#[derive(Serialize)]
struct EscapeRow {
    site: String,
    escape: f64,
    stderr: f64,
}

impl Command for CapacityCmd {
    const NAME: &'static str = "capacity";

    fn validate(&self) -> CliResult<()> {
        check_dim(self.d, if self.t.is_some() { 1 } else { 3 })?;
        if let Some(t) = self.t {
            positive("T", t)?;
        }
        check_points(self.d, &self.sites)?;
        match self.box_side {
            Some(0) => Err(invalid("box_side must be positive")),
            Some(_) if !self.sites.is_empty() => Err(config_err("give either sites or box_side, not both")),
            _ if self.mc_reps < 2 || self.mc_horizon == 0 => Err(invalid("mc_reps must be at least 2 and mc_horizon positive")),
            _ => Ok(()),
        }
    }

    fn run(&self, ctx: &Ctx) -> CliResult<Vec<Output>> {
        let kill = KillMean::from_option(self.t);
        let row = |set_size, method: &str, cap, stderr, bias_bound| CapacityRow { d: self.d, t: self.t, set_size, method: method.into(), cap, stderr, bias_bound };
        if let Some(n) = self.box_side {
            let c = box_capacity(self.d, n, kill)?;
            let r = row(c.as_estimate(self.d).set_size, "box_solve", c.value, 0.0, 0.0);
            return Ok(vec![csv_output("capacity.csv", &[r])?, Output::json("capacity.json", &c)?]);
        }
        let sites = if self.sites.is_empty() { vec![Point::origin(self.d)] } else { self.sites.clone() };
        let cache = ctx.cache();
        let (summary, escapes) = match cache.get(self.d, kill) {
            Ok(table) => {
                let e = escape_exact(&sites, &table)?;
                let rows: Vec<EscapeRow> = e.sites.iter().zip(&e.values).map(|(p, &v)| EscapeRow { site: p.to_string(), escape: v, stderr: 0.0 }).collect();
                (row(rows.len(), "last_exit_solve", e.total(), 0.0, 0.0), rows)
            }
            Err(Error::GreenUnavailable(what)) if ctx.mc_fallback => {
                warn!("no cached Green table for {what}; estimating escape probabilities by Monte Carlo");
                let mut distinct = sites.clone();
                distinct.sort_unstable();
                distinct.dedup();
                let set: SiteSet = distinct.iter().copied().collect();
                let stream = ctx.stream("capacity");
                let (mut total, mut var, mut bias) = (0.0, 0.0, 0.0);
                let mut rows = Vec::new();
                for (i, x) in distinct.iter().enumerate() {
                    let e = escape_mc(&set, x, kill, self.mc_reps, self.mc_horizon, &stream.child(i as u64))?;
                    total += e.value;
                    var += e.stderr * e.stderr;
                    bias += e.bias_per_capacity;
                    rows.push(EscapeRow { site: x.to_string(), escape: e.value, stderr: e.stderr });
                }
                let stderr = var.sqrt();
                (row(rows.len(), "mc_escape", total, stderr, bias * (total + 3.0 * stderr)), rows)
            }
            Err(e) => return Err(e.into()),
        };
        Ok(vec![csv_output("capacity.csv", &[summary])?, csv_output("escape.csv", &escapes)?])
    }
}

// ---------------------------------------------------------------- range-cap

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeKind {
    /// X[0,n] for n in `values`
    Steps,
    /// X[0,N_T] for T in `values`
    Killed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangeCapCmd {
    pub d: usize,
    pub kind: RangeKind,
    pub values: Vec<f64>,
    pub reps: usize,
    pub second_moment: bool,
    pub solver_cap: usize,
    /// Monte-Carlo escape for ranges above the solver cap.
    pub oversize_mc: bool,
    pub mc_reps: u64,
    pub mc_horizon: u64,
}

impl Default for RangeCapCmd {
    fn default() -> Self {
        RangeCapCmd {
            d: 3,
            kind: RangeKind::Steps,
            values: vec![64.0, 128.0, 256.0, 512.0, 1024.0],
            reps: 200,
            second_moment: true,
            solver_cap: DEFAULT_SOLVER_CAP,
            oversize_mc: true,
            mc_reps: 2_000,
            mc_horizon: 20_000,
        }
    }
}

#[derive(Serialize)]
struct RangeRow {
    d: usize,
    kind: RangeKind,
    value: f64,
    reps: usize,
    mean: f64,
    stderr: f64,
    m2: Option<f64>,
    m2_stderr: Option<f64>,
    f_d: Option<f64>,
    mean_over_f_d: Option<f64>,
    mean_set_size: f64,
    mc_fallbacks: usize,
}

impl Command for RangeCapCmd {
    const NAME: &'static str = "range-cap";

    fn validate(&self) -> CliResult<()> {
        check_dim(self.d, if self.kind == RangeKind::Killed { 1 } else { 3 })?;
        if self.values.is_empty() {
            return Err(invalid("values must be nonempty"));
        }
        for &v in &self.values {
            positive("range parameter", v)?;
            if self.kind == RangeKind::Steps && v.fract() != 0.0 {
                return Err(invalid(format!("step counts must be integers, got {v}")));
            }
        }
        if self.reps < 30 {
            return Err(invalid(format!("reps must be at least 30, got {}", self.reps)));
        }
        if self.solver_cap == 0 || self.mc_reps < 2 || self.mc_horizon == 0 {
            return Err(invalid("solver_cap, mc_reps and mc_horizon must be positive"));
        }
        Ok(())
    }

    fn run(&self, ctx: &Ctx) -> CliResult<Vec<Output>> {
        let cache = ctx.cache();
        let stream = ctx.stream("range-cap");
        let moments = if self.second_moment { Moments::FirstAndSecond } else { Moments::First };
        let mut all: Vec<RangeStats> = Vec::new();
        for (i, &v) in self.values.iter().enumerate() {
            let (param, kill) = match self.kind {
                RangeKind::Steps => (RangeParam::Steps(v as usize), KillMean::Infinite),
                RangeKind::Killed => (RangeParam::Killed(v), KillMean::Finite(v)),
            };
            let table = ctx.table(&cache, self.d, kill)?;
            let budget = range_budget(&table, self.solver_cap, self.oversize_mc, self.mc_reps, self.mc_horizon);
            let s = range_capacity_stats(self.d, param, moments, self.reps, &budget, &stream.child(i as u64))?;
            info!("{:?}: mean {} ± {}", param, s.mean.value, s.mean.stderr);
            all.push(s);
        }
        let rows: Vec<RangeRow> = all
            .iter()
            .map(|s| RangeRow {
                d: s.d,
                kind: self.kind,
                value: s.param.scale(),
                reps: s.reps,
                mean: s.mean.value,
                stderr: s.mean.stderr,
                m2: s.second_moment.map(|m| m.value),
                m2_stderr: s.second_moment.map(|m| m.stderr),
                f_d: s.f_d,
                mean_over_f_d: s.f_d.map(|f| s.mean.value / f),
                mean_set_size: s.mean_set_size,
                mc_fallbacks: s.mc_fallbacks,
            })
            .collect();
        Ok(vec![csv_output("range-cap.csv", &rows)?, Output::json("range-cap.json", &all)?])
    }
}

// ---------------------------------------------------------------- crossing

/// Fields shared by the commands that sample crossing thresholds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CrossingFields {
    pub d: usize,
    pub t: f64,
    /// Half-width of the crossing box; box_factor·n_T when absent.
    pub n: Option<u32>,
    pub box_factor: u32,
    pub reps: usize,
    pub event: CrossingEvent,
    pub u_first: f64,
    pub max_doublings: u32,
}

impl Default for CrossingFields {
    fn default() -> Self {
        let p = CrossingPlan::new(3, 16.0, 1, 1);
        CrossingFields { d: 3, t: 16.0, n: None, box_factor: 4, reps: 200, event: CrossingEvent::Origin, u_first: p.u_first, max_doublings: p.max_doublings }
    }
}

impl CrossingFields {
    fn validate(&self) -> CliResult<()> {
        check_dim(self.d, 2)?;
        positive("T", self.t)?;
        if self.n == Some(0) || self.box_factor == 0 {
            return Err(invalid("box size must be positive"));
        }
        Ok(self.plan().validate()?)
    }

    fn plan(&self) -> CrossingPlan {
        CrossingPlan {
            d: self.d,
            t: self.t,
            n: self.n.unwrap_or(self.box_factor * n_t(self.t)),
            reps: self.reps,
            u_first: self.u_first,
            max_doublings: self.max_doublings,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossingCmd {
    pub d: usize,
    pub t: f64,
    pub n: Option<u32>,
    pub box_factor: u32,
    pub reps: usize,
    pub event: CrossingEvent,
    pub u_first: f64,
    pub max_doublings: u32,
    /// Intensities at which the crossing curve is reported.
    pub u: Vec<f64>,
}

impl Default for CrossingCmd {
    fn default() -> Self {
        let f = CrossingFields::default();
        CrossingCmd {
            d: f.d,
            t: f.t,
            n: f.n,
            box_factor: f.box_factor,
            reps: f.reps,
            event: f.event,
            u_first: f.u_first,
            max_doublings: f.max_doublings,
            u: vec![0.0625, 0.125, 0.25, 0.5, 1.0],
        }
    }
}

impl CrossingCmd {
    fn fields(&self) -> CrossingFields {
        CrossingFields { d: self.d, t: self.t, n: self.n, box_factor: self.box_factor, reps: self.reps, event: self.event, u_first: self.u_first, max_doublings: self.max_doublings }
    }
}

#[derive(Serialize)]
struct CurveRow {
    d: usize,
    #[serde(rename = "T")]
    t: f64,
    #[serde(rename = "N")]
    n: u32,
    u: f64,
    p: f64,
    stderr: f64,
    reps: usize,
}

#[derive(Serialize)]
struct ThresholdRow {
    replica: usize,
    u_cross: f64,
    u_occupied: f64,
    u_cross_occupied: f64,
    revealed: usize,
    candidates: u64,
}

impl Command for CrossingCmd {
    const NAME: &'static str = "crossing";

    fn validate(&self) -> CliResult<()> {
        self.fields().validate()?;
        if self.u.is_empty() || self.u.iter().any(|&u| !(u >= 0.0 && u.is_finite())) {
            return Err(invalid("u must be a nonempty list of nonnegative intensities"));
        }
        Ok(())
    }

    fn run(&self, ctx: &Ctx) -> CliResult<Vec<Output>> {
        let plan = self.fields().plan();
        let outcomes = crossing_thresholds(&plan, &ctx.stream("crossing"))?;
        let th = CrossingThresholds::new(plan, self.event, &outcomes);
        let curve = th.curve(&self.u);
        let rows: Vec<CurveRow> = curve.points.iter().map(|p| CurveRow { d: plan.d, t: plan.t, n: plan.n, u: p.u, p: p.p, stderr: p.stderr, reps: p.reps }).collect();
        let thresholds: Vec<ThresholdRow> = outcomes
            .iter()
            .enumerate()
            .map(|(replica, o)| ThresholdRow {
                replica,
                u_cross: o.u_cross,
                u_occupied: o.u_occupied,
                u_cross_occupied: o.u_cross_occupied,
                revealed: o.revealed,
                candidates: o.candidates,
            })
            .collect();
        Ok(vec![csv_output("crossing.csv", &rows)?, csv_output("thresholds.csv", &thresholds)?])
    }
}

// ---------------------------------------------------------------- bisect

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BisectCmd {
    pub d: usize,
    pub t: f64,
    pub n: Option<u32>,
    pub box_factor: u32,
    pub reps: usize,
    pub event: CrossingEvent,
    pub u_first: f64,
    pub max_doublings: u32,
    pub theta: f64,
    pub tol: f64,
    pub u_scan: f64,
    pub max_scan: u32,
    pub confidence: f64,
}

impl Default for BisectCmd {
    fn default() -> Self {
        let f = CrossingFields::default();
        let b = BisectOptions::default();
        BisectCmd {
            d: f.d,
            t: f.t,
            n: f.n,
            box_factor: f.box_factor,
            reps: f.reps,
            event: f.event,
            u_first: f.u_first,
            max_doublings: f.max_doublings,
            theta: b.theta,
            tol: b.tol,
            u_scan: b.u_scan,
            max_scan: b.max_scan,
            confidence: b.confidence,
        }
    }
}

fn check_bisect(b: &BisectOptions) -> CliResult<()> {
    if !(b.theta > 0.0 && b.theta < 1.0) || !(b.confidence > 0.0 && b.confidence < 1.0) {
        return Err(invalid("theta and confidence must lie in (0,1)"));
    }
    positive("tol", b.tol)?;
    positive("u_scan", b.u_scan)
}

impl BisectCmd {
    fn fields(&self) -> CrossingFields {
        CrossingFields { d: self.d, t: self.t, n: self.n, box_factor: self.box_factor, reps: self.reps, event: self.event, u_first: self.u_first, max_doublings: self.max_doublings }
    }

    fn options(&self) -> BisectOptions {
        BisectOptions { theta: self.theta, tol: self.tol, u_scan: self.u_scan, max_scan: self.max_scan, confidence: self.confidence }
    }
}

impl Command for BisectCmd {
    const NAME: &'static str = "bisect";

    fn validate(&self) -> CliResult<()> {
        self.fields().validate()?;
        check_bisect(&self.options())
    }

    fn run(&self, ctx: &Ctx) -> CliResult<Vec<Output>> {
        let plan = self.fields().plan();
        let proxy = bisect_u_star(&plan, self.event, &self.options(), &ctx.stream("bisect"))?;
        let row = ScalingCsvRow {
            d: plan.d,
            t: proxy.t,
            n: proxy.n,
            theta: proxy.theta,
            u_lo: proxy.bracket.0,
            u_hi: proxy.bracket.1,
            u_est: proxy.u_estimate,
            reps: proxy.reps,
            seed: ctx.common.seed,
            wall_time: None,
        };
        Ok(vec![csv_output("bisect.csv", &[row])?, Output::json("bisect.json", &proxy)?])
    }
}

// ---------------------------------------------------------------- scaling

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingCmd {
    pub d: usize,
    pub t_grid: Vec<f64>,
    pub box_factor: u32,
    pub reps: usize,
    pub event: CrossingEvent,
    pub u_first: f64,
    pub max_doublings: u32,
    pub theta: f64,
    pub tol: f64,
    pub u_scan: f64,
    pub max_scan: u32,
    pub confidence: f64,
    /// Wall times make the CSV differ between reruns.
    pub record_wall_time: bool,
}

impl Default for ScalingCmd {
    fn default() -> Self {
        let b = BisectCmd::default();
        ScalingCmd {
            d: 3,
            t_grid: vec![16.0, 32.0, 64.0, 128.0, 256.0],
            box_factor: b.box_factor,
            reps: b.reps,
            event: b.event,
            u_first: b.u_first,
            max_doublings: b.max_doublings,
            theta: b.theta,
            tol: b.tol,
            u_scan: b.u_scan,
            max_scan: b.max_scan,
            confidence: b.confidence,
            record_wall_time: false,
        }
    }
}

impl ScalingCmd {
    fn plan(&self, seed: u64) -> ScalingPlan {
        ScalingPlan {
            d: self.d,
            t_grid: self.t_grid.clone(),
            box_factor: self.box_factor,
            reps: self.reps,
            bisect: BisectOptions { theta: self.theta, tol: self.tol, u_scan: self.u_scan, max_scan: self.max_scan, confidence: self.confidence },
            event: self.event,
            u_first: self.u_first,
            max_doublings: self.max_doublings,
            seed,
            record_wall_time: self.record_wall_time,
        }
    }
}

impl Command for ScalingCmd {
    const NAME: &'static str = "scaling";

    fn validate(&self) -> CliResult<()> {
        check_dim(self.d, 2)?;
        let plan = self.plan(0);
        plan.validate()?;
        check_bisect(&plan.bisect)?;
        for &t in &self.t_grid {
            plan.crossing_plan(t).validate()?;
        }
        Ok(())
    }

    fn run(&self, ctx: &Ctx) -> CliResult<Vec<Output>> {
        let r = scaling_study(&self.plan(ctx.common.seed))?;
        for (t, e) in &r.failures {
            warn!("T={t}: {e}");
        }
        match r.exponent() {
            Some(s) => info!("fitted exponent {s}"),
            None => warn!("too few grid points for an exponent fit"),
        }
        Ok(vec![written("scaling.csv", |b| r.write_csv(b))?, Output::json("scaling.json", &r)?])
    }
}

// ---------------------------------------------------------------- layers

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayersCmd {
    pub d: usize,
    pub t: f64,
    /// u = v / F_d(T)
    pub v: f64,
    pub k_max: usize,
    pub reps: usize,
    /// Seed set K; the origin when empty.
    pub base: Vec<Point>,
    pub solver_cap: usize,
    pub oversize_mc: bool,
    pub mc_reps: u64,
    pub mc_horizon: u64,
}

impl Default for LayersCmd {
    fn default() -> Self {
        LayersCmd {
            d: 5,
            t: 64.0,
            v: 0.02,
            k_max: 5,
            reps: 500,
            base: Vec::new(),
            solver_cap: DEFAULT_SOLVER_CAP,
            oversize_mc: true,
            mc_reps: 2_000,
            mc_horizon: 20_000,
        }
    }
}

impl Command for LayersCmd {
    const NAME: &'static str = "layers";

    fn validate(&self) -> CliResult<()> {
        check_dim(self.d, 3)?;
        if !(self.t > 1.0 && self.t.is_finite()) {
            return Err(invalid(format!("T must exceed 1, got {}", self.t)));
        }
        positive("v", self.v)?;
        check_points(self.d, &self.base)?;
        if self.k_max < 2 || self.reps < 2 {
            return Err(invalid("k_max and reps must be at least 2"));
        }
        if self.solver_cap == 0 || self.mc_reps < 2 || self.mc_horizon == 0 {
            return Err(invalid("solver_cap, mc_reps and mc_horizon must be positive"));
        }
        Ok(())
    }

    fn run(&self, ctx: &Ctx) -> CliResult<Vec<Output>> {
        let base = if self.base.is_empty() { vec![Point::origin(self.d)] } else { self.base.clone() };
        let table = ctx.table(&ctx.cache(), self.d, KillMean::Finite(self.t))?;
        let budget = range_budget(&table, self.solver_cap, self.oversize_mc, self.mc_reps, self.mc_horizon);
        let s = layer_capacity_series(self.v, &base, self.k_max, self.reps, &budget, &ctx.stream("layers"))?;
        info!("ratio {} ({}, {})", s.ratio, s.ratio_ci.0, s.ratio_ci.1);
        let run_id = format!("layers-{}", ctx.common.seed);
        Ok(vec![written("layers.csv", |b| s.write_csv(&run_id, b))?, Output::json("layers.json", &s)?])
    }
}

// ---------------------------------------------------------------- explore

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreCmd {
    pub d: usize,
    pub t: f64,
    /// Exactly one of `u` and `multiplier` (u = multiplier / F_d(T)).
    pub u: Option<f64>,
    pub multiplier: Option<f64>,
    /// Read from the calibration in the cache when absent.
    pub c1_threshold: Option<f64>,
    pub p_plus: f64,
    pub max_steps: usize,
    pub box_spacing: u32,
    pub seed_scan: u32,
    pub runs: usize,
    pub coupling_level: Option<f64>,
    pub solver_cap: usize,
    pub oversize_mc: bool,
    pub mc_reps: u64,
    pub mc_horizon: u64,
}

impl Default for ExploreCmd {
    fn default() -> Self {
        ExploreCmd {
            d: 3,
            t: 64.0,
            u: None,
            multiplier: None,
            c1_threshold: None,
            p_plus: (SITE_PC_2D + 1.0) / 2.0,
            max_steps: 100,
            box_spacing: 10,
            seed_scan: 10,
            runs: 10,
            coupling_level: None,
            solver_cap: DEFAULT_SOLVER_CAP,
            oversize_mc: true,
            mc_reps: 2_000,
            mc_horizon: 20_000,
        }
    }
}

impl ExploreCmd {
    fn config(&self, seed: u64) -> CliResult<ExploreConfig> {
        let u = match (self.u, self.multiplier) {
            (Some(u), None) => u,
            (None, Some(m)) => m / f_d(self.d, self.t)?,
            _ => return Err(config_err("set exactly one of u and multiplier")),
        };
        let mut c = ExploreConfig::new(self.d, u, self.t, self.c1_threshold.unwrap_or(1.0), seed);
        c.p_plus = self.p_plus;
        c.max_steps = self.max_steps;
        c.box_spacing = self.box_spacing;
        c.seed_scan = self.seed_scan;
        c.coupling_level = self.coupling_level;
        Ok(c)
    }
}

impl Command for ExploreCmd {
    const NAME: &'static str = "explore";

    fn validate(&self) -> CliResult<()> {
        check_dim(self.d, 3)?;
        if !(self.t > 1.0 && self.t.is_finite()) {
            return Err(invalid(format!("T must exceed 1, got {}", self.t)));
        }
        if let Some(c) = self.c1_threshold {
            positive("c1_threshold", c)?;
        }
        if self.runs == 0 || self.solver_cap == 0 || self.mc_reps < 2 || self.mc_horizon == 0 {
            return Err(invalid("runs, solver_cap, mc_reps and mc_horizon must be positive"));
        }
        Ok(self.config(0)?.validate()?)
    }

    fn resolve(&mut self, ctx: &Ctx) -> CliResult<()> {
        if self.c1_threshold.is_none() {
            let path = ctx.common.cache_dir.join(CalibrationConstants::file_name(self.d));
            if !path.exists() {
                return Err(CliError::MissingCalibration(self.d));
            }
            self.c1_threshold = Some(CalibrationConstants::load(&path)?.c1_threshold());
        }
        Ok(())
    }

    fn run(&self, ctx: &Ctx) -> CliResult<Vec<Output>> {
        let cfg = self.config(ctx.common.seed)?;
        let table = ctx.table(&ctx.cache(), self.d, KillMean::Finite(self.t))?;
        let budget = range_budget(&table, self.solver_cap, self.oversize_mc, self.mc_reps, self.mc_horizon);
        let summary = run_explorations(&cfg, self.runs, &budget, &ctx.stream("explore"))?;
        info!("seed boxes found in {}/{} runs; fraction above p+: {:?}", summary.seed_found, self.runs, summary.fraction_above_p_plus);
        Ok(vec![written("explore.csv", |b| write_outcome_log(&summary.runs, b))?, Output::json("explore.json", &summary)?])
    }
}

// ---------------------------------------------------------------- calibrate

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateCmd {
    pub d: usize,
    pub box_sides: Vec<u32>,
    pub range_steps: Vec<usize>,
    pub kill_means: Vec<f64>,
    pub reps: usize,
    pub stopped_n: usize,
    pub stopped_walks: Vec<usize>,
    pub union_kill_mean: f64,
    pub union_u_hat: f64,
    pub union_reps: usize,
    /// Further killed tables to build for later commands.
    pub extra_kill_means: Vec<f64>,
    pub table_radius: Option<u32>,
}

impl Default for CalibrateCmd {
    fn default() -> Self {
        let p = CalibrationPlan::default();
        CalibrateCmd {
            d: 3,
            box_sides: p.box_sides,
            range_steps: p.range_steps,
            kill_means: p.kill_means,
            reps: p.reps,
            stopped_n: p.stopped_n,
            stopped_walks: p.stopped_walks,
            union_kill_mean: p.union_kill_mean,
            union_u_hat: p.union_u_hat,
            union_reps: p.union_reps,
            extra_kill_means: Vec::new(),
            table_radius: None,
        }
    }
}

#[derive(Serialize)]
struct TableRow {
    d: usize,
    #[serde(rename = "T")]
    t: Option<f64>,
    radius: u32,
    method: String,
    file: String,
    sha256: String,
}

impl CalibrateCmd {
    fn plan(&self) -> CalibrationPlan {
        CalibrationPlan {
            box_sides: self.box_sides.clone(),
            range_steps: self.range_steps.clone(),
            kill_means: self.kill_means.clone(),
            reps: self.reps,
            stopped_n: self.stopped_n,
            stopped_walks: self.stopped_walks.clone(),
            union_kill_mean: self.union_kill_mean,
            union_u_hat: self.union_u_hat,
            union_reps: self.union_reps,
        }
    }

    fn kills(&self) -> Vec<KillMean> {
        let mut k = vec![KillMean::Infinite];
        if self.d >= 4 {
            k.extend(self.kill_means.iter().map(|&t| KillMean::Finite(t)));
        }
        if self.union_reps >= 2 {
            k.push(KillMean::Finite(self.union_kill_mean));
        }
        k.extend(self.extra_kill_means.iter().map(|&t| KillMean::Finite(t)));
        let mut out: Vec<KillMean> = Vec::new();
        for x in k {
            if !out.contains(&x) {
                out.push(x);
            }
        }
        out
    }
}

impl Command for CalibrateCmd {
    const NAME: &'static str = "calibrate";

    fn validate(&self) -> CliResult<()> {
        check_dim(self.d, 3)?;
        if self.box_sides.is_empty() || self.range_steps.is_empty() || self.box_sides.contains(&0) || self.range_steps.contains(&0) {
            return Err(invalid("box_sides and range_steps must be nonempty lists of positive integers"));
        }
        for &t in self.kill_means.iter().chain(&self.extra_kill_means).chain([&self.union_kill_mean]) {
            positive("kill mean", t)?;
        }
        positive("union_u_hat", self.union_u_hat)?;
        if self.reps < 30 {
            return Err(invalid(format!("reps must be at least 30, got {}", self.reps)));
        }
        if self.table_radius == Some(0) {
            return Err(invalid("table_radius must be positive"));
        }
        Ok(())
    }

    fn resolve(&mut self, _ctx: &Ctx) -> CliResult<()> {
        self.table_radius.get_or_insert(GreenBuild::default_for(self.d).table_radius);
        Ok(())
    }

    fn run(&self, ctx: &Ctx) -> CliResult<Vec<Output>> {
        let dir = &ctx.common.cache_dir;
        std::fs::create_dir_all(dir)?;
        let cache = GreenCache::at_dir(dir, false);
        let build = GreenBuild { table_radius: self.table_radius.expect("resolved"), ..GreenBuild::default_for(self.d) };
        let mut tables = Vec::new();
        for kill in self.kills() {
            let t = if cache.contains(self.d, kill) {
                cache.get(self.d, kill)?
            } else {
                info!("building Green table d={} T={kill}", self.d);
                cache.store(GreenTable::build(self.d, kill, build)?)?
            };
            let file = format!("green_d{}_T{kill}.bin", self.d);
            let bytes = std::fs::read(dir.join(&file))?;
            tables.push(TableRow {
                d: self.d,
                t: match kill {
                    KillMean::Finite(t) => Some(t),
                    KillMean::Infinite => None,
                },
                radius: t.radius,
                method: format!("{:?}", t.method),
                file,
                sha256: crate::manifest::digest(&bytes),
            });
        }
        let consts = calibrate(self.d, &self.plan(), &cache, ctx.common.seed)?;
        consts.save(&dir.join(CalibrationConstants::file_name(self.d)))?;
        info!("c1_hat {} c2_hat {}", consts.c1_hat, consts.c2_hat);
        Ok(vec![Output::json("calibration.json", &consts)?, csv_output("tables.csv", &tables)?])
    }
}
