//! A priori estimates as checkable predicates over trajectories.
//!
//! Every check reports a per-time slack, `bound - observed`, divided by the
//! size of the bound at that time, so tolerances are dimensionless. A check
//! passes iff its worst slack is `>= -tolerance`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{lq_norm, lq_norm_values, LatticeField, PhaseField, SpatialField, Trajectory};
use crate::heat::HeatPlan;
use crate::linear::SourceTrack;
use crate::moments::MomentSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub name: String,
    pub anchor: String,
    pub times: Vec<f64>,
    pub slack: Vec<f64>,
    pub worst_slack: f64,
    pub worst_time: f64,
    /// Per-axis lattice index of the cell that set the worst slack.
    pub worst_cell: Option<Vec<usize>>,
    pub tolerance: f64,
    pub verdict: Verdict,
}

impl BoundCheck {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Which driver a check applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Pure,
    Coupled,
    Both,
}

impl Scope {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scope::Pure => "pure",
            Scope::Coupled => "coupled",
            Scope::Both => "pure, coupled",
        }
    }

    pub fn admits(&self, coupled: bool) -> bool {
        match self {
            Scope::Both => true,
            Scope::Pure => !coupled,
            Scope::Coupled => coupled,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckInfo {
    pub name: &'static str,
    pub anchor: &'static str,
    pub scope: Scope,
    pub default_tolerance: f64,
}

macro_rules! check {
    ($name:literal, $scope:ident, $tol:expr, $anchor:literal) => {
        CheckInfo {
            name: $name,
            anchor: $anchor,
            scope: Scope::$scope,
            default_tolerance: $tol,
        }
    };
}

/// Every check the harness knows, in report order.
pub const CATALOGUE: &[CheckInfo] = &[
    check!(
        "positivity_p",
        Both,
        1e-12,
        "positivity of the density: nonnegative data give a nonnegative solution"
    ),
    check!(
        "positivity_c",
        Coupled,
        1e-12,
        "positivity of the concentration under consumption"
    ),
    check!(
        "comparison_upper",
        Pure,
        1e-10,
        "comparison with the undamped solution: 0 <= p_k <= p_1 for the pure scheme"
    ),
    check!(
        "comparison_majorant",
        Coupled,
        1e-10,
        "comparison with the activated heat flow: p_k <= exp(alpha1 |rho|_inf t) G(t) * p0"
    ),
    check!(
        "gronwall_p_l1",
        Both,
        1e-8,
        "Gronwall envelope |p(t)|_1 <= |p0|_1 exp(alpha1 |rho|_inf t)"
    ),
    check!(
        "gronwall_p_l2",
        Both,
        1e-8,
        "Gronwall envelope |p(t)|_2 <= |p0|_2 exp(alpha1 |rho|_inf t)"
    ),
    check!(
        "gronwall_p_linf",
        Both,
        1e-8,
        "Gronwall envelope |p(t)|_inf <= |p0|_inf exp(alpha1 |rho|_inf t)"
    ),
    check!(
        "gronwall_ptilde_l1",
        Both,
        1e-8,
        "Gronwall envelope for the velocity marginal in L1"
    ),
    check!(
        "gronwall_ptilde_l2",
        Both,
        1e-8,
        "Gronwall envelope for the velocity marginal in L2"
    ),
    check!(
        "gronwall_ptilde_linf",
        Both,
        1e-8,
        "Gronwall envelope for the velocity marginal in L-infinity"
    ),
    check!(
        "gronwall_m_l1",
        Both,
        1e-8,
        "second-moment envelope with rate alpha1 |rho|_inf + 2 sigma dim_v, L1"
    ),
    check!(
        "gronwall_m_l2",
        Both,
        1e-8,
        "second-moment envelope with rate alpha1 |rho|_inf + 2 sigma dim_v, L2"
    ),
    check!(
        "gronwall_m_linf",
        Both,
        1e-8,
        "second-moment envelope with rate alpha1 |rho|_inf + 2 sigma dim_v, L-infinity"
    ),
    check!(
        "energy",
        Pure,
        1e-8,
        "energy inequality |p(t)|_2^2 + 2 sigma int |grad p|^2 <= |p0|_2^2 + 2 int int f p"
    ),
    check!(
        "speed_bound",
        Both,
        1e-10,
        "speed moment interpolation j <= R p_tilde + m / R for every R > 0"
    ),
    check!(
        "c_bounds",
        Coupled,
        1e-12,
        "concentration bounds 0 <= c <= |c0|_inf and c - c_inf <= 0"
    ),
];

pub fn describe(name: &str) -> Option<&'static CheckInfo> {
    CATALOGUE.iter().find(|c| c.name == name)
}

fn anchor_of(name: &str) -> String {
    describe(name).map_or_else(|| String::from("custom check"), |c| String::from(c.anchor))
}

/// Running minimum of slack with its location.
struct Collector {
    name: String,
    tolerance: f64,
    times: Vec<f64>,
    slack: Vec<f64>,
    worst: Option<(f64, f64, Option<Vec<usize>>)>,
}

impl Collector {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: String::from(name),
            tolerance,
            times: Vec::new(),
            slack: Vec::new(),
            worst: None,
        }
    }

    fn record(&mut self, t: f64, slack: f64, cell: impl FnOnce() -> Option<Vec<usize>>) {
        self.times.push(t);
        self.slack.push(slack);
        let worse = match &self.worst {
            None => true,
            Some((w, _, _)) => slack < *w,
        };
        if worse {
            self.worst = Some((slack, t, cell()));
        }
    }

    fn finish(self) -> BoundCheck {
        let (worst_slack, worst_time, worst_cell) = self.worst.unwrap_or((0.0, 0.0, None));
        let verdict = if worst_slack >= -self.tolerance {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        BoundCheck {
            anchor: anchor_of(&self.name),
            name: self.name,
            times: self.times,
            slack: self.slack,
            worst_slack,
            worst_time,
            worst_cell,
            tolerance: self.tolerance,
            verdict,
        }
    }
}

fn argmax_abs(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if v.abs() > values[best].abs() {
            best = i;
        }
    }
    best
}

fn check_tolerance(tol: f64) -> Result<()> {
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(Error::Parameter(format!("tolerance must be >= 0, got {tol}")));
    }
    Ok(())
}

/// `min value >= -tol · max |value|` at every frame.
pub fn check_positivity<F: LatticeField>(name: &str, traj: &Trajectory<F>, tol: f64) -> Result<BoundCheck> {
    check_tolerance(tol)?;
    let mut col = Collector::new(name, tol);
    for f in traj.iter() {
        let vals = f.values();
        let (mut idx, mut min) = (0, f64::INFINITY);
        for (i, &v) in vals.iter().enumerate() {
            if v < min {
                min = v;
                idx = i;
            }
        }
        let scale = f.max_abs();
        let slack = if scale == 0.0 { 0.0 } else { min.min(0.0) / scale };
        col.record(f.time(), slack, || Some(f.multi_index(idx)));
    }
    Ok(col.finish())
}

fn aligned<F: LatticeField, G: LatticeField>(a: &Trajectory<F>, b: &Trajectory<G>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Configuration(format!(
            "trajectories have {} and {} frames",
            a.len(),
            b.len()
        )));
    }
    for (x, y) in a.iter().zip(b.iter()) {
        if (x.time() - y.time()).abs() > 1e-12 * x.time().abs().max(1.0) {
            return Err(Error::Configuration(format!(
                "frame times differ: {} vs {}",
                x.time(),
                y.time()
            )));
        }
        if x.values().len() != y.values().len() {
            return Err(Error::Configuration("frames differ in size".into()));
        }
    }
    Ok(())
}

/// `traj <= majorant` cellwise; slack is scaled by `‖majorant(t)‖∞`.
pub fn check_comparison<F: LatticeField>(
    name: &str,
    traj: &Trajectory<F>,
    majorant: &Trajectory<F>,
    tol: f64,
) -> Result<BoundCheck> {
    check_tolerance(tol)?;
    aligned(traj, majorant)?;
    let mut col = Collector::new(name, tol);
    for (p, u) in traj.iter().zip(majorant.iter()) {
        let (mut idx, mut min) = (0, f64::INFINITY);
        for (i, (a, b)) in p.values().iter().zip(u.values()).enumerate() {
            if b - a < min {
                min = b - a;
                idx = i;
            }
        }
        let scale = u.max_abs().max(p.max_abs());
        let slack = if scale == 0.0 { 0.0 } else { min / scale };
        col.record(p.time(), slack, || Some(p.multi_index(idx)));
    }
    Ok(col.finish())
}

/// `‖f(t)‖_q <= ‖f(t_0)‖_q exp(rate (t - t_0))`.
pub fn check_gronwall<F: LatticeField>(
    name: &str,
    traj: &Trajectory<F>,
    rate: f64,
    q: f64,
    tol: f64,
) -> Result<BoundCheck> {
    check_gronwall_forced(name, traj, rate, q, 0.0, tol)
}

/// Forced envelope `‖f(t)‖_q <= (‖f(t_0)‖_q + s F) exp(rate s)`, `s = t - t_0`,
/// where `F` bounds the `L^q` norm of the forcing over the run.
pub fn check_gronwall_forced<F: LatticeField>(
    name: &str,
    traj: &Trajectory<F>,
    rate: f64,
    q: f64,
    forcing: f64,
    tol: f64,
) -> Result<BoundCheck> {
    check_tolerance(tol)?;
    if !rate.is_finite() {
        return Err(Error::Parameter(format!("rate must be finite, got {rate}")));
    }
    if !(forcing.is_finite() && forcing >= 0.0) {
        return Err(Error::Parameter(format!("forcing bound must be >= 0, got {forcing}")));
    }
    let mut col = Collector::new(name, tol);
    let Some(first) = traj.first() else {
        return Ok(col.finish());
    };
    let (t0, n0) = (first.time(), lq_norm(first, q)?);
    for f in traj.iter() {
        let elapsed = f.time() - t0;
        let bound = (n0 + elapsed * forcing) * libm::exp(rate * elapsed);
        let observed = lq_norm(f, q)?;
        let slack = if bound > 0.0 {
            (bound - observed) / bound
        } else if observed > 0.0 {
            -1.0
        } else {
            0.0
        };
        col.record(f.time(), slack, || Some(f.multi_index(argmax_abs(f.values()))));
    }
    Ok(col.finish())
}

/// Energy balance sampled at saved times: `‖p‖²`, `2σ∫‖∇p‖²`, `2∫∫ f p`.
///
/// Drivers also keep the integrands at every node in `samples`, so the time
/// quadrature can be redone on a coarser clock.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub norm_sq: Vec<f64>,
    pub dissipation: Vec<f64>,
    pub source_work: Vec<f64>,
    pub samples: Vec<EnergySample>,
}

/// Instantaneous `‖p‖²`, `2σ‖∇p‖²` and `2∫ f p` at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySample {
    pub time: f64,
    pub norm_sq: f64,
    pub dissipation_rate: f64,
    pub work_rate: f64,
}

impl EnergyTrace {
    pub fn push(&mut self, t: f64, norm_sq: f64, dissipation: f64, source_work: f64) {
        self.times.push(t);
        self.norm_sq.push(norm_sq);
        self.dissipation.push(dissipation);
        self.source_work.push(source_work);
    }

    pub fn push_sample(&mut self, time: f64, [norm_sq, dissipation_rate, work_rate]: [f64; 3]) {
        self.samples.push(EnergySample {
            time,
            norm_sq,
            dissipation_rate,
            work_rate,
        });
    }

    /// Normalized end-time balance with trapezoid integrals over every
    /// `stride`-th node sample. `None` if the samples do not tile evenly.
    pub fn final_slack(&self, stride: usize) -> Option<f64> {
        let n = self.samples.len();
        if stride == 0 || n < 2 || !(n - 1).is_multiple_of(stride) {
            return None;
        }
        let (mut diss, mut work) = (0.0, 0.0);
        let picked: Vec<&EnergySample> = self.samples.iter().step_by(stride).collect();
        for w in picked.windows(2) {
            let h = 0.5 * (w[1].time - w[0].time);
            diss += h * (w[0].dissipation_rate + w[1].dissipation_rate);
            work += h * (w[0].work_rate + w[1].work_rate);
        }
        let (e0, e1) = (picked[0].norm_sq, picked[picked.len() - 1].norm_sq);
        let scale = e0 + libm::fabs(work);
        Some(if scale > 0.0 {
            (e0 + work - e1 - diss) / scale
        } else {
            0.0
        })
    }

    /// `max(floor, 2 C dt²)`, with `C` from halving the quadrature rate.
    /// Falls back to `floor` when the node samples cannot be halved.
    pub fn richardson_tolerance(&self, floor: f64) -> f64 {
        let (Some(fine), Some(coarse)) = (self.final_slack(1), self.final_slack(2)) else {
            return floor;
        };
        let n = self.samples.len();
        let dt = (self.samples[n - 1].time - self.samples[0].time) / (n - 1) as f64;
        let c = richardson_constant(coarse, fine, 2.0 * dt);
        scaled_tolerance(floor, 2.0 * c, dt)
    }

    /// Trapezoidal balance over the frames themselves.
    pub fn from_frames(traj: &Trajectory<PhaseField>, source: &SourceTrack, plan: &HeatPlan) -> Result<Self> {
        let mut trace = Self::default();
        if let SourceTrack::Nodes(v) = source {
            if v.len() != traj.len() {
                return Err(Error::Configuration(
                    "source samples must match the frames one to one".into(),
                ));
            }
        }
        let sigma = plan.diffusivity();
        let (mut diss, mut work) = (0.0, 0.0);
        let mut prev: Option<(f64, f64, f64)> = None;
        for (n, p) in traj.iter().enumerate() {
            let cell = p.cell_volume();
            let norm = p.values().iter().map(|v| v * v).sum::<f64>() * cell;
            let grad = 2.0 * sigma * plan.gradient_norm_sq(p.values())?;
            let fp = match source.at(n) {
                Some(f) => 2.0 * f.iter().zip(p.values()).map(|(a, b)| a * b).sum::<f64>() * cell,
                None => 0.0,
            };
            if let Some((t, g, w)) = prev {
                let h = 0.5 * (p.time() - t);
                diss += h * (g + grad);
                work += h * (w + fp);
            }
            trace.push(p.time(), norm, diss, work);
            trace.push_sample(p.time(), [norm, grad, fp]);
            prev = Some((p.time(), grad, fp));
        }
        Ok(trace)
    }
}

/// Energy inequality from a precomputed trace; cells are located on `traj`.
pub fn check_energy_trace(trace: &EnergyTrace, traj: &Trajectory<PhaseField>, tol: f64) -> Result<BoundCheck> {
    check_tolerance(tol)?;
    let mut col = Collector::new("energy", tol);
    let Some(&e0) = trace.norm_sq.first() else {
        return Ok(col.finish());
    };
    for i in 0..trace.times.len() {
        let t = trace.times[i];
        let budget = e0 + trace.source_work[i];
        let used = trace.norm_sq[i] + trace.dissipation[i];
        let scale = e0 + trace.source_work[i].abs();
        let slack = if scale > 0.0 {
            (budget - used) / scale
        } else if used > 0.0 {
            -1.0
        } else {
            0.0
        };
        let frame = traj.iter().find(|f| (f.time() - t).abs() <= 1e-12 * t.abs().max(1.0));
        col.record(t, slack, || frame.map(|f| f.multi_index(argmax_abs(f.values()))));
    }
    Ok(col.finish())
}

/// Energy inequality with trapezoidal time integrals over the frames.
pub fn check_energy(
    traj: &Trajectory<PhaseField>,
    source: &SourceTrack,
    plan: &HeatPlan,
    tol: f64,
) -> Result<BoundCheck> {
    let trace = EnergyTrace::from_frames(traj, source, plan)?;
    check_energy_trace(&trace, traj, tol)
}

/// `j <= R p̃ + m / R` for each `R` in `radii` and the cellwise optimum
/// `R = sqrt(m / p̃)`; slack is scaled by `‖j(t)‖∞`.
pub fn check_speed_bound(series: &[MomentSet], radii: &[f64], tol: f64) -> Result<BoundCheck> {
    check_tolerance(tol)?;
    if let Some(r) = radii.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::Parameter(format!("radius must be > 0, got {r}")));
    }
    let mut col = Collector::new("speed_bound", tol);
    for ms in series {
        let (pt, j, m) = (ms.p_tilde.values(), ms.j.values(), ms.m.values());
        let (mut idx, mut min) = (0, f64::INFINITY);
        for i in 0..j.len() {
            let mut gap = f64::INFINITY;
            for &r in radii {
                gap = gap.min(r * pt[i] + m[i] / r - j[i]);
            }
            if pt[i] > 0.0 && m[i] > 0.0 {
                gap = gap.min(2.0 * libm::sqrt(pt[i] * m[i]) - j[i]);
            }
            if gap < min {
                min = gap;
                idx = i;
            }
        }
        let scale = ms.j.max_abs();
        let slack = if scale == 0.0 { min.min(0.0) } else { min / scale };
        col.record(ms.time, slack, || Some(ms.j.multi_index(idx)));
    }
    Ok(col.finish())
}

/// `0 <= c <= c0_sup` and `ĉ <= 0`; slack is scaled by `c0_sup`.
pub fn check_c_bounds(
    c: &Trajectory<SpatialField>,
    c_hat: &Trajectory<SpatialField>,
    c0_sup: f64,
    tol: f64,
) -> Result<BoundCheck> {
    check_tolerance(tol)?;
    aligned(c, c_hat)?;
    let mut col = Collector::new("c_bounds", tol);
    let scale = if c0_sup > 0.0 { c0_sup } else { 1.0 };
    for (cf, hf) in c.iter().zip(c_hat.iter()) {
        let (mut idx, mut min) = (0, f64::INFINITY);
        for (i, (&cv, &hv)) in cf.values().iter().zip(hf.values()).enumerate() {
            let gap = cv.min(c0_sup - cv).min(-hv);
            if gap < min {
                min = gap;
                idx = i;
            }
        }
        col.record(cf.time(), min / scale, || Some(cf.multi_index(idx)));
    }
    Ok(col.finish())
}

/// `C` in `error ≈ C dt²`, from observables computed at `dt` and `dt / 2`.
pub fn richardson_constant(at_dt: f64, at_half: f64, dt: f64) -> f64 {
    (at_dt - at_half).abs() / (0.75 * dt * dt)
}

/// Default tolerance `max(floor, C dt²)`.
pub fn scaled_tolerance(floor: f64, c: f64, dt: f64) -> f64 {
    floor.max(c * dt * dt)
}

/// Norm of a slice with the field's cell weight; exposed for report tables.
pub fn field_norm<F: LatticeField>(f: &F, q: f64) -> Result<f64> {
    lq_norm_values(f.values(), f.cell_volume(), q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, Role};
    use crate::linear::{solve_linear, CoefficientTrack, Positivity, Schedule};

    fn grid() -> GridSpec {
        GridSpec::new(1, 1, 64, 64, 6.0, 6.0).unwrap()
    }

    fn heat_traj(stride: usize, dt: f64) -> (Trajectory<PhaseField>, HeatPlan) {
        let g = grid();
        let plan = HeatPlan::phase(g, 0.2).unwrap();
        let p0 = PhaseField::from_fn(g, 0.0, |x, v| libm::exp(-2.0 * (x[0] * x[0] + (v[0] - 1.0).powi(2))));
        let s = Schedule::new(0.5, dt, stride).unwrap();
        let t = solve_linear(&p0, &CoefficientTrack::zero(g), &plan, &s, Positivity::Strict).unwrap();
        (t, plan)
    }

    #[test]
    fn catalogue_names_are_unique() {
        for (i, a) in CATALOGUE.iter().enumerate() {
            for b in &CATALOGUE[i + 1..] {
                assert_ne!(a.name, b.name);
            }
        }
        assert!(describe("energy").is_some());
        assert!(describe("nope").is_none());
    }

    #[test]
    fn identical_trajectories_compare_with_zero_slack() {
        let (t, _) = heat_traj(5, 0.01);
        let c = check_comparison("comparison_upper", &t, &t, 1e-10).unwrap();
        assert!(c.passed());
        assert_eq!(c.worst_slack, 0.0);
    }

    #[test]
    fn bumped_cell_fails_comparison_at_its_location() {
        let (t, _) = heat_traj(5, 0.01);
        let mut bad = t.clone();
        let f = &mut bad.frames[3];
        let idx = argmax_abs(f.values());
        f.values_mut()[idx] *= 1.01;
        let c = check_comparison("comparison_upper", &bad, &t, 1e-10).unwrap();
        assert!(!c.passed());
        assert_eq!(c.worst_cell, Some(grid().phase_multi_index(idx)));
        assert_eq!(c.worst_time, t.frames[3].time());
    }

    #[test]
    fn misaligned_comparison_is_a_configuration_error() {
        let (t, _) = heat_traj(5, 0.01);
        let (u, _) = heat_traj(10, 0.01);
        assert!(matches!(
            check_comparison("comparison_upper", &t, &u, 1e-10),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn heat_flow_conserves_mass_in_gronwall_check() {
        let (t, _) = heat_traj(5, 0.01);
        let c = check_gronwall("gronwall_p_l1", &t, 0.0, 1.0, 1e-12).unwrap();
        assert!(c.passed());
        assert!(c.worst_slack.abs() < 1e-13);
    }

    #[test]
    fn heat_energy_identity_balances_to_second_order() {
        let slack = |dt: f64| {
            let (t, plan) = heat_traj(1, dt);
            let c = check_energy(&t, &SourceTrack::None, &plan, 1.0).unwrap();
            c.slack.iter().fold(0.0f64, |m, s| m.max(s.abs()))
        };
        let (a, b) = (slack(0.02), slack(0.01));
        assert!(a < 1e-3);
        let order = libm::log2(a / b);
        assert!((order - 2.0).abs() < 0.3, "{a} {b} {order}");
    }

    #[test]
    fn richardson_tolerance_covers_heat_quadrature_error() {
        let (t, plan) = heat_traj(1, 0.01);
        let trace = EnergyTrace::from_frames(&t, &SourceTrack::None, &plan).unwrap();
        let tol = trace.richardson_tolerance(1e-10);
        let chk = check_energy_trace(&trace, &t, tol).unwrap();
        assert!(chk.passed(), "{} {}", chk.worst_slack, tol);
        assert!(tol > 1e-10 && tol < 1e-3);
        assert_eq!(trace.final_slack(7), None);
    }

    #[test]
    fn forced_envelope_absorbs_the_source() {
        let g = grid();
        let frames = (0..4)
            .map(|n| PhaseField::new(g, alloc::vec![1.0 + 0.5 * n as f64; g.len()], n as f64).unwrap())
            .collect();
        let t = Trajectory::new(frames);
        let box_vol = g.phase_box_volume();
        assert!(!check_gronwall("gronwall_p_l1", &t, 0.0, 1.0, 1e-8).unwrap().passed());
        let c = check_gronwall_forced("gronwall_p_l1", &t, 0.0, 1.0, 0.5 * box_vol, 1e-12).unwrap();
        assert!(c.passed());
        assert!(c.worst_slack.abs() < 1e-12);
    }

    #[test]
    fn damped_energy_has_positive_slack() {
        let g = grid();
        let plan = HeatPlan::phase(g, 0.2).unwrap();
        let p0 = PhaseField::from_fn(g, 0.0, |x, v| libm::exp(-2.0 * (x[0] * x[0] + v[0] * v[0])));
        let a = SpatialField::new(g, alloc::vec![1.0; g.x_count()], 0.0, Role::A).unwrap();
        let s = Schedule::new(0.5, 0.005, 1).unwrap();
        let t = solve_linear(&p0, &CoefficientTrack::steady_damping(a), &plan, &s, Positivity::Strict).unwrap();
        let c = check_energy(&t, &SourceTrack::None, &plan, 1e-8).unwrap();
        assert!(c.passed());
        assert!(c.slack.last().unwrap() > &0.1);
    }

    #[test]
    fn zero_trajectory_passes_everything() {
        let g = grid();
        let plan = HeatPlan::phase(g, 0.2).unwrap();
        let t = Trajectory::new(alloc::vec![PhaseField::zeros(g, 0.0), PhaseField::zeros(g, 0.1)]);
        assert!(check_energy(&t, &SourceTrack::None, &plan, 0.0).unwrap().passed());
        assert!(check_positivity("positivity_p", &t, 0.0).unwrap().passed());
        assert!(check_gronwall("gronwall_p_linf", &t, 0.0, f64::INFINITY, 0.0)
            .unwrap()
            .passed());
        let ms: Vec<_> = t.iter().map(|f| MomentSet::of(f).unwrap()).collect();
        assert!(check_speed_bound(&ms, &[0.5, 1.0, 2.0], 0.0).unwrap().passed());
    }

    #[test]
    fn constant_concentration_stays_put() {
        let g = grid();
        let c: Vec<_> = (0..3)
            .map(|n| SpatialField::new(g, alloc::vec![0.7; g.x_count()], n as f64, Role::C).unwrap())
            .collect();
        let h: Vec<_> = (0..3).map(|n| SpatialField::zeros(g, n as f64, Role::CHat)).collect();
        let chk = check_c_bounds(&Trajectory::new(c), &Trajectory::new(h), 0.7, 1e-12).unwrap();
        assert!(chk.passed());
        assert_eq!(chk.worst_slack, 0.0);
    }

    #[test]
    fn richardson_constant_recovers_quadratic_error() {
        let c = richardson_constant(1.0 + 3.0 * 0.01, 1.0 + 3.0 * 0.0025, 0.1);
        assert!((c - 3.0).abs() < 1e-12);
        assert_eq!(scaled_tolerance(1e-10, 3.0, 1e-3), 3e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn speed_bound_holds_for_any_nonnegative_density(
                vals in proptest::collection::vec(0.0f64..3.0, 8 * 64),
                r in 0.05f64..10.0,
            ) {
                let g = GridSpec::new(1, 1, 8, 64, 1.0, 5.0).unwrap();
                let p = PhaseField::new(g, vals, 0.0).unwrap();
                let ms = MomentSet::of(&p).unwrap();
                let c = check_speed_bound(&[ms], &[0.5, 1.0, 2.0, r], 1e-10).unwrap();
                prop_assert!(c.passed(), "{}", c.worst_slack);
            }

            #[test]
            fn checks_are_deterministic(seed in 0u64..1000) {
                let g = GridSpec::new(1, 1, 8, 8, 1.0, 1.0).unwrap();
                let p = PhaseField::from_fn(g, 0.0, |x, v| ((seed as f64) * x[0] + v[0]).sin().abs());
                let t = Trajectory::new(alloc::vec![p.clone(), p]);
                let a = check_gronwall("gronwall_p_l2", &t, 0.1, 2.0, 1e-8).unwrap();
                let b = check_gronwall("gronwall_p_l2", &t, 0.1, 2.0, 1e-8).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
