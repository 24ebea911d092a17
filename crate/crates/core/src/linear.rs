//! Frozen-coefficient linear problem `∂t p - σΔp + A p = f`.
//!
//! One Strang step over `[t_n, t_{n+1}]`:
//!
//! ```text
//! p <- exp(-∫_{t_n}^{t_n+dt/2} A) p
//! p <- G(dt) * p
//! p <- exp(-∫_{t_n+dt/2}^{t_{n+1}} A) (p + dt f_mid)
//! ```
//!
//! `A` is linear in time between schedule nodes, so both half-step integrals
//! are exact. `A(t, x, v) = damping(t, x) - rate(t, x) profile(v)`, which
//! covers every coefficient the Picard schemes produce.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{
    check_finite, clamp_nonnegative, clamp_threshold, Domain, LatticeField, PhaseField, SpatialField, Trajectory,
};
use crate::heat::HeatPlan;

/// Uniform time axis `t_n = n t_end / N` with snapshots every `save_stride` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub t_end: f64,
    pub dt: f64,
    pub save_stride: usize,
}

impl Schedule {
    pub fn new(t_end: f64, dt: f64, save_stride: usize) -> Result<Self> {
        let s = Self { t_end, dt, save_stride };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Parameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::Parameter(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        if self.save_stride == 0 {
            return Err(Error::Parameter("save_stride must be >= 1".into()));
        }
        let ratio = self.t_end / self.dt;
        if (ratio - libm::round(ratio)).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Parameter(format!(
                "t_end = {} is not an integer multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        libm::round(self.t_end / self.dt) as usize
    }

    /// Step actually used, `t_end / steps`.
    pub fn step(&self) -> f64 {
        match self.steps() {
            0 => self.dt,
            n => self.t_end / n as f64,
        }
    }

    pub fn node_time(&self, n: usize) -> f64 {
        if n == self.steps() {
            self.t_end
        } else {
            n as f64 * self.step()
        }
    }

    pub fn is_saved(&self, n: usize) -> bool {
        n.is_multiple_of(self.save_stride) || n == self.steps()
    }

    pub fn saved_nodes(&self) -> Vec<usize> {
        (0..=self.steps()).filter(|&n| self.is_saved(n)).collect()
    }

    /// Same horizon and step with every node saved.
    pub fn every_node(&self) -> Self {
        Self {
            save_stride: 1,
            ..*self
        }
    }
}

/// Spatial coefficient sampled at schedule nodes, or constant in time.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialTrack {
    Steady(SpatialField),
    Nodes(Vec<SpatialField>),
}

impl SpatialTrack {
    pub fn at(&self, n: usize) -> &[f64] {
        match self {
            SpatialTrack::Steady(f) => f.values(),
            SpatialTrack::Nodes(v) => v[n].values(),
        }
    }

    fn node_count(&self) -> Option<usize> {
        match self {
            SpatialTrack::Steady(_) => None,
            SpatialTrack::Nodes(v) => Some(v.len()),
        }
    }

    fn fields(&self) -> &[SpatialField] {
        match self {
            SpatialTrack::Steady(f) => core::slice::from_ref(f),
            SpatialTrack::Nodes(v) => v,
        }
    }
}

/// `rate(t, x) · profile(v)`, entering the coefficient with a minus sign.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub rate: SpatialTrack,
    pub profile: Vec<f64>,
}

/// Source `f(t, x, v)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceTrack {
    None,
    Steady(PhaseField),
    Nodes(Vec<PhaseField>),
}

impl SourceTrack {
    pub fn at(&self, n: usize) -> Option<&[f64]> {
        match self {
            SourceTrack::None => None,
            SourceTrack::Steady(f) => Some(f.values()),
            SourceTrack::Nodes(v) => Some(v[n].values()),
        }
    }

    fn node_count(&self) -> Option<usize> {
        match self {
            SourceTrack::Nodes(v) => Some(v.len()),
            _ => None,
        }
    }

    /// Restriction to nodes `start..=end`; steady tracks are returned as is.
    pub fn window(&self, start: usize, end: usize) -> SourceTrack {
        match self {
            SourceTrack::Nodes(v) => SourceTrack::Nodes(v[start..=end].to_vec()),
            other => other.clone(),
        }
    }
}

/// Coefficient and source data for one linear solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTrack {
    pub damping: SpatialTrack,
    pub activation: Option<Activation>,
    pub source: SourceTrack,
}

impl CoefficientTrack {
    /// `A ≡ 0`, `f ≡ 0`.
    pub fn zero(grid: crate::grid::GridSpec) -> Self {
        Self {
            damping: SpatialTrack::Steady(SpatialField::zeros(grid, 0.0, crate::grid::Role::A)),
            activation: None,
            source: SourceTrack::None,
        }
    }

    pub fn steady_damping(a: SpatialField) -> Self {
        Self {
            damping: SpatialTrack::Steady(a),
            activation: None,
            source: SourceTrack::None,
        }
    }

    pub fn with_source(mut self, source: SourceTrack) -> Self {
        self.source = source;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = Some(activation);
        self
    }

    /// Checks lengths, shapes, node times and, in strict mode, signs.
    pub(crate) fn validate(
        &self,
        p_grid: &crate::grid::GridSpec,
        times: &dyn Fn(usize) -> f64,
        steps: usize,
        positivity: Positivity,
    ) -> Result<()> {
        let nodes = steps + 1;
        let mut spatial: Vec<&SpatialField> = self.damping.fields().iter().collect();
        let mut counts = vec![self.damping.node_count()];
        if let Some(act) = &self.activation {
            if act.profile.len() != p_grid.v_count() {
                return Err(Error::Shape("activation profile length differs from v lattice".into()));
            }
            check_finite(&act.profile)?;
            spatial.extend(act.rate.fields());
            counts.push(act.rate.node_count());
        }
        counts.push(self.source.node_count());
        for c in counts.into_iter().flatten() {
            if c < nodes {
                return Err(Error::Configuration(format!(
                    "coefficient track has {c} samples, schedule needs {nodes}"
                )));
            }
        }
        let tol = 1e-9 * times(steps).abs().max(1.0);
        let check_time = |n: usize, t: f64| -> Result<()> {
            if (t - times(n)).abs() > tol {
                return Err(Error::Configuration(format!(
                    "track sample {n} has time {t}, schedule node is at {}",
                    times(n)
                )));
            }
            Ok(())
        };
        for track in core::iter::once(&self.damping).chain(self.activation.as_ref().map(|a| &a.rate)) {
            if let SpatialTrack::Nodes(v) = track {
                for (n, f) in v.iter().take(nodes).enumerate() {
                    check_time(n, f.time())?;
                }
            }
        }
        if let SourceTrack::Nodes(v) = &self.source {
            for (n, f) in v.iter().take(nodes).enumerate() {
                check_time(n, f.time())?;
            }
        }
        for f in &spatial {
            let g = f.grid();
            if g.dim_x != p_grid.dim_x || g.n_x != p_grid.n_x || g.half_width_x != p_grid.half_width_x {
                return Err(Error::Shape("coefficient grid does not match the density grid".into()));
            }
        }
        let sources: &[PhaseField] = match &self.source {
            SourceTrack::None => &[],
            SourceTrack::Steady(f) => core::slice::from_ref(f),
            SourceTrack::Nodes(v) => v,
        };
        for f in sources {
            if f.grid() != p_grid {
                return Err(Error::Shape("source grid does not match the density grid".into()));
            }
        }
        if positivity == Positivity::Strict {
            for f in self.damping.fields() {
                let clamp = clamp_threshold(f.values());
                if let Some(index) = f.values().iter().position(|&v| v < -clamp) {
                    return Err(Error::CoefficientSign {
                        index,
                        value: f.values()[index],
                    });
                }
            }
            if let Some(act) = &self.activation {
                for vals in act.rate.fields().iter().map(|f| f.values()).chain([&act.profile[..]]) {
                    if let Some(index) = vals.iter().position(|&v| v < 0.0) {
                        return Err(Error::CoefficientSign {
                            index,
                            value: vals[index],
                        });
                    }
                }
            }
            for f in sources {
                let clamp = clamp_threshold(f.values());
                if let Some(index) = f.values().iter().position(|&v| v < -clamp) {
                    return Err(Error::Sign {
                        what: "source must be >= 0 in strict mode",
                        index,
                        value: f.values()[index],
                    });
                }
            }
        }
        Ok(())
    }
}

/// Strict mode enforces and clamps nonnegativity; non-strict mode allows
/// signed data (difference experiments) and never clamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Positivity {
    #[default]
    Strict,
    NonStrict,
}

/// Node-local time axis used by the marcher.
#[derive(Debug, Clone)]
pub(crate) struct Timeline {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
    pub saved: Vec<bool>,
    /// Node times when they come from a schedule, so slabs share one clock.
    pub times: Option<Vec<f64>>,
}

impl Timeline {
    pub fn from_schedule(s: &Schedule) -> Self {
        Self::slab(s, 0, s.steps(), (0..=s.steps()).map(|n| s.is_saved(n)).collect())
    }

    /// Nodes `n0..=n0 + steps` of `s`.
    pub fn slab(s: &Schedule, n0: usize, steps: usize, saved: Vec<bool>) -> Self {
        Self {
            t0: s.node_time(n0),
            dt: s.step(),
            steps,
            saved,
            times: Some((n0..=n0 + steps).map(|n| s.node_time(n)).collect()),
        }
    }

    pub fn time(&self, n: usize) -> f64 {
        match &self.times {
            Some(t) => t[n],
            None => self.t0 + n as f64 * self.dt,
        }
    }
}

/// Per-step workspace: the two half-step exponent rows and the FFT buffer.
struct Stepper<'a> {
    plan: &'a HeatPlan,
    track: &'a CoefficientTrack,
    x_count: usize,
    v_count: usize,
    dt: f64,
    scratch: Vec<Complex64>,
    damp_factor: Vec<f64>,
    rate_half: Vec<f64>,
    f_mid: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(plan: &'a HeatPlan, track: &'a CoefficientTrack, dt: f64) -> Self {
        let g = plan.grid();
        Self {
            plan,
            track,
            x_count: g.x_count(),
            v_count: g.v_count(),
            dt,
            scratch: Vec::with_capacity(g.len()),
            damp_factor: vec![0.0; g.x_count()],
            rate_half: vec![0.0; g.x_count()],
            f_mid: Vec::new(),
        }
    }

    /// Multiplies by `exp(-∫A)` over the half step with node weights `(w0, w1)`.
    fn react(&mut self, p: &mut [f64], n: usize, w0: f64, w1: f64) {
        let h = 0.5 * self.dt;
        let d0 = self.track.damping.at(n);
        let d1 = self.track.damping.at(n + 1);
        for i in 0..self.x_count {
            self.damp_factor[i] = libm::exp(-h * (w0 * d0[i] + w1 * d1[i]));
        }
        match &self.track.activation {
            None => {
                for (row, &e) in p.chunks_exact_mut(self.v_count).zip(&self.damp_factor) {
                    for v in row {
                        *v *= e;
                    }
                }
            }
            Some(act) => {
                let r0 = act.rate.at(n);
                let r1 = act.rate.at(n + 1);
                for i in 0..self.x_count {
                    self.rate_half[i] = h * (w0 * r0[i] + w1 * r1[i]);
                }
                for (i, row) in p.chunks_exact_mut(self.v_count).enumerate() {
                    let (e, r) = (self.damp_factor[i], self.rate_half[i]);
                    if r == 0.0 {
                        for v in row {
                            *v *= e;
                        }
                    } else {
                        for (v, &rho) in row.iter_mut().zip(&act.profile) {
                            *v *= e * libm::exp(r * rho);
                        }
                    }
                }
            }
        }
    }

    fn step(&mut self, p: &mut [f64], n: usize) -> Result<()> {
        self.react(p, n, 0.75, 0.25);
        self.plan.apply_in_place(p, self.dt, &mut self.scratch)?;
        match (self.track.source.at(n), self.track.source.at(n + 1)) {
            (Some(f0), Some(f1)) if core::ptr::eq(f0, f1) => {
                for (v, &f) in p.iter_mut().zip(f0) {
                    *v += self.dt * f;
                }
            }
            (Some(f0), Some(f1)) => {
                self.f_mid.clear();
                self.f_mid.extend(f0.iter().zip(f1).map(|(a, b)| 0.5 * (a + b)));
                for (v, &f) in p.iter_mut().zip(&self.f_mid) {
                    *v += self.dt * f;
                }
            }
            _ => {}
        }
        self.react(p, n, 0.25, 0.75);
        Ok(())
    }
}

/// Runs the scheme over `timeline`, calling `observer(n, p_n)` at every node
/// (including `n = 0`) and returning the frames flagged in `timeline.saved`.
pub(crate) fn march(
    p0: &PhaseField,
    track: &CoefficientTrack,
    plan: &HeatPlan,
    timeline: &Timeline,
    positivity: Positivity,
    observer: &mut dyn FnMut(usize, &[f64]) -> Result<()>,
) -> Result<Vec<PhaseField>> {
    if plan.domain() != Domain::Phase || plan.grid() != p0.grid() {
        return Err(Error::Shape("heat plan does not match the density grid".into()));
    }
    check_finite(p0.values())?;
    track.validate(p0.grid(), &|n| timeline.time(n), timeline.steps, positivity)?;
    let mut p = p0.values().to_vec();
    if positivity == Positivity::Strict {
        clamp_nonnegative(&mut p)?;
    }
    let mut frames = Vec::new();
    let grid = *p0.grid();
    let save = |n: usize, p: &[f64], frames: &mut Vec<PhaseField>| {
        if timeline.saved[n] {
            frames.push(PhaseField::new(grid, p.to_vec(), timeline.time(n)).expect("finite"));
        }
    };
    observer(0, &p)?;
    save(0, &p, &mut frames);
    let mut stepper = Stepper::new(plan, track, timeline.dt);
    for n in 0..timeline.steps {
        stepper.step(&mut p, n)?;
        check_finite(&p)?;
        if positivity == Positivity::Strict {
            clamp_nonnegative(&mut p)?;
        }
        observer(n + 1, &p)?;
        save(n + 1, &p, &mut frames);
    }
    Ok(frames)
}

/// One step of length `dt` with a time-constant damping `a(x)` and optional source.
pub fn advance_linear(
    p: &PhaseField,
    a: &SpatialField,
    f: Option<&PhaseField>,
    plan: &HeatPlan,
    dt: f64,
    positivity: Positivity,
) -> Result<PhaseField> {
    let track = CoefficientTrack {
        damping: SpatialTrack::Steady(a.clone()),
        activation: None,
        source: f.map_or(SourceTrack::None, |f| SourceTrack::Steady(f.clone())),
    };
    let mut start = p.clone();
    start.set_time(0.0);
    let timeline = Timeline {
        t0: 0.0,
        dt,
        steps: 1,
        saved: vec![false, true],
        times: None,
    };
    let mut frames = march(&start, &track, plan, &timeline, positivity, &mut |_, _| Ok(()))?;
    let mut out = frames.pop().expect("one saved frame");
    out.set_time(p.time() + dt);
    Ok(out)
}

/// Solves over the whole schedule and returns the saved frames.
pub fn solve_linear(
    p0: &PhaseField,
    track: &CoefficientTrack,
    plan: &HeatPlan,
    schedule: &Schedule,
    positivity: Positivity,
) -> Result<Trajectory<PhaseField>> {
    schedule.validate()?;
    let timeline = Timeline::from_schedule(schedule);
    let frames = march(p0, track, plan, &timeline, positivity, &mut |_, _| Ok(()))?;
    Ok(Trajectory::new(frames))
}

/// Solution with `A ≡ 0` and the given source: the majorant of every solve
/// with nonnegative damping and the same data.
pub fn heat_upper_solution(
    p0: &PhaseField,
    source: &SourceTrack,
    plan: &HeatPlan,
    schedule: &Schedule,
) -> Result<Trajectory<PhaseField>> {
    let track = CoefficientTrack::zero(*p0.grid()).with_source(source.clone());
    solve_linear(p0, &track, plan, schedule, Positivity::Strict)
}
