//! Independent reference computations for cross-validation.
//!
//! None of these share stepping code with [`crate::linear`] or
//! [`crate::heat`]: the finite-difference marcher has its own Laplacian, the
//! Duhamel quadrature builds its heat kernel as a real-space cosine sum, and
//! the Volterra construction carries its own Fourier multipliers. Only the
//! FFT primitive is reused, and only by the Volterra oracle.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::FftNd;
use crate::grid::{GridSpec, LatticeField, PhaseField, SpatialField, Trajectory};
use crate::linear::{CoefficientTrack, Positivity, Schedule, SourceTrack, SpatialTrack};
use crate::picard::{picard_coupled, picard_pure, Initialization, ModelParams, PicardOptions};

/// Per-axis geometry of the phase lattice.
struct Axes {
    shape: Vec<usize>,
    h: Vec<f64>,
    half: Vec<f64>,
    strides: Vec<usize>,
}

impl Axes {
    fn phase(grid: &GridSpec) -> Self {
        let shape = grid.phase_shape();
        let half = grid.phase_half_widths();
        let h = shape.iter().zip(&half).map(|(&n, &l)| 2.0 * l / n as f64).collect();
        let mut strides = vec![1; shape.len()];
        for a in (0..shape.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        Self {
            shape,
            h,
            half,
            strides,
        }
    }

    fn coord(&self, flat: usize, axis: usize) -> usize {
        (flat / self.strides[axis]) % self.shape[axis]
    }
}

/// `A(x, v) = damping(x) - rate(x) profile(v)` at node `n`.
fn coefficient_at(track: &CoefficientTrack, grid: &GridSpec, n: usize) -> Vec<f64> {
    let nv = grid.v_count();
    let damping = track.damping.at(n);
    let mut out = Vec::with_capacity(grid.len());
    for (ix, d) in damping.iter().enumerate() {
        for iv in 0..nv {
            let act = track
                .activation
                .as_ref()
                .map_or(0.0, |a| a.rate.at(n)[ix] * a.profile[iv]);
            out.push(d - act);
        }
    }
    out
}

fn source_at(track: &CoefficientTrack, grid: &GridSpec, n: usize) -> Vec<f64> {
    track
        .source
        .at(n)
        .map_or_else(|| vec![0.0; grid.len()], <[f64]>::to_vec)
}

/// Largest stable forward-Euler step, with a 0.9 safety factor.
pub fn fd_stability_limit(grid: &GridSpec, sigma: f64) -> f64 {
    let axes = Axes::phase(grid);
    let inv: f64 = axes.h.iter().map(|h| 1.0 / (h * h)).sum();
    0.9 / (2.0 * sigma * inv)
}

/// Forward Euler with a second-order central Laplacian and periodic wrap.
///
/// Each schedule step is split into `ceil(step / fine_dt)` equal substeps;
/// coefficients are interpolated linearly between schedule nodes. Frames are
/// returned at the schedule's saved nodes. Signed data are allowed.
pub fn fd_reference(
    p0: &PhaseField,
    track: &CoefficientTrack,
    sigma: f64,
    schedule: &Schedule,
    fine_dt: f64,
) -> Result<Trajectory<PhaseField>> {
    schedule.validate()?;
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Parameter(format!("sigma must be >= 0, got {sigma}")));
    }
    let grid = *p0.grid();
    let limit = fd_stability_limit(&grid, sigma);
    if !(fine_dt.is_finite() && fine_dt > 0.0) || fine_dt > limit {
        return Err(Error::Stability { dt: fine_dt, limit });
    }
    let steps = schedule.steps();
    track.validate(&grid, &|n| schedule.node_time(n), steps, Positivity::NonStrict)?;
    let step = schedule.step();
    let sub = libm::ceil(step / fine_dt - 1e-9).max(1.0) as usize;
    let dt = step / sub as f64;
    let axes = Axes::phase(&grid);
    let inv_h2: Vec<f64> = axes.h.iter().map(|h| 1.0 / (h * h)).collect();

    let mut p = p0.values().to_vec();
    let mut lap = vec![0.0; p.len()];
    let mut frames = vec![PhaseField::new(grid, p.clone(), schedule.node_time(0))?];
    let (mut a0, mut f0) = (coefficient_at(track, &grid, 0), source_at(track, &grid, 0));
    for n in 0..steps {
        let (a1, f1) = (coefficient_at(track, &grid, n + 1), source_at(track, &grid, n + 1));
        for s in 0..sub {
            let th = s as f64 / sub as f64;
            lap.iter_mut().for_each(|v| *v = 0.0);
            for (axis, &w) in inv_h2.iter().enumerate() {
                let (n_ax, stride) = (axes.shape[axis], axes.strides[axis]);
                for i in 0..p.len() {
                    let c = axes.coord(i, axis);
                    let up = if c + 1 == n_ax { i - c * stride } else { i + stride };
                    let down = if c == 0 { i + (n_ax - 1) * stride } else { i - stride };
                    lap[i] += w * (p[up] - 2.0 * p[i] + p[down]);
                }
            }
            for i in 0..p.len() {
                let a = (1.0 - th) * a0[i] + th * a1[i];
                let f = (1.0 - th) * f0[i] + th * f1[i];
                p[i] += dt * (sigma * lap[i] - a * p[i] + f);
            }
        }
        if schedule.is_saved(n + 1) {
            frames.push(PhaseField::new(grid, p.clone(), schedule.node_time(n + 1))?);
        }
        a0 = a1;
        f0 = f1;
    }
    Ok(Trajectory::new(frames))
}

/// One-dimensional band-limited periodic heat kernel
/// `K[j] = n⁻¹ Σ_m exp(-D k_m² τ) cos(2π m j / n)`, `k_m = π m / L`.
fn heat_kernel_1d(n: usize, half: f64, diffusivity: f64, tau: f64) -> Vec<f64> {
    let lo = -((n / 2) as i64);
    (0..n)
        .map(|j| {
            let mut s = 0.0;
            for m in lo..lo + n as i64 {
                let k = PI * m as f64 / half;
                s += libm::exp(-diffusivity * k * k * tau) * libm::cos(2.0 * PI * (m * j as i64) as f64 / n as f64);
            }
            s / n as f64
        })
        .collect()
}

/// Separable convolution with per-axis kernels.
fn convolve(axes: &Axes, kernels: &[Vec<f64>], input: &[f64]) -> Vec<f64> {
    let mut data = input.to_vec();
    let mut line = Vec::new();
    let mut out_line = Vec::new();
    for (axis, k) in kernels.iter().enumerate() {
        let (n, stride) = (axes.shape[axis], axes.strides[axis]);
        for base in 0..data.len() {
            if axes.coord(base, axis) != 0 {
                continue;
            }
            line.clear();
            line.extend((0..n).map(|c| data[base + c * stride]));
            out_line.clear();
            out_line.extend((0..n).map(|c| (0..n).map(|c2| k[(c + n - c2) % n] * line[c2]).sum::<f64>()));
            for (c, v) in out_line.iter().enumerate() {
                data[base + c * stride] = *v;
            }
        }
    }
    data
}

/// Literal trapezoid quadrature of the Duhamel formula
/// `p(t) = G(t) * p0 + ∫₀ᵗ G(t - s) * (f - A p)(s) ds`.
///
/// The endpoint term at `s = t` contains `p(t)` itself; that fixed point is
/// resolved exactly by a pointwise division. Cost grows with `steps²`.
pub fn duhamel_reference(
    p0: &PhaseField,
    track: &CoefficientTrack,
    sigma: f64,
    schedule: &Schedule,
) -> Result<Trajectory<PhaseField>> {
    schedule.validate()?;
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Parameter(format!("sigma must be >= 0, got {sigma}")));
    }
    let grid = *p0.grid();
    let steps = schedule.steps();
    track.validate(&grid, &|n| schedule.node_time(n), steps, Positivity::NonStrict)?;
    let dt = schedule.step();
    let axes = Axes::phase(&grid);
    let kernels: Vec<Vec<Vec<f64>>> = (0..=steps)
        .map(|lag| {
            (0..axes.shape.len())
                .map(|a| heat_kernel_1d(axes.shape[a], axes.half[a], sigma, lag as f64 * dt))
                .collect()
        })
        .collect();

    let mut frames = vec![PhaseField::new(grid, p0.values().to_vec(), schedule.node_time(0))?];
    let a0 = coefficient_at(track, &grid, 0);
    let f0 = source_at(track, &grid, 0);
    let mut q: Vec<Vec<f64>> = vec![(0..grid.len()).map(|i| f0[i] - a0[i] * p0.values()[i]).collect()];
    for n in 1..=steps {
        let mut rhs = convolve(&axes, &kernels[n], p0.values());
        for (k, qk) in q.iter().enumerate() {
            let w = if k == 0 { 0.5 * dt } else { dt };
            let g = convolve(&axes, &kernels[n - k], qk);
            rhs.iter_mut().zip(&g).for_each(|(r, v)| *r += w * v);
        }
        let (a, f) = (coefficient_at(track, &grid, n), source_at(track, &grid, n));
        let mut p = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let den = 1.0 + 0.5 * dt * a[i];
            if den <= 0.0 {
                return Err(Error::Stability {
                    dt,
                    limit: 2.0 / a[i].abs(),
                });
            }
            p.push((rhs[i] + 0.5 * dt * f[i]) / den);
        }
        q.push((0..grid.len()).map(|i| f[i] - a[i] * p[i]).collect());
        if schedule.is_saved(n) {
            frames.push(PhaseField::new(grid, p, schedule.node_time(n))?);
        }
    }
    Ok(Trajectory::new(frames))
}

/// Fitted Gaussian envelope `Γ <= C e^{C t} t^{-n/2} exp(-γ |z - z'|² / t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeFit {
    pub c: f64,
    pub gamma: f64,
    /// Every `(γ, C)` pair tried; the reported pair has the smallest `C`.
    pub candidates: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct VolterraSolution {
    /// `Γ(t, ·; 0, z')`.
    pub kernel: PhaseField,
    /// `G(t) δ_{z'}` with the same delta.
    pub heat: PhaseField,
    pub sweeps: usize,
    /// `Γ(t, z'; 0, z')` after each sweep, starting from the heat kernel.
    pub source_trace: Vec<f64>,
    pub envelope: EnvelopeFit,
}

/// Largest cell count the Volterra oracle accepts.
pub const VOLTERRA_MAX_CELLS: usize = 32 * 32;
const VOLTERRA_TOL: f64 = 1e-10;
const VOLTERRA_MAX_SWEEPS: usize = 100;

/// Fundamental solution of `∂t Γ - σΔΓ + a Γ = 0` from a single-cell source,
/// built by Jacobi sweeps on `Γ = G - ∫ G a Γ` with trapezoid weights on
/// `steps` uniform intervals of `[0, t]`.
///
/// The source is the discrete delta `1 / cell_volume` at `source_index`.
/// `a` is sampled at the `steps + 1` nodes (or steady). Memory grows as
/// `steps · cells`, so this is meant for tiny lattices.
pub fn volterra_fundamental(
    a: &SpatialTrack,
    sigma: f64,
    grid: &GridSpec,
    t: f64,
    steps: usize,
    source_index: usize,
) -> Result<VolterraSolution> {
    grid.validate()?;
    if grid.len() > VOLTERRA_MAX_CELLS || grid.n_x > 32 || grid.n_v > 32 {
        return Err(Error::Configuration(format!(
            "Volterra oracle is limited to {VOLTERRA_MAX_CELLS} cells and 32 points per axis"
        )));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Parameter(format!("sigma must be > 0, got {sigma}")));
    }
    if !(t.is_finite() && t > 0.0) || steps == 0 {
        return Err(Error::Parameter("need t > 0 and steps >= 1".into()));
    }
    if source_index >= grid.len() {
        return Err(Error::Parameter(format!("source index {source_index} out of range")));
    }
    let nodes: &[SpatialField] = match a {
        SpatialTrack::Steady(f) => core::slice::from_ref(f),
        SpatialTrack::Nodes(v) => {
            if v.len() < steps + 1 {
                return Err(Error::Configuration(format!(
                    "a has {} samples, need {}",
                    v.len(),
                    steps + 1
                )));
            }
            v
        }
    };
    for f in nodes {
        if f.values().len() != grid.x_count() {
            return Err(Error::Shape("a does not live on the x lattice".into()));
        }
        crate::grid::check_finite(f.values())?;
    }
    let a_row = |n: usize| nodes[n.min(nodes.len() - 1)].values();

    let dt = t / steps as f64;
    let axes = Axes::phase(grid);
    let len = grid.len();
    let nv = grid.v_count();
    let fft = FftNd::new(&axes.shape);
    let k2: Vec<f64> = (0..len)
        .map(|i| {
            (0..axes.shape.len())
                .map(|ax| {
                    let (n, c) = (axes.shape[ax] as i64, axes.coord(i, ax) as i64);
                    let m = if c < n / 2 { c } else { c - n };
                    let k = PI * m as f64 / axes.half[ax];
                    k * k
                })
                .sum()
        })
        .collect();
    let step_mult: Vec<f64> = k2.iter().map(|k| libm::exp(-sigma * k * dt)).collect();

    let mut delta_hat = vec![Complex64::new(0.0, 0.0); len];
    delta_hat[source_index] = Complex64::new(1.0 / grid.cell_volume(), 0.0);
    fft.forward(&mut delta_hat);
    let inv_len = 1.0 / len as f64;
    let mut heat_nodes: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for n in 0..=steps {
        let tn = n as f64 * dt;
        for i in 0..len {
            buf[i] = delta_hat[i] * libm::exp(-sigma * k2[i] * tn);
        }
        fft.inverse(&mut buf);
        heat_nodes.push(buf.iter().map(|z| z.re * inv_len).collect());
    }

    let mut gamma = heat_nodes.clone();
    let mut trace = vec![gamma[steps][source_index]];
    let mut run = vec![Complex64::new(0.0, 0.0); len];
    let mut sweeps = 0;
    loop {
        if sweeps == VOLTERRA_MAX_SWEEPS {
            return Err(Error::Oracle(format!(
                "Volterra iteration did not reach {VOLTERRA_TOL} in {VOLTERRA_MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        let (mut change, mut scale) = (0.0f64, 0.0f64);
        for n in 0..=steps {
            let row = a_row(n);
            for i in 0..len {
                buf[i] = Complex64::new(row[i / nv] * gamma[n][i], 0.0);
            }
            fft.forward(&mut buf);
            if n == 0 {
                for i in 0..len {
                    run[i] = buf[i] * (0.5 * dt);
                }
                continue;
            }
            for i in 0..len {
                run[i] = run[i] * step_mult[i] + buf[i] * dt;
                buf[i] = run[i] - buf[i] * (0.5 * dt);
            }
            fft.inverse(&mut buf);
            for i in 0..len {
                let new = heat_nodes[n][i] - buf[i].re * inv_len;
                change = change.max((new - gamma[n][i]).abs());
                scale = scale.max(new.abs());
                gamma[n][i] = new;
            }
        }
        trace.push(gamma[steps][source_index]);
        if change <= VOLTERRA_TOL * scale {
            break;
        }
    }

    let envelope = fit_envelope(grid, &axes, &gamma, dt, source_index, sigma)?;
    let heat = PhaseField::new(*grid, heat_nodes.swap_remove(steps), t)?;
    let kernel = PhaseField::new(*grid, gamma.swap_remove(steps), t)?;
    Ok(VolterraSolution {
        kernel,
        heat,
        sweeps,
        source_trace: trace,
        envelope,
    })
}

/// Smallest `C >= 0` with `C e^{C t} >= m`.
fn solve_c(m: f64, t: f64) -> f64 {
    if m <= 0.0 {
        return 0.0;
    }
    let g = |c: f64| c * libm::exp(c * t);
    let (mut lo, mut hi) = (0.0, m.max(1.0));
    while g(hi) < m {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < m {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Fits the envelope on nodes with `t_n >= t / 5`, where the lattice delta
/// has spread over several cells.
fn fit_envelope(
    grid: &GridSpec,
    axes: &Axes,
    gamma: &[Vec<f64>],
    dt: f64,
    source: usize,
    sigma: f64,
) -> Result<EnvelopeFit> {
    let steps = gamma.len() - 1;
    let t_end = steps as f64 * dt;
    let dim = grid.phase_dim() as f64;
    let r2: Vec<f64> = (0..grid.len())
        .map(|i| {
            (0..axes.shape.len())
                .map(|ax| {
                    let n = axes.shape[ax];
                    let d = (axes.coord(i, ax) + n - axes.coord(source, ax)) % n;
                    let d = d.min(n - d) as f64 * axes.h[ax];
                    d * d
                })
                .sum()
        })
        .collect();
    let mut candidates = Vec::new();
    for theta in [1.0, 0.9, 0.75, 0.5, 0.25] {
        let g = theta / (4.0 * sigma);
        let mut c = 0.0f64;
        for (n, row) in gamma.iter().enumerate() {
            let tn = n as f64 * dt;
            if tn < 0.2 * t_end {
                continue;
            }
            let weight = libm::pow(tn, 0.5 * dim);
            let m = row
                .iter()
                .zip(&r2)
                .map(|(v, r)| v * weight * libm::exp(g * r / tn))
                .fold(0.0f64, f64::max);
            c = c.max(solve_c(m, tn));
        }
        if !c.is_finite() {
            return Err(Error::Oracle("envelope constant overflowed".into()));
        }
        candidates.push((g, c));
    }
    let &(gamma, c) = candidates
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty candidate list");
    Ok(EnvelopeFit { c, gamma, candidates })
}

/// Which problem a uniqueness probe runs.
#[derive(Debug, Clone)]
pub enum ProbeProblem {
    Pure { source: SourceTrack },
    Coupled { c0: SpatialField },
}

#[derive(Debug, Clone)]
pub struct ProbeScenario {
    pub p0: PhaseField,
    pub problem: ProbeProblem,
    pub params: ModelParams,
    pub schedule: Schedule,
}

fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        num = num.max((x - y).abs());
        den = den.max(x.abs()).max(y.abs());
    }
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Runs the driver from two initializations and returns the largest
/// relative sup-norm gap over saved times of `p` (and `c` when coupled).
pub fn uniqueness_probe(
    scenario: &ProbeScenario,
    seed_a: Initialization,
    seed_b: Initialization,
    tol: f64,
) -> Result<f64> {
    type Frames = Vec<Vec<f64>>;
    let run = |init| -> Result<(Frames, Frames)> {
        let opts = PicardOptions {
            tol,
            init: Some(init),
            ..PicardOptions::default()
        };
        let (p, c, converged) = match &scenario.problem {
            ProbeProblem::Pure { source } => {
                let s = picard_pure(&scenario.p0, source, &scenario.params, &scenario.schedule, &opts)?;
                (s.p, Trajectory::new(Vec::new()), s.diagnostics.converged())
            }
            ProbeProblem::Coupled { c0 } => {
                let s = picard_coupled(&scenario.p0, c0, &scenario.params, &scenario.schedule, &opts)?;
                (s.p, s.c, s.diagnostics.converged())
            }
        };
        if !converged {
            return Err(Error::Oracle(format!("{init:?} initialization did not converge")));
        }
        Ok((
            p.iter().map(|f| f.values().to_vec()).collect(),
            c.iter().map(|f| f.values().to_vec()).collect(),
        ))
    };
    let (pa, ca) = run(seed_a)?;
    let (pb, cb) = run(seed_b)?;
    let mut dev = 0.0f64;
    for (x, y) in pa.iter().zip(&pb).chain(ca.iter().zip(&cb)) {
        dev = dev.max(relative_gap(x, y));
    }
    Ok(dev)
}
