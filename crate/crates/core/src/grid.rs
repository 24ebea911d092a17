//! Truncated periodic lattice in `(x, v)` and the fields that live on it.
//!
//! Each axis of half-width `L` carries `n` points `x_i = (i - n/2) h` with
//! `h = 2L/n`, so the lattice is symmetric under `x -> -x` modulo the period
//! and contains the origin. Phase-space values are stored x-major:
//! `index = x_flat * v_count + v_flat`, each flat index row-major over its axes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Relative size of the round-off band below zero that is clamped away.
pub const CLAMP_RELATIVE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dim_x: usize,
    pub dim_v: usize,
    pub n_x: usize,
    pub n_v: usize,
    pub half_width_x: f64,
    pub half_width_v: f64,
}

impl GridSpec {
    pub fn new(
        dim_x: usize,
        dim_v: usize,
        n_x: usize,
        n_v: usize,
        half_width_x: f64,
        half_width_v: f64,
    ) -> Result<Self> {
        let spec = Self {
            dim_x,
            dim_v,
            n_x,
            n_v,
            half_width_x,
            half_width_v,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, dim) in [("dim_x", self.dim_x), ("dim_v", self.dim_v)] {
            if !(1..=2).contains(&dim) {
                return Err(Error::Grid(format!("{name} must be 1 or 2, got {dim}")));
            }
        }
        for (name, n) in [("n_x", self.n_x), ("n_v", self.n_v)] {
            if n < 8 || !n.is_power_of_two() {
                return Err(Error::Grid(format!("{name} must be a power of two >= 8, got {n}")));
            }
        }
        for (name, l) in [("half_width_x", self.half_width_x), ("half_width_v", self.half_width_v)] {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Grid(format!("{name} must be finite and > 0, got {l}")));
            }
        }
        if self.cell_volume().is_nan() || self.cell_volume() <= 0.0 {
            return Err(Error::Grid("cell volume underflows to zero".into()));
        }
        Ok(())
    }

    pub fn h_x(&self) -> f64 {
        2.0 * self.half_width_x / self.n_x as f64
    }

    pub fn h_v(&self) -> f64 {
        2.0 * self.half_width_v / self.n_v as f64
    }

    pub fn x_count(&self) -> usize {
        self.n_x.pow(self.dim_x as u32)
    }

    pub fn v_count(&self) -> usize {
        self.n_v.pow(self.dim_v as u32)
    }

    /// Number of phase-space lattice points.
    pub fn len(&self) -> usize {
        self.x_count() * self.v_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume_x(&self) -> f64 {
        libm::pow(self.h_x(), self.dim_x as f64)
    }

    pub fn cell_volume_v(&self) -> f64 {
        libm::pow(self.h_v(), self.dim_v as f64)
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume_x() * self.cell_volume_v()
    }

    /// `dim_x + dim_v`, the dimension of the heat kernel in phase space.
    pub fn phase_dim(&self) -> usize {
        self.dim_x + self.dim_v
    }

    pub fn phase_box_volume(&self) -> f64 {
        self.spatial_box_volume() * libm::pow(2.0 * self.half_width_v, self.dim_v as f64)
    }

    pub fn spatial_box_volume(&self) -> f64 {
        libm::pow(2.0 * self.half_width_x, self.dim_x as f64)
    }

    /// Axis lengths of the phase lattice, x axes first.
    pub fn phase_shape(&self) -> Vec<usize> {
        let mut shape = vec![self.n_x; self.dim_x];
        shape.extend(core::iter::repeat_n(self.n_v, self.dim_v));
        shape
    }

    pub fn spatial_shape(&self) -> Vec<usize> {
        vec![self.n_x; self.dim_x]
    }

    /// Half-widths matching [`GridSpec::phase_shape`].
    pub fn phase_half_widths(&self) -> Vec<f64> {
        let mut w = vec![self.half_width_x; self.dim_x];
        w.extend(core::iter::repeat_n(self.half_width_v, self.dim_v));
        w
    }

    pub fn spatial_half_widths(&self) -> Vec<f64> {
        vec![self.half_width_x; self.dim_x]
    }

    /// Coordinate of point `i` on an axis with `n` points and half-width `l`.
    pub fn axis_coord(i: usize, n: usize, l: f64) -> f64 {
        (i as f64 - (n / 2) as f64) * (2.0 * l / n as f64)
    }

    /// Spatial point for a flat x index; unused trailing components are zero.
    pub fn x_point(&self, x_flat: usize) -> [f64; 2] {
        Self::point(x_flat, self.dim_x, self.n_x, self.half_width_x)
    }

    pub fn v_point(&self, v_flat: usize) -> [f64; 2] {
        Self::point(v_flat, self.dim_v, self.n_v, self.half_width_v)
    }

    fn point(flat: usize, dim: usize, n: usize, l: f64) -> [f64; 2] {
        match dim {
            1 => [Self::axis_coord(flat, n, l), 0.0],
            _ => [Self::axis_coord(flat / n, n, l), Self::axis_coord(flat % n, n, l)],
        }
    }

    /// Euclidean speed `|v|` at a flat v index.
    pub fn speed(&self, v_flat: usize) -> f64 {
        let v = self.v_point(v_flat);
        libm::sqrt(v[0] * v[0] + v[1] * v[1])
    }

    /// Per-axis indices of a phase-space flat index, x axes first.
    pub fn phase_multi_index(&self, flat: usize) -> Vec<usize> {
        let shape = self.phase_shape();
        unravel(flat, &shape)
    }

    /// Per-axis indices of a spatial flat index.
    pub fn spatial_multi_index(&self, flat: usize) -> Vec<usize> {
        unravel(flat, &self.spatial_shape())
    }
}

fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for (slot, &n) in idx.iter_mut().zip(shape).rev() {
        *slot = flat % n;
        flat /= n;
    }
    idx
}

/// Which lattice a field lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Phase,
    Spatial,
}

/// Physical meaning of a spatial field; drives its sign constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    C,
    CHat,
    CInf,
    PTilde,
    J,
    M,
    A,
    AlphaOfC,
    /// Unconstrained (differences, residuals).
    Signed,
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Role::C => "c",
            Role::CHat => "c_hat",
            Role::CInf => "c_inf",
            Role::PTilde => "p_tilde",
            Role::J => "j",
            Role::M => "m",
            Role::A => "a",
            Role::AlphaOfC => "alpha_of_c",
            Role::Signed => "signed",
        }
    }
}

/// Common access to lattice-valued fields.
pub trait LatticeField: Clone {
    fn grid(&self) -> &GridSpec;
    fn values(&self) -> &[f64];
    fn values_mut(&mut self) -> &mut [f64];
    fn time(&self) -> f64;
    fn set_time(&mut self, t: f64);
    fn domain(&self) -> Domain;

    fn cell_volume(&self) -> f64 {
        match self.domain() {
            Domain::Phase => self.grid().cell_volume(),
            Domain::Spatial => self.grid().cell_volume_x(),
        }
    }

    fn box_volume(&self) -> f64 {
        match self.domain() {
            Domain::Phase => self.grid().phase_box_volume(),
            Domain::Spatial => self.grid().spatial_box_volume(),
        }
    }

    fn multi_index(&self, flat: usize) -> Vec<usize> {
        match self.domain() {
            Domain::Phase => self.grid().phase_multi_index(flat),
            Domain::Spatial => self.grid().spatial_multi_index(flat),
        }
    }

    fn max_abs(&self) -> f64 {
        self.values().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Density sample on the x×v lattice at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    grid: GridSpec,
    values: Vec<f64>,
    time: f64,
}

impl PhaseField {
    pub fn new(grid: GridSpec, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "phase field needs {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self { grid, values, time })
    }

    pub fn zeros(grid: GridSpec, time: f64) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            time,
        }
    }

    pub fn from_fn(grid: GridSpec, time: f64, f: impl Fn([f64; 2], [f64; 2]) -> f64) -> Self {
        let vc = grid.v_count();
        let values = (0..grid.len())
            .map(|i| f(grid.x_point(i / vc), grid.v_point(i % vc)))
            .collect();
        Self { grid, values, time }
    }

    /// Separable product `g(x) ρ(v)`.
    pub fn separable(grid: GridSpec, time: f64, x_part: &[f64], v_part: &[f64]) -> Result<Self> {
        if x_part.len() != grid.x_count() || v_part.len() != grid.v_count() {
            return Err(Error::Shape("separable factors do not match the grid".into()));
        }
        let mut values = Vec::with_capacity(grid.len());
        for &g in x_part {
            values.extend(v_part.iter().map(|&r| g * r));
        }
        Self::new(grid, values, time)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Row of v-values at spatial cell `x_flat`.
    pub fn row(&self, x_flat: usize) -> &[f64] {
        let vc = self.grid.v_count();
        &self.values[x_flat * vc..(x_flat + 1) * vc]
    }
}

impl LatticeField for PhaseField {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    fn time(&self) -> f64 {
        self.time
    }
    fn set_time(&mut self, t: f64) {
        self.time = t;
    }
    fn domain(&self) -> Domain {
        Domain::Phase
    }
}

/// Scalar field on the x lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialField {
    grid: GridSpec,
    values: Vec<f64>,
    time: f64,
    role: Role,
}

impl SpatialField {
    pub fn new(grid: GridSpec, values: Vec<f64>, time: f64, role: Role) -> Result<Self> {
        if values.len() != grid.x_count() {
            return Err(Error::Shape(format!(
                "spatial field needs {} values, got {}",
                grid.x_count(),
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self {
            grid,
            values,
            time,
            role,
        })
    }

    pub fn zeros(grid: GridSpec, time: f64, role: Role) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.x_count()],
            time,
            role,
        }
    }

    pub fn from_fn(grid: GridSpec, time: f64, role: Role, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.x_count()).map(|i| f(grid.x_point(i))).collect();
        Self {
            grid,
            values,
            time,
            role,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Checks the role's sign constraint up to the round-off clamp.
    pub fn check_sign(&self) -> Result<()> {
        let clamp = clamp_threshold(&self.values);
        let bad = match self.role {
            Role::CHat => self
                .values
                .iter()
                .position(|&v| v > clamp)
                .map(|i| (i, "c_hat must be <= 0")),
            Role::Signed => None,
            _ => self
                .values
                .iter()
                .position(|&v| v < -clamp)
                .map(|i| (i, "field must be >= 0")),
        };
        match bad {
            Some((index, what)) => Err(Error::Sign {
                what,
                index,
                value: self.values[index],
            }),
            None => Ok(()),
        }
    }
}

impl LatticeField for SpatialField {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    fn time(&self) -> f64 {
        self.time
    }
    fn set_time(&mut self, t: f64) {
        self.time = t;
    }
    fn domain(&self) -> Domain {
        Domain::Spatial
    }
}

/// Time-stamped snapshots of one field.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<F> {
    pub frames: Vec<F>,
}

impl<F> Default for Trajectory<F> {
    fn default() -> Self {
        Self { frames: Vec::new() }
    }
}

impl<F: LatticeField> Trajectory<F> {
    pub fn new(frames: Vec<F>) -> Self {
        Self { frames }
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.time()).collect()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn first(&self) -> Option<&F> {
        self.frames.first()
    }

    pub fn last(&self) -> Option<&F> {
        self.frames.last()
    }

    pub fn push(&mut self, frame: F) {
        self.frames.push(frame);
    }

    pub fn iter(&self) -> core::slice::Iter<'_, F> {
        self.frames.iter()
    }

    /// Largest `max |value|` over all frames.
    pub fn max_abs(&self) -> f64 {
        self.frames.iter().fold(0.0, |m, f| m.max(f.max_abs()))
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// `ε_clamp` for a set of values: `1e-12 · max |value|`.
pub fn clamp_threshold(values: &[f64]) -> f64 {
    CLAMP_RELATIVE * values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Zeroes round-off negatives; anything below `-ε_clamp` is an error.
pub fn clamp_nonnegative(values: &mut [f64]) -> Result<()> {
    let clamp = clamp_threshold(values);
    for (index, v) in values.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -clamp {
                return Err(Error::Positivity {
                    index,
                    value: *v,
                    clamp,
                });
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// Total mass `Σ values · cellVolume`.
pub fn integrate_phase(field: &PhaseField) -> Result<f64> {
    integrate(field)
}

/// Integral of any lattice field with its cell-volume weight.
pub fn integrate<F: LatticeField>(field: &F) -> Result<f64> {
    check_finite(field.values())?;
    Ok(field.values().iter().sum::<f64>() * field.cell_volume())
}

/// Discrete `L^q` norm; `q = f64::INFINITY` gives `max |value|`.
pub fn lq_norm<F: LatticeField>(field: &F, q: f64) -> Result<f64> {
    lq_norm_values(field.values(), field.cell_volume(), q)
}

pub fn lq_norm_values(values: &[f64], cell_volume: f64, q: f64) -> Result<f64> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::Parameter(format!("norm exponent must be >= 1, got {q}")));
    }
    check_finite(values)?;
    if q == f64::INFINITY {
        return Ok(values.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    // Scale by the max to keep high powers in range.
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = if q == 1.0 {
        values.iter().map(|v| v.abs() / scale).sum()
    } else if q == 2.0 {
        values.iter().map(|v| (v / scale) * (v / scale)).sum()
    } else {
        values.iter().map(|v| libm::pow(v.abs() / scale, q)).sum()
    };
    Ok(scale * libm::pow(sum * cell_volume, 1.0 / q))
}

/// Fraction of `|mass|` sitting within `cells` points of any box face.
pub fn boundary_mass_fraction(field: &PhaseField, cells: usize) -> f64 {
    let grid = field.grid();
    let shape = grid.phase_shape();
    let mut edge = 0.0;
    let mut total = 0.0;
    for (flat, v) in field.values().iter().enumerate() {
        let m = v.abs();
        total += m;
        let near = unravel(flat, &shape)
            .iter()
            .zip(&shape)
            .any(|(&i, &n)| i < cells || i + cells >= n);
        if near {
            edge += m;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        edge / total
    }
}
