//! Named analytic shapes for initial data and sources.
//!
//! Shapes are summed over the nearest periodic images along every axis, so
//! they are smooth across the box faces.

use serde::Deserialize;

use angio_core::{GridSpec, PhaseField, Role, SpatialField};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Recipe {
    /// `mass · N(center, variance · I)` over all axes of the target lattice.
    GaussianBump {
        center: Vec<f64>,
        variance: f64,
        mass: f64,
    },
    /// `mass`-normalized product of `(1 + cos(π(x − center)/L))^power` over
    /// all axes. A trigonometric polynomial, so it is exactly resolved when
    /// `power < n/2` and has almost no mass near the box faces.
    CosineBump {
        center: Vec<f64>,
        power: u32,
        mass: f64,
    },
    /// `k_inf` on `x1 ∈ [start, end]` (and `x2 ∈ band` in two dimensions),
    /// with `tanh` edges of the given width. Spatial fields only.
    PlateauRamp {
        k_inf: f64,
        width: f64,
        start: Option<f64>,
        end: Option<f64>,
        band: Option<[f64; 2]>,
    },
    Constant {
        value: f64,
    },
    Zero,
}

/// What a recipe is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Phase,
    Spatial,
}

const IMAGES: [f64; 3] = [-1.0, 0.0, 1.0];

fn axis_values(grid_n: usize, half: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
    (0..grid_n)
        .map(|i| {
            let x = GridSpec::axis_coord(i, grid_n, half);
            IMAGES.iter().map(|k| f(x + 2.0 * half * k)).sum()
        })
        .collect()
}

fn plateau_edges(start: f64, end: f64, width: f64) -> impl Fn(f64) -> f64 {
    move |x| 0.5 * (((x - start) / width).tanh() - ((x - end) / width).tanh())
}

impl Recipe {
    pub fn kind(&self) -> &'static str {
        match self {
            Recipe::GaussianBump { .. } => "gaussian_bump",
            Recipe::CosineBump { .. } => "cosine_bump",
            Recipe::PlateauRamp { .. } => "plateau_ramp",
            Recipe::Constant { .. } => "constant",
            Recipe::Zero => "zero",
        }
    }

    fn plateau_defaults(&self, grid: &GridSpec) -> Option<(f64, f64, f64, f64, [f64; 2])> {
        match self {
            Recipe::PlateauRamp {
                k_inf,
                width,
                start,
                end,
                band,
            } => {
                let l = grid.half_width_x;
                Some((
                    *k_inf,
                    *width,
                    start.unwrap_or(0.25 * l),
                    end.unwrap_or(1.5 * l),
                    band.unwrap_or([-0.5 * l, 0.5 * l]),
                ))
            }
            _ => None,
        }
    }

    /// Checks parameters against the lattice; `key` prefixes messages.
    pub fn validate(&self, grid: &GridSpec, target: Target, key: &str) -> Result<(), String> {
        let (halves, dims): (Vec<f64>, usize) = match target {
            Target::Phase => (grid.phase_half_widths(), grid.phase_dim()),
            Target::Spatial => (grid.spatial_half_widths(), grid.dim_x),
        };
        match self {
            Recipe::GaussianBump { center, variance, mass } => {
                if center.len() != dims {
                    return Err(format!("{key}.center needs {dims} components, got {}", center.len()));
                }
                for (i, (c, l)) in center.iter().zip(&halves).enumerate() {
                    if !(c.is_finite() && *c >= -l && *c < *l) {
                        return Err(format!("{key}.center[{i}] = {c} lies outside [-{l}, {l})"));
                    }
                }
                if !(variance.is_finite() && *variance > 0.0) {
                    return Err(format!("{key}.variance must be > 0, got {variance}"));
                }
                if !(mass.is_finite() && *mass >= 0.0) {
                    return Err(format!("{key}.mass must be >= 0, got {mass}"));
                }
            }
            Recipe::CosineBump { center, power, mass } => {
                if center.len() != dims {
                    return Err(format!("{key}.center needs {dims} components, got {}", center.len()));
                }
                for (i, (c, l)) in center.iter().zip(&halves).enumerate() {
                    if !(c.is_finite() && *c >= -l && *c < *l) {
                        return Err(format!("{key}.center[{i}] = {c} lies outside [-{l}, {l})"));
                    }
                }
                let n_min = match target {
                    Target::Phase => grid.n_x.min(grid.n_v),
                    Target::Spatial => grid.n_x,
                };
                if *power == 0 || 2 * *power as usize >= n_min {
                    return Err(format!("{key}.power must lie in [1, {}), got {power}", n_min / 2));
                }
                if !(mass.is_finite() && *mass >= 0.0) {
                    return Err(format!("{key}.mass must be >= 0, got {mass}"));
                }
            }
            Recipe::PlateauRamp { .. } => {
                if target == Target::Phase {
                    return Err(format!("{key}: plateau_ramp is only defined on the x lattice"));
                }
                let (k_inf, width, start, end, band) = self.plateau_defaults(grid).expect("plateau");
                let l = grid.half_width_x;
                if !(k_inf.is_finite() && k_inf >= 0.0) {
                    return Err(format!("{key}.k_inf must be >= 0, got {k_inf}"));
                }
                if !(width.is_finite() && width > 0.0) {
                    return Err(format!("{key}.width must be > 0, got {width}"));
                }
                if !(start.is_finite() && start >= -l && start < l) {
                    return Err(format!("{key}.start = {start} lies outside [-{l}, {l})"));
                }
                if !(end.is_finite() && end > start && end - start < 2.0 * l) {
                    return Err(format!(
                        "{key}.end must lie in ({start}, {}), got {end}",
                        start + 2.0 * l
                    ));
                }
                if grid.dim_x == 2 && !(band[0] >= -l && band[1] <= l && band[0] < band[1]) {
                    return Err(format!("{key}.band must be an interval inside [-{l}, {l}]"));
                }
            }
            Recipe::Constant { value } => {
                if !value.is_finite() {
                    return Err(format!("{key}.value must be finite"));
                }
            }
            Recipe::Zero => {}
        }
        Ok(())
    }

    /// Soft warnings: features narrower than a few lattice cells.
    pub fn resolution_warnings(&self, grid: &GridSpec, key: &str) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            Recipe::GaussianBump { variance, .. } => {
                let h = grid.h_x().max(grid.h_v());
                if variance.sqrt() < 2.0 * h {
                    out.push(format!(
                        "{key}: standard deviation {} is under two cells ({h}); spectral steps may undershoot",
                        variance.sqrt()
                    ));
                }
            }
            Recipe::PlateauRamp { width, .. } if *width < 6.0 * grid.h_x() => {
                out.push(format!(
                    "{key}: edge width {width} is under six cells ({}); spectral steps may undershoot",
                    grid.h_x()
                ));
            }
            _ => {}
        }
        out
    }

    /// Per-axis factors and the overall scale of a separable bump.
    fn bump_axes(&self, shape: &[usize], halves: &[f64]) -> Option<(Vec<Vec<f64>>, f64)> {
        match self {
            Recipe::GaussianBump { center, variance, mass } => {
                let norm = mass / (2.0 * std::f64::consts::PI * variance).powf(0.5 * shape.len() as f64);
                let axes = (0..shape.len())
                    .map(|a| {
                        let c = center[a];
                        axis_values(shape[a], halves[a], |x| (-(x - c) * (x - c) / (2.0 * variance)).exp())
                    })
                    .collect();
                Some((axes, norm))
            }
            Recipe::CosineBump { center, power, mass } => {
                let mut norm = *mass;
                let axes = (0..shape.len())
                    .map(|a| {
                        let (n, l, c) = (shape[a], halves[a], center[a]);
                        let h = 2.0 * l / n as f64;
                        let v: Vec<f64> = (0..n)
                            .map(|i| {
                                let x = GridSpec::axis_coord(i, n, l);
                                (1.0 + (std::f64::consts::PI * (x - c) / l).cos()).powi(*power as i32)
                            })
                            .collect();
                        // The lattice sum of a resolved trigonometric polynomial is its exact integral.
                        norm /= h * v.iter().sum::<f64>();
                        v
                    })
                    .collect();
                Some((axes, norm))
            }
            _ => None,
        }
    }

    pub fn phase(&self, grid: GridSpec) -> Result<PhaseField, crate::Error> {
        let field = match self {
            Recipe::GaussianBump { .. } | Recipe::CosineBump { .. } => {
                let (axes, norm) = self
                    .bump_axes(&grid.phase_shape(), &grid.phase_half_widths())
                    .expect("bump");
                let values = (0..grid.len())
                    .map(|i| {
                        grid.phase_multi_index(i)
                            .iter()
                            .enumerate()
                            .map(|(a, &k)| axes[a][k])
                            .product::<f64>()
                            * norm
                    })
                    .collect();
                PhaseField::new(grid, values, 0.0)?
            }
            Recipe::Constant { value } => PhaseField::new(grid, vec![*value; grid.len()], 0.0)?,
            Recipe::Zero => PhaseField::zeros(grid, 0.0),
            Recipe::PlateauRamp { .. } => {
                return Err(crate::Error::Config(
                    "plateau_ramp is only defined on the x lattice".into(),
                ))
            }
        };
        Ok(field)
    }

    pub fn spatial(&self, grid: GridSpec, role: Role) -> Result<SpatialField, crate::Error> {
        let l = grid.half_width_x;
        let n = grid.n_x;
        let field = match self {
            Recipe::GaussianBump { .. } | Recipe::CosineBump { .. } => {
                let (axes, norm) = self
                    .bump_axes(&vec![n; grid.dim_x], &grid.spatial_half_widths())
                    .expect("bump");
                let values = (0..grid.x_count())
                    .map(|i| {
                        grid.spatial_multi_index(i)
                            .iter()
                            .enumerate()
                            .map(|(a, &k)| axes[a][k])
                            .product::<f64>()
                            * norm
                    })
                    .collect();
                SpatialField::new(grid, values, 0.0, role)?
            }
            Recipe::PlateauRamp { .. } => {
                let (k_inf, width, start, end, band) = self.plateau_defaults(&grid).expect("plateau");
                let along = axis_values(n, l, plateau_edges(start, end, width));
                let across = axis_values(n, l, plateau_edges(band[0], band[1], width));
                let values = (0..grid.x_count())
                    .map(|i| match grid.dim_x {
                        1 => k_inf * along[i],
                        _ => k_inf * along[i / n] * across[i % n],
                    })
                    .collect();
                SpatialField::new(grid, values, 0.0, role)?
            }
            Recipe::Constant { value } => SpatialField::new(grid, vec![*value; grid.x_count()], 0.0, role)?,
            Recipe::Zero => SpatialField::zeros(grid, 0.0, role),
        };
        Ok(field)
    }
}
