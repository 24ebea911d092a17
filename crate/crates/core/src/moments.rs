//! Velocity moments and the running time integral of the marginal.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{check_finite, GridSpec, LatticeField, PhaseField, Role, SpatialField};
use crate::heat::HeatPlan;
use crate::linear::{CoefficientTrack, SourceTrack};

/// Lattice weights `1`, `|v|`, `|v|²` and `v` times the velocity cell volume.
#[derive(Debug, Clone)]
pub(crate) struct MomentWeights {
    pub speed: Vec<f64>,
    pub speed_sq: Vec<f64>,
    pub velocity: Vec<[f64; 2]>,
    pub cell_v: f64,
    pub v_count: usize,
}

impl MomentWeights {
    pub fn new(grid: &GridSpec) -> Self {
        let n = grid.v_count();
        Self {
            speed: (0..n).map(|i| grid.speed(i)).collect(),
            speed_sq: (0..n)
                .map(|i| {
                    let v = grid.v_point(i);
                    v[0] * v[0] + v[1] * v[1]
                })
                .collect(),
            velocity: (0..n).map(|i| grid.v_point(i)).collect(),
            cell_v: grid.cell_volume_v(),
            v_count: n,
        }
    }

    pub fn marginal(&self, p: &[f64]) -> Vec<f64> {
        p.chunks_exact(self.v_count)
            .map(|row| row.iter().sum::<f64>() * self.cell_v)
            .collect()
    }

    pub fn weighted(&self, p: &[f64], w: &[f64]) -> Vec<f64> {
        p.chunks_exact(self.v_count)
            .map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() * self.cell_v)
            .collect()
    }

    /// `|∫ v p dv|` per spatial cell.
    pub fn vector_flux_norm(&self, p: &[f64]) -> Vec<f64> {
        p.chunks_exact(self.v_count)
            .map(|row| {
                let mut s = [0.0f64; 2];
                for (val, v) in row.iter().zip(&self.velocity) {
                    s[0] += val * v[0];
                    s[1] += val * v[1];
                }
                libm::sqrt(s[0] * s[0] + s[1] * s[1]) * self.cell_v
            })
            .collect()
    }
}

fn spatial(p: &PhaseField, values: Vec<f64>, role: Role) -> SpatialField {
    SpatialField::new(*p.grid(), values, p.time(), role).expect("finite moments of finite data")
}

/// `p̃(x) = ∫ p(x, v) dv`.
pub fn velocity_marginal(p: &PhaseField) -> Result<SpatialField> {
    check_finite(p.values())?;
    let w = MomentWeights::new(p.grid());
    Ok(spatial(p, w.marginal(p.values()), Role::PTilde))
}

/// `j(x) = ∫ |v| p(x, v) dv`.
pub fn speed_moment(p: &PhaseField) -> Result<SpatialField> {
    check_finite(p.values())?;
    let w = MomentWeights::new(p.grid());
    Ok(spatial(p, w.weighted(p.values(), &w.speed), Role::J))
}

/// `m(x) = ∫ |v|² p(x, v) dv`.
pub fn second_moment(p: &PhaseField) -> Result<SpatialField> {
    check_finite(p.values())?;
    let w = MomentWeights::new(p.grid());
    Ok(spatial(p, w.weighted(p.values(), &w.speed_sq), Role::M))
}

/// `|∫ v p(x, v) dv|`, the flux magnitude used by the vector mode.
pub fn vector_flux_norm(p: &PhaseField) -> Result<SpatialField> {
    check_finite(p.values())?;
    let w = MomentWeights::new(p.grid());
    Ok(spatial(p, w.vector_flux_norm(p.values()), Role::J))
}

/// Trapezoidal `a(t_n) = ∫_0^{t_n} p̃ ds` over a series sampled every `dt`.
pub fn accumulate_time_integral(series: &[SpatialField], dt: f64) -> Result<Vec<SpatialField>> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Parameter(format!("dt must be > 0, got {dt}")));
    }
    let Some(first) = series.first() else {
        return Ok(Vec::new());
    };
    let t0 = first.time();
    for (n, f) in series.iter().enumerate() {
        let expect = t0 + n as f64 * dt;
        if (f.time() - expect).abs() > 1e-9 * expect.abs().max(dt) {
            return Err(Error::Configuration(format!(
                "sample {n} is at t = {}, expected {expect}",
                f.time()
            )));
        }
        if f.values().len() != first.values().len() {
            return Err(Error::Shape("series entries differ in length".into()));
        }
        f.clone().with_role(Role::PTilde).check_sign()?;
    }
    let grid = *first.grid();
    let mut acc = vec![0.0; first.values().len()];
    let mut out = Vec::with_capacity(series.len());
    out.push(SpatialField::new(grid, acc.clone(), t0, Role::A)?);
    for w in series.windows(2) {
        for ((a, x), y) in acc.iter_mut().zip(w[0].values()).zip(w[1].values()) {
            *a += 0.5 * dt * (x + y);
        }
        out.push(SpatialField::new(grid, acc.clone(), w[1].time(), Role::A)?);
    }
    Ok(out)
}

/// `p̃`, `j` and `m` of one density sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub p_tilde: SpatialField,
    pub j: SpatialField,
    pub m: SpatialField,
    pub time: f64,
}

impl MomentSet {
    pub fn of(p: &PhaseField) -> Result<Self> {
        check_finite(p.values())?;
        let w = MomentWeights::new(p.grid());
        Ok(Self {
            p_tilde: spatial(p, w.marginal(p.values()), Role::PTilde),
            j: spatial(p, w.weighted(p.values(), &w.speed), Role::J),
            m: spatial(p, w.weighted(p.values(), &w.speed_sq), Role::M),
            time: p.time(),
        })
    }
}

/// Which integrated equation [`moment_residual`] tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentEquation {
    /// `∂t p̃ - σΔ_x p̃ + a p̃ = f̃`.
    Marginal,
    /// `∂t m - σΔ_x m + a m - 2σ dim_v p̃ = ∫|v|² f dv`.
    SecondMoment,
}

/// Crank-Nicolson residual of an integrated moment equation over consecutive
/// frames of `frames` (one frame per schedule node). Returns the sup-norm of
/// the residual on each interval.
///
/// The damping must be x-only (no activation); the creation term of the
/// second-moment equation is the summation-by-parts value `2σ dim_v p̃`.
pub fn moment_residual(
    equation: MomentEquation,
    frames: &[PhaseField],
    track: &CoefficientTrack,
    sigma: f64,
) -> Result<Vec<f64>> {
    if track.activation.is_some() {
        return Err(Error::Configuration(
            "moment residuals need an x-only coefficient".into(),
        ));
    }
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let grid = *first.grid();
    let w = MomentWeights::new(&grid);
    let plan = HeatPlan::spatial(grid, sigma)?;
    let moment = |p: &[f64]| match equation {
        MomentEquation::Marginal => w.marginal(p),
        MomentEquation::SecondMoment => w.weighted(p, &w.speed_sq),
    };
    let forcing = |n: usize, p: &[f64]| -> Vec<f64> {
        let mut out = match track.source.at(n) {
            Some(f) => moment(f),
            None => vec![0.0; grid.x_count()],
        };
        if equation == MomentEquation::SecondMoment {
            let creation = 2.0 * sigma * grid.dim_v as f64;
            for (o, pt) in out.iter_mut().zip(w.marginal(p)) {
                *o += creation * pt;
            }
        }
        out
    };
    let mut out = Vec::with_capacity(frames.len().saturating_sub(1));
    let mut prev = moment(first.values());
    let mut prev_lap = plan.laplacian(&prev)?;
    let mut prev_force = forcing(0, first.values());
    for (n, pair) in frames.windows(2).enumerate() {
        let dt = pair[1].time() - pair[0].time();
        if dt.is_nan() || dt <= 0.0 {
            return Err(Error::Configuration("frames must have increasing times".into()));
        }
        let next = moment(pair[1].values());
        let next_lap = plan.laplacian(&next)?;
        let next_force = forcing(n + 1, pair[1].values());
        let (a0, a1) = (track.damping.at(n), track.damping.at(n + 1));
        let mut worst = 0.0f64;
        for i in 0..next.len() {
            let r = (next[i] - prev[i]) / dt - 0.5 * sigma * (prev_lap[i] + next_lap[i])
                + 0.5 * (a0[i] * prev[i] + a1[i] * next[i])
                - 0.5 * (prev_force[i] + next_force[i]);
            worst = worst.max(r.abs());
        }
        out.push(worst);
        prev = next;
        prev_lap = next_lap;
        prev_force = next_force;
    }
    Ok(out)
}

/// Builds the `f̃` track matching `source` (used by marginal-equation checks).
pub fn marginal_source(source: &SourceTrack) -> Result<Option<Vec<SpatialField>>> {
    let fields: Vec<&PhaseField> = match source {
        SourceTrack::None => return Ok(None),
        SourceTrack::Steady(f) => vec![f],
        SourceTrack::Nodes(v) => v.iter().collect(),
    };
    fields
        .into_iter()
        .map(velocity_marginal)
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heat::{gaussian_rho, heat_step};
    use crate::linear::{solve_linear, Positivity, Schedule, SpatialTrack};
    use core::f64::consts::PI;

    #[test]
    fn zero_density_has_zero_moments() {
        let g = GridSpec::new(2, 2, 8, 8, 1.0, 1.0).unwrap();
        let m = MomentSet::of(&PhaseField::zeros(g, 0.0)).unwrap();
        for f in [&m.p_tilde, &m.j, &m.m] {
            assert!(f.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn separable_density_has_marginal_g() {
        let g = GridSpec::new(1, 1, 32, 256, 3.0, 6.0).unwrap();
        let rho = gaussian_rho(&g, 0.4, [0.5, 0.0]).unwrap();
        let gx: Vec<f64> = (0..g.x_count()).map(|i| 1.0 + g.x_point(i)[0].powi(2)).collect();
        let p = PhaseField::separable(g, 0.0, &gx, &rho.values).unwrap();
        let pt = velocity_marginal(&p).unwrap();
        for (a, b) in pt.values().iter().zip(&gx) {
            assert!((a - b).abs() < 1e-9 * b);
        }
    }

    #[test]
    fn single_velocity_cell_speed() {
        let g = GridSpec::new(1, 2, 8, 16, 1.0, 4.0).unwrap();
        let vc = g.v_count();
        let v_star = 3 * 16 + 13;
        let [v1, v2] = g.v_point(v_star);
        let mut values = vec![0.0; g.len()];
        for x in 0..g.x_count() {
            values[x * vc + v_star] = (x + 1) as f64 / g.cell_volume_v();
        }
        let p = PhaseField::new(g, values, 0.0).unwrap();
        let j = speed_moment(&p).unwrap();
        let speed = libm::sqrt(v1 * v1 + v2 * v2);
        for (x, v) in j.values().iter().enumerate() {
            assert!((v - (x + 1) as f64 * speed).abs() < 1e-12);
        }
    }

    #[test]
    fn second_moment_of_centred_gaussian() {
        // Oracle: ∫|v|² of an isotropic 2-d Gaussian with variance s² is 2s².
        let g = GridSpec::new(1, 2, 8, 128, 1.0, 6.0).unwrap();
        let s2 = 0.6;
        let p = PhaseField::from_fn(g, 0.0, |x, v| {
            (1.0 + 0.5 * libm::cos(PI * x[0])) / (2.0 * PI * s2) * libm::exp(-(v[0] * v[0] + v[1] * v[1]) / (2.0 * s2))
        });
        let ms = MomentSet::of(&p).unwrap();
        for (m, pt) in ms.m.values().iter().zip(ms.p_tilde.values()) {
            assert!((m - 2.0 * s2 * pt).abs() < 1e-9 * pt);
        }
        for ((j, m), pt) in ms.j.values().iter().zip(ms.m.values()).zip(ms.p_tilde.values()) {
            assert!(j * j <= pt * m * (1.0 + 1e-12));
        }
    }

    #[test]
    fn marginal_commutes_with_x_heat_flow() {
        let g = GridSpec::new(1, 1, 64, 64, 4.0, 4.0).unwrap();
        let p = PhaseField::from_fn(g, 0.0, |x, v| {
            libm::exp(-(x[0] - 1.0).powi(2) - 0.5 * v[0] * v[0]) * (1.0 + 0.3 * libm::sin(v[0]))
        });
        let px = HeatPlan::phase_x_only(g, 0.4).unwrap();
        let sx = HeatPlan::spatial(g, 0.4).unwrap();
        let a = velocity_marginal(&heat_step(&p, 0.3, &px).unwrap()).unwrap();
        let b = heat_step(&velocity_marginal(&p).unwrap(), 0.3, &sx).unwrap();
        let scale = b.max_abs();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn time_integral_closed_forms() {
        let g = GridSpec::new(1, 1, 8, 8, 1.0, 1.0).unwrap();
        let dt = 0.1;
        let constant: Vec<_> = (0..11)
            .map(|n| SpatialField::new(g, vec![2.5; 8], n as f64 * dt, Role::PTilde).unwrap())
            .collect();
        let a = accumulate_time_integral(&constant, dt).unwrap();
        assert_eq!(a[0].values()[0], 0.0);
        for f in &a {
            assert!((f.values()[3] - 2.5 * f.time()).abs() < 1e-14);
        }
        let ramp: Vec<_> = (0..11)
            .map(|n| {
                let t = n as f64 * dt;
                SpatialField::new(g, vec![t; 8], t, Role::PTilde).unwrap()
            })
            .collect();
        for f in accumulate_time_integral(&ramp, dt).unwrap() {
            assert!((f.values()[0] - 0.5 * f.time() * f.time()).abs() < 1e-14);
        }
    }

    #[test]
    fn misaligned_series_is_rejected() {
        let g = GridSpec::new(1, 1, 8, 8, 1.0, 1.0).unwrap();
        let s = [
            SpatialField::zeros(g, 0.0, Role::PTilde),
            SpatialField::zeros(g, 0.15, Role::PTilde),
        ];
        assert!(matches!(
            accumulate_time_integral(&s, 0.1),
            Err(Error::Configuration(_))
        ));
    }

    fn residual_run(dt: f64, equation: MomentEquation, with_source: bool) -> f64 {
        let g = GridSpec::new(1, 1, 64, 128, 5.0, 6.0).unwrap();
        let sigma = 0.1;
        let plan = HeatPlan::phase(g, sigma).unwrap();
        let p0 = PhaseField::from_fn(g, 0.0, |x, v| {
            libm::exp(-2.0 * (x[0] + 0.5).powi(2) - 2.0 * (v[0] - 1.5).powi(2))
        });
        let s = Schedule::new(0.4, dt, 1).unwrap();
        let a = SpatialField::from_fn(g, 0.0, Role::A, |x| 0.8 * libm::exp(-x[0] * x[0]));
        let f = PhaseField::from_fn(g, 0.0, |x, v| {
            0.3 * libm::exp(-2.0 * x[0] * x[0] - 2.0 * (v[0] - 1.0).powi(2))
        });
        let track = CoefficientTrack {
            damping: SpatialTrack::Steady(a),
            activation: None,
            source: if with_source {
                SourceTrack::Steady(f)
            } else {
                SourceTrack::None
            },
        };
        let traj = solve_linear(&p0, &track, &plan, &s, Positivity::Strict).unwrap();
        moment_residual(equation, &traj.frames, &track, sigma)
            .unwrap()
            .into_iter()
            .fold(0.0, f64::max)
    }

    #[test]
    fn integrated_equations_hold_to_second_order_without_source() {
        for eq in [MomentEquation::Marginal, MomentEquation::SecondMoment] {
            let (r1, r2) = (residual_run(0.02, eq, false), residual_run(0.01, eq, false));
            let order = libm::log2(r1 / r2);
            assert!((order - 2.0).abs() < 0.3, "{eq:?}: {r1} -> {r2}, order {order}");
        }
    }

    #[test]
    fn source_placement_is_first_order() {
        for eq in [MomentEquation::Marginal, MomentEquation::SecondMoment] {
            let (r1, r2) = (residual_run(0.02, eq, true), residual_run(0.01, eq, true));
            let order = libm::log2(r1 / r2);
            assert!((order - 1.0).abs() < 0.3, "{eq:?}: {r1} -> {r2}, order {order}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn density() -> impl Strategy<Value = PhaseField> {
            let g = GridSpec::new(1, 2, 8, 8, 1.0, 2.0).unwrap();
            proptest::collection::vec(0.0f64..4.0, g.len()).prop_map(move |v| PhaseField::new(g, v, 0.0).unwrap())
        }

        proptest! {
            #[test]
            fn moments_are_linear(p in density(), q in density(), a in -3.0f64..3.0) {
                let sum = PhaseField::new(*p.grid(),
                    p.values().iter().zip(q.values()).map(|(x, y)| a * x + y).collect(), 0.0).unwrap();
                let (ms, mp, mq) = (MomentSet::of(&sum).unwrap(), MomentSet::of(&p).unwrap(), MomentSet::of(&q).unwrap());
                for (s, (x, y)) in [(&ms.p_tilde, (&mp.p_tilde, &mq.p_tilde)), (&ms.j, (&mp.j, &mq.j)), (&ms.m, (&mp.m, &mq.m))] {
                    for i in 0..s.values().len() {
                        let e = a * x.values()[i] + y.values()[i];
                        prop_assert!((s.values()[i] - e).abs() <= 1e-12 * (1.0 + e.abs() + x.values()[i].abs() * a.abs()));
                    }
                }
            }

            #[test]
            fn cauchy_schwarz_and_triangle(p in density()) {
                let ms = MomentSet::of(&p).unwrap();
                let vec_j = vector_flux_norm(&p).unwrap();
                for i in 0..ms.j.values().len() {
                    let (j, pt, m) = (ms.j.values()[i], ms.p_tilde.values()[i], ms.m.values()[i]);
                    prop_assert!(j >= 0.0 && pt >= 0.0 && m >= 0.0);
                    prop_assert!(j * j <= pt * m * (1.0 + 1e-10));
                    prop_assert!(vec_j.values()[i] <= j * (1.0 + 1e-14));
                }
            }

            #[test]
            fn running_integral_is_nondecreasing(vals in proptest::collection::vec(0.0f64..5.0, 8 * 6)) {
                let g = GridSpec::new(1, 1, 8, 8, 1.0, 1.0).unwrap();
                let series: Vec<_> = vals.chunks(8).enumerate()
                    .map(|(n, c)| SpatialField::new(g, c.to_vec(), n as f64 * 0.2, Role::PTilde).unwrap())
                    .collect();
                let a = accumulate_time_integral(&series, 0.2).unwrap();
                for w in a.windows(2) {
                    for (x, y) in w[0].values().iter().zip(w[1].values()) {
                        prop_assert!(y >= x);
                    }
                }
            }
        }
    }
}
