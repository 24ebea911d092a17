//! Spectral heat flow on the periodic box and the Gaussian velocity profile.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::FftNd;
use crate::grid::{check_finite, Domain, GridSpec, LatticeField};

/// Heat semigroup `e^{τ D Δ}` for one lattice and one diffusivity.
///
/// Multipliers `exp(-D |k|² τ)` with `k_i = π m_i / L_i` are exact for
/// trigonometric data, so the flow is mass-exact and unconditionally stable.
pub struct HeatPlan {
    grid: GridSpec,
    domain: Domain,
    diffusivity: f64,
    fft: FftNd,
    /// `Σ D_i k_i²` per Fourier index; `D_i` is zero on frozen axes.
    weighted_k2: Vec<f64>,
    /// `|k|²` per Fourier index, independent of the diffusivity.
    k2: Vec<f64>,
    cache: BTreeMap<u64, Vec<f64>>,
}

impl core::fmt::Debug for HeatPlan {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("HeatPlan")
            .field("grid", &self.grid)
            .field("domain", &self.domain)
            .field("diffusivity", &self.diffusivity)
            .field("cached_taus", &self.cache.len())
            .finish()
    }
}

impl HeatPlan {
    /// Flow in all `(x, v)` directions with diffusivity `sigma`.
    pub fn phase(grid: GridSpec, sigma: f64) -> Result<Self> {
        let mask = vec![true; grid.phase_dim()];
        Self::build(grid, Domain::Phase, sigma, &mask)
    }

    /// Flow in `x` only, acting on phase-space fields.
    pub fn phase_x_only(grid: GridSpec, sigma: f64) -> Result<Self> {
        let mut mask = vec![true; grid.dim_x];
        mask.extend(core::iter::repeat_n(false, grid.dim_v));
        Self::build(grid, Domain::Phase, sigma, &mask)
    }

    /// Flow on the spatial lattice with diffusivity `d`.
    pub fn spatial(grid: GridSpec, d: f64) -> Result<Self> {
        let mask = vec![true; grid.dim_x];
        Self::build(grid, Domain::Spatial, d, &mask)
    }

    fn build(grid: GridSpec, domain: Domain, diffusivity: f64, mask: &[bool]) -> Result<Self> {
        grid.validate()?;
        if !(diffusivity.is_finite() && diffusivity >= 0.0) {
            return Err(Error::Parameter(format!(
                "diffusivity must be finite and >= 0, got {diffusivity}"
            )));
        }
        let (shape, widths) = match domain {
            Domain::Phase => (grid.phase_shape(), grid.phase_half_widths()),
            Domain::Spatial => (grid.spatial_shape(), grid.spatial_half_widths()),
        };
        let fft = FftNd::new(&shape);
        let len = fft.len();
        let mut weighted_k2 = vec![0.0; len];
        let mut k2 = vec![0.0; len];
        let mut idx = vec![0usize; shape.len()];
        for flat in 0..len {
            let mut rem = flat;
            for (slot, &n) in idx.iter_mut().zip(&shape).rev() {
                *slot = rem % n;
                rem /= n;
            }
            for a in 0..shape.len() {
                let n = shape[a];
                let m = if idx[a] < n / 2 {
                    idx[a] as f64
                } else {
                    idx[a] as f64 - n as f64
                };
                let k = PI * m / widths[a];
                k2[flat] += k * k;
                if mask[a] {
                    weighted_k2[flat] += diffusivity * k * k;
                }
            }
        }
        Ok(Self {
            grid,
            domain,
            diffusivity,
            fft,
            weighted_k2,
            k2,
            cache: BTreeMap::new(),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn diffusivity(&self) -> f64 {
        self.diffusivity
    }

    pub fn len(&self) -> usize {
        self.fft.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Precomputes the multipliers for `tau`; later steps of that length reuse them.
    pub fn cache_tau(&mut self, tau: f64) -> Result<()> {
        check_tau(tau)?;
        if !self.cache.contains_key(&tau.to_bits()) {
            let m = self.multipliers(tau);
            self.cache.insert(tau.to_bits(), m);
        }
        Ok(())
    }

    pub fn multipliers(&self, tau: f64) -> Vec<f64> {
        self.weighted_k2
            .iter()
            .map(|&w| if w == 0.0 { 1.0 } else { libm::exp(-w * tau) })
            .collect()
    }

    fn scratch(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.len()]
    }

    /// Applies the flow for `tau` in place, using `scratch` as the spectral buffer.
    pub(crate) fn apply_in_place(&self, values: &mut [f64], tau: f64, scratch: &mut Vec<Complex64>) -> Result<()> {
        check_tau(tau)?;
        if values.len() != self.len() {
            return Err(Error::Shape(format!(
                "plan has {} points, field has {}",
                self.len(),
                values.len()
            )));
        }
        if tau == 0.0 {
            return Ok(());
        }
        scratch.clear();
        scratch.extend(values.iter().map(|&v| Complex64::new(v, 0.0)));
        self.fft.forward(scratch);
        let scale = 1.0 / self.len() as f64;
        match self.cache.get(&tau.to_bits()) {
            Some(m) => {
                for (z, &g) in scratch.iter_mut().zip(m) {
                    *z *= g * scale;
                }
            }
            None => {
                for (z, &w) in scratch.iter_mut().zip(&self.weighted_k2) {
                    let g = if w == 0.0 { 1.0 } else { libm::exp(-w * tau) };
                    *z *= g * scale;
                }
            }
        }
        self.fft.inverse(scratch);
        for (v, z) in values.iter_mut().zip(scratch.iter()) {
            *v = z.re;
        }
        Ok(())
    }

    fn check_field<F: LatticeField>(&self, field: &F) -> Result<()> {
        if field.domain() != self.domain {
            return Err(Error::Shape("field and plan live on different lattices".into()));
        }
        let (a, b) = (field.grid(), &self.grid);
        let same = match self.domain {
            Domain::Phase => a == b,
            Domain::Spatial => a.dim_x == b.dim_x && a.n_x == b.n_x && a.half_width_x == b.half_width_x,
        };
        if !same {
            return Err(Error::Shape("field grid does not match the plan grid".into()));
        }
        Ok(())
    }

    /// Spectral Laplacian `Σ_i ∂²_i` over every axis of the plan's lattice.
    pub fn laplacian(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.spectral_filter(values, |k2| -k2)
    }

    /// `∫ |∇u|²` by Parseval: `cellVolume / N · Σ |k|² |û|²`.
    pub fn gradient_norm_sq(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.len() {
            return Err(Error::Shape("gradient input has the wrong length".into()));
        }
        check_finite(values)?;
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut buf);
        let sum: f64 = buf.iter().zip(&self.k2).map(|(z, &k2)| k2 * z.norm_sqr()).sum();
        let cell = match self.domain {
            Domain::Phase => self.grid.cell_volume(),
            Domain::Spatial => self.grid.cell_volume_x(),
        };
        Ok(sum * cell / self.len() as f64)
    }

    fn spectral_filter(&self, values: &[f64], g: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        if values.len() != self.len() {
            return Err(Error::Shape("filter input has the wrong length".into()));
        }
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut buf);
        let scale = 1.0 / self.len() as f64;
        for (z, &k2) in buf.iter_mut().zip(&self.k2) {
            *z *= g(k2) * scale;
        }
        self.fft.inverse(&mut buf);
        Ok(buf.iter().map(|z| z.re).collect())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::Parameter(format!("heat step needs tau >= 0, got {tau}")));
    }
    Ok(())
}

/// `G(τ) * field` on the plan's lattice.
pub fn heat_step<F: LatticeField>(field: &F, tau: f64, plan: &HeatPlan) -> Result<F> {
    plan.check_field(field)?;
    check_finite(field.values())?;
    let mut out = field.clone();
    let mut scratch = plan.scratch();
    plan.apply_in_place(out.values_mut(), tau, &mut scratch)?;
    out.set_time(field.time() + tau);
    Ok(out)
}

/// Sampled `ρ_ε(v) = (πε)^{-N/2} exp(-|v - v0|²/ε)` with `N = dim_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityProfile {
    pub values: Vec<f64>,
    pub epsilon: f64,
    pub v0: [f64; 2],
    /// `(πε)^{-N/2}`, the continuum sup.
    pub sup_analytic: f64,
    pub discrete_max: f64,
    pub discrete_mass: f64,
}

pub fn gaussian_rho(grid: &GridSpec, epsilon: f64, v0: [f64; 2]) -> Result<VelocityProfile> {
    grid.validate()?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be > 0, got {epsilon}")));
    }
    let l = grid.half_width_v;
    for &c in &v0[..grid.dim_v] {
        if !(c.is_finite() && (-l..l).contains(&c)) {
            return Err(Error::Parameter(format!(
                "v0 component {c} lies outside the velocity box [-{l}, {l})"
            )));
        }
    }
    let cells = (2.0 * libm::sqrt(epsilon) / grid.h_v()) as usize;
    if cells < 4 {
        return Err(Error::Resolution { cells });
    }
    let n = grid.dim_v as f64;
    let sup_analytic = libm::pow(PI * epsilon, -n / 2.0);
    let values: Vec<f64> = (0..grid.v_count())
        .map(|i| {
            let v = grid.v_point(i);
            let r2 = (0..grid.dim_v).map(|a| (v[a] - v0[a]) * (v[a] - v0[a])).sum::<f64>();
            sup_analytic * libm::exp(-r2 / epsilon)
        })
        .collect();
    let discrete_max = values.iter().fold(0.0f64, |m, &v| m.max(v));
    let discrete_mass = values.iter().sum::<f64>() * grid.cell_volume_v();
    Ok(VelocityProfile {
        values,
        epsilon,
        v0,
        sup_analytic,
        discrete_max,
        discrete_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{lq_norm, PhaseField, Role, SpatialField};

    fn grid() -> GridSpec {
        GridSpec::new(1, 1, 64, 64, 4.0, 4.0).unwrap()
    }

    /// 1-d Gaussian density summed over 3 periodic images each side.
    fn periodized(x: f64, c: f64, var: f64, l: f64) -> f64 {
        (-3..=3)
            .map(|k| {
                let y = x - c - 2.0 * l * k as f64;
                libm::exp(-y * y / (2.0 * var)) / libm::sqrt(2.0 * PI * var)
            })
            .sum()
    }

    #[test]
    fn constants_are_invariant() {
        let g = grid();
        let plan = HeatPlan::phase(g, 0.3).unwrap();
        let f = PhaseField::new(g, vec![2.5; g.len()], 0.0).unwrap();
        let out = heat_step(&f, 0.7, &plan).unwrap();
        for v in out.values() {
            assert!((v - 2.5).abs() < 1e-14);
        }
        assert_eq!(out.time(), 0.7);
    }

    #[test]
    fn zero_tau_is_identity() {
        let g = grid();
        let plan = HeatPlan::phase(g, 0.3).unwrap();
        let f = PhaseField::from_fn(g, 0.0, |x, v| libm::sin(x[0]) + v[0] * v[0]);
        assert_eq!(heat_step(&f, 0.0, &plan).unwrap(), f);
    }

    #[test]
    fn rejects_negative_tau_and_mismatched_grid() {
        let g = grid();
        let plan = HeatPlan::phase(g, 0.3).unwrap();
        let f = PhaseField::zeros(g, 0.0);
        assert!(matches!(heat_step(&f, -1.0, &plan), Err(Error::Parameter(_))));
        let other = GridSpec::new(1, 1, 32, 64, 4.0, 4.0).unwrap();
        let h = PhaseField::zeros(other, 0.0);
        assert!(matches!(heat_step(&h, 1.0, &plan), Err(Error::Shape(_))));
        let s = SpatialField::zeros(g, 0.0, Role::C);
        assert!(matches!(heat_step(&s, 1.0, &plan), Err(Error::Shape(_))));
    }

    #[test]
    fn gaussian_spreads_to_analytic_periodized_gaussian() {
        let g = GridSpec::new(1, 1, 128, 128, 4.0, 4.0).unwrap();
        let (sigma, tau, s2) = (0.2, 0.9, 0.15);
        let (cx, cv) = (0.5, -1.0);
        let f = PhaseField::from_fn(g, 0.0, |x, v| {
            periodized(x[0], cx, s2, 4.0) * periodized(v[0], cv, s2, 4.0)
        });
        let plan = HeatPlan::phase(g, sigma).unwrap();
        let out = heat_step(&f, tau, &plan).unwrap();
        let var = s2 + 2.0 * sigma * tau;
        let exact = PhaseField::from_fn(g, tau, |x, v| {
            periodized(x[0], cx, var, 4.0) * periodized(v[0], cv, var, 4.0)
        });
        for (a, b) in out.values().iter().zip(exact.values()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn spatial_plan_matches_one_dimensional_solution() {
        let g = GridSpec::new(2, 1, 64, 8, 5.0, 1.0).unwrap();
        let plan = HeatPlan::spatial(g, 0.5).unwrap();
        let c = SpatialField::from_fn(g, 0.0, Role::C, |x| {
            periodized(x[0], 0.0, 0.3, 5.0) * periodized(x[1], 1.0, 0.3, 5.0)
        });
        let out = heat_step(&c, 0.4, &plan).unwrap();
        let exact = SpatialField::from_fn(g, 0.4, Role::C, |x| {
            periodized(x[0], 0.0, 0.7, 5.0) * periodized(x[1], 1.0, 0.7, 5.0)
        });
        for (a, b) in out.values().iter().zip(exact.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn cached_and_uncached_steps_agree_bitwise() {
        let g = grid();
        let mut plan = HeatPlan::phase(g, 0.1).unwrap();
        let f = PhaseField::from_fn(g, 0.0, |x, v| libm::exp(-x[0] * x[0] - v[0] * v[0]));
        let a = heat_step(&f, 0.05, &plan).unwrap();
        plan.cache_tau(0.05).unwrap();
        let b = heat_step(&f, 0.05, &plan).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn laplacian_and_gradient_of_a_sine() {
        let g = GridSpec::new(1, 1, 32, 32, PI, PI).unwrap();
        let plan = HeatPlan::phase(g, 1.0).unwrap();
        let f = PhaseField::from_fn(g, 0.0, |x, v| libm::sin(2.0 * x[0]) * libm::cos(v[0]));
        let lap = plan.laplacian(f.values()).unwrap();
        for (l, v) in lap.iter().zip(f.values()) {
            assert!((l + 5.0 * v).abs() < 1e-12);
        }
        // ∫|∇f|² = 5 ∫ f² = 5 π² over the (2π)² box.
        let grad = plan.gradient_norm_sq(f.values()).unwrap();
        assert!((grad - 5.0 * PI * PI).abs() < 1e-10);
    }

    #[test]
    fn x_only_flow_freezes_velocity() {
        let g = grid();
        let plan = HeatPlan::phase_x_only(g, 1.0).unwrap();
        let f = PhaseField::from_fn(g, 0.0, |_, v| libm::exp(-v[0] * v[0]));
        let out = heat_step(&f, 3.0, &plan).unwrap();
        for (a, b) in out.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rho_peak_and_mass() {
        let g = GridSpec::new(1, 2, 8, 128, 1.0, 6.0).unwrap();
        let rho = gaussian_rho(&g, 0.5, [0.0, 0.0]).unwrap();
        let peak = rho.values[64 * 128 + 64];
        assert_eq!(peak, 1.0 / (PI * 0.5));
        assert_eq!(rho.sup_analytic, 1.0 / (PI * 0.5));
        assert!((rho.discrete_mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rho_is_symmetric_about_its_centre() {
        let g = GridSpec::new(1, 1, 8, 256, 1.0, 6.0).unwrap();
        let h = g.h_v();
        let v0 = 10.0 * h;
        let rho = gaussian_rho(&g, 0.3, [v0, 0.0]).unwrap();
        let c = 128 + 10;
        for w in 1..100 {
            assert_eq!(rho.values[c + w], rho.values[c - w]);
        }
    }

    #[test]
    fn rho_rejects_bad_input() {
        let g = GridSpec::new(1, 1, 8, 64, 1.0, 6.0).unwrap();
        assert!(matches!(
            gaussian_rho(&g, 0.01, [0.0; 2]),
            Err(Error::Resolution { .. })
        ));
        assert!(matches!(gaussian_rho(&g, -1.0, [0.0; 2]), Err(Error::Parameter(_))));
        assert!(matches!(gaussian_rho(&g, 1.0, [7.0, 0.0]), Err(Error::Parameter(_))));
    }

    #[test]
    fn smoothing_constant_bounds_random_data() {
        // Fit C from a single-cell datum, then check other nonnegative data obey it.
        let g = GridSpec::new(1, 1, 32, 32, 3.0, 3.0).unwrap();
        let sigma = 0.2;
        let plan = HeatPlan::phase(g, sigma).unwrap();
        let taus = [0.05, 0.1, 0.3, 1.0];
        let mut delta = PhaseField::zeros(g, 0.0);
        delta.values_mut()[500] = 1.0 / g.cell_volume();
        let c = taus
            .iter()
            .map(|&t| lq_norm(&heat_step(&delta, t, &plan).unwrap(), f64::INFINITY).unwrap() * t)
            .fold(0.0f64, f64::max);
        // Continuum constant is (4πσ)^{-1} for n = 2.
        assert!(c < 1.05 / (4.0 * PI * sigma) && c > 0.8 / (4.0 * PI * sigma), "{c}");
        let f = PhaseField::from_fn(g, 0.0, |x, v| (libm::sin(3.0 * x[0] * v[0]) + 1.0).powi(3));
        for &t in &taus {
            let sup = lq_norm(&heat_step(&f, t, &plan).unwrap(), f64::INFINITY).unwrap();
            assert!(sup <= c / t * lq_norm(&f, 1.0).unwrap());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn nonneg_field() -> impl Strategy<Value = PhaseField> {
            let g = GridSpec::new(1, 1, 16, 16, 2.0, 2.0).unwrap();
            proptest::collection::vec(0.0f64..3.0, g.len()).prop_map(move |v| PhaseField::new(g, v, 0.0).unwrap())
        }

        proptest! {
            #[test]
            fn mass_conserved_and_norms_contract(f in nonneg_field(), tau in 0.0f64..2.0) {
                let plan = HeatPlan::phase(*f.grid(), 0.4).unwrap();
                let out = heat_step(&f, tau, &plan).unwrap();
                let (m0, m1) = (crate::grid::integrate(&f).unwrap(), crate::grid::integrate(&out).unwrap());
                prop_assert!((m1 - m0).abs() <= 1e-12 * m0.abs().max(1e-300));
                for q in [1.0, 2.0, f64::INFINITY] {
                    prop_assert!(lq_norm(&out, q).unwrap() <= lq_norm(&f, q).unwrap() * (1.0 + 1e-10));
                }
            }

            #[test]
            fn semigroup_law(f in nonneg_field(), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
                let plan = HeatPlan::phase(*f.grid(), 0.4).unwrap();
                let two = heat_step(&heat_step(&f, t1, &plan).unwrap(), t2, &plan).unwrap();
                let one = heat_step(&f, t1 + t2, &plan).unwrap();
                let scale = lq_norm(&one, f64::INFINITY).unwrap().max(1e-300);
                for (a, b) in two.values().iter().zip(one.values()) {
                    prop_assert!((a - b).abs() <= 1e-10 * scale);
                }
            }

            #[test]
            fn smooth_nonnegative_data_stays_nonnegative(
                c in -1.5f64..1.5, s in 0.3f64..0.6, tau in 0.0f64..1.0
            ) {
                let g = GridSpec::new(1, 1, 64, 64, 4.0, 4.0).unwrap();
                let f = PhaseField::from_fn(g, 0.0, |x, v| {
                    periodized(x[0], c, s, 4.0) * periodized(v[0], -c, s, 4.0)
                });
                let plan = HeatPlan::phase(g, 0.3).unwrap();
                let out = heat_step(&f, tau, &plan).unwrap();
                let clamp = crate::grid::clamp_threshold(out.values());
                prop_assert!(out.values().iter().all(|&v| v >= -clamp));
            }
        }
    }
}
