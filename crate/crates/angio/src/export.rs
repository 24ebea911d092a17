//! CSV tables. Floats use Rust's shortest round-trip formatting, so output
//! is reproducible bit for bit.

use std::io::Write;
use std::path::Path;

use angio_core::grid::integrate_phase;
use angio_core::{LatticeField, MomentSet, PhaseField, SpatialField};

use crate::Error;

fn axis_names(prefix: &str, dim: usize) -> Vec<String> {
    match dim {
        1 => vec![prefix.to_string()],
        _ => (1..=dim).map(|i| format!("{prefix}{i}")).collect(),
    }
}

fn coords(point: [f64; 2], dim: usize) -> impl Iterator<Item = f64> {
    point.into_iter().take(dim)
}

/// One row per lattice point: coordinates, then the value.
pub fn write_phase_csv(w: &mut impl Write, p: &PhaseField) -> Result<(), Error> {
    let g = p.grid();
    let mut header = axis_names("x", g.dim_x);
    header.extend(axis_names("v", g.dim_v));
    header.push("value".into());
    writeln!(w, "{}", header.join(","))?;
    let nv = g.v_count();
    for (i, value) in p.values().iter().enumerate() {
        let (x, v) = (g.x_point(i / nv), g.v_point(i % nv));
        for c in coords(x, g.dim_x).chain(coords(v, g.dim_v)) {
            write!(w, "{c:e},")?;
        }
        writeln!(w, "{value:e}")?;
    }
    Ok(())
}

pub fn write_spatial_csv(w: &mut impl Write, f: &SpatialField) -> Result<(), Error> {
    let g = f.grid();
    let mut header = axis_names("x", g.dim_x);
    header.push(f.role().name().into());
    writeln!(w, "{}", header.join(","))?;
    for (i, value) in f.values().iter().enumerate() {
        for c in coords(g.x_point(i), g.dim_x) {
            write!(w, "{c:e},")?;
        }
        writeln!(w, "{value:e}")?;
    }
    Ok(())
}

/// One row of the moment time series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub time: f64,
    pub p_tilde_sup: f64,
    pub j_sup: f64,
    pub m_sup: f64,
    pub a_sup: f64,
    pub mass: f64,
}

impl MomentRow {
    pub fn new(p: &PhaseField, moments: &MomentSet, a: &SpatialField) -> Result<Self, Error> {
        Ok(Self {
            time: p.time(),
            p_tilde_sup: moments.p_tilde.max_abs(),
            j_sup: moments.j.max_abs(),
            m_sup: moments.m.max_abs(),
            a_sup: a.max_abs(),
            mass: integrate_phase(p)?,
        })
    }
}

pub const MOMENT_HEADER: &str = "time,p_tilde_sup,j_sup,m_sup,a_sup,mass";

pub fn write_moments_csv(w: &mut impl Write, rows: &[MomentRow]) -> Result<(), Error> {
    writeln!(w, "{MOMENT_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e}",
            r.time, r.p_tilde_sup, r.j_sup, r.m_sup, r.a_sup, r.mass
        )?;
    }
    Ok(())
}

pub fn to_file(
    path: &Path,
    body: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<(), Error>,
) -> Result<(), Error> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}
