//! `AKF1` binary snapshots.
//!
//! Little-endian layout: the magic `AKF1`, then `dim_x, dim_v, n_x, n_v` as
//! `u64`, `L_x, L_v, time` as `f64`, then the row-major `f64` payload.
//! Spatial fields are written with `dim_v = n_v = 0` and `L_v = 0`.

use std::io::{Read, Write};

use angio_core::{GridSpec, LatticeField, PhaseField, Role, SpatialField};

use crate::Error;

pub const MAGIC: &[u8; 4] = b"AKF1";
const HEADER_LEN: usize = 4 + 4 * 8 + 3 * 8;

/// A decoded snapshot; [`Snapshot::into_phase`] and
/// [`Snapshot::into_spatial`] rebuild typed fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub dim_x: u64,
    pub dim_v: u64,
    pub n_x: u64,
    pub n_v: u64,
    pub half_width_x: f64,
    pub half_width_v: f64,
    pub time: f64,
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn of_phase(p: &PhaseField) -> Self {
        let g = p.grid();
        Self {
            dim_x: g.dim_x as u64,
            dim_v: g.dim_v as u64,
            n_x: g.n_x as u64,
            n_v: g.n_v as u64,
            half_width_x: g.half_width_x,
            half_width_v: g.half_width_v,
            time: p.time(),
            values: p.values().to_vec(),
        }
    }

    pub fn of_spatial(f: &SpatialField) -> Self {
        let g = f.grid();
        Self {
            dim_x: g.dim_x as u64,
            dim_v: 0,
            n_x: g.n_x as u64,
            n_v: 0,
            half_width_x: g.half_width_x,
            half_width_v: 0.0,
            time: f.time(),
            values: f.values().to_vec(),
        }
    }

    pub fn is_spatial(&self) -> bool {
        self.dim_v == 0
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * self.values.len());
        buf.extend_from_slice(MAGIC);
        for v in [self.dim_x, self.dim_v, self.n_x, self.n_v] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.half_width_x, self.half_width_v, self.time] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, Error> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Format("not an AKF1 snapshot".into()));
        }
        let word = |i: usize| -> [u8; 8] { bytes[4 + 8 * i..12 + 8 * i].try_into().expect("8 bytes") };
        let [dim_x, dim_v, n_x, n_v] = [0, 1, 2, 3].map(|i| u64::from_le_bytes(word(i)));
        let [half_width_x, half_width_v, time] = [4, 5, 6].map(|i| f64::from_le_bytes(word(i)));
        let count = if dim_v == 0 {
            n_x.checked_pow(dim_x as u32)
        } else {
            n_x.checked_pow(dim_x as u32)
                .and_then(|a| n_v.checked_pow(dim_v as u32).and_then(|b| a.checked_mul(b)))
        }
        .ok_or_else(|| Error::Format("lattice size overflows".into()))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() as u64 != 8 * count {
            return Err(Error::Format(format!(
                "payload has {} bytes, header implies {}",
                payload.len(),
                8 * count
            )));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            dim_x,
            dim_v,
            n_x,
            n_v,
            half_width_x,
            half_width_v,
            time,
            values,
        })
    }

    pub fn into_phase(self) -> Result<PhaseField, Error> {
        if self.is_spatial() {
            return Err(Error::Format("snapshot holds a spatial field".into()));
        }
        let grid = GridSpec::new(
            self.dim_x as usize,
            self.dim_v as usize,
            self.n_x as usize,
            self.n_v as usize,
            self.half_width_x,
            self.half_width_v,
        )?;
        Ok(PhaseField::new(grid, self.values, self.time)?)
    }

    /// Rebuilds a spatial field on the x lattice of `grid`.
    pub fn into_spatial(self, grid: GridSpec, role: Role) -> Result<SpatialField, Error> {
        if !self.is_spatial()
            || self.dim_x as usize != grid.dim_x
            || self.n_x as usize != grid.n_x
            || self.half_width_x != grid.half_width_x
        {
            return Err(Error::Format("snapshot does not match the x lattice".into()));
        }
        Ok(SpatialField::new(grid, self.values, self.time, role)?)
    }
}

pub fn write_phase(path: &std::path::Path, p: &PhaseField) -> Result<(), Error> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    Snapshot::of_phase(p).write_to(&mut f)?;
    f.flush()?;
    Ok(())
}

pub fn write_spatial(path: &std::path::Path, c: &SpatialField) -> Result<(), Error> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    Snapshot::of_spatial(c).write_to(&mut f)?;
    f.flush()?;
    Ok(())
}

pub fn read(path: &std::path::Path) -> Result<Snapshot, Error> {
    let mut f = std::fs::File::open(path)?;
    Snapshot::read_from(&mut f)
}
