use std::io::Cursor;

use angio::export::{write_moments_csv, write_phase_csv, write_spatial_csv, MomentRow, MOMENT_HEADER};
use angio::snapshot::{self, Snapshot, MAGIC};
use angio::Error;
use angio_core::{GridSpec, LatticeField, MomentSet, PhaseField, Role, SpatialField};

fn field(g: GridSpec) -> PhaseField {
    PhaseField::from_fn(g, 0.25, |x, v| {
        (-(x[0] * x[0] + x[1] * x[1] + v[0] * v[0])).exp() + 1e-300
    })
}

#[test]
fn phase_snapshot_roundtrips_bit_exactly() {
    let g = GridSpec::new(2, 1, 8, 16, 3.0, 2.5).unwrap();
    let p = field(g);
    let mut buf = Vec::new();
    Snapshot::of_phase(&p).write_to(&mut buf).unwrap();
    assert_eq!(&buf[..4], MAGIC);
    assert_eq!(buf.len(), 4 + 4 * 8 + 3 * 8 + g.len() * 8);
    let back = Snapshot::read_from(&mut Cursor::new(&buf))
        .unwrap()
        .into_phase()
        .unwrap();
    assert_eq!(back.grid(), p.grid());
    assert_eq!(back.time(), p.time());
    assert!(back
        .values()
        .iter()
        .zip(p.values())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn spatial_snapshot_roundtrips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let g = GridSpec::new(2, 2, 8, 8, 4.0, 4.0).unwrap();
    let c = SpatialField::from_fn(g, 1.5, Role::C, |x| 1.0 + x[0] * x[1].sin());
    let path = dir.path().join("c.akf");
    snapshot::write_spatial(&path, &c).unwrap();
    let snap = snapshot::read(&path).unwrap();
    assert!(snap.is_spatial());
    let back = snap.into_spatial(g, Role::C).unwrap();
    assert_eq!(back.values(), c.values());
    assert_eq!(back.time(), 1.5);
}

#[test]
fn damaged_snapshots_are_rejected() {
    let g = GridSpec::new(1, 1, 8, 8, 1.0, 1.0).unwrap();
    let mut buf = Vec::new();
    Snapshot::of_phase(&field(g)).write_to(&mut buf).unwrap();

    let mut wrong_magic = buf.clone();
    wrong_magic[0] = b'X';
    assert!(matches!(
        Snapshot::read_from(&mut Cursor::new(&wrong_magic)),
        Err(Error::Format(_))
    ));

    let truncated = &buf[..buf.len() - 3];
    assert!(Snapshot::read_from(&mut Cursor::new(truncated)).is_err());

    let spatial = Snapshot::of_spatial(&SpatialField::zeros(g, 0.0, Role::C));
    assert!(spatial.into_phase().is_err());
}

#[test]
fn csv_tables_have_headers_and_one_row_per_cell() {
    let g = GridSpec::new(1, 1, 8, 8, 1.0, 1.0).unwrap();
    let p = field(g);
    let mut out = Vec::new();
    write_phase_csv(&mut out, &p).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 1 + g.len());
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 3);

    let c = SpatialField::from_fn(g, 0.0, Role::C, |x| x[0].abs());
    let mut out = Vec::new();
    write_spatial_csv(&mut out, &c).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 1 + g.x_count());
    // Values print in a form that parses back exactly.
    let last: f64 = text
        .lines()
        .last()
        .unwrap()
        .rsplit(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(last, *c.values().last().unwrap());

    let a = SpatialField::zeros(g, p.time(), Role::A);
    let row = MomentRow::new(&p, &MomentSet::of(&p).unwrap(), &a).unwrap();
    let mut out = Vec::new();
    write_moments_csv(&mut out, &[row]).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().next().unwrap(), MOMENT_HEADER);
    assert_eq!(
        text.lines().nth(1).unwrap().split(',').count(),
        MOMENT_HEADER.split(',').count()
    );
}
