//! CSV and little-endian binary dumps.
//!
//! Binary field layout: `nx: u64, ny: u64, L1: f64, L2: f64` followed by
//! `nx * ny` values (`f64`, row-major, `x` fastest). Trajectory dumps repeat
//! the field header, then `count: u64`, then `count` records of
//! `t: f64` followed by the snapshot values.

use std::io::{Read, Write};

use super::{FieldTrajectory, Grid2D, ScalarField};
use crate::error::{Error, Result};

pub fn write_field_csv<W: Write>(mut w: W, field: &ScalarField) -> Result<()> {
    writeln!(w, "x,y,value")?;
    let g = field.grid;
    for k in 0..g.len() {
        let [x, y] = g.coords(k);
        writeln!(w, "{x:.12e},{y:.12e},{:.12e}", field.values[k])?;
    }
    Ok(())
}

/// Writes every `every`-th snapshot (the final one is always included).
pub fn write_trajectory_csv<W: Write>(mut w: W, traj: &FieldTrajectory, every: usize) -> Result<()> {
    writeln!(w, "t,x,y,value")?;
    let g = traj.grid();
    for n in thinned(traj.time.nt, every) {
        let t = traj.time.t(n);
        let f = &traj.snapshots[n];
        for k in 0..g.len() {
            let [x, y] = g.coords(k);
            writeln!(w, "{t:.12e},{x:.12e},{y:.12e},{:.12e}", f.values[k])?;
        }
    }
    Ok(())
}

fn thinned(nt: usize, every: usize) -> Vec<usize> {
    let every = every.max(1);
    let mut out: Vec<usize> = (0..=nt).step_by(every).collect();
    if *out.last().unwrap() != nt {
        out.push(nt);
    }
    out
}

fn write_header<W: Write>(w: &mut W, g: &Grid2D) -> Result<()> {
    w.write_all(&(g.nx as u64).to_le_bytes())?;
    w.write_all(&(g.ny as u64).to_le_bytes())?;
    w.write_all(&g.lx.to_le_bytes())?;
    w.write_all(&g.ly.to_le_bytes())?;
    Ok(())
}

fn write_values<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_field_binary<W: Write>(mut w: W, field: &ScalarField) -> Result<()> {
    write_header(&mut w, &field.grid)?;
    write_values(&mut w, &field.values)
}

pub fn write_trajectory_binary<W: Write>(mut w: W, traj: &FieldTrajectory, every: usize) -> Result<()> {
    write_header(&mut w, &traj.grid())?;
    let idx = thinned(traj.time.nt, every);
    w.write_all(&(idx.len() as u64).to_le_bytes())?;
    for n in idx {
        w.write_all(&traj.time.t(n).to_le_bytes())?;
        write_values(&mut w, &traj.snapshots[n].values)?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_field_binary<R: Read>(mut r: R) -> Result<ScalarField> {
    let nx = read_u64(&mut r)? as usize;
    let ny = read_u64(&mut r)? as usize;
    let lx = read_f64(&mut r)?;
    let ly = read_f64(&mut r)?;
    let grid = Grid2D::new(nx, ny, lx, ly)?;
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        values.push(read_f64(&mut r)?);
    }
    ScalarField::from_values(grid, values).map_err(|e| match e {
        Error::NonFinite(_) => Error::NonFinite("binary field dump".into()),
        e => e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TimeGrid;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn binary_roundtrip(nx in 4usize..9, ny in 4usize..9, seed in any::<u64>()) {
            let g = Grid2D::new(nx, ny, 1.5, 2.5).unwrap();
            let f = ScalarField::from_fn(g, |x, y| ((seed % 97) as f64 * x).sin() * y - 1e-300);
            let mut buf = Vec::new();
            write_field_binary(&mut buf, &f).unwrap();
            prop_assert_eq!(buf.len(), 32 + 8 * g.len());
            let back = read_field_binary(&buf[..]).unwrap();
            prop_assert_eq!(back, f);
        }
    }

    #[test]
    fn header_layout_is_little_endian() {
        let g = Grid2D::new(4, 5, 1.0, 2.0).unwrap();
        let f = ScalarField::constant(g, 0.25);
        let mut buf = Vec::new();
        write_field_binary(&mut buf, &f).unwrap();
        assert_eq!(&buf[0..8], &4u64.to_le_bytes());
        assert_eq!(&buf[8..16], &5u64.to_le_bytes());
        assert_eq!(&buf[16..24], &1.0f64.to_le_bytes());
        assert_eq!(&buf[32..40], &0.25f64.to_le_bytes());
    }

    #[test]
    fn trajectory_thinning_keeps_last_snapshot() {
        let g = Grid2D::new(4, 4, 1.0, 1.0).unwrap();
        let t = TimeGrid::new(1.0, 5).unwrap();
        let traj = FieldTrajectory::zeros(g, t);
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // snapshots 0, 2, 4, 5
        assert_eq!(text.lines().count(), 1 + 4 * 16);
        assert_eq!(thinned(5, 2), vec![0, 2, 4, 5]);
    }
}
