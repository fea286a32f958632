//! Field dumps, CSV exports and PBM masks.
//!
//! Binary field format: the ASCII magic `MAZT`, a little-endian `u32` with `N`,
//! then `N^2` little-endian `f64` values in grid order (`k = i * N + j`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::contour::Polyline;
use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid};

const MAGIC: &[u8; 4] = b"MAZT";

pub fn write_field(path: &Path, field: &ScalarField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let n = u32::try_from(field.n())
        .map_err(|_| Error::InvalidArgument(format!("grid size {} does not fit u32", field.n())))?;
    w.write_all(&n.to_le_bytes())?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 8];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::InvalidArgument(format!(
            "{} is not a field dump (bad magic)",
            path.display()
        )));
    }
    let n = u32::from_le_bytes(head[4..].try_into().expect("four bytes")) as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * n * n {
        return Err(Error::ShapeMismatch {
            expected: n * n,
            got: bytes.len() / 8,
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect();
    ScalarField::from_parts(n, values)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// `i,j,x,y,value` per node.
pub fn write_field_csv(path: &Path, grid: &TorusGrid, field: &ScalarField) -> Result<()> {
    grid.check(field)?;
    let mut w = csv_writer(path)?;
    w.write_record(["i", "j", "x", "y", "value"]).map_err(csv_err)?;
    for i in 0..grid.n() {
        for j in 0..grid.n() {
            let (x, y) = grid.coords(i, j);
            w.serialize((i, j, x, y, field[(i, j)])).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A table of numbers with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::InvalidArgument(format!(
                "row has {} columns, header has {}",
                row.len(),
                header.len()
            )));
        }
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `component,x,y` per vertex, in unwrapped coordinates.
pub fn write_polylines(path: &Path, lines: &[Polyline]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["component", "x", "y"]).map_err(csv_err)?;
    for (c, line) in lines.iter().enumerate() {
        for p in &line.points {
            w.serialize((c, p[0], p[1])).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Plain PBM (`P1`); set nodes are black. Rows run along `j` from the top.
pub fn write_pbm(path: &Path, grid: &TorusGrid, mask: &[bool]) -> Result<()> {
    if mask.len() != grid.len() {
        return Err(Error::ShapeMismatch {
            expected: grid.len(),
            got: mask.len(),
        });
    }
    let n = grid.n();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "P1\n{n} {n}")?;
    for j in (0..n).rev() {
        let row: Vec<&str> = (0..n)
            .map(|i| if mask[grid.idx(i, j)] { "1" } else { "0" })
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = TorusGrid::new(8).unwrap();
        let f = g.from_fn(|x, y| x - 2.0 * y + 1e-300);
        let p = dir.path().join("f.field");
        write_field(&p, &f).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"MAZT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 8);
        assert_eq!(bytes.len(), 8 + 64 * 8);
        assert_eq!(read_field(&p).unwrap(), f);

        std::fs::write(&p, b"NOPE\x08\0\0\0").unwrap();
        assert!(read_field(&p).is_err());
    }

    #[test]
    fn text_exports() {
        let dir = tempfile::tempdir().unwrap();
        let g = TorusGrid::new(8).unwrap();
        let f = g.from_fn(|x, _| x);
        let p = dir.path().join("f.csv");
        write_field_csv(&p, &g, &f).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("i,j,x,y,value"));
        assert_eq!(lines.nth(8), Some("1,0,0.125,0.0,0.125"));

        let mask: Vec<bool> = (0..64).map(|k| k == g.idx(0, 7)).collect();
        let p = dir.path().join("m.pbm");
        write_pbm(&p, &g, &mask).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("P1\n8 8\n1 0 0"));

        let p = dir.path().join("t.csv");
        assert!(write_table(&p, &["a", "b"], &[vec![1.0]]).is_err());
        write_table(&p, &["a", "b"], &[vec![1.0, 0.5]]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "a,b\n1.0,0.5\n");
    }
}
