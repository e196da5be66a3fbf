//! Field snapshot persistence.
//!
//! Format `CDAFLD v1`: a single ASCII header line
//! `CDAFLD v1 <name> <nx> <ny> <nz> <lx> <ly>` followed by the samples in
//! row-major order as 8-byte little-endian IEEE doubles.

use super::{Grid, HorizontalBc, ScalarField};
use crate::error::{CdaError, Result};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub fn write_snapshot(path: &Path, name: &str, field: &ScalarField) -> Result<()> {
    if name.is_empty() || name.contains(char::is_whitespace) {
        return Err(CdaError::InvalidInput(format!(
            "snapshot name must be a single token, got {name:?}"
        )));
    }
    let g = &field.grid;
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "CDAFLD v1 {} {} {} {} {} {}",
        name, g.nx, g.ny, g.nz, g.lx, g.ly
    )?;
    for v in &field.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub name: String,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
    pub data: Vec<f64>,
}

impl Snapshot {
    /// Rebuild a field; the boundary tag is not part of the format and
    /// must be supplied by the caller.
    pub fn into_field(self, bc: HorizontalBc) -> Result<ScalarField> {
        let grid = Grid::new(self.nx, self.ny, self.nz, self.lx, self.ly, bc)?;
        if self.data.len() != grid.len() {
            return Err(CdaError::Io(format!(
                "snapshot payload has {} samples, grid expects {}",
                self.data.len(),
                grid.len()
            )));
        }
        Ok(ScalarField {
            grid,
            data: self.data,
        })
    }
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 8 || toks[0] != "CDAFLD" || toks[1] != "v1" {
        return Err(CdaError::Io(format!("bad snapshot header: {header:?}")));
    }
    let name = toks[2].to_string();
    let nx: usize = toks[3]
        .parse()
        .map_err(|_| CdaError::Io("bad nx in snapshot header".into()))?;
    let ny: usize = toks[4]
        .parse()
        .map_err(|_| CdaError::Io("bad ny in snapshot header".into()))?;
    let nz: usize = toks[5]
        .parse()
        .map_err(|_| CdaError::Io("bad nz in snapshot header".into()))?;
    let lx: f64 = toks[6]
        .parse()
        .map_err(|_| CdaError::Io("bad lx in snapshot header".into()))?;
    let ly: f64 = toks[7]
        .parse()
        .map_err(|_| CdaError::Io("bad ly in snapshot header".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != nx * ny * nz * 8 {
        return Err(CdaError::Io(format!(
            "snapshot payload is {} bytes, expected {}",
            bytes.len(),
            nx * ny * nz * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Snapshot {
        name,
        nx,
        ny,
        nz,
        lx,
        ly,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let g: Arc<Grid> = Grid::new(6, 5, 4, 1.25, 0.75, HorizontalBc::Walls).unwrap();
        let f = ScalarField::from_fn(&g, |x, y, z| (x * 37.0).sin() + y / 3.0 - z * z);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.cdafld");
        write_snapshot(&path, "temperature", &f).unwrap();
        let snap = read_snapshot(&path).unwrap();
        assert_eq!(snap.name, "temperature");
        assert_eq!((snap.lx, snap.ly), (1.25, 0.75));
        let back = snap.into_field(HorizontalBc::Walls).unwrap();
        assert_eq!(back.data, f.data);
    }

    #[test]
    fn rejects_whitespace_names_and_bad_headers() {
        let g: Arc<Grid> = Grid::new(4, 4, 1, 1.0, 1.0, HorizontalBc::Walls).unwrap();
        let f = ScalarField::zeros(&g);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.cdafld");
        assert!(write_snapshot(&path, "two words", &f).is_err());
        std::fs::write(&path, b"NOTCDA v9 x 1 1 1 1 1\n").unwrap();
        assert!(read_snapshot(&path).is_err());
    }
}
