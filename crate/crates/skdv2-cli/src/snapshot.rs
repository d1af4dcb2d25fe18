//! Binary field snapshot codec (little-endian):
//! magic `"SKDV"`, format version u32, n u64, L f64, t f64, then n f64
//! samples. Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use skdv2_core::error::{Error, Result};
use skdv2_core::field::{Field, Grid};

const MAGIC: &[u8; 4] = b"SKDV";
const VERSION: u32 = 1;

pub fn write_snapshot(path: &Path, field: &Field, t: f64) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::config(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::config(format!("write {}: {e}", path.display()));
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(field.grid().n() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&field.grid().length().to_le_bytes()).map_err(io_err)?;
    w.write_all(&t.to_le_bytes()).map_err(io_err)?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_snapshot(path: &Path) -> Result<(Field, f64)> {
    let file = File::open(path)
        .map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let io_err = |e: std::io::Error| Error::config(format!("read {}: {e}", path.display()));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::config(format!(
            "{} is not a field snapshot (bad magic)",
            path.display()
        )));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(io_err)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::config(format!(
            "unsupported snapshot version {version} (expected {VERSION})"
        )));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(io_err)?;
    let n = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8).map_err(io_err)?;
    let length = f64::from_le_bytes(b8);
    r.read_exact(&mut b8).map_err(io_err)?;
    let t = f64::from_le_bytes(b8);

    let grid = Grid::new(n, length)?;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8).map_err(io_err)?;
        values.push(f64::from_le_bytes(b8));
    }
    Ok((Field::new(grid, values)?, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.skdv");
        let grid = Grid::new(64, 12.5).unwrap();
        let field = Field::from_fn(grid, |x| (2.0 * PI * x / 12.5).sin() * 0.3 + 1e-17);
        let t = 0.725;
        write_snapshot(&path, &field, t).unwrap();
        let (back, t_back) = read_snapshot(&path).unwrap();
        assert_eq!(t_back.to_bits(), t.to_bits());
        assert_eq!(back.grid(), grid);
        for (a, b) in back.values().iter().zip(field.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_corrupt_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.skdv");
        std::fs::write(&path, b"NOPE0000000000000000000000000000").unwrap();
        assert!(read_snapshot(&path).is_err());
    }
}
