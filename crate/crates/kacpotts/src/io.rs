//! Binary profile dumps with a fixed, stable layout.
//!
//! Layout (all multi-byte values little-endian):
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 8    | magic bytes `KPMPROF\0`                   |
//! | 8      | 4    | format version, u32 (currently 1)         |
//! | 12     | 4    | dimension d, u32                          |
//! | 16     | 4    | side length n, u32                        |
//! | 20     | 4    | colors per cell q, u32                    |
//! | 24     | 8 n^d q | payload, IEEE-754 f64                  |
//!
//! The payload stores q values per cell, cells in lexicographic coordinate
//! order (axis 0 slowest, matching the site indexing of `TorusGrid`), colors
//! innermost.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{ModelError, Result};
use crate::profiles::DensityProfile;
use crate::torus::TorusGrid;

pub const PROFILE_MAGIC: [u8; 8] = *b"KPMPROF\0";
pub const PROFILE_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> ModelError {
    ModelError::InvalidArg(format!("profile dump i/o: {e}"))
}

pub fn write_profile_dump(path: &Path, profile: &DensityProfile) -> Result<()> {
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let mesh = profile.mesh();
    w.write_all(&PROFILE_MAGIC).map_err(io_err)?;
    w.write_all(&PROFILE_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(mesh.d() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(mesh.n() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(profile.q() as u32).to_le_bytes()).map_err(io_err)?;
    for &v in profile.values() {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_profile_dump(path: &Path) -> Result<DensityProfile> {
    let file = File::open(path).map_err(io_err)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if magic != PROFILE_MAGIC {
        return Err(ModelError::InvalidArg("not a profile dump".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(io_err)?;
    let version = u32::from_le_bytes(word);
    if version != PROFILE_VERSION {
        return Err(ModelError::InvalidArg(format!(
            "unsupported profile dump version {version}"
        )));
    }
    r.read_exact(&mut word).map_err(io_err)?;
    let d = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word).map_err(io_err)?;
    let n = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word).map_err(io_err)?;
    let q = u32::from_le_bytes(word);
    if q == 0 || q > u8::MAX as u32 {
        return Err(ModelError::BadColorCount(q as usize));
    }
    let mesh = TorusGrid::new(d, n)?;
    let count = mesh.sites() * q as usize;
    let mut values = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf).map_err(io_err)?;
        values.push(f64::from_le_bytes(buf));
    }
    let mut tail = [0u8; 1];
    match r.read(&mut tail).map_err(io_err)? {
        0 => {}
        _ => {
            return Err(ModelError::InvalidArg(
                "profile dump has trailing bytes".into(),
            ))
        }
    }
    DensityProfile::new(mesh, q as u8, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn tmp(name: &str) -> PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("kacpotts-io-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn dump_roundtrip_preserves_everything() {
        let mesh = TorusGrid::new(2, 3).unwrap();
        let values: Vec<f64> = (0..mesh.sites() * 2)
            .map(|i| {
                let pair = i / 2;
                if i % 2 == 0 {
                    0.25 + 0.5 * (pair as f64 / 9.0)
                } else {
                    0.75 - 0.5 * (pair as f64 / 9.0)
                }
            })
            .collect();
        let profile = DensityProfile::new(mesh, 2, values.clone()).unwrap();
        let path = tmp("roundtrip.bin");
        write_profile_dump(&path, &profile).unwrap();
        let back = read_profile_dump(&path).unwrap();
        assert_eq!(back.mesh(), mesh);
        assert_eq!(back.q(), 2);
        assert_eq!(back.values(), &values[..]);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn header_layout_is_fixed() {
        let mesh = TorusGrid::new(1, 2).unwrap();
        let profile = DensityProfile::flat(mesh, &[0.5, 0.5]).unwrap();
        let path = tmp("header.bin");
        write_profile_dump(&path, &profile).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..8], b"KPMPROF\0");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1); // d
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2); // n
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2); // q
        assert_eq!(bytes.len(), 24 + 2 * 2 * 8);
        assert_eq!(
            f64::from_le_bytes(bytes[24..32].try_into().unwrap()),
            0.5
        );
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let path = tmp("bad.bin");
        std::fs::write(&path, b"NOTPROF\0rest").unwrap();
        assert!(read_profile_dump(&path).is_err());
        let mesh = TorusGrid::new(1, 4).unwrap();
        let profile = DensityProfile::flat(mesh, &[1.0]).unwrap();
        write_profile_dump(&path, &profile).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 4]).unwrap();
        assert!(read_profile_dump(&path).is_err());
        std::fs::remove_file(&path).ok();
    }
}
