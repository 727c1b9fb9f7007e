use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{PerturbationRecord, SpectralData};
use crate::error::{Error, Result};
use crate::geometry::{DiscreteManifold, GridPoint};

const MAGIC: &[u8; 4] = b"ISPD";
const VERSION: u32 = 1;

struct Sink<W: Write> {
    w: W,
}

impl<W: Write> Sink<W> {
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.w.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.w.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.w.write_all(&v.to_le_bytes())
    }
}

struct Source<R: Read> {
    r: R,
}

impl<R: Read> Source<R> {
    fn bytes<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b)?;
        Ok(b)
    }
    fn u32(&mut self) -> std::io::Result<u32> {
        self.bytes().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        self.bytes().map(u64::from_le_bytes)
    }
    fn f64(&mut self) -> std::io::Result<f64> {
        self.bytes().map(f64::from_le_bytes)
    }
}

/// Binary archive: header (magic, version, n, m, J, |U|, δ, seed, perturbed
/// mode count, normalization residual), the U indices, then per mode λ, the
/// values on U and the gradients on U. Little-endian throughout.
pub fn write_archive(data: &SpectralData, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut s = Sink {
        w: BufWriter::new(file),
    };
    let write = |s: &mut Sink<BufWriter<File>>| -> std::io::Result<()> {
        s.w.write_all(MAGIC)?;
        s.u32(VERSION)?;
        s.u32(data.dim() as u32)?;
        s.u32(data.manifold().resolution() as u32)?;
        s.u32(data.mode_count() as u32)?;
        s.u32(data.u_points().len() as u32)?;
        let p = data.perturbation();
        s.f64(p.map_or(0.0, |p| p.delta))?;
        s.u64(p.map_or(0, |p| p.seed))?;
        s.u32(p.map_or(u32::MAX, |p| p.perturbed_modes as u32))?;
        s.f64(data.normalization_residual())?;
        for x in data.u_points() {
            s.u64(x.0 as u64)?;
        }
        for j in 0..data.mode_count() {
            s.f64(data.eigenvalues()[j])?;
            for &v in data.values(j) {
                s.f64(v)?;
            }
            for &g in data.gradients(j) {
                s.f64(g)?;
            }
        }
        s.w.flush()
    };
    write(&mut s).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<SpectralData> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut s = Source {
        r: BufReader::new(file),
    };
    let io = |e| Error::io(path, e);
    let magic: [u8; 4] = s.bytes().map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Archive("bad magic".into()));
    }
    let version = s.u32().map_err(io)?;
    if version != VERSION {
        return Err(Error::Archive(format!("unsupported version {version}")));
    }
    let n = s.u32().map_err(io)? as usize;
    let m = s.u32().map_err(io)? as usize;
    let j = s.u32().map_err(io)? as usize;
    let u_len = s.u32().map_err(io)? as usize;
    let delta = s.f64().map_err(io)?;
    let seed = s.u64().map_err(io)?;
    let perturbed = s.u32().map_err(io)?;
    let residual = s.f64().map_err(io)?;
    let man = DiscreteManifold::flat_torus(n, m).map_err(|e| Error::Archive(e.to_string()))?;
    let mut u = Vec::with_capacity(u_len);
    for _ in 0..u_len {
        let i = s.u64().map_err(io)? as usize;
        if i >= man.len() {
            return Err(Error::Archive(format!("grid index {i} out of range")));
        }
        u.push(GridPoint(i));
    }
    let mut eigenvalues = Vec::with_capacity(j);
    let mut values = Vec::with_capacity(j);
    let mut gradients = Vec::with_capacity(j);
    for _ in 0..j {
        eigenvalues.push(s.f64().map_err(io)?);
        values.push((0..u_len).map(|_| s.f64()).collect::<std::io::Result<Vec<_>>>().map_err(io)?);
        gradients.push(
            (0..u_len * n)
                .map(|_| s.f64())
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(io)?,
        );
    }
    let mut data = SpectralData::new(&man, u, eigenvalues, values, gradients, residual);
    if perturbed != u32::MAX {
        data.perturbation = Some(PerturbationRecord {
            delta,
            seed,
            model: "gaussian_bumps".into(),
            perturbed_modes: perturbed as usize,
        });
    }
    Ok(data)
}

/// One row per (mode, U point): j, λ, grid index, coordinates, value, gradient.
pub fn export_csv(data: &SpectralData, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Archive(e.to_string()))?;
    let n = data.dim();
    let mut header = vec!["j", "lambda", "grid_index", "x1", "x2", "value"];
    header.extend(["grad1", "grad2"].iter().take(n));
    w.write_record(&header).map_err(|e| Error::Archive(e.to_string()))?;
    let man = data.manifold();
    for j in 0..data.mode_count() {
        for (i, &x) in data.u_points().iter().enumerate() {
            let c = man.coords(x);
            let mut row = vec![
                (j + 1).to_string(),
                data.eigenvalues()[j].to_string(),
                x.0.to_string(),
                c[0].to_string(),
                c[1].to_string(),
                data.values(j)[i].to_string(),
            ];
            row.extend(data.gradients(j)[i * n..(i + 1) * n].iter().map(|g| g.to_string()));
            w.write_record(&row).map_err(|e| Error::Archive(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{perturb, solve_forward, PotentialField, PotentialSpec};

    #[test]
    fn archive_round_trip() {
        let man = DiscreteManifold::flat_torus(2, 12).unwrap();
        let q = PotentialField::sample(&man, &PotentialSpec::cos_x1(1.0, 0.2), 2.0).unwrap();
        let sol = solve_forward(&man, &q, 7).unwrap();
        let data = sol.restrict(&man.ball_points(GridPoint(40), 1.2));
        let dir = tempfile::tempdir().unwrap();
        for d in [data.clone(), perturb(&data, 0.2, 3).unwrap()] {
            let path = dir.path().join("data.ispd");
            write_archive(&d, &path).unwrap();
            assert_eq!(read_archive(&path).unwrap(), d);
        }
        let csv_path = dir.path().join("data.csv");
        export_csv(&data, &csv_path).unwrap();
        let text = std::fs::read_to_string(csv_path).unwrap();
        assert_eq!(text.lines().count(), 1 + 7 * data.u_points().len());
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"NOPE1234").unwrap();
        assert!(matches!(read_archive(&path), Err(Error::Archive(_))));
    }
}
