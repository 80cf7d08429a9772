//! Problem-bundle serialization.
//!
//! A bundle directory holds `A.f64`, `b.f64`, `xstar.f64` (little-endian
//! 64-bit floats behind a 16-byte header: magic "ULZ1", rows u32, cols u32,
//! reserved u32) plus `meta.csv` with key,value rows.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::problem::ProblemInstance;

const MAGIC: &[u8; 4] = b"ULZ1";

pub fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&(m.rows as u32).to_le_bytes())?;
    f.write_all(&(m.cols as u32).to_le_bytes())?;
    f.write_all(&0u32.to_le_bytes())?;
    let mut buf = Vec::with_capacity(m.data.len() * 8);
    for v in &m.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    let mut f = fs::File::open(path)?;
    let mut header = [0u8; 16];
    f.read_exact(&mut header)?;
    if &header[0..4] != MAGIC {
        return Err(Error::Parse(format!("{}: bad magic", path.display())));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut raw = Vec::new();
    f.read_to_end(&mut raw)?;
    if raw.len() != rows * cols * 8 {
        return Err(Error::Parse(format!(
            "{}: payload is {} bytes, expected {}",
            path.display(),
            raw.len(),
            rows * cols * 8
        )));
    }
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseMatrix::from_vec(rows, cols, data)
}

pub fn write_vector(path: &Path, v: &DenseVector) -> Result<()> {
    write_matrix(
        path,
        &DenseMatrix { rows: v.len(), cols: 1, data: v.data.clone() },
    )
}

pub fn read_vector(path: &Path) -> Result<DenseVector> {
    let m = read_matrix(path)?;
    if m.cols != 1 {
        return Err(Error::Parse(format!(
            "{}: expected a column vector, got {}x{}",
            path.display(),
            m.rows,
            m.cols
        )));
    }
    Ok(DenseVector::new(m.data))
}

fn fmt_meta(v: Option<f64>) -> String {
    match v {
        Some(x) if x == f64::INFINITY => "inf".into(),
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Write one problem bundle into `dir` (created if absent).
pub fn write_bundle(dir: &Path, p: &ProblemInstance, kappa: Option<f64>) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(&dir.join("A.f64"), &p.a)?;
    write_vector(&dir.join("b.f64"), &p.b)?;
    write_vector(&dir.join("xstar.f64"), &p.x_star)?;
    let mut meta = String::new();
    meta.push_str(&format!("M,{}\n", p.m()));
    meta.push_str(&format!("N,{}\n", p.n()));
    meta.push_str(&format!("seed,{}\n", p.seed));
    meta.push_str(&format!("snr_db,{}\n", fmt_meta(p.snr_db)));
    meta.push_str(&format!("kappa,{}\n", fmt_meta(kappa)));
    meta.push_str("resample_min_support,2\n");
    fs::write(dir.join("meta.csv"), meta)?;
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<ProblemInstance> {
    let a = read_matrix(&dir.join("A.f64"))?;
    let b = read_vector(&dir.join("b.f64"))?;
    let x_star = read_vector(&dir.join("xstar.f64"))?;
    let meta = fs::read_to_string(dir.join("meta.csv"))?;
    let mut seed = 0u64;
    let mut snr_db = None;
    for line in meta.lines() {
        let Some((k, v)) = line.split_once(',') else { continue };
        match k {
            "seed" => {
                seed = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("meta.csv: bad seed {v}")))?
            }
            "snr_db" if !v.trim().is_empty() => {
                snr_db = Some(if v.trim() == "inf" {
                    f64::INFINITY
                } else {
                    v.trim()
                        .parse()
                        .map_err(|_| Error::Parse(format!("meta.csv: bad snr {v}")))?
                });
            }
            _ => {}
        }
    }
    ProblemInstance::new(a, b, x_star, snr_db, seed)
}

/// True if `dir` looks like a bundle directory.
pub fn is_bundle(dir: &Path) -> bool {
    dir.join("A.f64").is_file() && dir.join("meta.csv").is_file()
}
