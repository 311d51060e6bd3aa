//! Matrix and vector exchange formats.
//!
//! Two formats are supported at the I/O boundary:
//! - headerless CSV, one matrix row per line (a vector is a single column);
//! - a binary format: 8-byte magic `GORTHANT`, `u32` rows, `u32` cols
//!   (little-endian), then the `f64` payload in column-major order,
//!   little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GORTHANT";

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{}", m[(r, c)])).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row: std::result::Result<Vec<f64>, _> =
            rec.iter().map(|s| s.parse::<f64>()).collect();
        let row = row.map_err(|e| Error::BadMatrixFile(format!("{}: {e}", path.display())))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::BadMatrixFile(format!(
                    "{}: ragged rows ({} vs {})",
                    path.display(),
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::BadMatrixFile(format!("{}: empty", path.display())));
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(nr, nc, |r, c| rows[r][c]))
}

pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() == 1 {
        Ok(DVector::from_column_slice(m.column(0).as_slice()))
    } else if m.nrows() == 1 {
        Ok(DVector::from_row_slice(&m.row(0).iter().copied().collect::<Vec<_>>()))
    } else {
        Err(Error::BadMatrixFile(format!(
            "{}: expected a vector, got {}x{}",
            path.display(),
            m.nrows(),
            m.ncols()
        )))
    }
}

pub fn write_vector_csv(path: &Path, v: &DVector<f64>) -> Result<()> {
    write_matrix_csv(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

pub fn write_matrix_bin(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(m.nrows() as u32).to_le_bytes())?;
    w.write_all(&(m.ncols() as u32).to_le_bytes())?;
    // nalgebra stores column-major, matching the payload contract.
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_bin(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadMatrixFile(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let rows = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let cols = u32::from_le_bytes(b4) as usize;
    let mut payload = vec![0.0f64; rows * cols];
    let mut b8 = [0u8; 8];
    for slot in payload.iter_mut() {
        r.read_exact(&mut b8)?;
        *slot = f64::from_le_bytes(b8);
    }
    Ok(DMatrix::from_column_slice(rows, cols, &payload))
}

/// Reads a matrix, sniffing the binary magic first and falling back to CSV.
pub fn read_matrix_auto(path: &Path) -> Result<DMatrix<f64>> {
    let mut f = File::open(path)?;
    let mut magic = [0u8; 8];
    let n = f.read(&mut magic)?;
    drop(f);
    if n == 8 && &magic == MAGIC {
        read_matrix_bin(path)
    } else {
        read_matrix_csv(path)
    }
}
