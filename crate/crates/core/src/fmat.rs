//! `FMAT1` dense matrix files: the magic `FMAT1\n`, then `u32` row and column
//! counts, then `rows * cols` row-major `f32` values, all little endian.

use std::io::{self, Read, Write};
use std::path::Path;

use ndarray::Array2;

pub const MAGIC: &[u8; 6] = b"FMAT1\n";

pub fn write_fmat<W: Write>(mut w: W, m: &Array2<f32>) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(m.nrows() as u32).to_le_bytes())?;
    w.write_all(&(m.ncols() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(m.len() * 4);
    for v in m.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_fmat<R: Read>(mut r: R) -> io::Result<Array2<f32>> {
    let invalid = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("not an FMAT1 file"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let rows = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u32::from_le_bytes(word) as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != rows * cols * 4 {
        return Err(invalid("payload length does not match header"));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| invalid(&e.to_string()))
}

pub fn save_fmat(path: &Path, m: &Array2<f32>) -> io::Result<()> {
    let mut buf = Vec::new();
    write_fmat(&mut buf, m)?;
    std::fs::write(path, buf)
}

pub fn load_fmat(path: &Path) -> io::Result<Array2<f32>> {
    read_fmat(std::fs::File::open(path)?)
}
