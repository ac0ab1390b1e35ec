//! Flat binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GRSP" | version: u32
//! repeated until EOF:
//!   name_len: u32 | name: UTF-8 bytes | rank: u32 | dims: rank x u64 | data: numel x f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{AutodiffError, Result};
use crate::nn::Parameterized;
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 4] = b"GRSP";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Checkpoint(msg.into())
}

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= buf.len())
        .ok_or_else(|| bad(format!("truncated record at byte {pos}")))?;
    let s = &buf[*pos..end];
    *pos = end;
    Ok(s)
}

fn u32_at(buf: &[u8], pos: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, pos, 4)?.try_into().unwrap()))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0;
    if take(&buf, &mut pos, 4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32_at(&buf, &mut pos)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while pos < buf.len() {
        let name_len = u32_at(&buf, &mut pos)? as usize;
        let name = std::str::from_utf8(take(&buf, &mut pos, name_len)?)
            .map_err(|_| bad("tensor name is not UTF-8"))?
            .to_string();
        let rank = u32_at(&buf, &mut pos)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u64::from_le_bytes(take(&buf, &mut pos, 8)?.try_into().unwrap());
            shape.push(usize::try_from(d).map_err(|_| bad("dimension overflow"))?);
        }
        let n = numel(&shape);
        let bytes = take(&buf, &mut pos, n.checked_mul(8).ok_or_else(|| bad("size overflow"))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn save<P: Parameterized + ?Sized>(params: &P, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_tensors(std::io::BufWriter::new(f), &params.named_tensors())
}

/// Load into a module whose names and shapes must match the file exactly.
pub fn load_into<P: Parameterized + ?Sized>(params: &mut P, path: &Path) -> Result<()> {
    let f = std::fs::File::open(path)?;
    let tensors = read_tensors(std::io::BufReader::new(f))?;
    assign(params, &tensors)
}

pub fn assign<P: Parameterized + ?Sized>(params: &mut P, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut expected = Vec::new();
    params.visit(&mut |name, t| expected.push((name.to_string(), t.shape().to_vec())));
    if expected.len() != tensors.len() {
        return Err(bad(format!(
            "expected {} tensors, checkpoint has {}",
            expected.len(),
            tensors.len()
        )));
    }
    for ((en, es), (n, t)) in expected.iter().zip(tensors) {
        if en != n || es.as_slice() != t.shape() {
            return Err(bad(format!(
                "tensor mismatch: expected `{en}` {es:?}, found `{n}` {:?}",
                t.shape()
            )));
        }
    }
    let mut it = tensors.iter();
    params.visit_mut(&mut |_, t| {
        let (_, src) = it.next().unwrap();
        t.data_mut().copy_from_slice(src.data());
    });
    Ok(())
}
