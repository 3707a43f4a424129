//! Self-describing binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "FSNCKPT\0"
//! version  u32      currently 1
//! count    u64      number of parameters
//! per parameter:
//!   name      u32 length + UTF-8 bytes
//!   shape     u32 rank + u64 extents
//!   trainable u8 (0/1)
//!   step      u64
//!   values    f64 × n   (raw little-endian)
//!   moment1   f64 × n
//!   moment2   f64 × n
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NumericsError, Parameter, ParameterSet, Result, Tensor};

const MAGIC: &[u8; 8] = b"FSNCKPT\0";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, params: &ParameterSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, p) in params.iter() {
        if !p.value.is_finite() {
            return Err(NumericsError::NonFinite { op: "save_checkpoint" });
        }
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for extent in p.value.shape() {
            w.write_all(&(*extent as u64).to_le_bytes())?;
        }
        w.write_all(&[u8::from(p.trainable)])?;
        w.write_all(&p.step.to_le_bytes())?;
        for t in [&p.value, &p.first_moment, &p.second_moment] {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterSet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NumericsError::CheckpointFormat(format!(
            "bad magic {magic:?} in {}",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NumericsError::CheckpointFormat(format!(
            "unsupported version {version}"
        )));
    }
    let count = read_u64(&mut r)?;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| NumericsError::CheckpointFormat(format!("bad name: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let mut step = [0u8; 8];
        r.read_exact(&mut step)?;
        let mut tensors = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            tensors.push(Tensor::new(shape.clone(), data)?);
        }
        let second_moment = tensors.pop().unwrap();
        let first_moment = tensors.pop().unwrap();
        let value = tensors.pop().unwrap();
        params.insert_parameter(
            name,
            Parameter {
                value,
                trainable: flag[0] != 0,
                first_moment,
                second_moment,
                step: u64::from_le_bytes(step),
            },
        );
    }
    Ok(params)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
