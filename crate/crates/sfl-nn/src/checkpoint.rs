//! Model checkpoint format.
//!
//! Layout (little-endian):
//!   magic  b"SFLX"
//!   version u16 (currently 1)
//!   unit count u16, then per unit: kind tag u8 + shape ints (u32 each)
//!     0 Linear  (inputs, outputs)
//!     1 Conv2d  (in_ch, out_ch, kernel, stride, pad)
//!     2 ReLU    ()
//!     3 MaxPool2x2 ()
//!     4 Flatten ()
//!   then, for each parameterized unit in order, weight then bias as:
//!     rank u8, dims u32 x rank, data f32 x n

use std::io::{Read, Write};

use crate::error::NnError;
use crate::tensor::Tensor;
use crate::unit::{param_shapes, ParamSet, UnitParams, UnitSpec};

const MAGIC: &[u8; 4] = b"SFLX";
const VERSION: u16 = 1;

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

fn write_u16(w: &mut impl Write, v: u16) -> Result<(), NnError> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<(), NnError> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N], NnError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| bad("truncated checkpoint"))?;
    Ok(buf)
}

fn read_u16(r: &mut impl Read) -> Result<u16, NnError> {
    Ok(u16::from_le_bytes(read_exact::<2>(r)?))
}

fn read_u32(r: &mut impl Read) -> Result<u32, NnError> {
    Ok(u32::from_le_bytes(read_exact::<4>(r)?))
}

fn unit_fields(u: &UnitSpec) -> (u8, Vec<u32>) {
    match *u {
        UnitSpec::Linear { inputs, outputs } => (0, vec![inputs as u32, outputs as u32]),
        UnitSpec::Conv2d { in_ch, out_ch, kernel, stride, pad } => (
            1,
            vec![in_ch as u32, out_ch as u32, kernel as u32, stride as u32, pad as u32],
        ),
        UnitSpec::ReLU => (2, vec![]),
        UnitSpec::MaxPool2x2 => (3, vec![]),
        UnitSpec::Flatten => (4, vec![]),
    }
}

fn write_tensor(w: &mut impl Write, t: &Tensor<f32>) -> Result<(), NnError> {
    w.write_all(&[t.dims().len() as u8])?;
    for &d in t.dims() {
        write_u32(w, d as u32)?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor<f32>, NnError> {
    let rank = read_exact::<1>(r)?[0] as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u32(r)? as usize);
    }
    let n: usize = dims.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(f32::from_le_bytes(read_exact::<4>(r)?));
    }
    Tensor::new(dims, data).map_err(|e| bad(e.to_string()))
}

pub fn save_model(
    w: &mut impl Write,
    units: &[UnitSpec],
    params: &ParamSet<f32>,
) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    write_u16(w, VERSION)?;
    write_u16(w, units.len() as u16)?;
    for u in units {
        let (tag, fields) = unit_fields(u);
        w.write_all(&[tag])?;
        for f in fields {
            write_u32(w, f)?;
        }
    }
    for (i, u) in units.iter().enumerate() {
        if u.has_params() {
            let p = params
                .get(i)
                .ok_or_else(|| bad(format!("unit {i} missing parameters")))?;
            write_tensor(w, &p.weight)?;
            write_tensor(w, &p.bias)?;
        }
    }
    Ok(())
}

pub fn load_model(r: &mut impl Read) -> Result<(Vec<UnitSpec>, ParamSet<f32>), NnError> {
    let magic = read_exact::<4>(r)?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:02x?}")));
    }
    let version = read_u16(r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = read_u16(r)? as usize;
    let mut units = Vec::with_capacity(count);
    for i in 0..count {
        let tag = read_exact::<1>(r)?[0];
        let unit = match tag {
            0 => UnitSpec::Linear {
                inputs: read_u32(r)? as usize,
                outputs: read_u32(r)? as usize,
            },
            1 => UnitSpec::Conv2d {
                in_ch: read_u32(r)? as usize,
                out_ch: read_u32(r)? as usize,
                kernel: read_u32(r)? as usize,
                stride: read_u32(r)? as usize,
                pad: read_u32(r)? as usize,
            },
            2 => UnitSpec::ReLU,
            3 => UnitSpec::MaxPool2x2,
            4 => UnitSpec::Flatten,
            t => return Err(bad(format!("unknown unit tag {t} at unit {i}"))),
        };
        units.push(unit);
    }
    let mut entries = Vec::with_capacity(count);
    for (i, u) in units.iter().enumerate() {
        if u.has_params() {
            let weight = read_tensor(r)?;
            let bias = read_tensor(r)?;
            let (wdims, bdims) = param_shapes(u).unwrap();
            if weight.dims() != wdims || bias.dims() != bdims {
                return Err(bad(format!("unit {i}: parameter shape mismatch")));
            }
            entries.push(Some(UnitParams { weight, bias }));
        } else {
            entries.push(None);
        }
    }
    Ok((units, ParamSet::from_entries(entries)))
}

pub fn save_model_file(
    path: &std::path::Path,
    units: &[UnitSpec],
    params: &ParamSet<f32>,
) -> Result<(), NnError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_model(&mut f, units, params)
}

pub fn load_model_file(path: &std::path::Path) -> Result<(Vec<UnitSpec>, ParamSet<f32>), NnError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    load_model(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unit::init_params;
    use crate::Rng;

    #[test]
    fn round_trip_preserves_everything() {
        let units = vec![
            UnitSpec::Conv2d { in_ch: 1, out_ch: 3, kernel: 3, stride: 2, pad: 1 },
            UnitSpec::ReLU,
            UnitSpec::Flatten,
            UnitSpec::Linear { inputs: 48, outputs: 10 },
        ];
        let params = init_params::<f32>(&units, &Rng::from_seed(9));
        let mut buf = Vec::new();
        save_model(&mut buf, &units, &params).unwrap();
        let (u2, p2) = load_model(&mut buf.as_slice()).unwrap();
        assert_eq!(units, u2);
        assert_eq!(params, p2);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let err = load_model(&mut &b"NOPE"[..]).unwrap_err();
        assert!(matches!(err, NnError::Checkpoint(_)));

        let units = vec![UnitSpec::Linear { inputs: 2, outputs: 2 }, UnitSpec::ReLU];
        let params = init_params::<f32>(&units, &Rng::from_seed(0));
        let mut buf = Vec::new();
        save_model(&mut buf, &units, &params).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(load_model(&mut buf.as_slice()).is_err());
    }
}
