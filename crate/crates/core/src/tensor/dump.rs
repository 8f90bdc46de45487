//! "GDT1" tensor dumps: the 4 magic bytes, a little-endian u32 rank, `rank`
//! little-endian u32 extents, then the elements as little-endian f32 in
//! row-major order.

use std::io::{Read, Write};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const GDT1_MAGIC: &[u8; 4] = b"GDT1";

pub fn write_gdt1<T: Scalar, W: Write>(tensor: &Tensor<T>, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + 4 * tensor.rank() + 4 * tensor.len());
    buf.extend_from_slice(GDT1_MAGIC);
    buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in tensor.data() {
        buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_gdt1<R: Read>(mut r: R) -> Result<Tensor<f32>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::Format(e.to_string()))?;
    if bytes.len() < 8 || &bytes[..4] != GDT1_MAGIC {
        return Err(Error::Format("missing GDT1 magic".into()));
    }
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::Format("truncated header".into()))
    };
    let rank = word(4)? as usize;
    let shape: Vec<usize> = (0..rank)
        .map(|k| word(8 + 4 * k).map(|d| d as usize))
        .collect::<Result<_>>()?;
    let start = 8 + 4 * rank;
    let n: usize = shape.iter().product();
    let body = &bytes[start..];
    if body.len() != 4 * n {
        return Err(Error::Format(format!(
            "expected {} data bytes for shape {shape:?}, found {}",
            4 * n,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_layout() {
        let t = Tensor::<f32>::from_vec(&[2, 1], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_gdt1(&t, &mut buf).unwrap();
        let mut want = b"GDT1".to_vec();
        want.extend_from_slice(&[2, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_gdt1(&b"GDT2\x01\0\0\0"[..]).is_err());
        assert!(read_gdt1(&b"GDT1\x01\0\0\0\x02\0\0\0\0\0\0\0"[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(shape in proptest::collection::vec(1usize..5, 1..4), seed in any::<u32>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 * 1e-6).collect();
            let t = Tensor::from_vec(&shape, data).unwrap();
            let mut buf = Vec::new();
            write_gdt1(&t, &mut buf).unwrap();
            prop_assert_eq!(read_gdt1(&buf[..]).unwrap(), t);
        }
    }
}
