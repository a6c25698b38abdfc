//! Raw tensor files (`MPTF`) and 8-bit binary PGM export.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Element, Tensor};

pub const MPTF_MAGIC: &[u8; 4] = b"MPTF";
pub const MPTF_VERSION: u32 = 1;
const MAX_RANK: u32 = 8;

/// A tensor of either element type, as read from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    pub fn cast<E: Element>(&self) -> Tensor<E> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }

    /// The tensor as `E`, failing if it was stored with another dtype.
    pub fn into_exact<E: Element>(self) -> Result<Tensor<E>> {
        if self.dtype() != E::DTYPE {
            return Err(Error::DtypeMismatch { expected: E::DTYPE.name(), found: self.dtype().name() });
        }
        Ok(self.cast())
    }
}

/// Little-endian cursor with truncation diagnostics.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(Error::Truncated { needed: n, available });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| Error::Malformed { kind: "string", msg: e.to_string() })
    }

    pub fn magic(&mut self, expected: &'static [u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != expected {
            return Err(Error::BadMagic { expected: std::str::from_utf8(expected).unwrap(), found: found.to_vec() });
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    /// Rank, dims, dtype tag and payload of one tensor record.
    pub fn tensor(&mut self) -> Result<AnyTensor> {
        let rank = self.u32()?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Malformed { kind: "tensor", msg: format!("rank {rank} outside 1..={MAX_RANK}") });
        }
        let dims: Vec<u64> = (0..rank).map(|_| self.u32().map(u64::from)).collect::<Result<_>>()?;
        let dtype = DType::from_tag(self.u8()?)?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .filter(|&n| n.checked_mul(dtype.size()).is_some())
            .ok_or_else(|| Error::DimensionOverflow(dims.clone()))?;
        if dims.contains(&0) {
            return Err(Error::Malformed { kind: "tensor", msg: format!("zero extent in {dims:?}") });
        }
        let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
        let payload = self.take(numel * dtype.size())?;
        Ok(match dtype {
            DType::F32 => AnyTensor::F32(Tensor::new(shape, decode(payload))?),
            DType::F64 => AnyTensor::F64(Tensor::new(shape, decode(payload))?),
        })
    }
}

fn decode<E: Element>(bytes: &[u8]) -> Vec<E> {
    bytes.chunks_exact(E::DTYPE.size()).map(E::read_le).collect()
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub(crate) fn put_tensor<E: Element>(out: &mut Vec<u8>, t: &Tensor<E>) -> Result<()> {
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::DimensionOverflow(t.shape().iter().map(|&d| d as u64).collect()))?;
        put_u32(out, d);
    }
    out.push(E::DTYPE.tag());
    for &v in t.data() {
        v.write_le(out);
    }
    Ok(())
}

pub fn encode_mptf<E: Element>(t: &Tensor<E>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + t.numel() * E::DTYPE.size());
    out.extend_from_slice(MPTF_MAGIC);
    put_u32(&mut out, MPTF_VERSION);
    put_tensor(&mut out, t)?;
    Ok(out)
}

pub fn decode_mptf(bytes: &[u8]) -> Result<AnyTensor> {
    let mut r = Reader::new(bytes);
    r.magic(MPTF_MAGIC)?;
    let version = r.u32()?;
    if version != MPTF_VERSION {
        return Err(Error::VersionMismatch { expected: MPTF_VERSION, found: version });
    }
    let t = r.tensor()?;
    if !r.is_empty() {
        return Err(Error::Malformed { kind: "MPTF", msg: "trailing bytes after payload".into() });
    }
    Ok(t)
}

pub fn write_mptf<E: Element>(path: &Path, t: &Tensor<E>) -> Result<()> {
    fs::write(path, encode_mptf(t)?).map_err(|e| Error::io(path, e))
}

pub fn read_mptf(path: &Path) -> Result<AnyTensor> {
    decode_mptf(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Binary P5 bytes of the last two dimensions, `round(clamp01(x)·255)`.
pub fn encode_pgm<E: Element>(t: &Tensor<E>) -> Result<Vec<u8>> {
    let shape = t.shape();
    let (h, w) = match shape {
        [.., h, w] if h * w == t.numel() => (*h, *w),
        _ => return Err(Error::shape("pgm", format!("expected a single-channel image, got {shape:?}"))),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|v| {
        let v = v.to_f64().unwrap_or(0.0);
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        (v * 255.0).round() as u8
    }));
    Ok(out)
}

/// Parses binary P5 with maxval ≤ 255 into a 1×1×H×W tensor in [0,1].
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor<f64>> {
    let malformed = |msg: &str| Error::Malformed { kind: "PGM", msg: msg.to_string() };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::BadMagic { expected: "P5", found: bytes.iter().take(2).copied().collect() });
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("bad header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("missing whitespace after header"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 || maxval == 0 || maxval > 255 {
        return Err(malformed(&format!("unsupported geometry {w}x{h} maxval {maxval}")));
    }
    let available = bytes.len() - pos;
    if available < w * h {
        return Err(Error::Truncated { needed: w * h, available });
    }
    let scale = maxval as f64;
    let px = bytes[pos..pos + w * h].iter().map(|&b| f64::from(b) / scale).collect();
    Tensor::new(vec![1, 1, h, w], px)
}

pub fn write_pgm<E: Element>(path: &Path, t: &Tensor<E>) -> Result<()> {
    fs::write(path, encode_pgm(t)?).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Tensor<f64>> {
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mptf_round_trip_is_bit_exact() {
        let t = Tensor::<f32>::from_fn(&[2, 3, 4], |i| (i as f32).sin() * 1e-7 + i as f32);
        let back = decode_mptf(&encode_mptf(&t).unwrap()).unwrap().into_exact::<f32>().unwrap();
        assert_eq!(back.shape(), t.shape());
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let d = Tensor::<f64>::from_fn(&[5], |i| 1.0 / (i as f64 + 3.0));
        assert_eq!(decode_mptf(&encode_mptf(&d).unwrap()).unwrap(), AnyTensor::F64(d));
    }

    #[test]
    fn mptf_layout() {
        let t = Tensor::<f64>::from_f64(&[1, 2], &[1.0, -2.0]).unwrap();
        let bytes = encode_mptf(&t).unwrap();
        assert_eq!(&bytes[..4], b"MPTF");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(bytes[20], DType::F64.tag());
        assert_eq!(&bytes[21..29], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 37);
    }

    #[test]
    fn mptf_errors_are_distinct() {
        let t = Tensor::<f64>::ones(&[4, 4]);
        let good = encode_mptf(&t).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_mptf(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_mptf(&good[..good.len() - 3]), Err(Error::Truncated { .. })));
        let err = decode_mptf(&good[..good.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated payload"));
        let mut huge = good[..8].to_vec();
        huge.extend_from_slice(&4u32.to_le_bytes());
        for _ in 0..4 {
            huge.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        huge.push(DType::F64.tag());
        assert!(matches!(decode_mptf(&huge), Err(Error::DimensionOverflow(_))));
        let mut version = good.clone();
        version[4] = 9;
        assert!(matches!(decode_mptf(&version), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn pgm_quantisation() {
        let t = Tensor::<f64>::full(&[1, 1, 3, 5], 0.5);
        let bytes = encode_pgm(&t).unwrap();
        let header = b"P5\n5 3\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert!(bytes[header.len()..].iter().all(|&b| b == 128));
        let back = decode_pgm(&bytes).unwrap();
        assert_eq!(back.shape(), &[1, 1, 3, 5]);
        assert!((back.data()[0] - 128.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn pgm_header_comments_and_truncation() {
        let mut bytes = b"P5 # comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 51]);
        assert!(matches!(decode_pgm(&bytes), Err(Error::Truncated { .. })));
        bytes.push(102);
        assert_eq!(decode_pgm(&bytes).unwrap().data(), &[0.0, 1.0, 0.2, 0.4]);
        assert!(matches!(decode_pgm(b"P2\n1 1\n255\n0"), Err(Error::BadMagic { .. })));
    }
}
