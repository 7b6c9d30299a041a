//! Little-endian binary containers.
//!
//! | container | header                                                         | payload                         |
//! |-----------|----------------------------------------------------------------|---------------------------------|
//! | `PKBM`    | magic, `u16` version, `u8` family, `u32` count, rows, cols     | bits, row-major, LSB first      |
//! | `PKBA`    | magic, `u16` version, `u8` family, `u32` count, rows, cols     | `f32` additive mask values      |
//! | `PKBL`    | magic, `u32` frames, latents, channels                         | `f32` latent values             |
//!
//! Bit `k` of a `PKBM` payload lives in byte `k / 8` at position `k % 8`.
//! Unused trailing bits must be zero. Decoders reject truncated and
//! over-long payloads.

use ndarray::Array3;

use crate::attention::NEG;
use crate::error::{Error, Result};
use crate::maskgen::{AttentionMaskBundle, BinaryMatrix, MaskFamily};
use crate::pipeline::LatentVideo;

pub const MASK_MAGIC: &[u8; 4] = b"PKBM";
pub const ADDITIVE_MAGIC: &[u8; 4] = b"PKBA";
pub const LATENT_MAGIC: &[u8; 4] = b"PKBL";
pub const FORMAT_VERSION: u16 = 1;

const MASK_HEADER_LEN: usize = 4 + 2 + 1 + 12;
const LATENT_HEADER_LEN: usize = 4 + 12;

/// A decoded mask container: one family, `count` matrices of equal shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskFile {
    pub family: MaskFamily,
    pub matrices: Vec<BinaryMatrix>,
}

/// Additive mask values as stored in a `PKBA` container.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveFile {
    pub family: MaskFamily,
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            fmt_err(format!("truncated: need {n} bytes at offset {}, have {}", self.pos, self.buf.len() - self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(fmt_err(format!("bad magic {:?}, expected {:?}", got, std::str::from_utf8(magic).unwrap())));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(fmt_err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn total_entries(dims: [u32; 3]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| fmt_err("dimensions overflow"))
}

fn write_mask_header(out: &mut Vec<u8>, magic: &[u8; 4], family: MaskFamily, dims: [u32; 3]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(family.tag());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
}

fn read_mask_header(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<(MaskFamily, [u32; 3])> {
    r.magic(magic)?;
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    let tag = r.u8()?;
    let family = MaskFamily::from_tag(tag).ok_or_else(|| fmt_err(format!("unknown family tag {tag}")))?;
    Ok((family, [r.u32()?, r.u32()?, r.u32()?]))
}

fn common_shape(matrices: &[BinaryMatrix]) -> Result<(usize, usize)> {
    let shape = matrices.first().map_or((0, 0), BinaryMatrix::shape);
    if let Some(bad) = matrices.iter().find(|m| m.shape() != shape) {
        return Err(Error::ShapeMismatch(format!("matrix {:?} in a {:?} set", bad.shape(), shape)));
    }
    Ok(shape)
}

fn dims_u32(count: usize, rows: usize, cols: usize) -> Result<[u32; 3]> {
    let conv = |v: usize| u32::try_from(v).map_err(|_| fmt_err(format!("dimension {v} exceeds u32")));
    Ok([conv(count)?, conv(rows)?, conv(cols)?])
}

pub fn encode_masks(family: MaskFamily, matrices: &[BinaryMatrix]) -> Result<Vec<u8>> {
    let (rows, cols) = common_shape(matrices)?;
    let dims = dims_u32(matrices.len(), rows, cols)?;
    let n = matrices.len() * rows * cols;
    let mut out = Vec::with_capacity(MASK_HEADER_LEN + n.div_ceil(8));
    write_mask_header(&mut out, MASK_MAGIC, family, dims);
    let mut payload = vec![0u8; n.div_ceil(8)];
    for (k, bit) in matrices.iter().flat_map(|m| m.as_slice().iter()).enumerate() {
        if *bit {
            payload[k / 8] |= 1 << (k % 8);
        }
    }
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_masks(bytes: &[u8]) -> Result<MaskFile> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let (family, dims) = read_mask_header(&mut r, MASK_MAGIC)?;
    let n = total_entries(dims)?;
    let payload = r.take(n.div_ceil(8))?;
    r.finish()?;
    if n % 8 != 0 && payload[n / 8] >> (n % 8) != 0 {
        return Err(fmt_err("non-zero padding bits"));
    }
    let [count, rows, cols] = dims.map(|d| d as usize);
    let per = rows * cols;
    let matrices = (0..count)
        .map(|m| {
            let data = (m * per..(m + 1) * per).map(|k| payload[k / 8] >> (k % 8) & 1 == 1).collect();
            BinaryMatrix::new(rows, cols, data)
        })
        .collect::<Result<_>>()?;
    Ok(MaskFile { family, matrices })
}

/// Encode each family of a bundle into its own `PKBM` container.
pub fn encode_bundle(bundle: &AttentionMaskBundle) -> Result<Vec<(MaskFamily, Vec<u8>)>> {
    MaskFamily::ALL
        .iter()
        .map(|&f| Ok((f, encode_masks(f, bundle.family(f))?)))
        .collect()
}

/// Decode three containers and check that their shapes agree with each
/// other: shared frame count and latent size, temporal matrices square.
pub fn decode_bundle(cross: &[u8], spatial: &[u8], temporal: &[u8]) -> Result<[MaskFile; 3]> {
    let files = [decode_masks(cross)?, decode_masks(spatial)?, decode_masks(temporal)?];
    for (file, expected) in files.iter().zip(MaskFamily::ALL) {
        if file.family != expected {
            return Err(Error::Validation(format!(
                "expected a {} container, found {}",
                expected.name(),
                file.family.name()
            )));
        }
    }
    let shape = |f: &MaskFile| (f.matrices.len(), f.matrices.first().map_or((0, 0), BinaryMatrix::shape));
    let (nc, (lc, _)) = shape(&files[0]);
    let (ns, (ls, ls2)) = shape(&files[1]);
    let (nt, (ft, ft2)) = shape(&files[2]);
    if nc != ns || ns != ft || ft != ft2 || lc != ls || ls != ls2 || ls != nt {
        return Err(Error::Validation(format!(
            "inconsistent bundle: cross {nc}x{lc}, spatial {ns}x{ls}x{ls2}, temporal {nt}x{ft}x{ft2}"
        )));
    }
    Ok(files)
}

/// `PKBA`: the additive form of a mask set, `1 -> 0.0`, `0 -> NEG` as `f32`.
pub fn encode_additive(family: MaskFamily, matrices: &[BinaryMatrix]) -> Result<Vec<u8>> {
    let (rows, cols) = common_shape(matrices)?;
    let dims = dims_u32(matrices.len(), rows, cols)?;
    let n = matrices.len() * rows * cols;
    let mut out = Vec::with_capacity(MASK_HEADER_LEN + 4 * n);
    write_mask_header(&mut out, ADDITIVE_MAGIC, family, dims);
    let neg = NEG as f32;
    for &bit in matrices.iter().flat_map(|m| m.as_slice().iter()) {
        out.extend_from_slice(&(if bit { 0.0f32 } else { neg }).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_additive(bytes: &[u8]) -> Result<AdditiveFile> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let (family, dims) = read_mask_header(&mut r, ADDITIVE_MAGIC)?;
    let n = total_entries(dims)?;
    let payload = r.take(n.checked_mul(4).ok_or_else(|| fmt_err("dimensions overflow"))?)?;
    r.finish()?;
    let values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let [count, rows, cols] = dims.map(|d| d as usize);
    Ok(AdditiveFile { family, count, rows, cols, values })
}

/// `PKBL`: latent video as `f32`. Values are narrowed from `f64`.
pub fn encode_latent(z: &LatentVideo) -> Result<Vec<u8>> {
    let (f, l, c) = z.data().dim();
    let dims = dims_u32(f, l, c)?;
    let mut out = Vec::with_capacity(LATENT_HEADER_LEN + 4 * f * l * c);
    out.extend_from_slice(LATENT_MAGIC);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in z.data().iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_latent(bytes: &[u8]) -> Result<LatentVideo> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.magic(LATENT_MAGIC)?;
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    let n = total_entries(dims)?;
    let payload = r.take(n.checked_mul(4).ok_or_else(|| fmt_err("dimensions overflow"))?)?;
    r.finish()?;
    let values: Vec<f64> =
        payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    let [f, l, c] = dims.map(|d| d as usize);
    let data = Array3::from_shape_vec((f, l, c), values).map_err(|e| fmt_err(e.to_string()))?;
    LatentVideo::new(data)
}
