//! Block-wise compression of `f64` payloads with a lossless mode and an
//! absolute-error-bounded (fixed-accuracy) mode.
//!
//! # Payload layout
//!
//! All integers little-endian.
//!
//! | offset | size | field                                             |
//! |--------|------|---------------------------------------------------|
//! | 0      | 1    | mode byte: `0` lossless, `1` fixed accuracy       |
//! | 1      | 8    | ε as IEEE-754 `f64` (`0.0` for lossless)          |
//! | 9      | 8    | element count, `u64`                              |
//! | 17     | 4    | block size, `u32`                                 |
//! | 21     | ...  | one record per block: `u32` body length, body     |
//! | end-4  | 4    | CRC-32 (IEEE) over every preceding byte           |
//!
//! Lossless block body for `n` values: the first value's bits as `u64`, then
//! (when `n > 1`) a `u64` bit-plane mask followed by every non-zero bit plane
//! of the `n - 1` residuals, lowest plane first, each `ceil((n-1)/8)` bytes.
//! Residual `i` is the zigzag-encoded wrapping difference of the bit patterns
//! of values `i` and `i - 1`; bit `i - 1` of plane `p` holds bit `p` of it.
//!
//! Fixed-accuracy block body: a tag byte. Tag `0` (quantized) is followed by
//! the first quantization index as `i64`, a bit width `w` as `u8`, and the
//! `n - 1` zigzag-encoded index deltas packed LSB-first at `w` bits each.
//! Tag `1` (raw) is followed by the `n` values as `f64`. Values decode as
//! `index * step` where `step` is the largest power of two not above `2ε`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BLOCK_SIZE: usize = 64;

const HEADER_LEN: usize = 21;
const MODE_LOSSLESS: u8 = 0;
const MODE_ACCURACY: u8 = 1;
const TAG_QUANTIZED: u8 = 0;
const TAG_RAW: u8 = 1;
// quantization indices stay well inside the exactly representable integers
const MAX_INDEX: f64 = (1u64 << 52) as f64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "epsilon", rename_all = "snake_case")]
pub enum CodecMode {
    Lossless,
    FixedAccuracy(f64),
}

impl CodecMode {
    pub fn fixed_accuracy(epsilon: f64) -> Result<Self> {
        if epsilon > 0.0 && epsilon.is_finite() {
            Ok(CodecMode::FixedAccuracy(epsilon))
        } else {
            Err(Error::InvalidArgument(format!(
                "accuracy must be positive and finite, got {epsilon}"
            )))
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self {
            CodecMode::Lossless => None,
            CodecMode::FixedAccuracy(e) => Some(*e),
        }
    }

    fn byte(&self) -> u8 {
        match self {
            CodecMode::Lossless => MODE_LOSSLESS,
            CodecMode::FixedAccuracy(_) => MODE_ACCURACY,
        }
    }
}

impl std::fmt::Display for CodecMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CodecMode::Lossless => write!(f, "lossless"),
            CodecMode::FixedAccuracy(e) => write!(f, "accuracy={e:e}"),
        }
    }
}

impl std::str::FromStr for CodecMode {
    type Err = Error;

    /// Parses `lossless` or `accuracy=<ε>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "lossless" {
            return Ok(CodecMode::Lossless);
        }
        match s.strip_prefix("accuracy=") {
            Some(v) => {
                let eps: f64 = v
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad accuracy value {v:?}")))?;
                CodecMode::fixed_accuracy(eps)
            }
            None => Err(Error::InvalidArgument(format!(
                "unknown mode {s:?}, expected lossless or accuracy=<eps>"
            ))),
        }
    }
}

/// One encoded vector. `payload` holds the complete framed bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedChunk {
    pub mode: CodecMode,
    pub element_count: usize,
    pub block_size: usize,
    pub payload: Vec<u8>,
}

impl CompressedChunk {
    /// Parses and checksums a framed payload.
    pub fn from_bytes(payload: Vec<u8>) -> Result<Self> {
        let (mode, element_count, block_size) = parse_header(&payload)?;
        Ok(Self {
            mode,
            element_count,
            block_size,
            payload,
        })
    }

    pub fn block_count(&self) -> usize {
        self.element_count.div_ceil(self.block_size.max(1))
    }
}

pub fn encode(data: &[f64], mode: CodecMode) -> Result<CompressedChunk> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 4 + 4);
    out.push(mode.byte());
    out.extend_from_slice(&mode.epsilon().unwrap_or(0.0).to_le_bytes());
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    out.extend_from_slice(&(BLOCK_SIZE as u32).to_le_bytes());

    let mut body = Vec::new();
    for block in data.chunks(BLOCK_SIZE) {
        body.clear();
        match mode {
            CodecMode::Lossless => encode_lossless_block(block, &mut body),
            CodecMode::FixedAccuracy(eps) => encode_accuracy_block(block, eps, &mut body),
        }
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());

    Ok(CompressedChunk {
        mode,
        element_count: data.len(),
        block_size: BLOCK_SIZE,
        payload: out,
    })
}

pub fn decode(chunk: &CompressedChunk) -> Result<Vec<f64>> {
    decode_blocks(chunk, chunk.block_count())
}

/// Decodes only the first `blocks` blocks.
pub fn decode_blocks(chunk: &CompressedChunk, blocks: usize) -> Result<Vec<f64>> {
    let (mode, count, block_size) = parse_header(&chunk.payload)?;
    if mode != chunk.mode || count != chunk.element_count || block_size != chunk.block_size {
        return Err(Error::CorruptPayload("header disagrees with chunk metadata".into()));
    }
    if block_size == 0 && count > 0 {
        return Err(Error::CorruptPayload("zero block size".into()));
    }
    let body_end = chunk.payload.len() - 4;
    let mut reader = ByteReader::new(&chunk.payload[HEADER_LEN..body_end]);
    let total_blocks = chunk.block_count();
    let blocks = blocks.min(total_blocks);
    let mut out = Vec::with_capacity((blocks * block_size).min(count));
    for b in 0..blocks {
        let n = block_size.min(count - b * block_size);
        let len = reader.u32()? as usize;
        let body = reader.take(len)?;
        match mode {
            CodecMode::Lossless => decode_lossless_block(body, n, &mut out)?,
            CodecMode::FixedAccuracy(eps) => decode_accuracy_block(body, n, eps, &mut out)?,
        }
    }
    if blocks == total_blocks && !reader.is_empty() {
        return Err(Error::CorruptPayload("trailing bytes after last block".into()));
    }
    Ok(out)
}

/// Raw size (8 bytes per element) over encoded size.
pub fn compression_ratio(chunk: &CompressedChunk) -> f64 {
    (chunk.element_count * 8) as f64 / chunk.payload.len() as f64
}

fn parse_header(payload: &[u8]) -> Result<(CodecMode, usize, usize)> {
    if payload.len() < HEADER_LEN + 4 {
        return Err(Error::CorruptPayload(format!(
            "payload of {} bytes is shorter than the frame",
            payload.len()
        )));
    }
    let (body, crc) = payload.split_at(payload.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::CorruptPayload("checksum mismatch".into()));
    }
    let eps = f64::from_le_bytes(payload[1..9].try_into().unwrap());
    let mode = match payload[0] {
        MODE_LOSSLESS => CodecMode::Lossless,
        MODE_ACCURACY => CodecMode::fixed_accuracy(eps)
            .map_err(|_| Error::CorruptPayload(format!("invalid accuracy {eps}")))?,
        other => return Err(Error::UnknownMode(other)),
    };
    let count = u64::from_le_bytes(payload[9..17].try_into().unwrap()) as usize;
    let block_size = u32::from_le_bytes(payload[17..21].try_into().unwrap()) as usize;
    Ok((mode, count, block_size))
}

#[inline]
fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

#[inline]
fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}

fn encode_lossless_block(block: &[f64], out: &mut Vec<u8>) {
    let first = block[0].to_bits();
    out.extend_from_slice(&first.to_le_bytes());
    if block.len() == 1 {
        return;
    }
    let residuals: Vec<u64> = block
        .windows(2)
        .map(|w| zigzag((w[1].to_bits() as i64).wrapping_sub(w[0].to_bits() as i64)))
        .collect();
    let plane_bytes = residuals.len().div_ceil(8);
    let mut mask = 0u64;
    let mut planes = Vec::new();
    for p in 0..64 {
        let mut plane = vec![0u8; plane_bytes];
        let mut any = false;
        for (i, r) in residuals.iter().enumerate() {
            if (r >> p) & 1 == 1 {
                plane[i / 8] |= 1 << (i % 8);
                any = true;
            }
        }
        if any {
            mask |= 1 << p;
            planes.extend_from_slice(&plane);
        }
    }
    out.extend_from_slice(&mask.to_le_bytes());
    out.extend_from_slice(&planes);
}

fn decode_lossless_block(body: &[u8], n: usize, out: &mut Vec<f64>) -> Result<()> {
    let mut r = ByteReader::new(body);
    let mut prev = r.u64()?;
    out.push(f64::from_bits(prev));
    if n > 1 {
        let count = n - 1;
        let plane_bytes = count.div_ceil(8);
        let mask = r.u64()?;
        let mut residuals = vec![0u64; count];
        for p in 0..64 {
            if (mask >> p) & 1 == 0 {
                continue;
            }
            let plane = r.take(plane_bytes)?;
            for (i, res) in residuals.iter_mut().enumerate() {
                if (plane[i / 8] >> (i % 8)) & 1 == 1 {
                    *res |= 1 << p;
                }
            }
        }
        for res in residuals {
            prev = (prev as i64).wrapping_add(unzigzag(res)) as u64;
            out.push(f64::from_bits(prev));
        }
    }
    if !r.is_empty() {
        return Err(Error::CorruptPayload("lossless block has trailing bytes".into()));
    }
    Ok(())
}

/// Largest power of two not above `2ε`, or zero when that underflows.
pub fn quantization_step(eps: f64) -> f64 {
    let target = 2.0 * eps;
    if !target.is_finite() {
        return f64::from_bits(((1023 + 1023) as u64) << 52);
    }
    let bits = target.to_bits();
    let exponent = (bits >> 52) as i64 & 0x7ff;
    if exponent == 0 {
        // subnormal: keep the leading mantissa bit
        let mantissa = bits & ((1 << 52) - 1);
        if mantissa == 0 {
            return 0.0;
        }
        let lead = 63 - mantissa.leading_zeros() as u64;
        return f64::from_bits(1 << lead);
    }
    f64::from_bits((exponent as u64) << 52)
}

fn encode_accuracy_block(block: &[f64], eps: f64, out: &mut Vec<u8>) {
    match quantize_block(block, eps) {
        Some(indices) => {
            out.push(TAG_QUANTIZED);
            out.extend_from_slice(&indices[0].to_le_bytes());
            let deltas: Vec<u64> = indices.windows(2).map(|w| zigzag(w[1] - w[0])).collect();
            let width = deltas
                .iter()
                .map(|d| 64 - d.leading_zeros())
                .max()
                .unwrap_or(0);
            out.push(width as u8);
            let mut writer = BitWriter::new(out);
            for d in deltas {
                writer.put(d, width);
            }
            writer.finish();
        }
        None => {
            out.push(TAG_RAW);
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

// Quantization indices for the block, or None when a value cannot be
// represented within ε (the block is then stored raw).
fn quantize_block(block: &[f64], eps: f64) -> Option<Vec<i64>> {
    let step = quantization_step(eps);
    if step == 0.0 {
        return None;
    }
    let mut indices = Vec::with_capacity(block.len());
    for &x in block {
        let q = (x / step).round_ties_even();
        if !(q.abs() < MAX_INDEX) {
            return None;
        }
        let recon = q * step;
        // the same comparison a caller would use to check the bound
        if !((recon - x).abs() <= eps) {
            return None;
        }
        indices.push(q as i64);
    }
    Some(indices)
}

fn decode_accuracy_block(body: &[u8], n: usize, eps: f64, out: &mut Vec<f64>) -> Result<()> {
    let mut r = ByteReader::new(body);
    match r.u8()? {
        TAG_QUANTIZED => {
            let step = quantization_step(eps);
            let mut q = r.u64()? as i64;
            let width = r.u8()? as u32;
            if width > 64 {
                return Err(Error::CorruptPayload(format!("bit width {width}")));
            }
            out.push(q as f64 * step);
            let packed = r.take(((n - 1) * width as usize).div_ceil(8))?;
            let mut bits = BitReader::new(packed);
            for _ in 1..n {
                q = q.wrapping_add(unzigzag(bits.get(width)));
                out.push(q as f64 * step);
            }
        }
        TAG_RAW => {
            for _ in 0..n {
                out.push(f64::from_bits(r.u64()?));
            }
        }
        tag => return Err(Error::CorruptPayload(format!("unknown block tag {tag}"))),
    }
    if !r.is_empty() {
        return Err(Error::CorruptPayload("accuracy block has trailing bytes".into()));
    }
    Ok(())
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptPayload("unexpected end of block data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }
}

struct BitWriter<'a> {
    out: &'a mut Vec<u8>,
    acc: u128,
    filled: u32,
}

impl<'a> BitWriter<'a> {
    fn new(out: &'a mut Vec<u8>) -> Self {
        Self {
            out,
            acc: 0,
            filled: 0,
        }
    }

    fn put(&mut self, value: u64, width: u32) {
        if width == 0 {
            return;
        }
        self.acc |= (value as u128) << self.filled;
        self.filled += width;
        while self.filled >= 8 {
            self.out.push(self.acc as u8);
            self.acc >>= 8;
            self.filled -= 8;
        }
    }

    fn finish(self) {
        if self.filled > 0 {
            self.out.push(self.acc as u8);
        }
    }
}

struct BitReader<'a> {
    buf: &'a [u8],
    pos: usize,
    acc: u128,
    filled: u32,
}

impl<'a> BitReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self {
            buf,
            pos: 0,
            acc: 0,
            filled: 0,
        }
    }

    // caller sized the buffer, so running out reads zeros
    fn get(&mut self, width: u32) -> u64 {
        if width == 0 {
            return 0;
        }
        while self.filled < width {
            let byte = self.buf.get(self.pos).copied().unwrap_or(0);
            self.pos += 1;
            self.acc |= (byte as u128) << self.filled;
            self.filled += 8;
        }
        let mask = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
        let v = (self.acc as u64) & mask;
        self.acc >>= width;
        self.filled -= width;
        v
    }
}
