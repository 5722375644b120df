//! Snapshot time series on disk, and assembly of partitioned solver output.
//!
//! # Container layout
//!
//! Little-endian throughout, floats are IEEE-754 `f64`.
//!
//! | field              | size       | notes                                   |
//! |--------------------|------------|-----------------------------------------|
//! | magic              | 8          | `DMDKSNAP`                              |
//! | version            | 4 (`u32`)  | `1`                                     |
//! | n                  | 8 (`u64`)  | values per snapshot                     |
//! | snapshot count     | 8 (`u64`)  |                                         |
//! | dt                 | 8 (`f64`)  |                                         |
//! | t0                 | 8 (`f64`)  |                                         |
//! | mode               | 1          | codec mode byte                         |
//! | ε                  | 8 (`f64`)  | `0.0` for lossless                      |
//! | field name length  | 4 (`u32`)  |                                         |
//! | field name         | len        | UTF-8                                   |
//! | header CRC-32      | 4          | over every byte above                   |
//! | index              | 16 × count | per snapshot: offset `u64`, length `u64`|
//! | index CRC-32       | 4          | over the index entries                  |
//! | chunks             | ...        | one codec payload per snapshot          |
//!
//! Offsets are absolute file positions. Each chunk carries its own CRC, so a
//! single snapshot can be read and verified without touching the others.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecMode, CompressedChunk};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const MAGIC: [u8; 8] = *b"DMDKSNAP";
pub const VERSION: u32 = 1;

/// Duplicated communication nodes may differ by at most this much.
pub const DUPLICATE_TOLERANCE: f64 = 1e-12;

/// Snapshots stacked as columns on a uniform time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMatrix {
    data: DenseMatrix,
    dt: f64,
    t0: f64,
}

impl SnapshotMatrix {
    pub fn new(data: DenseMatrix, dt: f64, t0: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "time grid needs dt > 0 and finite t0, got dt={dt}, t0={t0}"
            )));
        }
        if data.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { data, dt, t0 })
    }

    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C], dt: f64, t0: f64) -> Result<Self> {
        Self::new(DenseMatrix::from_columns(columns)?, dt, t0)
    }

    /// Empty series with room for snapshots of length `n`.
    pub fn empty(n: usize, dt: f64, t0: f64) -> Result<Self> {
        Self::new(DenseMatrix::zeros(n, 0), dt, t0)
    }

    pub fn data(&self) -> &DenseMatrix {
        &self.data
    }

    pub fn into_data(self) -> DenseMatrix {
        self.data
    }

    /// Spatial degrees of freedom.
    pub fn n(&self) -> usize {
        self.data.rows()
    }

    /// Number of snapshots (m + 1).
    pub fn len(&self) -> usize {
        self.data.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.cols() == 0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn snapshot(&self, k: usize) -> &[f64] {
        self.data.col(k)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn push(&mut self, y: &[f64]) -> Result<()> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: y.len(),
            });
        }
        self.data.push_column(y)
    }

    /// Leading split `[y_0 … y_{m-1}]`.
    pub fn leading(&self) -> DenseMatrix {
        self.data.col_range(0..self.len().saturating_sub(1))
    }

    /// Trailing split `[y_1 … y_m]`.
    pub fn trailing(&self) -> DenseMatrix {
        self.data.col_range(1.min(self.len())..self.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WriteSummary {
    /// Whole file size.
    pub bytes_written: u64,
    /// Sum of the encoded chunk sizes.
    pub payload_bytes: u64,
    /// Raw `f64` size of the snapshots over `payload_bytes`.
    pub ratio: f64,
}

impl WriteSummary {
    /// Fraction of raw bytes saved, `1 − payload/raw`.
    pub fn reduction(&self) -> f64 {
        1.0 - 1.0 / self.ratio
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContainerHeader {
    pub version: u32,
    pub n: usize,
    pub snapshot_count: usize,
    pub dt: f64,
    pub t0: f64,
    pub mode: CodecMode,
    pub field: String,
}

pub fn write_container(path: impl AsRef<Path>, snaps: &SnapshotMatrix, mode: CodecMode) -> Result<WriteSummary> {
    write_container_named(path, snaps, mode, "field")
}

pub fn write_container_named(
    path: impl AsRef<Path>,
    snaps: &SnapshotMatrix,
    mode: CodecMode,
    field: &str,
) -> Result<WriteSummary> {
    let path = path.as_ref();
    let chunks = snaps
        .data
        .columns()
        .map(|c| codec::encode(c, mode))
        .collect::<Result<Vec<_>>>()?;

    let mut header = Vec::new();
    header.extend_from_slice(&MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&(snaps.n() as u64).to_le_bytes());
    header.extend_from_slice(&(snaps.len() as u64).to_le_bytes());
    header.extend_from_slice(&snaps.dt.to_le_bytes());
    header.extend_from_slice(&snaps.t0.to_le_bytes());
    header.push(match mode {
        CodecMode::Lossless => 0,
        CodecMode::FixedAccuracy(_) => 1,
    });
    header.extend_from_slice(&mode.epsilon().unwrap_or(0.0).to_le_bytes());
    header.extend_from_slice(&(field.len() as u32).to_le_bytes());
    header.extend_from_slice(field.as_bytes());
    let crc = crc32fast::hash(&header);
    header.extend_from_slice(&crc.to_le_bytes());

    let index_len = 16 * chunks.len() + 4;
    let mut offset = (header.len() + index_len) as u64;
    let mut index = Vec::with_capacity(index_len);
    for c in &chunks {
        index.extend_from_slice(&offset.to_le_bytes());
        index.extend_from_slice(&(c.payload.len() as u64).to_le_bytes());
        offset += c.payload.len() as u64;
    }
    let crc = crc32fast::hash(&index);
    index.extend_from_slice(&crc.to_le_bytes());

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(&header)?;
    put(&index)?;
    for c in &chunks {
        put(&c.payload)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let payload_bytes: u64 = chunks.iter().map(|c| c.payload.len() as u64).sum();
    let raw = (snaps.n() * snaps.len() * 8) as f64;
    Ok(WriteSummary {
        bytes_written: offset,
        payload_bytes,
        ratio: if payload_bytes == 0 { 1.0 } else { raw / payload_bytes as f64 },
    })
}

/// Random-access reader over one container file.
pub struct ContainerReader {
    path: PathBuf,
    file: File,
    header: ContainerHeader,
    index: Vec<(u64, u64)>,
}

impl ContainerReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(&path, e))?.len();

        let truncated = || Error::CorruptPayload("container truncated".into());
        let mut fixed = [0u8; 8 + 4 + 8 + 8 + 8 + 8 + 1 + 8 + 4];
        read_exact(&mut file, &mut fixed, &path)?.ok_or_else(truncated)?;
        if fixed[..8] != MAGIC {
            return Err(Error::BadMagic);
        }
        let mut cur = Cursor(&fixed[8..]);
        let version = cur.u32();
        if version != VERSION {
            return Err(Error::VersionMismatch(version));
        }
        let n = cur.u64() as usize;
        let count = cur.u64() as usize;
        let dt = cur.f64();
        let t0 = cur.f64();
        let mode_byte = cur.u8();
        let eps = cur.f64();
        let name_len = cur.u32() as usize;
        if name_len as u64 > file_len {
            return Err(truncated());
        }
        let mut name = vec![0u8; name_len + 4];
        read_exact(&mut file, &mut name, &path)?.ok_or_else(truncated)?;
        let stored = u32::from_le_bytes(name[name_len..].try_into().unwrap());
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&fixed);
        hasher.update(&name[..name_len]);
        if hasher.finalize() != stored {
            return Err(Error::CorruptPayload("header checksum mismatch".into()));
        }
        let mode = match mode_byte {
            0 => CodecMode::Lossless,
            1 => CodecMode::fixed_accuracy(eps)?,
            other => return Err(Error::UnknownMode(other)),
        };
        let field = String::from_utf8(name[..name_len].to_vec())
            .map_err(|_| Error::CorruptPayload("field name is not UTF-8".into()))?;

        if (count as u64).saturating_mul(16) > file_len {
            return Err(truncated());
        }
        let mut raw_index = vec![0u8; 16 * count + 4];
        read_exact(&mut file, &mut raw_index, &path)?.ok_or_else(truncated)?;
        let stored = u32::from_le_bytes(raw_index[16 * count..].try_into().unwrap());
        if crc32fast::hash(&raw_index[..16 * count]) != stored {
            return Err(Error::CorruptPayload("index checksum mismatch".into()));
        }
        let mut cur = Cursor(&raw_index);
        let index: Vec<(u64, u64)> = (0..count).map(|_| (cur.u64(), cur.u64())).collect();
        if index.iter().any(|&(off, len)| off.saturating_add(len) > file_len) {
            return Err(truncated());
        }

        Ok(Self {
            path,
            file,
            header: ContainerHeader {
                version,
                n,
                snapshot_count: count,
                dt,
                t0,
                mode,
                field,
            },
            index,
        })
    }

    pub fn header(&self) -> &ContainerHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Encoded chunk of snapshot `k`.
    pub fn read_chunk(&mut self, k: usize) -> Result<CompressedChunk> {
        let (offset, len) = *self.index.get(k).ok_or_else(|| {
            Error::InvalidArgument(format!("snapshot {k} out of range (have {})", self.index.len()))
        })?;
        self.file
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::io(&self.path, e))?;
        let mut buf = vec![0u8; len as usize];
        read_exact(&mut self.file, &mut buf, &self.path)?
            .ok_or_else(|| Error::CorruptPayload("chunk truncated".into()))?;
        let chunk = CompressedChunk::from_bytes(buf)?;
        if chunk.mode != self.header.mode || chunk.element_count != self.header.n {
            return Err(Error::CorruptPayload(format!("chunk {k} disagrees with header")));
        }
        Ok(chunk)
    }

    pub fn read_snapshot(&mut self, k: usize) -> Result<Vec<f64>> {
        let chunk = self.read_chunk(k)?;
        codec::decode(&chunk)
    }

    pub fn read_all(&mut self) -> Result<SnapshotMatrix> {
        let mut data = DenseMatrix::zeros(self.header.n, 0);
        for k in 0..self.len() {
            data.push_column(&self.read_snapshot(k)?)?;
        }
        SnapshotMatrix::new(data, self.header.dt, self.header.t0)
    }
}

pub fn read_container(path: impl AsRef<Path>) -> Result<SnapshotMatrix> {
    ContainerReader::open(path)?.read_all()
}

// Ok(None) on a short read.
fn read_exact(file: &mut File, buf: &mut [u8], path: &Path) -> Result<Option<()>> {
    match file.read_exact(buf) {
        Ok(()) => Ok(Some(())),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        head.try_into().unwrap()
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}

/// Values owned by one mesh partition, keyed by global node number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub global_ids: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionedSnapshot {
    pub parts: Vec<Partition>,
    pub global_size: usize,
}

/// Merges partition-local values into one global vector, writing shared
/// (communication) nodes once.
///
/// Duplicates within [`DUPLICATE_TOLERANCE`] resolve to the smallest
/// candidate, so the result does not depend on the order of `parts`.
pub fn assemble_partitions(p: &PartitionedSnapshot) -> Result<Vec<f64>> {
    let n = p.global_size;
    let mut out: Vec<Option<f64>> = vec![None; n];
    let mut seen_twice: HashMap<usize, f64> = HashMap::new();
    for part in &p.parts {
        if part.global_ids.len() != part.values.len() {
            return Err(Error::DimensionMismatch {
                expected: part.global_ids.len(),
                found: part.values.len(),
            });
        }
        for (&id, &v) in part.global_ids.iter().zip(&part.values) {
            if id >= n {
                return Err(Error::InvalidArgument(format!(
                    "global id {id} outside [0, {n})"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
            match out[id] {
                None => out[id] = Some(v),
                Some(prev) => {
                    if (prev - v).abs() > DUPLICATE_TOLERANCE {
                        let (first, second) = if prev <= v { (prev, v) } else { (v, prev) };
                        return Err(Error::InconsistentDuplicate { id, first, second });
                    }
                    let lo = prev.min(v);
                    out[id] = Some(lo);
                    seen_twice.insert(id, lo);
                }
            }
        }
    }
    // a chain of near-duplicates can drift; compare every candidate to the minimum
    for part in &p.parts {
        for (&id, &v) in part.global_ids.iter().zip(&part.values) {
            if let Some(&lo) = seen_twice.get(&id) {
                if v - lo > DUPLICATE_TOLERANCE {
                    return Err(Error::InconsistentDuplicate { id, first: lo, second: v });
                }
            }
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(id, v)| v.ok_or(Error::IncompleteCoverage(id)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_snaps(n: usize, m: usize, seed: u64) -> SnapshotMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DenseMatrix::from_fn(n, m, |_, _| rng.random_range(-5.0..5.0));
        SnapshotMatrix::new(data, 0.25, 1.5).unwrap()
    }

    fn smooth_snaps(n: usize, m: usize) -> SnapshotMatrix {
        let data = DenseMatrix::from_fn(n, m, |i, k| {
            let x = i as f64 / n as f64;
            (2.0 * std::f64::consts::PI * (x - 0.01 * k as f64)).sin() * 0.5 + 0.5
        });
        SnapshotMatrix::new(data, 0.1, 0.0).unwrap()
    }

    #[test]
    fn lossless_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.snap");
        let snaps = random_snaps(100, 20, 1);
        write_container(&path, &snaps, CodecMode::Lossless).unwrap();
        let back = read_container(&path).unwrap();
        assert_eq!(back, snaps);
        assert_eq!(back.time(3), 1.5 + 3.0 * 0.25);
    }

    #[test]
    fn accuracy_roundtrip_within_bound() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.snap");
        let snaps = random_snaps(100, 20, 2);
        write_container(&path, &snaps, CodecMode::fixed_accuracy(1e-6).unwrap()).unwrap();
        let back = read_container(&path).unwrap();
        assert!(back.data().sub(snaps.data()).max_abs() <= 1e-6);
    }

    #[test]
    fn lossless_ratio_on_smooth_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.snap");
        let summary = write_container(&path, &smooth_snaps(512, 30), CodecMode::Lossless).unwrap();
        assert!(summary.ratio >= 1.05, "ratio {}", summary.ratio);
        assert_eq!(summary.bytes_written, std::fs::metadata(&path).unwrap().len());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.snap");
        write_container(&path, &random_snaps(50, 5, 3), CodecMode::Lossless).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [10, 60, bytes.len() / 2, bytes.len() - 1] {
            std::fs::write(&path, &bytes[..cut]).unwrap();
            assert!(
                matches!(read_container(&path), Err(Error::CorruptPayload(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.snap");
        write_container(&path, &random_snaps(4, 2, 4), CodecMode::Lossless).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 2;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_container(&path), Err(Error::VersionMismatch(2))));
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_container(&path), Err(Error::BadMagic)));
    }

    #[test]
    fn random_access_matches_full_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.snap");
        let snaps = random_snaps(33, 9, 5);
        write_container_named(&path, &snaps, CodecMode::FixedAccuracy(1e-4), "salinity").unwrap();
        let full = read_container(&path).unwrap();
        let mut reader = ContainerReader::open(&path).unwrap();
        assert_eq!(reader.header().field, "salinity");
        for k in [7, 0, 8, 3] {
            assert_eq!(reader.read_snapshot(k).unwrap(), full.snapshot(k));
        }
    }

    #[test]
    fn missing_file_is_io_failure() {
        assert!(matches!(
            read_container("/nonexistent/dir/x.snap"),
            Err(Error::IoFailure { .. })
        ));
    }

    fn part(ids: &[usize], values: &[f64]) -> Partition {
        Partition {
            global_ids: ids.to_vec(),
            values: values.to_vec(),
        }
    }

    #[test]
    fn assemble_shared_node() {
        let p = PartitionedSnapshot {
            parts: vec![part(&[0, 1], &[1.0, 2.0]), part(&[1, 2], &[2.0, 3.0])],
            global_size: 3,
        };
        assert_eq!(assemble_partitions(&p).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn assemble_shuffled_single_part() {
        let p = PartitionedSnapshot {
            parts: vec![part(&[3, 0, 2, 1], &[30.0, 0.0, 20.0, 10.0])],
            global_size: 4,
        };
        assert_eq!(assemble_partitions(&p).unwrap(), vec![0.0, 10.0, 20.0, 30.0]);
    }

    #[test]
    fn assemble_errors() {
        let conflict = PartitionedSnapshot {
            parts: vec![part(&[0, 1], &[1.0, 2.0]), part(&[1, 2], &[2.5, 3.0])],
            global_size: 3,
        };
        assert!(matches!(
            assemble_partitions(&conflict),
            Err(Error::InconsistentDuplicate { id: 1, .. })
        ));
        let gap = PartitionedSnapshot {
            parts: vec![part(&[0, 2], &[1.0, 2.0])],
            global_size: 3,
        };
        assert!(matches!(assemble_partitions(&gap), Err(Error::IncompleteCoverage(1))));
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

        proptest! {
            #[test]
            fn assembly_is_order_invariant(n in 1usize..40, parts in 1usize..5, seed in any::<u64>(),
                                           perm_seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let truth: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                // every node goes to one owner, some are shared with a neighbour
                let mut pieces: Vec<Partition> = (0..parts).map(|_| part(&[], &[])).collect();
                for (id, &v) in truth.iter().enumerate() {
                    let owner = rng.random_range(0..parts);
                    pieces[owner].global_ids.push(id);
                    pieces[owner].values.push(v);
                    if rng.random_bool(0.3) {
                        let other = rng.random_range(0..parts);
                        let jitter = if rng.random_bool(0.5) { 1e-13 } else { 0.0 };
                        pieces[other].global_ids.push(id);
                        pieces[other].values.push(v + jitter);
                    }
                }
                let base = assemble_partitions(&PartitionedSnapshot { parts: pieces.clone(), global_size: n }).unwrap();
                let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
                for i in (1..pieces.len()).rev() {
                    let j = prng.random_range(0..=i);
                    pieces.swap(i, j);
                }
                let shuffled = assemble_partitions(&PartitionedSnapshot { parts: pieces, global_size: n }).unwrap();
                prop_assert_eq!(&base, &shuffled);
                for (a, b) in base.iter().zip(&truth) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }

            #[test]
            fn container_roundtrip_honors_mode(n in 1usize..50, m in 1usize..6, seed in any::<u64>(), lossy in any::<bool>()) {
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("p.snap");
                let snaps = random_snaps(n, m, seed);
                let mode = if lossy { CodecMode::FixedAccuracy(1e-3) } else { CodecMode::Lossless };
                write_container(&path, &snaps, mode).unwrap();
                let back = read_container(&path).unwrap();
                let err = back.data().sub(snaps.data()).max_abs();
                if lossy { prop_assert!(err <= 1e-3); } else { prop_assert_eq!(back, snaps); }
            }
        }
    }
}
