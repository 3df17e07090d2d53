//! Binary stream files.
//!
//! Each stream is a 32-byte header followed by fixed-width records. All
//! integers and floats are little-endian.
//!
//! | offset | bytes | field |
//! |-------:|------:|-------|
//! | 0  | 4 | magic `CSNS` |
//! | 4  | 4 | stream kind tag |
//! | 8  | 2 | format version |
//! | 10 | 2 | byte-order mark `0xFEFF` (stored `FF FE`) |
//! | 12 | 4 | record size, bytes |
//! | 16 | 4 | first dimension |
//! | 20 | 4 | second dimension |
//! | 24 | 8 | record count |
//!
//! Record layouts (f64 unless noted):
//!
//! - `SNAP`, `B2BR` (dims = elements M, bins F): local time, noise variance,
//!   M element times, then M·F complex values as (re, im).
//! - `LIDR` (dims = rows, cols): local frame start, then rows·cols f32
//!   ranges of the staggered frame, row-major, 0 for no return.
//! - `GEOL`: local time, position x y z, orientation quaternion w x y z.
//! - `CLCK`: modality code (u32), 4 padding bytes, reference time, local time.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CSNS";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;
const BOM: u16 = 0xFEFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Snapshots,
    B2b,
    Lidar,
    Geolocation,
    Clocks,
}

impl StreamKind {
    pub const ALL: [StreamKind; 5] = [
        StreamKind::Snapshots,
        StreamKind::B2b,
        StreamKind::Lidar,
        StreamKind::Geolocation,
        StreamKind::Clocks,
    ];

    pub fn tag(self) -> [u8; 4] {
        match self {
            StreamKind::Snapshots => *b"SNAP",
            StreamKind::B2b => *b"B2BR",
            StreamKind::Lidar => *b"LIDR",
            StreamKind::Geolocation => *b"GEOL",
            StreamKind::Clocks => *b"CLCK",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            StreamKind::Snapshots => "snapshots.bin",
            StreamKind::B2b => "b2b.bin",
            StreamKind::Lidar => "lidar.bin",
            StreamKind::Geolocation => "geolocation.bin",
            StreamKind::Clocks => "clocks.bin",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Snapshots => "snapshots",
            StreamKind::B2b => "b2b",
            StreamKind::Lidar => "lidar",
            StreamKind::Geolocation => "geolocation",
            StreamKind::Clocks => "clocks",
        }
    }

    /// Record size for the given dimensions.
    pub fn record_bytes(self, dims: [u32; 2]) -> u64 {
        let (a, b) = (dims[0] as u64, dims[1] as u64);
        match self {
            StreamKind::Snapshots | StreamKind::B2b => 8 * (2 + a + 2 * a * b),
            StreamKind::Lidar => 8 + 4 * a * b,
            StreamKind::Geolocation => 64,
            StreamKind::Clocks => 24,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub kind: StreamKind,
    pub version: u16,
    pub record_bytes: u32,
    pub dims: [u32; 2],
    pub count: u64,
}

impl StreamHeader {
    pub fn new(kind: StreamKind, dims: [u32; 2], count: u64) -> Self {
        StreamHeader {
            kind,
            version: FORMAT_VERSION,
            record_bytes: kind.record_bytes(dims) as u32,
            dims,
            count,
        }
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(&MAGIC);
        h[4..8].copy_from_slice(&self.kind.tag());
        h[8..10].copy_from_slice(&self.version.to_le_bytes());
        h[10..12].copy_from_slice(&BOM.to_le_bytes());
        h[12..16].copy_from_slice(&self.record_bytes.to_le_bytes());
        h[16..20].copy_from_slice(&self.dims[0].to_le_bytes());
        h[20..24].copy_from_slice(&self.dims[1].to_le_bytes());
        h[24..32].copy_from_slice(&self.count.to_le_bytes());
        h
    }

    /// Parses and checks a header. Magic and byte order are checked before
    /// the version so a foreign-endian file is reported as such.
    pub fn decode(file: &Path, bytes: &[u8], expected: StreamKind) -> Result<Self> {
        let fail = |offset: u64, reason: String| Error::Format {
            file: file.to_path_buf(),
            offset,
            reason,
        };
        if bytes.len() < HEADER_LEN {
            return Err(fail(
                bytes.len() as u64,
                format!("file ends inside the {HEADER_LEN}-byte header"),
            ));
        }
        if bytes[0..4] != MAGIC {
            return Err(fail(0, "bad magic, not a session stream".into()));
        }
        if bytes[4..8] != expected.tag() {
            return Err(fail(
                4,
                format!(
                    "stream kind {:?}, expected {:?}",
                    String::from_utf8_lossy(&bytes[4..8]),
                    String::from_utf8_lossy(&expected.tag())
                ),
            ));
        }
        let bom = u16::from_le_bytes([bytes[10], bytes[11]]);
        if bom == BOM.swap_bytes() {
            return Err(fail(10, "big-endian byte order, only little-endian is supported".into()));
        }
        if bom != BOM {
            return Err(fail(10, format!("bad byte-order mark {bom:#06x}")));
        }
        let version = u16::from_le_bytes([bytes[8], bytes[9]]);
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                file: file.to_path_buf(),
                found: version as u32,
                expected: FORMAT_VERSION as u32,
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let dims = [u32_at(16), u32_at(20)];
        let record_bytes = u32_at(12);
        let want = expected.record_bytes(dims);
        if record_bytes as u64 != want || want == 0 {
            return Err(fail(
                12,
                format!("record size {record_bytes} does not match dimensions {dims:?} ({want})"),
            ));
        }
        Ok(StreamHeader {
            kind: expected,
            version,
            record_bytes,
            dims,
            count: u64::from_le_bytes(bytes[24..32].try_into().unwrap()),
        })
    }
}

/// Streams records into a file and hashes everything written.
pub struct StreamWriter {
    path: PathBuf,
    out: BufWriter<File>,
    hasher: Sha256,
    header: StreamHeader,
    written: u64,
}

impl StreamWriter {
    pub fn create(path: &Path, header: StreamHeader) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        let h = header.encode();
        out.write_all(&h)?;
        let mut hasher = Sha256::new();
        hasher.update(h);
        Ok(StreamWriter {
            path: path.to_path_buf(),
            out,
            hasher,
            header,
            written: 0,
        })
    }

    pub fn push(&mut self, record: &[u8]) -> Result<()> {
        if record.len() as u64 != self.header.record_bytes as u64 {
            return Err(Error::config(format!(
                "{}: record of {} bytes, stream expects {}",
                self.path.display(),
                record.len(),
                self.header.record_bytes
            )));
        }
        self.out.write_all(record)?;
        self.hasher.update(record);
        self.written += 1;
        Ok(())
    }

    /// Flushes and returns the hex SHA-256 of the whole file.
    pub fn finish(mut self) -> Result<String> {
        if self.written != self.header.count {
            return Err(Error::CountMismatch {
                file: self.path,
                expected: self.header.count,
                found: self.written,
            });
        }
        self.out.flush()?;
        Ok(hex::encode(self.hasher.finalize()))
    }
}

/// A stream read fully into memory with its structure checked.
pub struct RawStream {
    pub path: PathBuf,
    pub header: StreamHeader,
    pub bytes: Vec<u8>,
}

impl RawStream {
    /// Reads `path`, checks its header, and checks the record count against
    /// both the header and `expected_count`.
    pub fn read(path: &Path, kind: StreamKind, expected_count: u64) -> Result<Self> {
        let bytes = fs::read(path)?;
        let header = StreamHeader::decode(path, &bytes, kind)?;
        let body = (bytes.len() - HEADER_LEN) as u64;
        let rs = header.record_bytes as u64;
        let whole = body / rs;
        if body % rs != 0 {
            return Err(Error::Format {
                file: path.to_path_buf(),
                offset: HEADER_LEN as u64 + whole * rs,
                reason: format!(
                    "truncated record: {} of {rs} bytes present",
                    body % rs
                ),
            });
        }
        for declared in [expected_count, header.count] {
            if whole != declared {
                return Err(Error::CountMismatch {
                    file: path.to_path_buf(),
                    expected: declared,
                    found: whole,
                });
            }
        }
        Ok(RawStream {
            path: path.to_path_buf(),
            header,
            bytes,
        })
    }

    pub fn len(&self) -> usize {
        self.header.count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    pub fn record_offset(&self, i: usize) -> u64 {
        HEADER_LEN as u64 + i as u64 * self.header.record_bytes as u64
    }

    pub fn record(&self, i: usize) -> Reader<'_> {
        let rs = self.header.record_bytes as usize;
        let start = HEADER_LEN + i * rs;
        Reader {
            buf: &self.bytes[start..start + rs],
            pos: 0,
        }
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }

    pub fn corrupt(&self, i: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            file: self.path.clone(),
            offset: self.record_offset(i),
            reason: reason.into(),
        }
    }
}

/// Little-endian field cursor over one record.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    pub fn f64(&mut self) -> f64 {
        let v = f64::from_le_bytes(self.buf[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        v
    }

    pub fn f32(&mut self) -> f32 {
        let v = f32::from_le_bytes(self.buf[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }

    pub fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.buf[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }
}

pub fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Writes via a temporary sibling and renames, so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}
