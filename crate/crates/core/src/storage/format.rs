//! Segment file encoding.
//!
//! Every segment file starts with a 16-byte header followed by a body of
//! length-prefixed records:
//!
//! ```text
//! offset  size  field
//!      0     4  magic  b"LSEG"
//!      4     2  format version (little endian)
//!      6     2  flags; bit 0 set when the body is deflate-compressed
//!      8     8  record count (little endian)
//!     16     *  body: repeated { u32 length, payload }
//! ```
//!
//! Payload layouts are owned by the table modules; this module only provides
//! the framing, the primitive encoders and the atomic file replacement.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;

use super::{Compression, StoreError};

pub const MAGIC: &[u8; 4] = b"LSEG";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
const FLAG_DEFLATE: u16 = 1;

/// Appends primitive values to a record payload.
#[derive(Default)]
pub struct RecordWriter {
    buf: Vec<u8>,
}

impl RecordWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Reads primitive values back out of a record payload.
pub struct RecordReader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> RecordReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        RecordReader { buf, at: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.at + n > self.buf.len() {
            return Err(format!("record truncated at byte {}", self.at));
        }
        let out = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64, String> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<&'a str, String> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|e| e.to_string())
    }

    pub fn is_done(&self) -> bool {
        self.at == self.buf.len()
    }
}

/// Frames `records` into a complete segment file image.
pub fn encode_segment(records: &[Vec<u8>], compression: Compression) -> Vec<u8> {
    let mut body = Vec::with_capacity(records.iter().map(|r| r.len() + 4).sum());
    for r in records {
        body.extend_from_slice(&(r.len() as u32).to_le_bytes());
        body.extend_from_slice(r);
    }
    let (flags, body) = match compression {
        Compression::None => (0, body),
        Compression::Deflate => {
            let mut enc = DeflateEncoder::new(Vec::new(), flate2::Compression::default());
            enc.write_all(&body).expect("in-memory write");
            (FLAG_DEFLATE, enc.finish().expect("in-memory write"))
        }
    };
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

/// Parses a segment file image into its record payloads.
pub fn decode_segment(bytes: &[u8]) -> Result<Vec<Vec<u8>>, String> {
    if bytes.len() < HEADER_LEN {
        return Err("file shorter than header".into());
    }
    if &bytes[..4] != MAGIC {
        return Err("bad magic".into());
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let flags = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let inflated;
    let body: &[u8] = if flags & FLAG_DEFLATE != 0 {
        let mut out = Vec::new();
        DeflateDecoder::new(&bytes[HEADER_LEN..])
            .read_to_end(&mut out)
            .map_err(|e| format!("deflate: {e}"))?;
        inflated = out;
        &inflated
    } else {
        &bytes[HEADER_LEN..]
    };
    let mut records = Vec::with_capacity(count);
    let mut at = 0;
    while at < body.len() {
        if at + 4 > body.len() {
            return Err("truncated record length".into());
        }
        let len = u32::from_le_bytes(body[at..at + 4].try_into().unwrap()) as usize;
        at += 4;
        if at + len > body.len() {
            return Err("truncated record".into());
        }
        records.push(body[at..at + len].to_vec());
        at += len;
    }
    if records.len() != count {
        return Err(format!("header promises {count} records, found {}", records.len()));
    }
    Ok(records)
}

pub(crate) fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp-{}", std::process::id()));
    path.with_file_name(name)
}

/// Replaces `path` with `bytes` via write-to-temp then rename. `before_rename`
/// runs between the two steps; an error from it aborts the replacement and
/// leaves the previous file untouched.
pub(crate) fn write_atomic_with<F>(path: &Path, bytes: &[u8], before_rename: F) -> Result<(), StoreError>
where
    F: FnOnce() -> io::Result<()>,
{
    let io_err = |source| StoreError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let tmp = temp_path(path);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(bytes).map_err(io_err)?;
    }
    before_rename().map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    write_atomic_with(path, bytes, || Ok(()))
}

/// Escapes an event type name into a file-name-safe token. Alphanumerics,
/// `-`, `_` and `.` pass through (a leading `.` is escaped); every other byte
/// becomes `%XX`.
pub fn escape_name(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for (i, b) in name.bytes().enumerate() {
        let plain = b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || (b == b'.' && i > 0);
        if plain {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    if out.is_empty() {
        out.push('%');
    }
    out
}

pub fn unescape_name(token: &str) -> Option<String> {
    if token == "%" {
        return Some(String::new());
    }
    let bytes = token.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = token.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}
