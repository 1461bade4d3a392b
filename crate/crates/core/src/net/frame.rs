//! Wire format. Every frame is
//!
//! ```text
//! "SPIR" | version:u8 | type:u8 | length:u32 BE | payload[length]
//! ```
//!
//! and all integers inside payloads are big-endian.

use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::pir::SchemeParams;
use crate::scheme::{decode_requests, encode_requests, CodecError, SpirRequest};

pub const MAGIC: [u8; 4] = *b"SPIR";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
/// Largest payload a reader accepts.
pub const MAX_PAYLOAD: u32 = 16 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    Hello = 1,
    Query = 2,
    Answer = 3,
    Error = 4,
    Provision = 5,
}

impl FrameType {
    pub fn from_byte(b: u8) -> Option<FrameType> {
        Some(match b {
            1 => FrameType::Hello,
            2 => FrameType::Query,
            3 => FrameType::Answer,
            4 => FrameType::Error,
            5 => FrameType::Provision,
            _ => return None,
        })
    }
}

impl fmt::Display for FrameType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameType, payload: Vec<u8>) -> Self {
        Frame { kind, payload }
    }

    pub fn empty(kind: FrameType) -> Self {
        Frame { kind, payload: Vec::new() }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown frame type {0}")]
    BadType(u8),
    #[error("truncated: {needed} bytes needed, {got} available")]
    Truncated { needed: usize, got: usize },
    #[error("length field says {declared} bytes, frame carries {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("payload of {0} bytes exceeds the limit")]
    TooLarge(u32),
    #[error("payload: {0}")]
    Payload(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<CodecError> for FrameError {
    fn from(e: CodecError) -> Self {
        FrameError::Payload(e.to_string())
    }
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + frame.payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(frame.kind as u8);
    out.extend_from_slice(&(frame.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&frame.payload);
    out
}

struct Header {
    kind: FrameType,
    len: usize,
}

fn decode_header(h: &[u8; HEADER_LEN]) -> Result<Header, FrameError> {
    let magic: [u8; 4] = h[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    if h[4] != VERSION {
        return Err(FrameError::BadVersion(h[4]));
    }
    let kind = FrameType::from_byte(h[5]).ok_or(FrameError::BadType(h[5]))?;
    let len = u32::from_be_bytes(h[6..10].try_into().expect("4 bytes"));
    if len > MAX_PAYLOAD {
        return Err(FrameError::TooLarge(len));
    }
    Ok(Header { kind, len: len as usize })
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    let header: &[u8; HEADER_LEN] =
        bytes.get(..HEADER_LEN).and_then(|h| h.try_into().ok()).ok_or(FrameError::Truncated { needed: HEADER_LEN, got: bytes.len() })?;
    let h = decode_header(header)?;
    let actual = bytes.len() - HEADER_LEN;
    if actual < h.len {
        return Err(FrameError::Truncated { needed: HEADER_LEN + h.len, got: bytes.len() });
    }
    if actual != h.len {
        return Err(FrameError::LengthMismatch { declared: h.len, actual });
    }
    Ok(Frame { kind: h.kind, payload: bytes[HEADER_LEN..].to_vec() })
}

/// Reads one frame; `Ok(None)` on a clean end of stream before any header byte.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, FrameError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(FrameError::Truncated { needed: HEADER_LEN, got }),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(FrameError::Io(e.to_string())),
        }
    }
    let h = decode_header(&header)?;
    let mut payload = vec![0u8; h.len];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated { needed: HEADER_LEN + h.len, got: HEADER_LEN },
        _ => FrameError::Io(e.to_string()),
    })?;
    Ok(Some(Frame { kind: h.kind, payload }))
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<usize> {
    let bytes = encode_frame(frame);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(bytes.len())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(FrameError::Truncated { needed: self.pos + n, got: self.buf.len() })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, FrameError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2")))
    }

    fn u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64, FrameError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8")))
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn finish(&self) -> Result<(), FrameError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(FrameError::Payload(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}

/// The `(N, K, q, L)` echo carried by HELLO replies and every query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamsEcho {
    pub n: u16,
    pub k: u16,
    pub q: u64,
    pub l: u32,
}

impl ParamsEcho {
    pub const LEN: usize = 16;

    pub fn of(p: &SchemeParams) -> Self {
        ParamsEcho { n: p.n as u16, k: p.k as u16, q: p.q.value(), l: p.l as u32 }
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.n.to_be_bytes());
        out.extend_from_slice(&self.k.to_be_bytes());
        out.extend_from_slice(&self.q.to_be_bytes());
        out.extend_from_slice(&self.l.to_be_bytes());
    }

    fn read(c: &mut Cursor<'_>) -> Result<Self, FrameError> {
        Ok(ParamsEcho { n: c.u16()?, k: c.u16()?, q: c.u64()?, l: c.u32()? })
    }
}

impl fmt::Display for ParamsEcho {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N={} K={} q={} L={}", self.n, self.k, self.q, self.l)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryPayload {
    pub params: ParamsEcho,
    pub requests: Vec<SpirRequest>,
}

impl QueryPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.params.write(&mut out);
        out.extend_from_slice(&encode_requests(&self.requests));
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, FrameError> {
        let mut c = Cursor::new(buf);
        let params = ParamsEcho::read(&mut c)?;
        let body = c.rest();
        let (requests, used) = decode_requests(body)?;
        if used != body.len() {
            return Err(FrameError::Payload(format!("{} trailing bytes", body.len() - used)));
        }
        Ok(QueryPayload { params, requests })
    }
}

/// HELLO reply: the server's parameters and its 1-based database index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HelloPayload {
    pub params: ParamsEcho,
    pub db: u16,
}

impl HelloPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ParamsEcho::LEN + 2);
        self.params.write(&mut out);
        out.extend_from_slice(&self.db.to_be_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, FrameError> {
        let mut c = Cursor::new(buf);
        let params = ParamsEcho::read(&mut c)?;
        let db = c.u16()?;
        c.finish()?;
        Ok(HelloPayload { params, db })
    }
}

pub fn encode_answers(values: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 8 * values.len());
    out.extend_from_slice(&(values.len() as u32).to_be_bytes());
    for v in values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn decode_answers(buf: &[u8]) -> Result<Vec<u64>, FrameError> {
    let mut c = Cursor::new(buf);
    let count = c.u32()? as usize;
    if count.saturating_mul(8) != buf.len() - 4 {
        return Err(FrameError::Payload(format!("{count} answers declared, {} bytes follow", buf.len() - 4)));
    }
    let out = (0..count).map(|_| c.u64()).collect::<Result<_, _>>()?;
    c.finish()?;
    Ok(out)
}

/// Error codes carried by ERROR frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    Malformed = 1,
    ParamsMismatch = 2,
    BadRequest = 3,
    UnexpectedFrame = 4,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrorPayload {
    pub code: u16,
    pub message: String,
}

impl ErrorPayload {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ErrorPayload { code: code as u16, message: message.into() }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.code.to_be_bytes().to_vec();
        out.extend_from_slice(self.message.as_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, FrameError> {
        let mut c = Cursor::new(buf);
        let code = c.u16()?;
        let message = String::from_utf8(c.rest().to_vec()).map_err(|_| FrameError::Payload("error text is not UTF-8".into()))?;
        Ok(ErrorPayload { code, message })
    }

    pub fn frame(&self) -> Frame {
        Frame::new(FrameType::Error, self.encode())
    }
}
