//! Readers and writers for the on-disk formats of the MVS ecosystem.
//!
//! | format | functions |
//! |--------|-----------|
//! | `cam.txt` | [`parse_camera`], [`CameraFile::to_text`] |
//! | `pair.txt` | [`parse_pairs`], [`ViewGraph::to_text`] |
//! | PFM | [`read_pfm`], [`write_pfm`] |
//! | Middlebury `.flo` | [`read_flo`], [`write_flo`] |
//! | PLY (ascii, binary) | [`read_ply`], [`write_ply`] |
//! | PGM/PPM (P5/P6) | [`read_pnm`], [`write_pnm`] |
//!
//! All functions work on byte slices and never panic on malformed input.

mod camera_file;
mod flo;
mod pairs;
mod pfm;
mod ply;
mod pnm;

pub use camera_file::{parse_camera, CameraFile, DEFAULT_DEPTH_COUNT};
pub use flo::{read_flo, write_flo, FLO_SENTINEL};
pub use pairs::{parse_pairs, ViewGraph};
pub use pfm::{read_pfm, write_pfm, Pfm};
pub use ply::{read_ply, write_ply, PlyFormat};
pub use pnm::{read_pnm, write_pnm, PnmOptions};
pub(crate) use pnm::quantize;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("bad magic: {0}")]
    BadMagic(String),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("invalid header: {0}")]
    Header(String),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub(crate) fn syntax(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Syntax {
        line,
        message: message.into(),
    }
}

/// Whitespace tokenizer for binary formats with a text header (PFM, PNM).
pub(crate) struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    allow_comments: bool,
}

impl<'a> HeaderCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8], allow_comments: bool) -> Self {
        Self {
            bytes,
            pos: 0,
            allow_comments,
        }
    }

    pub(crate) fn token(&mut self) -> Result<&'a str, FormatError> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.allow_comments && self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(FormatError::Header("unexpected end of header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| FormatError::Header("non-ASCII header token".into()))
    }

    pub(crate) fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, FormatError> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| FormatError::Header(format!("{what}: cannot parse {tok:?}")))
    }

    /// Consumes the single whitespace byte that separates header and payload.
    pub(crate) fn payload(self) -> Result<&'a [u8], FormatError> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(&self.bytes[self.pos + 1..]),
            _ => Err(FormatError::Header("missing separator before payload".into())),
        }
    }
}

/// `a * b * ...` as a byte count, rejecting overflow.
pub(crate) fn checked_len(factors: &[usize]) -> Result<usize, FormatError> {
    factors
        .iter()
        .try_fold(1usize, |acc, &f| acc.checked_mul(f))
        .ok_or_else(|| FormatError::Header("dimensions overflow".into()))
}
