use super::{checked_len, FormatError, HeaderCursor};
use crate::raster::Raster;

/// A decoded PFM file. Rows are top-down regardless of the on-disk order.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub raster: Raster,
    /// Scale token as read; its sign gave the byte order.
    pub scale: f32,
}

/// Decodes `Pf` (one channel) or `PF` (three channel) data.
pub fn read_pfm(bytes: &[u8]) -> Result<Pfm, FormatError> {
    let mut cur = HeaderCursor::new(bytes, false);
    let channels = match cur.token().map_err(|_| FormatError::BadMagic("empty file".into()))? {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(FormatError::BadMagic(format!("{:?}", truncate(other)))),
    };
    let width: usize = cur.parse("width")?;
    let height: usize = cur.parse("height")?;
    let scale: f32 = cur.parse("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(FormatError::Header(format!("scale must be finite and non-zero, got {scale}")));
    }
    let little = scale < 0.0;
    let payload = cur.payload()?;
    let expected = checked_len(&[width, height, channels, 4])?;
    if payload.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    let row_len = width * channels;
    let mut data = vec![0.0f64; width * height * channels];
    for (i, chunk) in payload[..expected].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        if !v.is_finite() {
            return Err(FormatError::NonFinite(i));
        }
        let file_row = i / row_len;
        let col = i % row_len;
        data[(height - 1 - file_row) * row_len + col] = v as f64;
    }
    let raster = Raster::from_vec(width, height, channels, data).expect("shape checked");
    Ok(Pfm { raster, scale })
}

/// Encodes a one- or three-channel raster as little-endian PFM with scale `-1.0`.
/// Samples are narrowed to `f32`.
pub fn write_pfm(raster: &Raster) -> Result<Vec<u8>, FormatError> {
    let magic = match raster.channels() {
        1 => "Pf",
        3 => "PF",
        c => return Err(FormatError::Unsupported(format!("PFM cannot hold {c} channels"))),
    };
    let (w, h, c) = (raster.width(), raster.height(), raster.channels());
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * c * 4);
    let row_len = w * c;
    for y in (0..h).rev() {
        for v in &raster.data()[y * row_len..(y + 1) * row_len] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(16) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
