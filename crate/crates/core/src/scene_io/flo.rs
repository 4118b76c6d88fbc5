use super::{checked_len, FormatError};
use crate::raster::FlowField;

/// The float stored in the first four bytes of every `.flo` file ("PIEH").
pub const FLO_SENTINEL: f32 = 202021.25;

/// Decodes a Middlebury `.flo` file: sentinel, `i32` width and height, then
/// interleaved little-endian `f32` `(u, v)` pairs in row-major order.
pub fn read_flo(bytes: &[u8]) -> Result<FlowField, FormatError> {
    if bytes.len() < 12 {
        return Err(FormatError::Truncated {
            expected: 12,
            actual: bytes.len(),
        });
    }
    let sentinel = f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if sentinel != FLO_SENTINEL {
        return Err(FormatError::BadMagic(format!("sentinel {sentinel} != {FLO_SENTINEL}")));
    }
    let w = i32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    let h = i32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
    if w < 0 || h < 0 {
        return Err(FormatError::Header(format!("negative dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = checked_len(&[w, h, 8])?;
    let payload = &bytes[12..];
    if payload.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    let mut uv = Vec::with_capacity(w * h);
    for (i, c) in payload[..expected].chunks_exact(8).enumerate() {
        let u = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        let v = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
        if !u.is_finite() || !v.is_finite() {
            return Err(FormatError::NonFinite(i));
        }
        uv.push([u as f64, v as f64]);
    }
    Ok(FlowField::from_vec(w, h, uv).expect("shape checked"))
}

/// Encodes a flow field; components are narrowed to `f32`.
pub fn write_flo(flow: &FlowField) -> Result<Vec<u8>, FormatError> {
    let (w, h) = (flow.width(), flow.height());
    let (wi, hi) = match (i32::try_from(w), i32::try_from(h)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(FormatError::Unsupported(format!("{w}x{h} exceeds .flo limits"))),
    };
    let mut out = Vec::with_capacity(12 + w * h * 8);
    out.extend_from_slice(&FLO_SENTINEL.to_le_bytes());
    out.extend_from_slice(&wi.to_le_bytes());
    out.extend_from_slice(&hi.to_le_bytes());
    for [u, v] in flow.data() {
        out.extend_from_slice(&(*u as f32).to_le_bytes());
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}
