use super::{checked_len, FormatError, HeaderCursor};
use crate::raster::Raster;

/// Decoder options for [`read_pnm`].
#[derive(Debug, Clone, Copy, Default)]
pub struct PnmOptions {
    /// Accept any maxval in `1..=65535` and divide by it. When false only
    /// maxval 255 is accepted.
    pub rescale: bool,
}

/// Decodes binary PGM (`P5`) or PPM (`P6`) into samples in `[0, 1]`.
pub fn read_pnm(bytes: &[u8], opts: PnmOptions) -> Result<Raster, FormatError> {
    let mut cur = HeaderCursor::new(bytes, true);
    let channels = match cur.token().map_err(|_| FormatError::BadMagic("empty file".into()))? {
        "P5" => 1,
        "P6" => 3,
        other => return Err(FormatError::BadMagic(format!("{:?}", other.chars().take(8).collect::<String>()))),
    };
    let width: usize = cur.parse("width")?;
    let height: usize = cur.parse("height")?;
    let maxval: u32 = cur.parse("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(FormatError::Header(format!("maxval {maxval} outside 1..=65535")));
    }
    if maxval != 255 && !opts.rescale {
        return Err(FormatError::Unsupported(format!("maxval {maxval}; only 255 without rescaling")));
    }
    let payload = cur.payload()?;
    let bps = if maxval < 256 { 1 } else { 2 };
    let expected = checked_len(&[width, height, channels, bps])?;
    if payload.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    let scale = maxval as f64;
    let data: Vec<f64> = if bps == 1 {
        payload[..expected].iter().map(|&b| (b as f64 / scale).min(1.0)).collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / scale).min(1.0))
            .collect()
    };
    Ok(Raster::from_vec(width, height, channels, data).expect("shape checked"))
}

/// Encodes a one- or three-channel raster as P5/P6 with maxval 255.
/// Samples are clamped to `[0, 1]` and rounded to 8 bits.
pub fn write_pnm(raster: &Raster) -> Result<Vec<u8>, FormatError> {
    let magic = match raster.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(FormatError::Unsupported(format!("PNM cannot hold {c} channels"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", raster.width(), raster.height()).into_bytes();
    out.extend(raster.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_samples_map_to_unit_range() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 0]);
        let r = read_pnm(&bytes, PnmOptions::default()).unwrap();
        assert_eq!(r.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(write_pnm(&r).unwrap(), bytes);
    }

    #[test]
    fn comments_are_skipped() {
        let bytes = b"P5\n# made by hand\n1 1\n255\n\x80";
        let r = read_pnm(bytes, PnmOptions::default()).unwrap();
        assert_eq!(r.get(0, 0, 0), 128.0 / 255.0);
    }

    #[test]
    fn maxval_other_than_255() {
        let bytes = b"P5\n2 1\n15\n\x0f\x05";
        assert!(matches!(read_pnm(bytes, PnmOptions::default()), Err(FormatError::Unsupported(_))));
        let r = read_pnm(bytes, PnmOptions { rescale: true }).unwrap();
        assert_eq!(r.data(), &[1.0, 5.0 / 15.0]);
        let wide = b"P5\n1 1\n1000\n\x01\xf4";
        assert_eq!(read_pnm(wide, PnmOptions { rescale: true }).unwrap().get(0, 0, 0), 0.5);
    }

    #[test]
    fn quantized_round_trip() {
        let r = Raster::from_fn(3, 2, 3, |x, y, c| ((x * 7 + y * 11 + c * 13) % 256) as f64 / 255.0);
        let back = read_pnm(&write_pnm(&r).unwrap(), PnmOptions::default()).unwrap();
        assert_eq!(back, r);
    }
}
