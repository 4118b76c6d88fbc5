use super::FormatError;
use crate::cloud::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    Binary { little: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                (if little { <$t>::from_le_bytes(a) } else { <$t>::from_be_bytes(a) }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Option<Scalar>)>,
}

fn header_err(msg: impl Into<String>) -> FormatError {
    FormatError::Header(msg.into())
}

/// Decodes the `vertex` element of an ASCII or binary PLY file.
///
/// Reads `x`, `y`, `z` and, when all three are present, `red`, `green`,
/// `blue`. Elements after `vertex` are ignored.
pub fn read_ply(bytes: &[u8]) -> Result<PointCloud, FormatError> {
    let (header, body) = split_header(bytes)?;
    let mut lines = header.lines();
    if lines.next().map(str::trim_end) != Some("ply") {
        return Err(FormatError::BadMagic("missing \"ply\" line".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                encoding = Some(match toks.get(1).copied() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::Binary { little: true },
                    Some("binary_big_endian") => Encoding::Binary { little: false },
                    other => return Err(header_err(format!("unknown format {other:?}"))),
                });
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(header_err(format!("malformed element line {line:?}")));
                }
                let count = toks[2]
                    .parse()
                    .map_err(|_| header_err(format!("bad element count {:?}", toks[2])))?;
                elements.push(Element {
                    name: toks[1].to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err("property before any element"))?;
                match toks.as_slice() {
                    [_, "list", _, _, name] => el.props.push((name.to_string(), None)),
                    [_, ty, name] => {
                        let s = Scalar::parse(ty).ok_or_else(|| header_err(format!("unknown type {ty:?}")))?;
                        el.props.push((name.to_string(), Some(s)));
                    }
                    _ => return Err(header_err(format!("malformed property line {line:?}"))),
                }
            }
            Some(other) => return Err(header_err(format!("unknown header keyword {other:?}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| header_err("missing format line"))?;
    let vi = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| header_err("no vertex element"))?;
    let vertex = &elements[vi];
    let find = |n: &str| vertex.props.iter().position(|(name, _)| name == n);
    let (xi, yi, zi) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(header_err("vertex element lacks x, y or z")),
    };
    let color_idx = match (find("red"), find("green"), find("blue")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };

    let rows = match encoding {
        Encoding::Ascii => ascii_rows(body, &elements, vi)?,
        Encoding::Binary { little } => binary_rows(body, &elements, vi, little)?,
    };
    let mut points = Vec::with_capacity(rows.len());
    let mut colors = color_idx.map(|_| Vec::with_capacity(rows.len()));
    for (i, row) in rows.iter().enumerate() {
        let p = [row[xi], row[yi], row[zi]];
        if p.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite(i));
        }
        points.push(p);
        if let (Some(idx), Some(cols)) = (color_idx, colors.as_mut()) {
            cols.push(idx.map(|k| row[k].round().clamp(0.0, 255.0) as u8));
        }
    }
    Ok(PointCloud { points, colors })
}

fn split_header(bytes: &[u8]) -> Result<(&str, &[u8]), FormatError> {
    const END: &[u8] = b"end_header";
    let pos = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| header_err("missing end_header"))?;
    let mut body = pos + END.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) != Some(&b'\n') {
        return Err(header_err("end_header must end its line"));
    }
    let header = std::str::from_utf8(&bytes[..pos]).map_err(|_| header_err("non-ASCII header"))?;
    Ok((header, &bytes[body + 1..]))
}

fn ascii_rows(body: &[u8], elements: &[Element], vi: usize) -> Result<Vec<Vec<f64>>, FormatError> {
    let text = std::str::from_utf8(body).map_err(|_| header_err("non-ASCII body"))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    for el in &elements[..vi] {
        for _ in 0..el.count {
            lines.next().ok_or_else(|| header_err(format!("missing {} rows", el.name)))?;
        }
    }
    let vertex = &elements[vi];
    if vertex.props.iter().any(|(_, s)| s.is_none()) {
        return Err(FormatError::Unsupported("list property in vertex element".into()));
    }
    let mut rows = Vec::new();
    for i in 0..vertex.count {
        let line = lines.next().ok_or(FormatError::Truncated {
            expected: vertex.count,
            actual: i,
        })?;
        let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let mut vals = vals.map_err(|_| header_err(format!("vertex {i}: non-numeric value")))?;
        // Same rounding as the binary path.
        for (v, (_, s)) in vals.iter_mut().zip(&vertex.props) {
            if *s == Some(Scalar::F32) {
                *v = *v as f32 as f64;
            }
        }
        if vals.len() != vertex.props.len() {
            return Err(header_err(format!(
                "vertex {i}: expected {} values, found {}",
                vertex.props.len(),
                vals.len()
            )));
        }
        rows.push(vals);
    }
    Ok(rows)
}

fn binary_rows(body: &[u8], elements: &[Element], vi: usize, little: bool) -> Result<Vec<Vec<f64>>, FormatError> {
    let row_size = |el: &Element| -> Result<usize, FormatError> {
        el.props.iter().try_fold(0usize, |acc, (name, s)| match s {
            Some(s) => Ok(acc + s.size()),
            None => Err(FormatError::Unsupported(format!(
                "list property {name:?} in binary element {:?}",
                el.name
            ))),
        })
    };
    let mut offset = 0usize;
    for el in &elements[..vi] {
        offset = row_size(el)?
            .checked_mul(el.count)
            .and_then(|n| n.checked_add(offset))
            .ok_or_else(|| header_err("element size overflow"))?;
    }
    let vertex = &elements[vi];
    let rs = row_size(vertex)?;
    let expected = rs
        .checked_mul(vertex.count)
        .and_then(|n| n.checked_add(offset))
        .ok_or_else(|| header_err("element size overflow"))?;
    if body.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            actual: body.len(),
        });
    }
    let mut rows = Vec::with_capacity(vertex.count);
    for r in 0..vertex.count {
        let mut at = offset + r * rs;
        let mut row = Vec::with_capacity(vertex.props.len());
        for (_, s) in &vertex.props {
            let s = s.expect("checked scalar");
            row.push(s.decode(&body[at..], little));
            at += s.size();
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Encodes a cloud as a single `vertex` element with `float` coordinates and
/// optional `uchar` colors.
pub fn write_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = format!(
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    if cloud.colors.is_some() {
        out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.push_str("end_header\n");
    let mut out = out.into_bytes();
    for (i, p) in cloud.points.iter().enumerate() {
        let p = p.map(|v| v as f32);
        let color = cloud.colors.as_ref().map(|c| c[i]);
        match format {
            PlyFormat::Ascii => {
                let mut line = format!("{} {} {}", p[0], p[1], p[2]);
                if let Some([r, g, b]) = color {
                    line.push_str(&format!(" {r} {g} {b}"));
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
            PlyFormat::BinaryLittleEndian => {
                for v in p {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(c) = color {
                    out.extend_from_slice(&c);
                }
            }
        }
    }
    out
}
