use super::{syntax, FormatError};

/// Hypothesis count assumed when a camera file omits it.
pub const DEFAULT_DEPTH_COUNT: usize = 192;

/// Contents of an MVSNet-style `cam.txt`.
///
/// ```text
/// extrinsic
/// r00 r01 r02 t0
/// r10 r11 r12 t1
/// r20 r21 r22 t2
/// 0 0 0 1
///
/// intrinsic
/// fx 0 cx
/// 0 fy cy
/// 0 0 1
///
/// depth_min depth_interval [depth_count [depth_max]]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFile {
    /// World to camera, row-major.
    pub extrinsic: [[f64; 4]; 4],
    /// Pixels, row-major.
    pub intrinsic: [[f64; 3]; 3],
    pub depth_min: f64,
    pub depth_interval: f64,
    pub depth_count: Option<usize>,
    pub depth_max: Option<f64>,
}

impl CameraFile {
    /// Far end of the depth range. Falls back to
    /// `depth_min + depth_interval * (count - 1)` with the count defaulting
    /// to [`DEFAULT_DEPTH_COUNT`].
    pub fn resolved_depth_max(&self) -> f64 {
        self.depth_max.unwrap_or_else(|| {
            let n = self.depth_count.unwrap_or(DEFAULT_DEPTH_COUNT).max(2);
            self.depth_min + self.depth_interval * (n - 1) as f64
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("extrinsic\n");
        for row in &self.extrinsic {
            s.push_str(&join(row));
            s.push('\n');
        }
        s.push_str("\nintrinsic\n");
        for row in &self.intrinsic {
            s.push_str(&join(row));
            s.push('\n');
        }
        s.push('\n');
        s.push_str(&format!("{} {}", self.depth_min, self.depth_interval));
        if let Some(n) = self.depth_count {
            s.push_str(&format!(" {n}"));
            if let Some(m) = self.depth_max {
                s.push_str(&format!(" {m}"));
            }
        }
        s.push('\n');
        s
    }
}

fn join(row: &[f64]) -> String {
    row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn number(tok: &str, line: usize) -> Result<f64, FormatError> {
    let v: f64 = tok
        .parse()
        .map_err(|_| syntax(line, format!("not a number: {tok:?}")))?;
    if !v.is_finite() {
        return Err(syntax(line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

fn row<const N: usize>(line: &(usize, Vec<&str>)) -> Result<[f64; N], FormatError> {
    let (no, toks) = line;
    if toks.len() != N {
        return Err(syntax(*no, format!("expected {N} values, found {}", toks.len())));
    }
    let mut out = [0.0; N];
    for (o, t) in out.iter_mut().zip(toks) {
        *o = number(t, *no)?;
    }
    Ok(out)
}

/// Parses a `cam.txt`. The final line may carry 2, 3 or 4 tokens.
pub fn parse_camera(text: &[u8]) -> Result<CameraFile, FormatError> {
    let text = std::str::from_utf8(text).map_err(|e| syntax(0, format!("not UTF-8: {e}")))?;
    let lines: Vec<(usize, Vec<&str>)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, t)| !t.is_empty())
        .collect();
    let mut it = lines.iter();
    let last_line = text.lines().count().max(1);

    let mut next = |what: &str| it.next().ok_or_else(|| syntax(last_line, format!("missing {what}")));

    let kw = next("\"extrinsic\" keyword")?;
    if kw.1 != ["extrinsic"] {
        return Err(syntax(kw.0, "expected \"extrinsic\""));
    }
    let mut extrinsic = [[0.0; 4]; 4];
    let mut extrinsic_last = 0;
    for r in extrinsic.iter_mut() {
        let l = next("extrinsic row")?;
        *r = row::<4>(l)?;
        extrinsic_last = l.0;
    }
    let kw = next("\"intrinsic\" keyword")?;
    if kw.1 != ["intrinsic"] {
        return Err(syntax(kw.0, "expected \"intrinsic\""));
    }
    let mut intrinsic = [[0.0; 3]; 3];
    let mut intrinsic_last = 0;
    for r in intrinsic.iter_mut() {
        let l = next("intrinsic row")?;
        *r = row::<3>(l)?;
        intrinsic_last = l.0;
    }
    let (dline, toks) = next("depth range line")?;
    if !(2..=4).contains(&toks.len()) {
        return Err(syntax(*dline, format!("expected 2 to 4 depth values, found {}", toks.len())));
    }
    let depth_min = number(toks[0], *dline)?;
    let depth_interval = number(toks[1], *dline)?;
    let depth_count = match toks.get(2) {
        Some(t) => {
            let v = number(t, *dline)?;
            if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
                return Err(syntax(*dline, format!("depth count must be a positive integer, got {t}")));
            }
            Some(v as usize)
        }
        None => None,
    };
    let depth_max = toks.get(3).map(|t| number(t, *dline)).transpose()?;
    if let Ok((no, _)) = next("") {
        return Err(syntax(*no, "unexpected trailing content"));
    }

    if extrinsic[3] != [0.0, 0.0, 0.0, 1.0] {
        return Err(syntax(extrinsic_last, "extrinsic bottom row must be 0 0 0 1"));
    }
    if intrinsic[2][2] != 1.0 {
        return Err(syntax(intrinsic_last, "intrinsic[2][2] must be 1"));
    }
    if depth_min <= 0.0 || depth_interval <= 0.0 {
        return Err(syntax(*dline, "depth_min and depth_interval must be positive"));
    }
    if let Some(m) = depth_max {
        if depth_min >= m {
            return Err(syntax(*dline, "depth_min must be below depth_max"));
        }
    }
    Ok(CameraFile {
        extrinsic,
        intrinsic,
        depth_min,
        depth_interval,
        depth_count,
        depth_max,
    })
}
