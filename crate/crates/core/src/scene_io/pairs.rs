use super::{syntax, FormatError};

/// View pairing from a `pair.txt`: for every reference view, its source
/// views ordered by descending relevance.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGraph {
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl ViewGraph {
    /// Validates ids and self-pairing.
    pub fn new(neighbors: Vec<Vec<(usize, f64)>>) -> Result<Self, FormatError> {
        let n = neighbors.len();
        for (r, list) in neighbors.iter().enumerate() {
            for &(s, _) in list {
                if s >= n {
                    return Err(FormatError::Header(format!("view {r}: neighbor id {s} out of range (num_views = {n})")));
                }
                if s == r {
                    return Err(FormatError::Header(format!("view {r} is paired with itself")));
                }
            }
        }
        Ok(Self { neighbors })
    }

    /// Every view paired with every other, scores 1.
    pub fn complete(num_views: usize) -> Self {
        let neighbors = (0..num_views)
            .map(|r| (0..num_views).filter(|&s| s != r).map(|s| (s, 1.0)).collect())
            .collect();
        Self { neighbors }
    }

    pub fn num_views(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, view: usize) -> &[(usize, f64)] {
        &self.neighbors[view]
    }

    /// Source ids of `view`, at most `limit` of them.
    pub fn sources(&self, view: usize, limit: usize) -> Vec<usize> {
        self.neighbors[view].iter().take(limit).map(|&(s, _)| s).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.iter().all(|l| l.is_empty())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.neighbors.len());
        for (r, list) in self.neighbors.iter().enumerate() {
            s.push_str(&format!("{r}\n{}", list.len()));
            for (id, score) in list {
                s.push_str(&format!(" {id} {score}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Parses a `pair.txt`: the view count, then per view a line with the
/// reference id and a line `N id0 score0 id1 score1 ...`.
pub fn parse_pairs(text: &[u8]) -> Result<ViewGraph, FormatError> {
    let text = std::str::from_utf8(text).map_err(|e| syntax(0, format!("not UTF-8: {e}")))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, t)| !t.is_empty());
    let end = text.lines().count().max(1);

    let (no, toks) = lines.next().ok_or_else(|| syntax(end, "missing view count"))?;
    if toks.len() != 1 {
        return Err(syntax(no, "expected a single view count"));
    }
    let n: usize = toks[0]
        .parse()
        .map_err(|_| syntax(no, format!("bad view count {:?}", toks[0])))?;
    // Each view needs two lines; bound the allocation by what the text can hold.
    if n > text.len() {
        return Err(syntax(no, format!("view count {n} exceeds file size")));
    }
    let mut neighbors: Vec<Option<Vec<(usize, f64)>>> = vec![None; n];
    for _ in 0..n {
        let (no, toks) = lines.next().ok_or_else(|| syntax(end, "missing reference id line"))?;
        if toks.len() != 1 {
            return Err(syntax(no, "expected a single reference id"));
        }
        let r: usize = toks[0]
            .parse()
            .map_err(|_| syntax(no, format!("bad reference id {:?}", toks[0])))?;
        if r >= n {
            return Err(syntax(no, format!("reference id {r} out of range (num_views = {n})")));
        }
        if neighbors[r].is_some() {
            return Err(syntax(no, format!("reference id {r} listed twice")));
        }
        let (no, toks) = lines.next().ok_or_else(|| syntax(end, "missing neighbor line"))?;
        let count: usize = toks[0]
            .parse()
            .map_err(|_| syntax(no, format!("bad neighbor count {:?}", toks[0])))?;
        let pairs = &toks[1..];
        if pairs.len() != count.saturating_mul(2) {
            return Err(syntax(
                no,
                format!("neighbor count {count} does not match {} listed values", pairs.len()),
            ));
        }
        let mut list = Vec::with_capacity(count);
        for pair in pairs.chunks_exact(2) {
            let id: usize = pair[0]
                .parse()
                .map_err(|_| syntax(no, format!("bad neighbor id {:?}", pair[0])))?;
            let score: f64 = pair[1]
                .parse()
                .map_err(|_| syntax(no, format!("bad score {:?}", pair[1])))?;
            if id >= n {
                return Err(syntax(no, format!("neighbor id {id} out of range (num_views = {n})")));
            }
            if id == r {
                return Err(syntax(no, format!("view {r} is paired with itself")));
            }
            list.push((id, score));
        }
        neighbors[r] = Some(list);
    }
    if let Some((no, _)) = lines.next() {
        return Err(syntax(no, "unexpected trailing content"));
    }
    Ok(ViewGraph {
        neighbors: neighbors.into_iter().map(|l| l.expect("every id filled")).collect(),
    })
}
