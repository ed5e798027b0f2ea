//! Matrix Market coordinate files.
//!
//! Reads `real`, `integer` and `pattern` fields with `general` or
//! `symmetric` symmetry; always writes `coordinate real general`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::CooMatrix;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, col: 1, msg: msg.into() }
}

pub fn parse_mtx(text: &str) -> Result<CooMatrix> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let h: Vec<String> = header.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
    if h.len() < 5 || h[0] != "%%matrixmarket" || h[1] != "matrix" || h[2] != "coordinate" {
        return Err(parse_err(1, "expected `%%MatrixMarket matrix coordinate <field> <symmetry>`"));
    }
    let pattern = match h[3].as_str() {
        "real" | "integer" | "double" => false,
        "pattern" => true,
        f => return Err(parse_err(1, format!("unsupported field `{f}`"))),
    };
    let symmetric = match h[4].as_str() {
        "general" => false,
        "symmetric" => true,
        s => return Err(parse_err(1, format!("unsupported symmetry `{s}`"))),
    };
    let mut body = lines.filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('%'));
    let (ln, size) = body.next().ok_or_else(|| parse_err(2, "missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(ln, format!("bad size field `{t}`"))))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(parse_err(ln, "size line needs rows, cols, entries"));
    }
    let (rows, cols, n) = (dims[0], dims[1], dims[2]);
    let mut triplets = Vec::with_capacity(n);
    for (ln, l) in body {
        let t: Vec<&str> = l.split_whitespace().collect();
        let need = if pattern { 2 } else { 3 };
        if t.len() < need {
            return Err(parse_err(ln, "too few fields"));
        }
        let idx = |s: &str| -> Result<usize> {
            let v: usize = s.parse().map_err(|_| parse_err(ln, format!("bad index `{s}`")))?;
            if v == 0 {
                return Err(parse_err(ln, "indices are 1-based"));
            }
            Ok(v - 1)
        };
        let (r, c) = (idx(t[0])?, idx(t[1])?);
        let v = if pattern {
            1.0
        } else {
            t[2].parse::<f64>().map_err(|_| parse_err(ln, format!("bad value `{}`", t[2])))?
        };
        triplets.push((r, c, v));
        if symmetric && r != c {
            triplets.push((c, r, v));
        }
    }
    let expected = if symmetric { None } else { Some(n) };
    if let Some(n) = expected {
        if triplets.len() != n {
            return Err(parse_err(0, format!("expected {n} entries, found {}", triplets.len())));
        }
    }
    CooMatrix::new(rows, cols, triplets)
}

pub fn write_mtx(m: &CooMatrix) -> String {
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "{} {} {}", m.rows, m.cols, m.triplets.len());
    let mut t = m.triplets.clone();
    t.sort_by_key(|e| (e.0, e.1));
    for (r, c, v) in t {
        let _ = writeln!(out, "{} {} {}", r + 1, c + 1, v);
    }
    out
}

pub fn read_mtx_file(path: &Path) -> Result<CooMatrix> {
    parse_mtx(&std::fs::read_to_string(path)?)
}

pub fn write_mtx_file(path: &Path, m: &CooMatrix) -> Result<()> {
    Ok(std::fs::write(path, write_mtx(m))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let m = CooMatrix::new(3, 4, vec![(0, 0, 1.5), (2, 3, -2.0), (1, 1, 3.0)]).unwrap();
        let back = parse_mtx(&write_mtx(&m)).unwrap();
        assert_eq!(back.to_dense(), m.to_dense());
    }

    #[test]
    fn symmetric_and_pattern() {
        let text = "%%MatrixMarket matrix coordinate pattern symmetric\n% c\n3 3 2\n2 1\n3 3\n";
        let m = parse_mtx(text).unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.to_dense().get(0, 1), 1.0);
    }

    #[test]
    fn errors_carry_lines() {
        let e = parse_mtx("%%MatrixMarket matrix coordinate real general\n2 2 1\n0 1 1\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        assert!(parse_mtx("hello").is_err());
    }
}
