//! Line-oriented sequence files.
//!
//! Each block starts with a header `T K P label` followed by `T` rows of
//! `3K` whitespace-separated floats, joint-major (`j0.x j0.y j0.z j1.x ...`).
//! Blocks may be concatenated; blank lines between them are ignored.

use std::fmt::Write as _;
use std::path::Path;

use sta_core::data::SkeletonSequence;

use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};

pub fn load_generic(path: &Path) -> Result<Vec<SkeletonSequence>> {
    parse_generic(&read_to_string(path)?, path)
}

pub fn parse_generic(text: &str, origin: &Path) -> Result<Vec<SkeletonSequence>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();
    let mut out = Vec::new();
    while let Some((ln, header)) = lines.next() {
        let fields: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(ln, format!("header: {e}")))?;
        let [t, k, p, label] = fields[..] else {
            return Err(err(ln, format!("header needs 4 integers, found {}", fields.len())));
        };
        if t == 0 || k == 0 || p == 0 {
            return Err(err(ln, "header sizes must be positive".into()));
        }
        let mut frames = Vec::with_capacity(t * 3 * k);
        for row in 0..t {
            let (rl, text) = lines
                .next()
                .ok_or_else(|| err(ln, format!("expected {t} rows, file ends after {row}")))?;
            let before = frames.len();
            for tok in text.split_whitespace() {
                let v: f64 = tok.parse().map_err(|e| err(rl, format!("{tok:?}: {e}")))?;
                if !v.is_finite() {
                    return Err(err(rl, format!("non-finite value {tok}")));
                }
                frames.push(v);
            }
            if frames.len() - before != 3 * k {
                return Err(err(rl, format!("expected {} values, found {}", 3 * k, frames.len() - before)));
            }
        }
        let seq = SkeletonSequence::new(k, p, label, frames).map_err(|e| err(ln, e.to_string()))?;
        out.push(seq);
    }
    if out.is_empty() {
        return Err(err(1, "no sequences".into()));
    }
    Ok(out)
}

/// Formats sequences so that [`parse_generic`] reproduces every value
/// exactly. Padded frames are dropped.
pub fn format_generic(seqs: &[SkeletonSequence]) -> String {
    let mut s = String::new();
    for seq in seqs {
        let t = seq.valid_len();
        writeln!(s, "{} {} {} {}", t, seq.joints(), seq.persons(), seq.label()).unwrap();
        for f in 0..t {
            let row: Vec<String> = seq.frame(f).iter().map(f64::to_string).collect();
            writeln!(s, "{}", row.join(" ")).unwrap();
        }
    }
    s
}

pub fn save_generic(path: &Path, seqs: &[SkeletonSequence]) -> Result<()> {
    write_atomic(path, format_generic(seqs).as_bytes())
}
