//! SBU Kinect Interaction layout:
//! `<class>/<pair>/<run>/skeleton.txt`, where `<class>` is `01`..`08`,
//! `<pair>` names both actors (`s01s02`), and every row holds a frame index
//! followed by 15 joints × 3 coordinates for each of the two persons.

use std::path::{Path, PathBuf};

use sta_core::data::SkeletonSequence;

use crate::error::{io, Error, Result};
use crate::fsutil::read_to_string;

pub const JOINTS_PER_PERSON: usize = 15;
pub const PERSONS: usize = 2;
pub const CLASSES: usize = 8;
const FIELDS: usize = 1 + 3 * JOINTS_PER_PERSON * PERSONS;

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io(dir))? {
        let path = entry.map_err(io(dir))?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// `s01s02` → `(1, 2)`.
pub fn parse_pair(name: &str) -> Option<(u32, u32)> {
    let rest = name.strip_prefix('s')?;
    let split = rest.find('s')?;
    Some((rest[..split].parse().ok()?, rest[split + 1..].parse().ok()?))
}

pub fn parse_skeleton(text: &str, path: &Path, label: usize) -> Result<SkeletonSequence> {
    let mut frames = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != FIELDS {
            return Err(err(format!("expected {FIELDS} fields, found {}", fields.len())));
        }
        for f in &fields[1..] {
            let v: f64 = f.parse().map_err(|e| err(format!("{f:?}: {e}")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite value {f}")));
            }
            frames.push(v);
        }
    }
    if frames.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "no frames".into(),
        });
    }
    Ok(SkeletonSequence::new(JOINTS_PER_PERSON * PERSONS, PERSONS, label, frames)?)
}

/// Loads every run under `root`. Labels are the class directory number
/// minus one.
pub fn load_sbu(root: &Path) -> Result<Vec<SkeletonSequence>> {
    let mut out = Vec::new();
    for class in 1..=CLASSES {
        let dir = root.join(format!("{class:02}"));
        if !dir.is_dir() {
            return Err(Error::Layout(format!("missing class directory {}", dir.display())));
        }
        for pair_dir in sorted_dirs(&dir)? {
            let name = pair_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let (a, b) = parse_pair(name)
                .ok_or_else(|| Error::Layout(format!("bad actor pair directory {}", pair_dir.display())))?;
            for run in sorted_dirs(&pair_dir)? {
                let file = run.join("skeleton.txt");
                if !file.is_file() {
                    return Err(Error::Layout(format!("missing {}", file.display())));
                }
                let seq = parse_skeleton(&read_to_string(&file)?, &file, class - 1)?;
                out.push(seq.with_subjects(a, b));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(idx: usize, v: f64) -> String {
        let mut f = vec![idx.to_string()];
        f.extend((0..90).map(|j| (v + j as f64 * 0.01).to_string()));
        f.join(",")
    }

    #[test]
    fn pair_names() {
        assert_eq!(parse_pair("s01s02"), Some((1, 2)));
        assert_eq!(parse_pair("s07s03"), Some((7, 3)));
        assert_eq!(parse_pair("s01"), None);
        assert_eq!(parse_pair("x01s02"), None);
    }

    #[test]
    fn skeleton_rows() {
        let text = format!("{}\n{}\n", row(1, 0.1), row(2, 0.2));
        let s = parse_skeleton(&text, Path::new("s.txt"), 3).unwrap();
        assert_eq!((s.len(), s.joints(), s.persons(), s.label()), (2, 30, 2, 3));
        assert_eq!(s.frame(1)[0], 0.2);
    }

    #[test]
    fn missing_frame_index_is_parse_error() {
        let bad: Vec<String> = (0..90).map(|j| j.to_string()).collect();
        let err = parse_skeleton(&bad.join(","), Path::new("s.txt"), 0).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn missing_class_is_layout_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_sbu(dir.path()), Err(Error::Layout(_))));
    }
}
