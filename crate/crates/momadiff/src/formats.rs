//! Text formats for keyframes and edit masks.
//!
//! Keyframes: one line per pose, `frame<TAB>v1 v2 ... vd`.
//! Edit masks: one line per preserved range, `start end`, half-open.
//! Blank lines and lines starting with `#` are skipped in both.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use momadiff_core::inference::KeyframeSet;

use crate::error::{Error, Result};

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub fn parse_keyframes(text: &str, d: usize, path: &Path) -> Result<KeyframeSet> {
    let mut set = KeyframeSet::default();
    for (no, line) in content_lines(text) {
        let (frame, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, format!("line {no}: expected frame<TAB>values")))?;
        let frame: usize = frame
            .trim()
            .parse()
            .map_err(|_| Error::format(path, format!("line {no}: bad frame index {frame:?}")))?;
        let pose = values
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::format(path, format!("line {no}: bad value {v:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if pose.len() != d {
            return Err(Error::format(
                path,
                format!("line {no}: expected {d} values, found {}", pose.len()),
            ));
        }
        if set.entries.insert(frame, pose).is_some() {
            return Err(Error::format(path, format!("line {no}: frame {frame} given twice")));
        }
    }
    Ok(set)
}

pub fn format_keyframes(set: &KeyframeSet) -> String {
    let mut out = String::new();
    for (frame, pose) in &set.entries {
        let values: Vec<String> = pose.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{frame}\t{}", values.join(" ")).expect("write to string");
    }
    out
}

pub fn load_keyframes(path: &Path, d: usize) -> Result<KeyframeSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_keyframes(&text, d, path)
}

/// Per-frame preserve flags for a clip of `frames` frames.
pub fn parse_edit_mask(text: &str, frames: usize, path: &Path) -> Result<Vec<bool>> {
    let mut keep = vec![false; frames];
    for (no, line) in content_lines(text) {
        let (a, b) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::format(path, format!("line {no}: expected start and end frames")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::format(path, format!("line {no}: bad frame {s:?}")))
        };
        let (start, end) = (parse(a)?, parse(b)?);
        if start >= end || end > frames {
            return Err(Error::format(
                path,
                format!("line {no}: range [{start}, {end}) invalid for {frames} frames"),
            ));
        }
        keep[start..end].iter_mut().for_each(|k| *k = true);
    }
    Ok(keep)
}

pub fn load_edit_mask(path: &Path, frames: usize) -> Result<Vec<bool>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edit_mask(&text, frames, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyframes_round_trip() {
        let mut set = KeyframeSet::default();
        set.insert(0, vec![0.1, -2.5, 1e-7]);
        set.insert(20, vec![3.0, 0.0, -0.3333333333333333]);
        let text = format_keyframes(&set);
        assert_eq!(parse_keyframes(&text, 3, Path::new("k")).unwrap(), set);
    }

    #[test]
    fn keyframe_errors() {
        let p = Path::new("k");
        assert!(parse_keyframes("0\t1 2\n", 3, p).is_err());
        assert!(parse_keyframes("x\t1 2 3\n", 3, p).is_err());
        assert!(parse_keyframes("1\t1 2 3\n1\t1 2 3\n", 3, p).is_err());
        assert!(parse_keyframes("1\t1 nan 3\n", 3, p).is_err());
        let ok = parse_keyframes("# header\n\n4\t1 2 3\n", 3, p).unwrap();
        assert_eq!(ok.len(), 1);
    }

    #[test]
    fn edit_mask_ranges() {
        let p = Path::new("m");
        let keep = parse_edit_mask("0\t4\n8\t12\n", 12, p).unwrap();
        assert_eq!(keep.iter().filter(|k| **k).count(), 8);
        assert!(keep[3] && !keep[4] && keep[8]);
        assert!(parse_edit_mask("4\t4\n", 12, p).is_err());
        assert!(parse_edit_mask("0\t13\n", 12, p).is_err());
    }
}
