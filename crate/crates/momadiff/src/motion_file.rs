//! Binary motion files.
//!
//! Layout, all little-endian: magic `MOMA`, version `u32`, `d u32`, `T u32`,
//! `fps f32`, layout kind `u8`, velocity range `2 x u32`, then `T * d` `f32`
//! values in row-major order.

use std::fs;
use std::path::Path;

use momadiff_core::motion::{LayoutDescriptor, LayoutKind, MotionSequence};
use momadiff_core::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MOMA";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 29;

pub fn encode_motion(x: &MotionSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * x.frames.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(x.d() as u32).to_le_bytes());
    out.extend_from_slice(&(x.len() as u32).to_le_bytes());
    out.extend_from_slice(&x.fps.to_le_bytes());
    out.push(x.layout.kind.code());
    out.extend_from_slice(&(x.layout.velocity_range.0 as u32).to_le_bytes());
    out.extend_from_slice(&(x.layout.velocity_range.1 as u32).to_le_bytes());
    for &v in x.frames.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a motion file image; `path` only labels errors.
pub fn decode_motion(bytes: &[u8], path: &Path) -> Result<MotionSequence> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::format(
            path,
            format!("header needs {HEADER_BYTES} bytes, found {}", bytes.len()),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not a motion file (bad magic)"));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::Version {
            path: path.into(),
            expected: VERSION,
            found: version,
        });
    }
    let d = u32_at(bytes, 8) as usize;
    let t = u32_at(bytes, 12) as usize;
    let fps = f32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes"));
    let kind = LayoutKind::from_code(bytes[20]).map_err(|e| Error::format(path, e.to_string()))?;
    let vr = (u32_at(bytes, 21) as usize, u32_at(bytes, 25) as usize);
    if d == 0 || t == 0 {
        return Err(Error::format(path, format!("header declares d={d}, T={t}; both must be positive")));
    }
    let expected = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_BYTES))
        .ok_or_else(|| Error::format(path, "header sizes overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes for T={t}, d={d}, found {}", bytes.len()),
        ));
    }
    let layout = LayoutDescriptor::from_parts(kind, d, vr).map_err(|e| Error::format(path, e.to_string()))?;
    let data: Vec<f64> = bytes[HEADER_BYTES..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let frames = Tensor::from_vec(t, d, data)?;
    MotionSequence::new(frames, fps, layout).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_motion(x: &MotionSequence, path: &Path) -> Result<()> {
    if !x.frames.data().iter().all(|v| (*v as f32).is_finite()) {
        return Err(Error::format(path, "motion has values that are not finite in f32"));
    }
    fs::write(path, encode_motion(x)).map_err(|e| Error::io(path, e))
}

pub fn load_motion(path: &Path) -> Result<MotionSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_motion(&bytes, path)
}

/// Loads a `relative_path<TAB>caption` manifest; paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<(MotionSequence, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (rel, caption) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, format!("line {}: expected path<TAB>caption", no + 1)))?;
        out.push((load_motion(&base.join(rel))?, caption.to_string()));
    }
    if out.is_empty() {
        return Err(Error::Core(momadiff_core::Error::EmptyCorpus));
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (rel, caption) in entries {
        if caption.contains(['\t', '\n']) {
            return Err(Error::format(path, "captions may not contain tabs or newlines"));
        }
        text.push_str(rel);
        text.push('\t');
        text.push_str(caption);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: usize) -> MotionSequence {
        let layout = LayoutDescriptor::toy(4);
        let data = (0..t * layout.d).map(|k| ((k * 37 % 101) as f32 * 0.173 - 7.0) as f64).collect();
        MotionSequence::new(Tensor::from_vec(t, layout.d, data).unwrap(), 20.0, layout).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let x = sample(10);
        let bytes = encode_motion(&x);
        assert_eq!(bytes.len(), HEADER_BYTES + 4 * 10 * 24);
        let y = decode_motion(&bytes, Path::new("mem")).unwrap();
        assert_eq!(x, y);
        assert_eq!(encode_motion(&y), bytes);
    }

    #[test]
    fn truncated_file_names_byte_counts() {
        let bytes = encode_motion(&sample(3));
        let err = decode_motion(&bytes[..bytes.len() - 1], Path::new("m.moma")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&format!("expected {}", bytes.len())), "{msg}");
        assert!(msg.contains(&format!("found {}", bytes.len() - 1)), "{msg}");
    }

    #[test]
    fn zero_width_header_rejected() {
        let mut bytes = encode_motion(&sample(2));
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_motion(&bytes, Path::new("m")), Err(Error::Format { .. })));
        let mut bytes = encode_motion(&sample(2));
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(
            decode_motion(&bytes, Path::new("m")),
            Err(Error::Version { found: 9, .. })
        ));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let mut bytes = encode_motion(&sample(2));
        bytes[HEADER_BYTES..HEADER_BYTES + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_motion(&bytes, Path::new("m")).is_err());
    }
}
