//! Stick-figure key poses rendered to SVG.

use std::fmt::Write as _;

use momadiff_core::motion::{recover_joints, LayoutKind, MotionSequence, ToySkeleton};

use crate::error::{Error, Result};

const PANEL_W: f64 = 120.0;
const PANEL_H: f64 = 160.0;
const MARGIN: f64 = 10.0;

/// Kinematic chains of the 22-joint body, root first.
const BODY_CHAINS: [&[usize]; 5] = [
    &[0, 2, 5, 8, 11],
    &[0, 1, 4, 7, 10],
    &[0, 3, 6, 9, 12, 15],
    &[9, 14, 17, 19, 21],
    &[9, 13, 16, 18, 20],
];

pub fn parents(kind: LayoutKind, joint_count: usize) -> Vec<Option<usize>> {
    match kind {
        LayoutKind::Toy => ToySkeleton::new(joint_count).parents,
        LayoutKind::HumanMl3d if joint_count == 22 => {
            let mut p = vec![None; 22];
            for chain in BODY_CHAINS {
                for w in chain.windows(2) {
                    p[w[1]] = Some(w[0]);
                }
            }
            p
        }
        LayoutKind::HumanMl3d => (0..joint_count).map(|j| j.checked_sub(1)).collect(),
    }
}

/// Frames drawn for a clip of `frames` frames at `stride`.
pub fn pose_frames(frames: usize, stride: usize) -> Vec<usize> {
    (0..frames).step_by(stride.max(1)).collect()
}

/// Poses every `stride` frames side by side, side view (x right, y up), each
/// centered on its root.
pub fn render_svg(x: &MotionSequence, stride: usize) -> Result<String> {
    if stride == 0 {
        return Err(Error::Usage("plot stride must be positive".into()));
    }
    let joints = recover_joints(x)?;
    let j = x.layout.joint_count;
    let parent = parents(x.layout.kind, j);
    let frames = pose_frames(x.len(), stride);
    let point = |t: usize, k: usize| {
        let row = joints.row(t);
        (row[3 * k] - row[0], row[3 * k + 1])
    };
    let (mut lo, mut hi) = ((f64::MAX, f64::MAX), (f64::MIN, f64::MIN));
    for &t in &frames {
        for k in 0..j {
            let (px, py) = point(t, k);
            lo = (lo.0.min(px), lo.1.min(py));
            hi = (hi.0.max(px), hi.1.max(py));
        }
    }
    let span = (hi.0 - lo.0).max(hi.1 - lo.1).max(1e-9);
    let scale = (PANEL_W.min(PANEL_H) - 2.0 * MARGIN) / span;
    let cx = 0.5 * (lo.0 + hi.0);
    let width = PANEL_W * frames.len() as f64;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{PANEL_H:.0}" viewBox="0 0 {width:.0} {PANEL_H:.0}">"#
    )
    .expect("write");
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).expect("write");
    for (i, &t) in frames.iter().enumerate() {
        let ox = PANEL_W * (i as f64 + 0.5);
        let map = |(px, py): (f64, f64)| (ox + (px - cx) * scale, PANEL_H - MARGIN - (py - lo.1) * scale);
        writeln!(svg, r#"<g id="pose-{t}" stroke="black" stroke-width="2" stroke-linecap="round">"#).expect("write");
        for k in 0..j {
            if let Some(p) = parent[k] {
                let (x1, y1) = map(point(t, p));
                let (x2, y2) = map(point(t, k));
                writeln!(svg, r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}"/>"#).expect("write");
            }
        }
        writeln!(
            svg,
            r#"<text x="{ox:.2}" y="12" font-size="10" text-anchor="middle" stroke="none">{t}</text>"#
        )
        .expect("write");
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
