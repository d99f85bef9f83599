//! Motion sequences, per-dimension normalization, the procedural toy corpus
//! and joint-position recovery.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::{index, stream, uniform, DetRng, Stream};
use crate::tensor::Tensor;

/// Lower bound applied to per-dimension standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

/// Longest sequence the toy corpus may produce.
pub const MAX_FRAMES: usize = 196;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutKind {
    HumanMl3d,
    Toy,
}

impl LayoutKind {
    pub fn code(self) -> u8 {
        match self {
            LayoutKind::HumanMl3d => 0,
            LayoutKind::Toy => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(LayoutKind::HumanMl3d),
            1 => Ok(LayoutKind::Toy),
            other => Err(Error::UnknownLayout(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayoutKind::HumanMl3d => "humanml3d",
            LayoutKind::Toy => "toy",
        }
    }
}

/// Describes how a frame's feature vector is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutDescriptor {
    pub d: usize,
    pub joint_count: usize,
    /// Half-open range of the velocity block within a frame.
    pub velocity_range: (usize, usize),
    pub kind: LayoutKind,
}

impl LayoutDescriptor {
    /// `3J` positions followed by `3J` velocities.
    pub fn toy(joint_count: usize) -> Self {
        Self {
            d: 6 * joint_count,
            joint_count,
            velocity_range: (3 * joint_count, 6 * joint_count),
            kind: LayoutKind::Toy,
        }
    }

    /// The 263-dim, 22-joint feature layout (`12J - 1` features in general):
    /// root yaw velocity, root XZ velocity, root height, `3(J-1)` local joint
    /// positions, `6(J-1)` joint rotations, `3J` local velocities, 4 foot contacts.
    pub fn humanml3d(joint_count: usize) -> Self {
        let vel_start = 4 + 9 * (joint_count - 1);
        Self {
            d: 12 * joint_count - 1,
            joint_count,
            velocity_range: (vel_start, vel_start + 3 * joint_count),
            kind: LayoutKind::HumanMl3d,
        }
    }

    /// Infers the joint count from `d` for the given kind.
    pub fn from_parts(kind: LayoutKind, d: usize, velocity_range: (usize, usize)) -> Result<Self> {
        let joint_count = match kind {
            LayoutKind::Toy if d.is_multiple_of(6) && d > 0 => d / 6,
            LayoutKind::HumanMl3d if (d + 1).is_multiple_of(12) && d > 11 => (d + 1) / 12,
            _ => return Err(Error::InvalidConfig(format!("feature width {d} invalid for {} layout", kind.name()))),
        };
        let layout = Self {
            d,
            joint_count,
            velocity_range,
            kind,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.velocity_range;
        if self.d == 0 || lo >= hi || hi > self.d {
            return Err(Error::InvalidConfig(format!(
                "velocity range [{lo}, {hi}) invalid for d = {}",
                self.d
            )));
        }
        if self.kind == LayoutKind::Toy && 3 * self.joint_count > self.d {
            return Err(Error::InvalidConfig(String::from("toy joint block exceeds frame width")));
        }
        Ok(())
    }
}

/// `T x d` per-frame motion features.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub frames: Tensor,
    pub fps: f32,
    pub layout: LayoutDescriptor,
}

impl MotionSequence {
    pub fn new(frames: Tensor, fps: f32, layout: LayoutDescriptor) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::SequenceTooShort { frames: 0, factor: 1 });
        }
        if frames.cols() != layout.d {
            return Err(Error::DimensionMismatch {
                expected: layout.d,
                found: frames.cols(),
            });
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite("motion frames"));
        }
        if !(fps > 0.0) {
            return Err(Error::InvalidConfig(format!("fps must be positive, got {fps}")));
        }
        layout.validate()?;
        Ok(Self { frames, fps, layout })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn d(&self) -> usize {
        self.frames.cols()
    }

    /// Frames `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> MotionSequence {
        MotionSequence {
            frames: self.frames.slice_rows(start, end),
            fps: self.fps,
            layout: self.layout,
        }
    }

    pub fn concat(parts: &[&MotionSequence]) -> Result<MotionSequence> {
        let first = parts.first().ok_or(Error::EmptyCorpus)?;
        let frames: Vec<&Tensor> = parts.iter().map(|p| &p.frames).collect();
        MotionSequence::new(Tensor::concat_rows(&frames)?, first.fps, first.layout)
    }
}

/// Per-dimension mean and (floored) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn d(&self) -> usize {
        self.mean.len()
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }
}

pub fn compute_stats(corpus: &[MotionSequence]) -> Result<NormStats> {
    let first = corpus.first().ok_or(Error::EmptyCorpus)?;
    let d = first.d();
    let mut sum = vec![0.0; d];
    let mut count = 0usize;
    for seq in corpus {
        if seq.d() != d {
            return Err(Error::DimensionMismatch { expected: d, found: seq.d() });
        }
        for t in 0..seq.len() {
            for (s, v) in sum.iter_mut().zip(seq.frames.row(t)) {
                *s += v;
            }
        }
        count += seq.len();
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; d];
    for seq in corpus {
        for t in 0..seq.len() {
            for ((s, v), m) in sq.iter_mut().zip(seq.frames.row(t)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    let std = sq
        .iter()
        .map(|s| libm::sqrt(s / count as f64).max(STD_FLOOR))
        .collect();
    Ok(NormStats { mean, std })
}

pub fn normalize(x: &MotionSequence, stats: &NormStats) -> Result<MotionSequence> {
    map_frames(x, stats, |v, m, s| (v - m) / s)
}

pub fn denormalize(x: &MotionSequence, stats: &NormStats) -> Result<MotionSequence> {
    map_frames(x, stats, |v, m, s| v * s + m)
}

fn map_frames(x: &MotionSequence, stats: &NormStats, f: impl Fn(f64, f64, f64) -> f64) -> Result<MotionSequence> {
    if x.d() != stats.d() {
        return Err(Error::DimensionMismatch {
            expected: stats.d(),
            found: x.d(),
        });
    }
    let mut frames = x.frames.clone();
    for t in 0..frames.rows() {
        for ((v, m), s) in frames.row_mut(t).iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = f(*v, *m, *s);
        }
    }
    Ok(MotionSequence {
        frames,
        fps: x.fps,
        layout: x.layout,
    })
}

/// `T x J x 3` joint positions, stored as `T` rows of `3J` values.
pub type JointPositions = Tensor;

/// Recovers world-space joint positions from motion features.
pub fn recover_joints(x: &MotionSequence) -> Result<JointPositions> {
    match x.layout.kind {
        LayoutKind::Toy => {
            let j3 = 3 * x.layout.joint_count;
            let mut out = Tensor::zeros(x.len(), j3);
            for t in 0..x.len() {
                out.row_mut(t).copy_from_slice(&x.frames.row(t)[..j3]);
            }
            Ok(out)
        }
        LayoutKind::HumanMl3d => Ok(recover_humanml3d(x)),
    }
}

/// Rotates `v` by the quaternion `(w, x, y, z)`.
fn quat_rotate(q: [f64; 4], v: [f64; 3]) -> [f64; 3] {
    let u = [q[1], q[2], q[3]];
    let w = q[0];
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let uv = cross(u, v);
    let uuv = cross(u, uv);
    [
        v[0] + 2.0 * (w * uv[0] + uuv[0]),
        v[1] + 2.0 * (w * uv[1] + uuv[1]),
        v[2] + 2.0 * (w * uv[2] + uuv[2]),
    ]
}

fn recover_humanml3d(x: &MotionSequence) -> JointPositions {
    let frames = x.len();
    let joints = x.layout.joint_count;
    let f = &x.frames;
    // Root yaw: the angle of frame t integrates the yaw velocities of frames < t.
    let mut yaw = vec![0.0; frames];
    for t in 1..frames {
        yaw[t] = yaw[t - 1] + f.get(t - 1, 0);
    }
    // The inverse of the heading quaternion (cos a, 0, sin a, 0).
    let inv_quat: Vec<[f64; 4]> = yaw
        .iter()
        .map(|&a| [libm::cos(a), 0.0, -libm::sin(a), 0.0])
        .collect();
    let mut root = vec![[0.0f64; 3]; frames];
    for t in 1..frames {
        let local = [f.get(t - 1, 1), 0.0, f.get(t - 1, 2)];
        let world = quat_rotate(inv_quat[t], local);
        root[t] = [root[t - 1][0] + world[0], 0.0, root[t - 1][2] + world[2]];
    }
    for (t, r) in root.iter_mut().enumerate() {
        r[1] = f.get(t, 3);
    }
    let mut out = Tensor::zeros(frames, 3 * joints);
    for t in 0..frames {
        let row = out.row_mut(t);
        row[..3].copy_from_slice(&root[t]);
        for j in 1..joints {
            let base = 4 + 3 * (j - 1);
            let local = [f.get(t, base), f.get(t, base + 1), f.get(t, base + 2)];
            let p = quat_rotate(inv_quat[t], local);
            row[3 * j] = p[0] + root[t][0];
            row[3 * j + 1] = p[1];
            row[3 * j + 2] = p[2] + root[t][2];
        }
    }
    out
}

/// Parent of each joint in the 22-joint HumanML3D skeleton (root has none).
pub const HUMANML3D_PARENTS: [Option<usize>; 22] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
];

/// The procedural skeleton behind the toy corpus: a binary tree rooted at
/// the pelvis with fixed bone offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySkeleton {
    pub parents: Vec<Option<usize>>,
    pub offsets: Vec<[f64; 3]>,
}

impl ToySkeleton {
    pub fn new(joint_count: usize) -> Self {
        let mut parents = Vec::with_capacity(joint_count);
        let mut offsets = Vec::with_capacity(joint_count);
        for j in 0..joint_count {
            if j == 0 {
                parents.push(None);
                offsets.push([0.0, 0.0, 0.0]);
                continue;
            }
            parents.push(Some((j - 1) / 2));
            // Children fan out left/right and alternate up/down with depth.
            let side = if j % 2 == 1 { -1.0 } else { 1.0 };
            let depth = usize::BITS - (j + 1).leading_zeros();
            let vertical = if depth % 2 == 0 { -1.0 } else { 0.6 };
            let length = 0.25 + 0.05 * (j % 3) as f64;
            let dir = [0.5 * side, vertical, 0.15 * ((j % 4) as f64 - 1.5)];
            let norm = libm::sqrt(dir.iter().map(|v| v * v).sum());
            offsets.push([length * dir[0] / norm, length * dir[1] / norm, length * dir[2] / norm]);
        }
        Self { parents, offsets }
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn mean_bone_length(&self) -> f64 {
        let bones: Vec<f64> = self
            .offsets
            .iter()
            .skip(1)
            .map(|o| libm::sqrt(o.iter().map(|v| v * v).sum()))
            .collect();
        bones.iter().sum::<f64>() / bones.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyCorpusSpec {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub joint_count: usize,
    pub length_range: (usize, usize),
    pub fps: f32,
    pub seed: u64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self {
            n_classes: 8,
            n_per_class: 250,
            joint_count: 8,
            length_range: (24, 64),
            fps: 20.0,
            seed: 1,
        }
    }
}

impl ToyCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.length_range;
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig(String::from("toy corpus needs at least 2 classes")));
        }
        if self.joint_count < 2 {
            return Err(Error::InvalidConfig(String::from("toy skeleton needs at least 2 joints")));
        }
        if lo < 2 || lo > hi || hi > MAX_FRAMES {
            return Err(Error::InvalidConfig(format!(
                "length range [{lo}, {hi}] must satisfy 2 <= min <= max <= {MAX_FRAMES}"
            )));
        }
        if !(self.fps > 0.0) {
            return Err(Error::InvalidConfig(String::from("fps must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub motions: Vec<MotionSequence>,
    pub captions: Vec<String>,
    /// Archetype index of each motion.
    pub labels: Vec<usize>,
}

impl ToyCorpus {
    pub fn len(&self) -> usize {
        self.motions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motions.is_empty()
    }
}

const ARCHETYPES: [&str; 8] = [
    "walks forward",
    "waves both arms",
    "jumps in place",
    "turns around",
    "kicks with one leg",
    "squats down and up",
    "punches forward",
    "sways side to side",
];

const TEMPOS: [(&str, f64); 2] = [("slowly", 0.7), ("quickly", 1.4)];

pub fn archetype_phrase(class: usize) -> String {
    match ARCHETYPES.get(class) {
        Some(p) => String::from(*p),
        None => format!("performs pattern {class}"),
    }
}

/// Kinematic parameters of one archetype, shared by every corpus seed.
struct Archetype {
    frequency: f64,
    axes: Vec<[f64; 3]>,
    amplitudes: Vec<f64>,
    phases: Vec<f64>,
    harmonics: Vec<f64>,
    root_velocity: [f64; 2],
    bounce: f64,
    yaw_rate: f64,
}

impl Archetype {
    fn new(class: usize, joint_count: usize) -> Self {
        let mut rng = stream(0x5EED_CAFE, Stream::Corpus, class as u64, joint_count as u64);
        let u = |rng: &mut DetRng, lo: f64, hi: f64| lo + (hi - lo) * uniform(rng);
        let frequency = u(&mut rng, 0.5, 1.2);
        let mut axes = Vec::new();
        let mut amplitudes = Vec::new();
        let mut phases = Vec::new();
        let mut harmonics = Vec::new();
        for _ in 0..joint_count {
            let a = [u(&mut rng, -1.0, 1.0), u(&mut rng, -1.0, 1.0), u(&mut rng, -1.0, 1.0)];
            let n = libm::sqrt(a.iter().map(|v| v * v).sum::<f64>()).max(1e-3);
            axes.push([a[0] / n, a[1] / n, a[2] / n]);
            amplitudes.push(u(&mut rng, 0.2, 1.0));
            phases.push(u(&mut rng, 0.0, 2.0 * PI));
            harmonics.push(if uniform(&mut rng) < 0.3 { 2.0 } else { 1.0 });
        }
        let root_velocity = [u(&mut rng, -0.6, 0.6), u(&mut rng, -0.6, 0.6)];
        let bounce = u(&mut rng, 0.0, 0.15);
        let yaw_rate = u(&mut rng, -0.8, 0.8);
        Self {
            frequency,
            axes,
            amplitudes,
            phases,
            harmonics,
            root_velocity,
            bounce,
            yaw_rate,
        }
    }
}

type Mat3 = [[f64; 3]; 3];

fn axis_angle(axis: [f64; 3], angle: f64) -> Mat3 {
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    let t = 1.0 - c;
    let [x, y, z] = axis;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// Generates the procedural corpus. Each archetype drives every joint with a
/// sinusoidal rotation about an archetype-specific axis plus a root drift,
/// bounce and yaw; samples add tempo, amplitude, phase and heading jitter.
pub fn generate_toy_corpus(spec: &ToyCorpusSpec) -> Result<ToyCorpus> {
    spec.validate()?;
    let skeleton = ToySkeleton::new(spec.joint_count);
    let layout = LayoutDescriptor::toy(spec.joint_count);
    let fps = spec.fps as f64;
    let jc = spec.joint_count;
    let archetypes: Vec<Archetype> = (0..spec.n_classes).map(|c| Archetype::new(c, jc)).collect();
    let mut motions = Vec::with_capacity(spec.n_classes * spec.n_per_class);
    let mut captions = Vec::with_capacity(motions.capacity());
    let mut labels = Vec::with_capacity(motions.capacity());
    for sample in 0..spec.n_per_class {
        for (class, arch) in archetypes.iter().enumerate() {
            let mut rng = stream(spec.seed, Stream::Corpus, class as u64, sample as u64 + 1);
            let (lo, hi) = spec.length_range;
            let frames = lo + index(&mut rng, hi - lo + 1);
            let (tempo_word, tempo) = TEMPOS[index(&mut rng, TEMPOS.len())];
            let freq = arch.frequency * tempo * (0.95 + 0.1 * uniform(&mut rng));
            let amp_scale = 0.9 + 0.2 * uniform(&mut rng);
            let phase_shift = 2.0 * PI * uniform(&mut rng);
            let heading = 0.4 * (uniform(&mut rng) - 0.5);
            let joint_jitter: Vec<f64> = (0..jc).map(|_| 0.3 * (uniform(&mut rng) - 0.5)).collect();

            let mut data = vec![0.0; frames * layout.d];
            let mut world: Vec<Mat3> = vec![[[0.0; 3]; 3]; jc];
            for t in 0..frames {
                let time = t as f64 / fps;
                let omega = 2.0 * PI * freq * time + phase_shift;
                let yaw = heading + arch.yaw_rate * time;
                let root_rot = axis_angle([0.0, 1.0, 0.0], yaw);
                let root = [
                    arch.root_velocity[0] * time,
                    1.0 + arch.bounce * libm::sin(2.0 * omega),
                    arch.root_velocity[1] * time,
                ];
                let row = &mut data[t * layout.d..(t + 1) * layout.d];
                row[..3].copy_from_slice(&root);
                world[0] = root_rot;
                let mut positions = vec![root; jc];
                for j in 1..jc {
                    let parent = skeleton.parents[j].expect("non-root joint");
                    let angle = amp_scale
                        * arch.amplitudes[j]
                        * libm::sin(arch.harmonics[j] * omega + arch.phases[j] + joint_jitter[j]);
                    let local = axis_angle(arch.axes[j], angle);
                    world[j] = mat_mul(&world[parent], &local);
                    let off = mat_vec(&world[j], skeleton.offsets[j]);
                    let p = positions[parent];
                    positions[j] = [p[0] + off[0], p[1] + off[1], p[2] + off[2]];
                    row[3 * j..3 * j + 3].copy_from_slice(&positions[j]);
                }
            }
            // Velocity block: fps-scaled backward differences; frame 0 copies frame 1.
            let (v0, _) = layout.velocity_range;
            for t in 1..frames {
                for k in 0..3 * jc {
                    let v = fps * (data[t * layout.d + k] - data[(t - 1) * layout.d + k]);
                    data[t * layout.d + v0 + k] = v;
                }
            }
            if frames > 1 {
                for k in 0..3 * jc {
                    data[v0 + k] = data[layout.d + v0 + k];
                }
            }
            let frames_t = Tensor::from_vec(frames, layout.d, data)?;
            motions.push(MotionSequence::new(frames_t, spec.fps, layout)?);
            captions.push(format!("a person {} {}", archetype_phrase(class), tempo_word));
            labels.push(class);
        }
    }
    Ok(ToyCorpus {
        motions,
        captions,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    fn small_spec(seed: u64) -> ToyCorpusSpec {
        ToyCorpusSpec {
            n_per_class: 5,
            seed,
            ..ToyCorpusSpec::default()
        }
    }

    #[test]
    fn stats_of_constant_sequence_hit_the_floor() {
        let layout = LayoutDescriptor::toy(1);
        let frames = Tensor::from_vec(3, 6, vec![2.5; 18]).unwrap();
        let seq = MotionSequence::new(frames, 20.0, layout).unwrap();
        let stats = compute_stats(&[seq]).unwrap();
        assert!(stats.mean.iter().all(|&m| m == 2.5));
        assert!(stats.std.iter().all(|&s| s == STD_FLOOR));
    }

    #[test]
    fn stats_two_frames_analytic() {
        let layout = LayoutDescriptor {
            d: 1,
            joint_count: 0,
            velocity_range: (0, 1),
            kind: LayoutKind::HumanMl3d,
        };
        let seq = MotionSequence {
            frames: Tensor::from_rows(&[[0.0], [2.0]]).unwrap(),
            fps: 20.0,
            layout,
        };
        let stats = compute_stats(&[seq]).unwrap();
        assert_eq!(stats.mean, vec![1.0]);
        assert_eq!(stats.std, vec![1.0]);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert_eq!(compute_stats(&[]), Err(Error::EmptyCorpus));
    }

    #[test]
    fn normalize_mean_gives_zeros_and_round_trips() {
        let corpus = generate_toy_corpus(&small_spec(3)).unwrap();
        let stats = compute_stats(&corpus.motions).unwrap();
        let mut at_mean = corpus.motions[0].clone();
        for t in 0..at_mean.len() {
            at_mean.frames.row_mut(t).copy_from_slice(&stats.mean);
        }
        let z = normalize(&at_mean, &stats).unwrap();
        assert!(z.frames.data().iter().all(|&v| v == 0.0));
        let x = &corpus.motions[7];
        let back = denormalize(&normalize(x, &stats).unwrap(), &stats).unwrap();
        assert!(back.frames.max_abs_diff(&x.frames) < 1e-6);
    }

    #[test]
    fn zero_variance_dimension_stays_finite() {
        let layout = LayoutDescriptor::toy(1);
        let mut frames = Tensor::zeros(4, 6);
        for t in 0..4 {
            frames.set(t, 0, t as f64);
        }
        let seq = MotionSequence::new(frames, 20.0, layout).unwrap();
        let stats = compute_stats(core::slice::from_ref(&seq)).unwrap();
        let mut probe = seq.clone();
        probe.frames.set(0, 3, 1.0);
        assert!(normalize(&probe, &stats).unwrap().frames.is_finite());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let corpus = generate_toy_corpus(&small_spec(1)).unwrap();
        let stats = NormStats::identity(3);
        assert!(matches!(
            normalize(&corpus.motions[0], &stats),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn toy_corpus_is_deterministic_in_seed() {
        let a = generate_toy_corpus(&small_spec(1)).unwrap();
        let b = generate_toy_corpus(&small_spec(1)).unwrap();
        let c = generate_toy_corpus(&small_spec(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.motions, c.motions);
        let sa = compute_stats(&generate_toy_corpus(&small_spec(7)).unwrap().motions).unwrap();
        let sb = compute_stats(&generate_toy_corpus(&small_spec(7)).unwrap().motions).unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn toy_velocity_block_is_exact_backward_difference() {
        let corpus = generate_toy_corpus(&small_spec(4)).unwrap();
        for m in &corpus.motions {
            let jc3 = 3 * m.layout.joint_count;
            let fps = m.fps as f64;
            let mut worst: f64 = 0.0;
            for t in 1..m.len() {
                for k in 0..jc3 {
                    let expect = fps * (m.frames.get(t, k) - m.frames.get(t - 1, k));
                    worst = worst.max((m.frames.get(t, jc3 + k) - expect).abs());
                }
            }
            assert_eq!(worst, 0.0);
        }
    }

    #[test]
    fn full_corpus_counts() {
        let corpus = generate_toy_corpus(&ToyCorpusSpec::default()).unwrap();
        assert_eq!(corpus.len(), 2000);
        let templates: BTreeSet<usize> = corpus.labels.iter().copied().collect();
        assert_eq!(templates.len(), 8);
        let phrases: BTreeSet<String> = (0..8).map(archetype_phrase).collect();
        assert_eq!(phrases.len(), 8);
        for (cap, &label) in corpus.captions.iter().zip(&corpus.labels) {
            assert!(cap.contains(&archetype_phrase(label)));
        }
        assert!(corpus.motions.iter().all(|m| (24..=64).contains(&m.len())));
    }

    #[test]
    fn toy_recovery_is_the_joint_block() {
        let corpus = generate_toy_corpus(&small_spec(5)).unwrap();
        let m = &corpus.motions[0];
        let joints = recover_joints(m).unwrap();
        for t in 0..m.len() {
            assert_eq!(joints.row(t), &m.frames.row(t)[..3 * m.layout.joint_count]);
        }
    }

    #[test]
    fn toy_bone_lengths_are_preserved() {
        let corpus = generate_toy_corpus(&small_spec(6)).unwrap();
        let skel = ToySkeleton::new(8);
        let m = &corpus.motions[3];
        for t in 0..m.len() {
            for j in 1..8 {
                let p = skel.parents[j].unwrap();
                let d: f64 = (0..3)
                    .map(|k| (m.frames.get(t, 3 * j + k) - m.frames.get(t, 3 * p + k)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let o: f64 = skel.offsets[j].iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((d - o).abs() < 1e-9);
            }
        }
    }

    fn humanml_frames(frames: usize, f: impl Fn(usize, &mut [f64])) -> MotionSequence {
        let layout = LayoutDescriptor::humanml3d(22);
        assert_eq!(layout.d, 263);
        assert_eq!(layout.velocity_range, (193, 259));
        let mut data = Tensor::zeros(frames, layout.d);
        for t in 0..frames {
            f(t, data.row_mut(t));
        }
        MotionSequence::new(data, 20.0, layout).unwrap()
    }

    #[test]
    fn humanml3d_zero_velocity_keeps_root_at_origin() {
        let m = humanml_frames(5, |_, row| {
            row[3] = 0.9;
            row[4] = 0.1; // joint 1 local x
        });
        let j = recover_joints(&m).unwrap();
        for t in 0..5 {
            assert_eq!(&j.row(t)[..3], &[0.0, 0.9, 0.0]);
            assert!((j.get(t, 3) - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn humanml3d_constant_velocity_integrates_linearly() {
        let (vx, vz) = (0.05, -0.02);
        let m = humanml_frames(10, |_, row| {
            row[1] = vx;
            row[2] = vz;
            row[3] = 1.0;
        });
        let j = recover_joints(&m).unwrap();
        for t in 0..10 {
            let expect = [vx * t as f64, 1.0, vz * t as f64];
            for k in 0..3 {
                assert!((j.get(t, k) - expect[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn humanml3d_yaw_rotates_local_positions() {
        // A quarter turn accumulated before frame 1 rotates a local +x offset.
        let m = humanml_frames(2, |t, row| {
            row[0] = if t == 0 { PI / 4.0 } else { 0.0 };
            row[4] = 1.0;
        });
        let j = recover_joints(&m).unwrap();
        let p = &j.row(1)[3..6];
        let r = (p[0] * p[0] + p[2] * p[2]).sqrt();
        assert!((r - 1.0).abs() < 1e-12);
        assert!(p[0].abs() < 1e-12);
    }
}
