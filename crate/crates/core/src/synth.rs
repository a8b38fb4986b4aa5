//! Synthetic RGB-D sequences: a textured room, rigid textured quads with
//! scripted motion, a scripted camera path, and exact ground truth.

use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{mask_file_name, Frame};
use crate::evaluation::Trajectory;
use crate::geometry::{CameraIntrinsics, PoseSE3};
use crate::grid::{Grid, Mask};
use crate::{par, Error, Result};

/// Rendered depth below this means the camera sits inside geometry.
const MIN_DEPTH: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_height")]
    pub height: usize,
    pub frame_count: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to the TUM fr3 calibration scaled to the image size.
    #[serde(default)]
    pub intrinsics: Option<CameraIntrinsics>,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Present unless explicitly built without one; TOML input always gets
    /// a room, defaulted when the table is missing.
    #[serde(default = "default_room")]
    pub room: Option<RoomSpec>,
    #[serde(default)]
    pub camera: CameraPath,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
}

fn default_width() -> usize {
    640
}
fn default_height() -> usize {
    480
}
fn default_fps() -> f64 {
    30.0
}
fn default_room() -> Option<RoomSpec> {
    Some(RoomSpec::default())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Meters.
    pub depth_sigma: f64,
    /// Fraction of the full 8-bit range.
    pub intensity_sigma: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            depth_sigma: 0.01,
            intensity_sigma: 2.0 / 255.0,
        }
    }
}

/// Axis-aligned box open towards −z: back wall, floor, ceiling and two side
/// walls. The camera is expected inside.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub half_width: f64,
    pub half_height: f64,
    /// z of the back wall.
    pub depth: f64,
    /// z where floor, ceiling and side walls begin.
    pub near: f64,
    #[serde(default)]
    pub texture_seed: u64,
}

impl Default for RoomSpec {
    fn default() -> Self {
        Self {
            half_width: 2.0,
            half_height: 1.5,
            depth: 4.0,
            near: -2.0,
            texture_seed: 0,
        }
    }
}

/// Camera-to-world pose at frame k: rotation `exp(w(k)·rotation_step)·R0`,
/// translation `start + w(k)·step`, where `w(k) = k` or a triangle wave.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPath {
    #[serde(default)]
    pub start: [f64; 3],
    /// Axis-angle (radians).
    #[serde(default)]
    pub start_rotation: [f64; 3],
    #[serde(default)]
    pub step: [f64; 3],
    #[serde(default)]
    pub rotation_step: [f64; 3],
    /// Reverse direction every `half_period` frames.
    #[serde(default)]
    pub half_period: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    Static,
    Linear { step: [f64; 3] },
    Bounce { step: [f64; 3], half_period: usize },
}

/// Textured rectangle parallel to the image plane (normal along z).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub center: [f64; 3],
    /// Width and height in meters.
    pub size: [f64; 2],
    pub color: [u8; 3],
    pub motion: Motion,
    #[serde(default)]
    pub is_prior: bool,
    #[serde(default)]
    pub texture_seed: u64,
}

/// Triangle wave `0, 1, …, p, p−1, …, 0, 1, …`, or `k` without a period.
fn wave(k: usize, half_period: Option<usize>) -> f64 {
    match half_period {
        Some(p) if p > 0 => {
            let m = k % (2 * p);
            if m <= p {
                m as f64
            } else {
                (2 * p - m) as f64
            }
        }
        _ => k as f64,
    }
}

impl Motion {
    pub fn offset(&self, k: usize) -> Vector3<f64> {
        match *self {
            Motion::Static => Vector3::zeros(),
            Motion::Linear { step } => Vector3::from(step) * k as f64,
            Motion::Bounce { step, half_period } => Vector3::from(step) * wave(k, Some(half_period)),
        }
    }

    /// Whether the object moves between frame `k` and its neighbour.
    pub fn moving_at(&self, k: usize) -> bool {
        let other = if k == 0 { 1 } else { k - 1 };
        self.offset(k) != self.offset(other)
    }
}

impl CameraPath {
    pub fn pose_wc(&self, k: usize) -> PoseSE3 {
        let w = wave(k, self.half_period);
        let r0 = PoseSE3::from_axis_angle(Vector3::from(self.start_rotation), Vector3::zeros());
        let dr = PoseSE3::from_axis_angle(Vector3::from(self.rotation_step) * w, Vector3::zeros());
        let rot = dr * r0;
        PoseSE3::new(rot.rotation(), Vector3::from(self.start) + Vector3::from(self.step) * w)
    }
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics.unwrap_or_else(|| {
            let d = CameraIntrinsics::default();
            let sx = self.width as f64 / d.width as f64;
            let sy = self.height as f64 / d.height as f64;
            CameraIntrinsics {
                fx: d.fx * sx,
                fy: d.fy * sy,
                cx: d.cx * sx,
                cy: d.cy * sy,
                width: self.width,
                height: self.height,
                ..d
            }
        })
    }

    pub fn timestamp(&self, k: usize) -> f64 {
        1.0 + k as f64 / self.fps
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_count < 2 {
            return Err(Error::Config("frame_count must be at least 2".into()));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config("image must be at least 16x16".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Config("fps must be positive".into()));
        }
        let k = self.intrinsics();
        k.validate()?;
        if (k.width, k.height) != (self.width, self.height) {
            return Err(Error::Config("intrinsics size differs from the image size".into()));
        }
        if self.noise.depth_sigma < 0.0 || self.noise.intensity_sigma < 0.0 {
            return Err(Error::Config("noise sigmas must be non-negative".into()));
        }
        for o in &self.objects {
            if !(o.size[0] > 0.0 && o.size[1] > 0.0) {
                return Err(Error::Config("object sizes must be positive".into()));
            }
            if let Motion::Bounce { half_period: 0, .. } = o.motion {
                return Err(Error::Config("bounce half_period must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Hash of an integer lattice point into `[0, 1)`.
fn lattice(seed: u64, x: i64, y: i64) -> f64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    h ^= (x as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = h.rotate_left(27).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= (y as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 31;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 29;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, u: f64, v: f64) -> f64 {
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (u - x0, v - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (xi, yi) = (x0 as i64, y0 as i64);
    let a = lattice(seed, xi, yi);
    let b = lattice(seed, xi + 1, yi);
    let c = lattice(seed, xi, yi + 1);
    let d = lattice(seed, xi + 1, yi + 1);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

/// Texture intensity in `[0, 1]` at surface coordinates `(u, v)` meters:
/// multi-scale value noise over a faint tile pattern.
fn texture(seed: u64, u: f64, v: f64) -> f64 {
    let n = 0.5 * value_noise(seed, u / 0.12, v / 0.12)
        + 0.3 * value_noise(seed.wrapping_add(1), u / 0.05, v / 0.05)
        + 0.2 * value_noise(seed.wrapping_add(2), u / 0.025, v / 0.025);
    let tile = ((u / 0.2).floor() as i64 + (v / 0.2).floor() as i64).rem_euclid(2) as f64;
    (0.75 * n + 0.25 * tile).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug)]
struct Surface {
    /// Axis of the plane normal (0 = x, 1 = y, 2 = z).
    axis: usize,
    offset: f64,
    /// In-plane axes and their bounds.
    axes: [usize; 2],
    lo: [f64; 2],
    hi: [f64; 2],
    /// Texture origin, so textures move with their surface.
    origin: Vector3<f64>,
    color: [f64; 3],
    seed: u64,
    /// Index into the object list, `None` for room surfaces.
    object: Option<usize>,
}

impl Surface {
    /// Ray parameter of the hit, if any.
    #[inline]
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let dn = d[self.axis];
        if dn.abs() < 1e-12 {
            return None;
        }
        let t = (self.offset - o[self.axis]) / dn;
        if t <= 0.0 {
            return None;
        }
        for i in 0..2 {
            let c = o[self.axes[i]] + t * d[self.axes[i]];
            if c < self.lo[i] || c > self.hi[i] {
                return None;
            }
        }
        Some(t)
    }

    fn shade(&self, p: &Vector3<f64>) -> [f64; 3] {
        let q = p - self.origin;
        let t = texture(self.seed, q[self.axes[0]], q[self.axes[1]]);
        let s = 0.25 + 0.75 * t;
        [self.color[0] * s, self.color[1] * s, self.color[2] * s]
    }
}

fn room_surfaces(room: &RoomSpec) -> Vec<Surface> {
    let (w, h, z0, z1) = (room.half_width, room.half_height, room.near, room.depth);
    let s = room.texture_seed.wrapping_mul(7919);
    let mk = |axis, offset, axes, lo, hi, color: [f64; 3], k: u64| Surface {
        axis,
        offset,
        axes,
        lo,
        hi,
        origin: Vector3::zeros(),
        color,
        seed: s.wrapping_add(k * 101),
        object: None,
    };
    vec![
        mk(2, z1, [0, 1], [-w, -h], [w, h], [205.0, 190.0, 160.0], 1),
        mk(1, h, [0, 2], [-w, z0], [w, z1], [120.0, 150.0, 120.0], 2),
        mk(1, -h, [0, 2], [-w, z0], [w, z1], [170.0, 170.0, 200.0], 3),
        mk(0, -w, [2, 1], [z0, -h], [z1, h], [200.0, 140.0, 120.0], 4),
        mk(0, w, [2, 1], [z0, -h], [z1, h], [130.0, 160.0, 200.0], 5),
    ]
}

fn object_surface(i: usize, o: &ObjectSpec, k: usize) -> Surface {
    let c = Vector3::from(o.center) + o.motion.offset(k);
    let (hw, hh) = (o.size[0] / 2.0, o.size[1] / 2.0);
    Surface {
        axis: 2,
        offset: c.z,
        axes: [0, 1],
        lo: [c.x - hw, c.y - hh],
        hi: [c.x + hw, c.y + hh],
        origin: c,
        color: [o.color[0] as f64, o.color[1] as f64, o.color[2] as f64],
        seed: o.texture_seed.wrapping_mul(31).wrapping_add(1000 + i as u64),
        object: Some(i),
    }
}

/// Noise-free render of one frame.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub color: Grid<[f64; 3]>,
    /// Camera z in meters; 0 where nothing was hit.
    pub depth: Grid<f64>,
    /// Object index visible at each pixel.
    pub object: Grid<Option<usize>>,
    pub pose_wc: PoseSE3,
}

/// Ray-casts frame `k` with a z-buffer over all surfaces.
pub fn render(spec: &SceneSpec, k: usize) -> Result<Rendered> {
    let intr = spec.intrinsics();
    let (w, h) = (spec.width, spec.height);
    let pose_wc = spec.camera.pose_wc(k);
    let mut surfaces = spec.room.as_ref().map(room_surfaces).unwrap_or_default();
    surfaces.extend(spec.objects.iter().enumerate().map(|(i, o)| object_surface(i, o, k)));
    let r = pose_wc.rotation_matrix();
    let origin = pose_wc.translation();

    let mut color = vec![[0.0; 3]; w * h];
    let mut depth = vec![0.0; w * h];
    let mut object = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            let dc = Vector3::new((x as f64 - intr.cx) / intr.fx, (y as f64 - intr.cy) / intr.fy, 1.0);
            let d = r * dc;
            let mut best: Option<(f64, &Surface)> = None;
            for s in &surfaces {
                if let Some(t) = s.intersect(&origin, &d) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, s));
                    }
                }
            }
            let i = y * w + x;
            if let Some((t, s)) = best {
                if t < MIN_DEPTH {
                    return Err(Error::CameraInsideGeometry(k));
                }
                color[i] = s.shade(&(origin + d * t));
                depth[i] = t;
                object[i] = s.object;
            }
        }
    }
    Ok(Rendered {
        color: Grid::from_vec(w, h, color),
        depth: Grid::from_vec(w, h, depth),
        object: Grid::from_vec(w, h, object),
        pose_wc,
    })
}

/// A generated sequence held in memory.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<Frame>,
    pub groundtruth: Trajectory,
    /// Pixels of moving objects per frame.
    pub gt_masks: Vec<Mask>,
    /// Instance ids (object index + 1) of prior objects, 0 elsewhere; `None`
    /// when the scene has no prior objects.
    pub prior_masks: Vec<Option<Grid<u8>>>,
}

fn finish_frame(spec: &SceneSpec, k: usize, r: &Rendered) -> (Frame, Mask, Option<Grid<u8>>) {
    let intr = spec.intrinsics();
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(k as u64));
    let int_noise = Normal::new(0.0, spec.noise.intensity_sigma * 255.0).expect("finite sigma");
    let depth_noise = Normal::new(0.0, spec.noise.depth_sigma).expect("finite sigma");
    let mut raw = Vec::with_capacity(w * h * 3);
    for c in r.color.data() {
        for v in c {
            let n = if spec.noise.intensity_sigma > 0.0 { int_noise.sample(&mut rng) } else { 0.0 };
            raw.push((v + n).round().clamp(0.0, 255.0) as u8);
        }
    }
    let depth: Vec<f32> = r
        .depth
        .data()
        .iter()
        .map(|&d| {
            if d <= 0.0 {
                return 0.0;
            }
            let n = if spec.noise.depth_sigma > 0.0 { depth_noise.sample(&mut rng) } else { 0.0 };
            // quantize to the 16-bit encoding so files round-trip exactly
            let ticks = ((d + n) * intr.depth_scale).round().clamp(1.0, u16::MAX as f64);
            (ticks / intr.depth_scale) as f32
        })
        .collect();
    let gt = r.object.map(|o| o.is_some_and(|i| spec.objects[i].motion.moving_at(k)));
    let has_prior = spec.objects.iter().any(|o| o.is_prior);
    let prior = has_prior.then(|| {
        r.object
            .map(|o| o.filter(|&i| spec.objects[i].is_prior).map_or(0u8, |i| (i + 1).min(255) as u8))
    });
    let frame = Frame {
        index: k,
        timestamp: spec.timestamp(k),
        color: RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer size matches"),
        depth: Grid::from_vec(w, h, depth),
        prior_mask: prior.as_ref().map(|p| p.map(|&v| v != 0)),
    };
    (frame, gt, prior)
}

/// Renders the whole sequence (frames in parallel). Deterministic in the spec.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticSequence> {
    spec.validate()?;
    let rendered = par::map_range(spec.frame_count, |k| render(spec, k).map(|r| finish_frame(spec, k, &r)));
    let mut frames = Vec::with_capacity(spec.frame_count);
    let mut gt_masks = Vec::with_capacity(spec.frame_count);
    let mut prior_masks = Vec::with_capacity(spec.frame_count);
    for r in rendered {
        let (f, g, p) = r?;
        frames.push(f);
        gt_masks.push(g);
        prior_masks.push(p);
    }
    let groundtruth = Trajectory::new((0..spec.frame_count).map(|k| (spec.timestamp(k), spec.camera.pose_wc(k))).collect())?;
    Ok(SyntheticSequence {
        intrinsics: spec.intrinsics(),
        frames,
        groundtruth,
        gt_masks,
        prior_masks,
    })
}

fn save<P, C>(img: &image::ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    C: std::ops::Deref<Target = [P::Subpixel]>,
    [P::Subpixel]: image::EncodableLayout,
{
    img.save(path).map_err(|e| Error::image(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Intrinsics as `key = value` lines understood by the pipeline config.
pub fn intrinsics_config(k: &CameraIntrinsics) -> String {
    format!(
        "fx = {}\nfy = {}\ncx = {}\ncy = {}\ndepth_scale = {}\nwidth = {}\nheight = {}\n",
        k.fx, k.fy, k.cx, k.cy, k.depth_scale, k.width, k.height
    )
}

/// Writes a TUM-layout dataset plus `gt_masks/`, `prior_masks/` (when the
/// scene has prior objects) and a `pipeline.cfg` with the intrinsics.
pub fn write_dataset(seq: &SyntheticSequence, dir: &Path) -> Result<()> {
    for sub in ["rgb", "depth", "gt_masks"] {
        mkdir(&dir.join(sub))?;
    }
    let has_prior = seq.prior_masks.iter().any(Option::is_some);
    if has_prior {
        mkdir(&dir.join("prior_masks"))?;
    }
    let mut rgb_index = String::from("# color images\n# timestamp filename\n");
    let mut depth_index = String::from("# depth maps\n# timestamp filename\n");
    let k = &seq.intrinsics;
    let results = par::map_range(seq.frames.len(), |i| -> Result<()> {
        let f = &seq.frames[i];
        let name = mask_file_name(f.timestamp);
        save(&f.color, &dir.join("rgb").join(&name))?;
        let (w, h) = f.depth.dims();
        let ticks: Vec<u16> = f
            .depth
            .data()
            .iter()
            .map(|&d| (d as f64 * k.depth_scale).round().clamp(0.0, u16::MAX as f64) as u16)
            .collect();
        let depth: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(w as u32, h as u32, ticks).expect("buffer size matches");
        save(&depth, &dir.join("depth").join(&name))?;
        let gt: Vec<u8> = seq.gt_masks[i].data().iter().map(|&b| if b { 255 } else { 0 }).collect();
        save(
            &image::GrayImage::from_raw(w as u32, h as u32, gt).expect("buffer size matches"),
            &dir.join("gt_masks").join(&name),
        )?;
        if let Some(p) = &seq.prior_masks[i] {
            save(
                &image::GrayImage::from_raw(w as u32, h as u32, p.data().to_vec()).expect("buffer size matches"),
                &dir.join("prior_masks").join(&name),
            )?;
        }
        Ok(())
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    for f in &seq.frames {
        let name = mask_file_name(f.timestamp);
        let _ = writeln!(rgb_index, "{:.6} rgb/{name}", f.timestamp);
        let _ = writeln!(depth_index, "{:.6} depth/{name}", f.timestamp);
    }
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("rgb.txt", &rgb_index)?;
    write("depth.txt", &depth_index)?;
    write("groundtruth.txt", &seq.groundtruth.to_tum_string())?;
    write("pipeline.cfg", &intrinsics_config(k))?;
    Ok(())
}

pub fn generate_to_dir(spec: &SceneSpec, dir: &Path) -> Result<SyntheticSequence> {
    let seq = generate_scene(spec)?;
    write_dataset(&seq, dir)?;
    Ok(seq)
}

/// Ready-made scenes used by the tests, benches and examples.
pub mod presets {
    use super::*;

    fn base(frame_count: usize, seed: u64) -> SceneSpec {
        SceneSpec {
            width: 640,
            height: 480,
            frame_count,
            fps: 30.0,
            seed,
            intrinsics: None,
            noise: NoiseSpec::default(),
            room: Some(RoomSpec {
                texture_seed: seed,
                ..RoomSpec::default()
            }),
            camera: CameraPath::default(),
            objects: furniture(seed),
        }
    }

    /// Static panels at several depths so the scene is not one plane.
    fn furniture(seed: u64) -> Vec<ObjectSpec> {
        let panel = |center: [f64; 3], size: [f64; 2], color: [u8; 3], k: u64| ObjectSpec {
            center,
            size,
            color,
            motion: Motion::Static,
            is_prior: false,
            texture_seed: seed.wrapping_add(100 + k),
        };
        vec![
            panel([-1.05, 0.45, 2.4], [0.7, 0.6], [170, 200, 230], 0),
            panel([1.0, -0.45, 2.2], [0.55, 0.7], [210, 230, 170], 1),
            panel([0.75, 0.75, 3.1], [0.8, 0.5], [230, 190, 200], 2),
            panel([-0.8, -0.8, 3.0], [0.7, 0.45], [200, 200, 200], 3),
        ]
    }

    /// Static room, camera sliding sideways at `speed` m/frame.
    pub fn static_room(frame_count: usize, speed: f64, seed: u64) -> SceneSpec {
        SceneSpec {
            camera: CameraPath {
                step: [speed, 0.0, 0.0],
                rotation_step: [0.0, 0.0005, 0.0],
                half_period: Some(50),
                ..CameraPath::default()
            },
            ..base(frame_count, seed)
        }
    }

    /// One unannotated box bobbing vertically about 9 px/frame in front of
    /// the back wall while the camera slides sideways.
    pub fn moving_object(frame_count: usize, seed: u64) -> SceneSpec {
        let mut spec = base(frame_count, seed);
        spec.camera = CameraPath {
            start: [-0.18, 0.0, 0.0],
            step: [0.015, 0.0, 0.0],
            half_period: Some(25),
            ..CameraPath::default()
        };
        spec.objects.push(ObjectSpec {
            center: [0.0, -0.35, 1.8],
            size: [0.55, 0.55],
            color: [245, 205, 80],
            motion: Motion::Bounce {
                step: [0.0, 0.03, 0.0],
                half_period: 25,
            },
            is_prior: false,
            texture_seed: seed.wrapping_add(17),
        });
        spec
    }

    /// A large annotated "person" drifting slowly across the view.
    pub fn walking_person(frame_count: usize, seed: u64) -> SceneSpec {
        let mut spec = base(frame_count, seed);
        spec.camera = CameraPath {
            step: [0.01, 0.0, 0.0],
            rotation_step: [0.0, 0.0008, 0.0],
            half_period: Some(40),
            ..CameraPath::default()
        };
        spec.objects.push(ObjectSpec {
            center: [-0.45, 0.1, 2.0],
            size: [0.9, 1.6],
            color: [60, 90, 210],
            motion: Motion::Linear {
                step: [0.006, 0.0, 0.0],
            },
            is_prior: true,
            texture_seed: seed.wrapping_add(29),
        });
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{back_project, epipolar_distance, fundamental_from_pose};

    fn small(frame_count: usize) -> SceneSpec {
        SceneSpec {
            width: 160,
            height: 120,
            frame_count,
            fps: 30.0,
            seed: 3,
            intrinsics: None,
            noise: NoiseSpec {
                depth_sigma: 0.0,
                intensity_sigma: 0.0,
            },
            room: Some(RoomSpec::default()),
            camera: CameraPath::default(),
            objects: vec![],
        }
    }

    #[test]
    fn zero_motion_frames_are_identical() {
        let mut spec = small(3);
        spec.objects.push(ObjectSpec {
            center: [0.0, 0.0, 2.0],
            size: [0.5, 0.5],
            color: [200, 50, 50],
            motion: Motion::Static,
            is_prior: false,
            texture_seed: 1,
        });
        let seq = generate_scene(&spec).unwrap();
        assert!(seq.gt_masks.iter().all(|m| m.count_true() == 0));
        assert_eq!(seq.frames[0].color, seq.frames[1].color);
        assert_eq!(seq.frames[1].depth, seq.frames[2].depth);
    }

    #[test]
    fn moving_object_mask_is_its_silhouette() {
        let mut spec = small(4);
        let k = spec.intrinsics();
        // 10 px/frame at 2 m
        let step = 10.0 * 2.0 / k.fx;
        spec.objects.push(ObjectSpec {
            center: [0.0, 0.0, 2.0],
            size: [0.4, 0.3],
            color: [200, 50, 50],
            motion: Motion::Linear { step: [step, 0.0, 0.0] },
            is_prior: false,
            texture_seed: 1,
        });
        let seq = generate_scene(&spec).unwrap();
        for (f, mask) in seq.gt_masks.iter().enumerate() {
            let cx = f as f64 * step;
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let xn = (x as f64 - k.cx) / k.fx * 2.0;
                    let yn = (y as f64 - k.cy) / k.fy * 2.0;
                    let inside = (xn - cx).abs() <= 0.2 && yn.abs() <= 0.15;
                    assert_eq!(*mask.get(x, y), inside, "frame {f} ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn static_points_obey_true_epipolar_geometry() {
        let mut spec = small(2);
        spec.camera.step = [0.02, 0.01, 0.0];
        spec.camera.rotation_step = [0.0, 0.01, 0.005];
        let k = spec.intrinsics();
        let r0 = render(&spec, 0).unwrap();
        let r1 = render(&spec, 1).unwrap();
        let t_21 = r1.pose_wc.inverse() * r0.pose_wc;
        let f = fundamental_from_pose(&k, &t_21).unwrap();
        for y in (5..115).step_by(9) {
            for x in (5..155).step_by(11) {
                let z = *r0.depth.get(x, y);
                let world = back_project(x as f64, y as f64, z, &k, &r0.pose_wc).unwrap();
                let q = k.project_camera(&r1.pose_wc.inverse().transform_point(&world)).unwrap();
                let d = epipolar_distance(f.matrix(), &Vector3::new(x as f64, y as f64, 1.0), &q.push(1.0)).unwrap();
                assert!(d < 1e-6, "{d}");
                // the rendered pixel nearest the projection sees the same point
                let (qx, qy) = (q.x.round(), q.y.round());
                if qx < 0.0 || qy < 0.0 || qx >= 160.0 || qy >= 120.0 {
                    continue;
                }
                let z1 = *r1.depth.get(qx as usize, qy as usize);
                let hit = back_project(qx, qy, z1, &k, &r1.pose_wc).unwrap();
                let reproj = k.project_camera(&r1.pose_wc.inverse().transform_point(&hit)).unwrap();
                assert!((reproj - q).amax() <= 0.5 + 1e-9);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_round_trips() {
        let mut spec = small(3);
        spec.noise = NoiseSpec::default();
        spec.objects.push(ObjectSpec {
            center: [0.2, 0.0, 2.5],
            size: [0.5, 0.8],
            color: [40, 40, 220],
            motion: Motion::Bounce {
                step: [0.01, 0.0, 0.0],
                half_period: 2,
            },
            is_prior: true,
            texture_seed: 4,
        });
        let a = generate_scene(&spec).unwrap();
        let b = generate_scene(&spec).unwrap();
        for (x, y) in a.frames.iter().zip(&b.frames) {
            assert_eq!(x.color, y.color);
            assert_eq!(x.depth, y.depth);
        }
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&a, dir.path()).unwrap();
        let seq = crate::dataset::Sequence::open(dir.path(), a.intrinsics, Some(&dir.path().join("prior_masks")), 0.02).unwrap();
        assert_eq!(seq.len(), 3);
        let f = seq.load_frame(1).unwrap();
        assert_eq!(f.color, a.frames[1].color);
        assert_eq!(f.depth, a.frames[1].depth);
        assert_eq!(f.prior_mask, a.frames[1].prior_mask);
        assert_eq!(seq.groundtruth.as_ref().unwrap().len(), 3);
    }

    #[test]
    fn camera_inside_geometry_is_an_error() {
        let mut spec = small(2);
        spec.objects.push(ObjectSpec {
            center: [0.0, 0.0, 0.05],
            size: [1.0, 1.0],
            color: [0, 0, 0],
            motion: Motion::Static,
            is_prior: false,
            texture_seed: 0,
        });
        assert!(matches!(generate_scene(&spec), Err(Error::CameraInsideGeometry(0))));
    }

    #[test]
    fn spec_toml_round_trip() {
        let spec = presets::moving_object(10, 1);
        let text = spec.to_toml().unwrap();
        assert_eq!(SceneSpec::from_toml(&text).unwrap(), spec);
        assert!(SceneSpec::from_toml("frame_count = 1\n").unwrap().validate().is_err());
        assert!(SceneSpec::from_toml("frame_count = 5\nbogus = 1\n").is_err());
    }
}
