//! Procedural spliced videos and the on-disk dataset layout.
//!
//! Backgrounds are smooth drifting fields with faint grain. Foregrounds take
//! a colour near the background palette and carry a much stronger grain that
//! moves with the object, so the splice differs from its surroundings in
//! texture statistics rather than in plain colour.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, Error, Result};
use crate::tensor::{Real, Tensor};
use crate::video::{self, quantize_frame, Mask, Video};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Background {
    TexturedNoise,
    GradientDrift,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectKind {
    Ellipse,
    Polygon,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Centre `(y, x)` in pixels at frame 0.
    pub start: (f64, f64),
    /// Pixels per frame.
    pub velocity: (f64, f64),
    /// Optional vertical oscillation `(amplitude px, period frames)`.
    pub sinusoid: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub frames: usize,
    pub h: usize,
    pub w: usize,
    pub background: Background,
    /// Camera drift in pixels per frame, `(y, x)`.
    pub drift: (f64, f64),
    pub object: ObjectKind,
    /// Ellipse semi-axes `(ry, rx)`; for polygons the mean radius is their
    /// mean.
    pub radii: (f64, f64),
    pub texture_seed: u64,
    pub trajectory: Trajectory,
    pub feather: f64,
}

impl SceneSpec {
    /// A randomised scene whose object fits comfortably inside the frame.
    pub fn random(seed: u64, frames: usize, h: usize, w: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = h.min(w) as f64;
        let ry = rng.gen_range(0.12..0.25) * m;
        let rx = rng.gen_range(0.12..0.25) * m;
        let speed = 0.03 * m;
        SceneSpec {
            seed,
            frames,
            h,
            w,
            background: if rng.gen_bool(0.5) { Background::TexturedNoise } else { Background::GradientDrift },
            drift: (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            object: if rng.gen_bool(0.5) { ObjectKind::Ellipse } else { ObjectKind::Polygon },
            radii: (ry, rx),
            texture_seed: rng.gen(),
            trajectory: Trajectory {
                start: (rng.gen_range(0.3..0.7) * h as f64, rng.gen_range(0.3..0.7) * w as f64),
                velocity: (rng.gen_range(-speed..speed), rng.gen_range(-speed..speed)),
                sinusoid: rng.gen_bool(0.3).then(|| (rng.gen_range(0.5..0.05 * m + 1.0), rng.gen_range(4.0..12.0))),
            },
            feather: if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.5..2.0) },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 3 {
            return Err(Error::Spec(format!("{} frames; at least 3 needed", self.frames)));
        }
        if self.h == 0 || self.w == 0 {
            return Err(Error::Spec("empty frame size".into()));
        }
        if !(self.radii.0 > 0.0 && self.radii.1 > 0.0) {
            return Err(Error::Spec(format!("radii {:?} must be positive", self.radii)));
        }
        if !(self.feather >= 0.0) {
            return Err(Error::Spec(format!("feather {} must be non-negative", self.feather)));
        }
        let r = self.extent();
        if 2.0 * (r + 1.0) > self.h as f64 || 2.0 * (r + 1.0) > self.w as f64 {
            return Err(Error::Spec(format!("object extent {r:.1}px does not fit a {}x{} frame", self.h, self.w)));
        }
        Ok(())
    }

    /// Radius of a disc around the centre that contains the whole blended
    /// object.
    fn extent(&self) -> f64 {
        let base = match self.object {
            ObjectKind::Ellipse => self.radii.0.max(self.radii.1),
            ObjectKind::Polygon => 1.3 * 0.5 * (self.radii.0 + self.radii.1),
        };
        base + self.feather
    }

    /// Object centre at frame `t`, clamped so the object stays at least one
    /// pixel inside the frame.
    pub fn centre(&self, t: usize) -> (f64, f64) {
        let tr = &self.trajectory;
        let tf = t as f64;
        let mut y = tr.start.0 + tr.velocity.0 * tf;
        let x = tr.start.1 + tr.velocity.1 * tf;
        if let Some((amp, period)) = tr.sinusoid {
            y += amp * (2.0 * std::f64::consts::PI * tf / period).sin();
        }
        let r = self.extent() + 1.0;
        (y.clamp(r, self.h as f64 - r), x.clamp(r, self.w as f64 - r))
    }
}

/// Everything rendered for one scene.
#[derive(Clone, Debug)]
pub struct SceneRender<T> {
    pub frames: Vec<Tensor<T>>,
    pub masks: Vec<Mask>,
    /// The pristine background frames before splicing.
    pub background: Vec<Tensor<T>>,
}

/// Frames and ground-truth masks of a procedural spliced video.
pub fn synth_video<T: Real>(spec: &SceneSpec) -> Result<(Vec<Tensor<T>>, Vec<Mask>)> {
    let r = render_scene(spec)?;
    Ok((r.frames, r.masks))
}

pub fn render_scene<T: Real>(spec: &SceneSpec) -> Result<SceneRender<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let palette = Palette::new(&mut rng);
    // Foreground colour stays close to the background palette, so the splice
    // is told apart mainly by its grain.
    let fg_colour = palette.base.map(|b| (b + rng.gen_range(-0.1..0.1)).clamp(0.1, 0.9));
    let shape = Shape::new(spec, &mut rng);
    let (h, w) = (spec.h, spec.w);
    let plane = h * w;

    let mut out = SceneRender {
        frames: Vec::with_capacity(spec.frames),
        masks: Vec::with_capacity(spec.frames),
        background: Vec::with_capacity(spec.frames),
    };
    for t in 0..spec.frames {
        let (oy, ox) = (spec.drift.0 * t as f64, spec.drift.1 * t as f64);
        let mut bg = vec![0.0f64; 3 * plane];
        for y in 0..h {
            for x in 0..w {
                let (py, px) = (y as f64 + 0.5 + oy, x as f64 + 0.5 + ox);
                let rgb = palette.sample(spec, py, px);
                for c in 0..3 {
                    bg[c * plane + y * w + x] = rgb[c];
                }
            }
        }
        let bg = quantize_frame(&Tensor::<T>::from_vec(&[3, h, w], bg.into_iter().map(T::of).collect())?);

        let (cy, cx) = spec.centre(t);
        let mut frame = bg.clone();
        let mut mask = vec![0u8; plane];
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let alpha = shape.alpha(u, v, spec.feather);
                if alpha <= 0.0 {
                    continue;
                }
                mask[y * w + x] = (alpha > 0.5) as u8;
                // Texture is attached to the object, not the frame.
                let (ty, tx) = ((u + 1e4).floor() as i64, (v + 1e4).floor() as i64);
                let d = frame.data_mut();
                for c in 0..3 {
                    let grain = hash01(spec.texture_seed ^ (c as u64 + 1).wrapping_mul(0x9E37), ty, tx) - 0.5;
                    let fg = (fg_colour[c] + 0.25 * grain).clamp(0.0, 1.0);
                    let i = c * plane + y * w + x;
                    let b = d[i].as_f64();
                    d[i] = T::of(b * (1.0 - alpha) + fg * alpha);
                }
            }
        }
        out.frames.push(quantize_frame(&frame));
        out.masks.push(Mask::new(h, w, mask)?);
        out.background.push(bg);
    }
    Ok(out)
}

struct Palette {
    base: [f64; 3],
    tint: [f64; 3],
    angle: f64,
    seed: u64,
}

impl Palette {
    fn new(rng: &mut impl Rng) -> Self {
        Palette {
            base: [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)],
            tint: [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)],
            angle: rng.gen_range(0.0..std::f64::consts::TAU),
            seed: rng.gen(),
        }
    }

    /// Background colour at scene coordinates `(y, x)`.
    fn sample(&self, spec: &SceneSpec, y: f64, x: f64) -> [f64; 3] {
        let diag = ((spec.h * spec.h + spec.w * spec.w) as f64).sqrt();
        let mut rgb = [0.0; 3];
        for (c, v) in rgb.iter_mut().enumerate() {
            let s = self.seed.wrapping_add(c as u64 * 7919);
            let smooth = match spec.background {
                Background::TexturedNoise => {
                    0.25 * (value_noise(s, y / 16.0, x / 16.0) - 0.5)
                        + 0.12 * (value_noise(s ^ 0xABCD, y / 7.0, x / 7.0) - 0.5)
                }
                Background::GradientDrift => {
                    let g = (y * self.angle.sin() + x * self.angle.cos()) / diag;
                    self.tint[c] * g + 0.08 * (value_noise(s, y / 20.0, x / 20.0) - 0.5)
                }
            };
            let grain = 0.04 * (hash01(s ^ 0x5EED, y.floor() as i64, x.floor() as i64) - 0.5);
            *v = (self.base[c] + smooth + grain).clamp(0.0, 1.0);
        }
        rgb
    }
}

enum Shape {
    Ellipse { ry: f64, rx: f64 },
    Polygon { pts: Vec<(f64, f64)> },
}

impl Shape {
    fn new(spec: &SceneSpec, rng: &mut impl Rng) -> Self {
        match spec.object {
            ObjectKind::Ellipse => Shape::Ellipse { ry: spec.radii.0, rx: spec.radii.1 },
            ObjectKind::Polygon => {
                let r = 0.5 * (spec.radii.0 + spec.radii.1);
                let k = rng.gen_range(5..=8);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let pts = (0..k)
                    .map(|i| {
                        let a = phase + std::f64::consts::TAU * i as f64 / k as f64;
                        let ri = r * rng.gen_range(0.7..1.3);
                        (ri * a.sin(), ri * a.cos())
                    })
                    .collect();
                Shape::Polygon { pts }
            }
        }
    }

    /// Signed distance proxy in pixels, negative inside.
    fn signed_distance(&self, u: f64, v: f64) -> f64 {
        match self {
            Shape::Ellipse { ry, rx } => {
                let rho = ((u / ry).powi(2) + (v / rx).powi(2)).sqrt();
                (rho - 1.0) * ry.min(*rx)
            }
            Shape::Polygon { pts } => {
                let mut inside = false;
                let mut best = f64::INFINITY;
                for i in 0..pts.len() {
                    let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
                    if (a.0 > u) != (b.0 > u) && v < a.1 + (u - a.0) * (b.1 - a.1) / (b.0 - a.0) {
                        inside = !inside;
                    }
                    best = best.min(segment_distance((u, v), a, b));
                }
                if inside {
                    -best
                } else {
                    best
                }
            }
        }
    }

    fn alpha(&self, u: f64, v: f64, feather: f64) -> f64 {
        let d = self.signed_distance(u, v);
        if feather == 0.0 {
            (d < 0.0) as u8 as f64
        } else {
            (0.5 - d / (2.0 * feather)).clamp(0.0, 1.0)
        }
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let len2 = dy * dy + dx * dx;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dy + (p.1 - a.1) * dx) / len2).clamp(0.0, 1.0) };
    ((p.0 - a.0 - t * dy).powi(2) + (p.1 - a.1 - t * dx).powi(2)).sqrt()
}

/// Deterministic lattice hash in `[0,1)`.
fn hash01(seed: u64, y: i64, x: i64) -> f64 {
    let mut z = seed ^ (y as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (x as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (sy, sx) = (fy * fy * (3.0 - 2.0 * fy), fx * fx * (3.0 - 2.0 * fx));
    let (iy, ix) = (y0 as i64, x0 as i64);
    let top = hash01(seed, iy, ix) * (1.0 - sx) + hash01(seed, iy, ix + 1) * sx;
    let bottom = hash01(seed, iy + 1, ix) * (1.0 - sx) + hash01(seed, iy + 1, ix + 1) * sx;
    top * (1.0 - sy) + bottom * sy
}

/// Per-frame alpha compositing `out = bg·(1−α) + fg·α`, with the foreground
/// and its mask shifted by `offset = (dy, dx)` and α optionally softened by a
/// box blur of radius `feather`. Ground truth is `α > 0.5`.
pub fn composite_splice<T: Real>(
    bg: &[Tensor<T>],
    fg: &[Tensor<T>],
    fg_masks: &[Mask],
    offset: (isize, isize),
    feather: usize,
) -> Result<(Vec<Tensor<T>>, Vec<Mask>)> {
    if bg.len() != fg.len() || fg.len() != fg_masks.len() {
        return Err(arg_err!(
            "sequence lengths differ: {} backgrounds, {} foregrounds, {} masks",
            bg.len(),
            fg.len(),
            fg_masks.len()
        ));
    }
    let mut frames = Vec::with_capacity(bg.len());
    let mut gts = Vec::with_capacity(bg.len());
    for ((b, f), m) in bg.iter().zip(fg).zip(fg_masks) {
        let (h, w) = match b.shape() {
            &[3, h, w] => (h, w),
            s => return Err(arg_err!("background frame {s:?} is not [3,H,W]")),
        };
        let (fh, fw) = (m.h(), m.w());
        if f.shape() != [3, fh, fw] {
            return Err(arg_err!("foreground {:?} does not match its {fh}x{fw} mask", f.shape()));
        }
        let plane = h * w;
        let mut alpha = vec![0.0f64; plane];
        let mut fg_at = vec![usize::MAX; plane];
        for y in 0..fh {
            for x in 0..fw {
                if !m.get(y, x) {
                    continue;
                }
                let (ty, tx) = (y as isize + offset.0, x as isize + offset.1);
                if ty < 0 || tx < 0 || ty >= h as isize || tx >= w as isize {
                    return Err(arg_err!("placement {offset:?} moves mask pixel ({y},{x}) out of bounds"));
                }
                let i = ty as usize * w + tx as usize;
                alpha[i] = 1.0;
                fg_at[i] = y * fw + x;
            }
        }
        if feather > 0 {
            alpha = box_blur(&alpha, h, w, feather);
            // Blurred alpha spills outside the mask; sample the foreground
            // at the same shifted position where it exists.
            for y in 0..h {
                for x in 0..w {
                    let (sy, sx) = (y as isize - offset.0, x as isize - offset.1);
                    if sy >= 0 && sx >= 0 && (sy as usize) < fh && (sx as usize) < fw {
                        fg_at[y * w + x] = sy as usize * fw + sx as usize;
                    }
                }
            }
        }
        let mut out = b.clone();
        let fplane = fh * fw;
        let od = out.data_mut();
        for i in 0..plane {
            let a = alpha[i];
            if a == 0.0 || fg_at[i] == usize::MAX {
                continue;
            }
            for c in 0..3 {
                let fv = f.data()[c * fplane + fg_at[i]];
                let k = c * plane + i;
                od[k] = if a == 1.0 { fv } else { T::of(od[k].as_f64() * (1.0 - a) + fv.as_f64() * a) };
            }
        }
        gts.push(Mask::new(h, w, alpha.iter().map(|&a| (a > 0.5) as u8).collect())?);
        frames.push(out);
    }
    Ok((frames, gts))
}

fn box_blur(a: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    let r = r as isize;
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut s, mut n) = (0.0, 0.0);
            for yy in (y - r).max(0)..=(y + r).min(h as isize - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w as isize - 1) {
                    s += a[yy as usize * w + xx as usize];
                    n += 1.0;
                }
            }
            out[y as usize * w + x as usize] = s / n;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Procedural,
    Composited,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Procedural => "procedural",
            Source::Composited => "composited",
        })
    }
}

impl FromStr for Source {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "procedural" => Ok(Source::Procedural),
            "composited" => Ok(Source::Composited),
            _ => Err(Error::Format(format!("unknown source `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub frames: usize,
    pub source: Source,
    pub seed: u64,
}

/// Dataset index stored as `manifest.txt` at the dataset root:
///
/// ```text
/// # comment
/// version 1
/// <id> <frame count> <procedural|composited> <seed>
/// ```
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const MANIFEST_VERSION: u32 = 1;

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("# id frames source seed\nversion {}\n", self.version);
        for e in &self.entries {
            s.push_str(&format!("{} {} {} {}\n", e.id, e.frames, e.source, e.seed));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut version = None;
        let mut entries: Vec<ManifestEntry> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Format(format!("manifest line {}: `{line}`", n + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["version", v] => version = Some(v.parse().map_err(|_| bad())?),
                [id, frames, source, seed] => {
                    if entries.iter().any(|e| e.id == *id) {
                        return Err(Error::Format(format!("manifest: duplicate id `{id}`")));
                    }
                    entries.push(ManifestEntry {
                        id: id.to_string(),
                        frames: frames.parse().map_err(|_| bad())?,
                        source: source.parse()?,
                        seed: seed.parse().map_err(|_| bad())?,
                    });
                }
                _ => return Err(bad()),
            }
        }
        match version {
            Some(MANIFEST_VERSION) => Ok(DatasetManifest { version: MANIFEST_VERSION, entries }),
            Some(v) => Err(Error::Format(format!("manifest version {v}; expected {MANIFEST_VERSION}"))),
            None => Err(Error::Format("manifest has no version line".into())),
        }
    }

    pub fn read(root: &Path) -> Result<Self> {
        let p = root.join(MANIFEST_FILE);
        Self::parse(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)
    }
}

/// A generated video plus its provenance.
#[derive(Clone, Debug)]
pub struct SynthVideo<T> {
    pub video: Video<T>,
    pub source: Source,
    pub seed: u64,
}

/// `count` procedural videos with ids `vid0000…`, each scene seeded from
/// `seed` and its index.
pub fn generate_videos<T: Real>(
    count: usize,
    frames: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<Vec<SynthVideo<T>>> {
    (0..count)
        .map(|i| {
            let s = scene_seed(seed, i);
            let (f, m) = synth_video(&SceneSpec::random(s, frames, h, w))?;
            Ok(SynthVideo {
                video: Video { id: format!("vid{i:04}"), frames: f, masks: m },
                source: Source::Procedural,
                seed: s,
            })
        })
        .collect()
}

pub fn scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(index as u64)
}

pub fn frame_path(root: &Path, id: &str, t: usize) -> std::path::PathBuf {
    root.join(id).join("frames").join(format!("{t:05}.png"))
}

pub fn mask_path(root: &Path, id: &str, t: usize) -> std::path::PathBuf {
    root.join(id).join("masks").join(format!("{t:05}.png"))
}

/// Writes `<root>/<id>/frames/%05d.png`, `<root>/<id>/masks/%05d.png` and the
/// manifest.
pub fn write_dataset<T: Real>(videos: &[SynthVideo<T>], root: &Path) -> Result<DatasetManifest> {
    let mut entries = Vec::with_capacity(videos.len());
    for sv in videos {
        let v = &sv.video;
        if v.frames.len() != v.masks.len() {
            return Err(arg_err!("video {}: {} frames but {} masks", v.id, v.frames.len(), v.masks.len()));
        }
        if entries.iter().any(|e: &ManifestEntry| e.id == v.id) {
            return Err(arg_err!("duplicate video id `{}`", v.id));
        }
        for sub in ["frames", "masks"] {
            let d = root.join(&v.id).join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        for (t, (f, m)) in v.frames.iter().zip(&v.masks).enumerate() {
            video::write_frame(&frame_path(root, &v.id, t), f)?;
            video::write_mask(&mask_path(root, &v.id, t), m)?;
        }
        entries.push(ManifestEntry { id: v.id.clone(), frames: v.frames.len(), source: sv.source, seed: sv.seed });
    }
    let manifest = DatasetManifest { version: MANIFEST_VERSION, entries };
    let p = root.join(MANIFEST_FILE);
    fs::write(&p, manifest.to_text()).map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}

/// Reads every video listed in the manifest, resizing to `size` if given.
/// Frame counts are checked against the files on disk.
pub fn read_dataset<T: Real>(root: &Path, size: Option<(usize, usize)>) -> Result<Vec<Video<T>>> {
    let manifest = DatasetManifest::read(root)?;
    manifest
        .entries
        .iter()
        .map(|e| {
            let on_disk = count_pngs(&root.join(&e.id).join("frames"))?;
            if on_disk != e.frames {
                return Err(Error::Format(format!(
                    "video {}: manifest lists {} frames, {} on disk",
                    e.id, e.frames, on_disk
                )));
            }
            let mut v =
                Video { id: e.id.clone(), frames: Vec::with_capacity(e.frames), masks: Vec::with_capacity(e.frames) };
            for t in 0..e.frames {
                v.frames.push(video::read_frame(&frame_path(root, &e.id, t), size)?);
                v.masks.push(video::read_mask(&mask_path(root, &e.id, t), size)?);
            }
            Ok(v)
        })
        .collect()
}

pub fn count_pngs(dir: &Path) -> Result<usize> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut n = 0;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().extension().is_some_and(|x| x == "png") {
            n += 1;
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ellipse_spec(seed: u64) -> SceneSpec {
        SceneSpec {
            seed,
            frames: 4,
            h: 48,
            w: 64,
            background: Background::TexturedNoise,
            drift: (0.5, -0.7),
            object: ObjectKind::Ellipse,
            radii: (9.0, 13.0),
            texture_seed: 11,
            trajectory: Trajectory { start: (24.0, 32.0), velocity: (0.0, 0.0), sinusoid: None },
            feather: 0.0,
        }
    }

    #[test]
    fn static_unfeathered_mask_is_constant() {
        let (_, masks) = synth_video::<f32>(&ellipse_spec(1)).unwrap();
        assert!(masks.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn same_seed_same_frames() {
        let s = SceneSpec::random(42, 3, 32, 32);
        let a = synth_video::<f32>(&s).unwrap();
        let b = synth_video::<f32>(&s).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn ellipse_area_matches_pi_ab() {
        let s = ellipse_spec(2);
        let (_, masks) = synth_video::<f32>(&s).unwrap();
        let expect = std::f64::consts::PI * s.radii.0 * s.radii.1;
        for m in masks {
            let rel = (m.area() as f64 - expect).abs() / expect;
            assert!(rel < 0.05, "area {} vs {expect}", m.area());
        }
    }

    #[test]
    fn short_or_oversized_specs_rejected() {
        let mut s = ellipse_spec(0);
        s.frames = 2;
        assert!(matches!(synth_video::<f32>(&s), Err(Error::Spec(_))));
        let mut s = ellipse_spec(0);
        s.radii = (30.0, 30.0);
        assert!(matches!(synth_video::<f32>(&s), Err(Error::Spec(_))));
    }

    #[test]
    fn trajectories_are_clamped_inside() {
        let mut s = ellipse_spec(0);
        s.trajectory.velocity = (5.0, -9.0);
        s.frames = 12;
        let (_, masks) = synth_video::<f32>(&s).unwrap();
        for m in &masks {
            assert!(m.area() > 0);
            for y in 0..m.h() {
                assert!(!m.get(y, 0) && !m.get(y, m.w() - 1));
            }
            for x in 0..m.w() {
                assert!(!m.get(0, x) && !m.get(m.h() - 1, x));
            }
        }
    }

    #[test]
    fn composite_extremes() {
        let bg = vec![Tensor::<f64>::full(&[3, 4, 4], 0.25)];
        let fg = vec![Tensor::<f64>::full(&[3, 4, 4], 0.75)];
        let (out, gt) = composite_splice(&bg, &fg, &[Mask::zeros(4, 4)], (0, 0), 0).unwrap();
        assert_eq!(out[0], bg[0]);
        assert_eq!(gt[0].area(), 0);
        let ones = Mask::from_fn(4, 4, |_, _| true);
        let (out, gt) = composite_splice(&bg, &fg, &[ones], (0, 0), 0).unwrap();
        assert_eq!(out[0], fg[0]);
        assert_eq!(gt[0].area(), 16);
        assert!(composite_splice(&bg, &fg, &[], (0, 0), 0).is_err());
    }

    #[test]
    fn composite_rejects_out_of_bounds_placement() {
        let bg = vec![Tensor::<f64>::zeros(&[3, 4, 4])];
        let fg = vec![Tensor::<f64>::ones(&[3, 4, 4])];
        let m = Mask::from_fn(4, 4, |y, x| y == 3 && x == 3);
        assert!(composite_splice(&bg, &fg, &[m.clone()], (1, 0), 0).is_err());
        let (out, gt) = composite_splice(&bg, &fg, &[m], (-3, -3), 0).unwrap();
        assert!(gt[0].get(0, 0));
        assert_eq!(out[0].at(&[1, 0, 0]), 1.0);
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = DatasetManifest {
            version: MANIFEST_VERSION,
            entries: vec![ManifestEntry { id: "a".into(), frames: 5, source: Source::Composited, seed: 9 }],
        };
        assert_eq!(DatasetManifest::parse(&m.to_text()).unwrap(), m);
        assert!(DatasetManifest::parse("version 2\n").is_err());
        assert!(DatasetManifest::parse("a 1 procedural 0\n").is_err());
        assert!(DatasetManifest::parse("version 1\na 1 procedural 0\na 2 procedural 1\n").is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vids = generate_videos::<f32>(2, 4, 32, 32, 5).unwrap();
        let manifest = write_dataset(&vids, dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 2);
        let back = read_dataset::<f32>(dir.path(), None).unwrap();
        for (a, b) in vids.iter().zip(&back) {
            assert_eq!(a.video.frames, b.frames);
            assert_eq!(a.video.masks, b.masks);
        }
        std::fs::remove_file(frame_path(dir.path(), "vid0001", 3)).unwrap();
        assert!(matches!(read_dataset::<f32>(dir.path(), None), Err(Error::Format(_))));
    }
}
