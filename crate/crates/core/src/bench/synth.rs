//! Deterministic synthetic sequences with exact ground truth.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Sequence, FRAMES_DIR, GROUNDTRUTH_NAME};
use crate::error::{Error, Result};
use crate::inference::BoundingBox;

/// Top-left position `start + velocity·t + amplitude·sin(2πt / period)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default)]
    pub amplitude: [f64; 2],
    /// Oscillation period in frames; 0 disables the oscillation.
    #[serde(default)]
    pub period: f64,
}

impl Trajectory {
    pub fn fixed(x: f64, y: f64) -> Self {
        Self::linear(x, y, 0.0, 0.0)
    }

    pub fn linear(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        Self {
            start: [x, y],
            velocity: [vx, vy],
            amplitude: [0.0, 0.0],
            period: 0.0,
        }
    }

    pub fn position(&self, t: usize) -> (f64, f64) {
        let t = t as f64;
        let wave = if self.period > 0.0 { (2.0 * PI * t / self.period).sin() } else { 0.0 };
        (
            self.start[0] + self.velocity[0] * t + self.amplitude[0] * wave,
            self.start[1] + self.velocity[1] * t + self.amplitude[1] * wave,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AppearanceKind {
    /// Adds `amount` to every channel of the whole frame.
    IlluminationShift { amount: f64 },
    /// Rotates the target's current appearance by a quarter turn.
    Rotation90,
    /// Covers the leading `fraction` of the target's width with a flat band
    /// for `duration` frames.
    OcclusionBand {
        duration: usize,
        #[serde(default = "default_band_fraction")]
        fraction: f64,
        #[serde(default = "default_band_shade")]
        shade: f64,
    },
    /// Blends a new random texture into the target with weight `mix`
    /// (1 replaces it outright).
    TextureSwap {
        seed: u64,
        #[serde(default = "default_swap_mix")]
        mix: f64,
    },
}

fn default_swap_mix() -> f64 {
    1.0
}

fn default_band_fraction() -> f64 {
    0.5
}

fn default_band_shade() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppearanceEvent {
    pub frame: usize,
    #[serde(flatten)]
    pub kind: AppearanceKind,
    /// Frames over which the change fades in; 0 is instantaneous.
    #[serde(default)]
    pub ramp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorTexture {
    /// Exact copy of the target's initial texture.
    Base,
    Seed(u64),
    /// `(1 - weight)·base + weight·texture(seed)`.
    Blend { seed: u64, weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub trajectory: Trajectory,
    pub texture: DistractorTexture,
    /// Drawn over the target instead of under it.
    #[serde(default)]
    pub above: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    pub seed: u64,
    pub target_size: [f64; 2],
    /// Texture grid resolution across the target.
    #[serde(default = "default_texture_cells")]
    pub texture_cells: usize,
    pub trajectory: Trajectory,
    #[serde(default)]
    pub events: Vec<AppearanceEvent>,
    #[serde(default)]
    pub distractors: Vec<Distractor>,
    /// Background texture contrast in [0, 1]; 0 is flat gray.
    #[serde(default)]
    pub clutter: f64,
}

fn default_texture_cells() -> usize {
    6
}

impl SyntheticSpec {
    /// Still target on a flat canvas.
    pub fn simple(name: &str, frames: usize, seed: u64) -> Self {
        Self {
            name: name.into(),
            width: 200,
            height: 160,
            frames,
            seed,
            target_size: [36.0, 36.0],
            texture_cells: default_texture_cells(),
            trajectory: Trajectory::fixed(82.0, 62.0),
            events: Vec::new(),
            distractors: Vec::new(),
            clutter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.width < 16 || self.height < 16 {
            return bad(format!("canvas {}x{} smaller than 16x16", self.width, self.height));
        }
        if self.frames < 2 {
            return bad("need at least 2 frames".into());
        }
        if !(self.target_size[0] >= 4.0 && self.target_size[1] >= 4.0) {
            return bad(format!("target size {:?} below 4 px", self.target_size));
        }
        if self.texture_cells < 1 {
            return bad("texture_cells must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.clutter) {
            return bad(format!("clutter {} outside [0, 1]", self.clutter));
        }
        for e in &self.events {
            if e.frame >= self.frames {
                return bad(format!("event at frame {} beyond the sequence", e.frame));
            }
            match e.kind {
                AppearanceKind::OcclusionBand { fraction, .. } if !(0.0..=1.0).contains(&fraction) => {
                    return bad(format!("occlusion fraction {fraction} outside [0, 1]"));
                }
                AppearanceKind::TextureSwap { mix, .. } if !(mix > 0.0 && mix <= 1.0) => {
                    return bad(format!("texture swap mix {mix} outside (0, 1]"));
                }
                _ => {}
            }
        }
        for d in &self.distractors {
            if let DistractorTexture::Blend { weight, .. } = d.texture {
                if !(0.0..=1.0).contains(&weight) {
                    return bad(format!("distractor blend weight {weight} outside [0, 1]"));
                }
            }
        }
        let (w, h) = (self.width as f64, self.height as f64);
        for (t, b) in self.groundtruth_unchecked().iter().enumerate() {
            if b.x >= w || b.y >= h || b.x + b.w <= 0.0 || b.y + b.h <= 0.0 {
                return bad(format!("target leaves the canvas at frame {t}"));
            }
        }
        Ok(())
    }

    fn groundtruth_unchecked(&self) -> Vec<BoundingBox> {
        (0..self.frames)
            .map(|t| {
                let (x, y) = self.trajectory.position(t);
                BoundingBox {
                    x,
                    y,
                    w: self.target_size[0],
                    h: self.target_size[1],
                }
            })
            .collect()
    }

    pub fn groundtruth(&self) -> Result<Vec<BoundingBox>> {
        self.validate()?;
        Ok(self.groundtruth_unchecked())
    }

    pub fn has_appearance_event(&self) -> bool {
        !self.events.is_empty()
    }
}

/// Random color grid sampled bilinearly over the unit square.
#[derive(Debug, Clone)]
struct Texture {
    cells: usize,
    colors: Vec<[f64; 3]>,
}

impl Texture {
    fn random(cells: usize, seed: u64, lo: f64, hi: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let colors = (0..cells * cells)
            .map(|_| [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)])
            .collect();
        Self { cells, colors }
    }

    fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let n = self.cells;
        let coord = |t: f64| {
            let f = (t * n as f64 - 0.5).clamp(0.0, n as f64 - 1.0);
            let i = (f.floor() as usize).min(n - 1);
            (i, (i + 1).min(n - 1), f - i as f64)
        };
        let (x0, x1, fx) = coord(u);
        let (y0, y1, fy) = coord(v);
        let at = |x: usize, y: usize| self.colors[y * n + x];
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = at(x0, y0)[c] * (1.0 - fx) + at(x1, y0)[c] * fx;
            let bottom = at(x0, y1)[c] * (1.0 - fx) + at(x1, y1)[c] * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
        out
    }
}

/// Target appearance after some number of rotation/swap events: a
/// weighted blend of rotated textures.
#[derive(Debug, Clone)]
struct Look {
    /// (texture index, quarter turns, weight)
    parts: Vec<(usize, u8, f64)>,
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] * (1.0 - t) + b[c] * t)
}

fn ramp_weight(t: usize, start: usize, ramp: usize) -> f64 {
    if t < start {
        0.0
    } else if ramp == 0 {
        1.0
    } else {
        ((t - start + 1) as f64 / ramp as f64).min(1.0)
    }
}

/// Everything needed to render any frame of a spec.
pub struct Renderer {
    spec: SyntheticSpec,
    textures: Vec<Texture>,
    /// Appearance changes: (start frame, ramp, look after the change).
    looks: Vec<(usize, usize, Look)>,
    base_look: Look,
    background: Texture,
}

impl Renderer {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut textures = vec![Texture::random(spec.texture_cells, spec.seed, 30.0, 225.0)];
        let mut looks = Vec::new();
        let base_look = Look { parts: vec![(0, 0, 1.0)] };
        let mut current = base_look.clone();
        let mut changes: Vec<&AppearanceEvent> = spec
            .events
            .iter()
            .filter(|e| matches!(e.kind, AppearanceKind::Rotation90 | AppearanceKind::TextureSwap { .. }))
            .collect();
        changes.sort_by_key(|e| e.frame);
        for e in changes {
            current = match e.kind {
                AppearanceKind::TextureSwap { seed, mix } => {
                    textures.push(Texture::random(spec.texture_cells, seed, 30.0, 225.0));
                    let mut parts: Vec<_> = current
                        .parts
                        .iter()
                        .map(|&(t, q, w)| (t, q, w * (1.0 - mix)))
                        .filter(|p| p.2 > 0.0)
                        .collect();
                    parts.push((textures.len() - 1, 0, mix));
                    Look { parts }
                }
                _ => Look {
                    parts: current.parts.iter().map(|&(t, q, w)| (t, (q + 1) % 4, w)).collect(),
                },
            };
            looks.push((e.frame, e.ramp, current.clone()));
        }
        let bg_cells = ((spec.width.max(spec.height) as usize) / 12).max(2);
        let background = Texture::random(bg_cells, spec.seed ^ 0x9e37_79b9_7f4a_7c15, 0.0, 1.0);
        Ok(Self {
            spec: spec.clone(),
            textures,
            looks,
            base_look,
            background,
        })
    }

    fn texture_for(&self, which: &DistractorTexture) -> Box<dyn Fn(f64, f64) -> [f64; 3] + '_> {
        let cells = self.spec.texture_cells;
        match *which {
            DistractorTexture::Base => Box::new(move |u, v| self.textures[0].sample(u, v)),
            DistractorTexture::Seed(seed) => {
                let t = Texture::random(cells, seed, 30.0, 225.0);
                Box::new(move |u, v| t.sample(u, v))
            }
            DistractorTexture::Blend { seed, weight } => {
                let t = Texture::random(cells, seed, 30.0, 225.0);
                Box::new(move |u, v| mix(self.textures[0].sample(u, v), t.sample(u, v), weight))
            }
        }
    }

    fn look_color(&self, look: &Look, u: f64, v: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for &(texture, turns, weight) in &look.parts {
            let (mut u, mut v) = (u, v);
            for _ in 0..turns {
                (u, v) = (v, 1.0 - u);
            }
            let c = self.textures[texture].sample(u, v);
            for (o, c) in out.iter_mut().zip(c) {
                *o += weight * c;
            }
        }
        out
    }

    fn target_color(&self, t: usize, u: f64, v: f64) -> [f64; 3] {
        let Some(k) = self.looks.iter().rposition(|(f, _, _)| *f <= t) else {
            return self.look_color(&self.base_look, u, v);
        };
        let (start, ramp, ref after) = self.looks[k];
        let before = if k == 0 { &self.base_look } else { &self.looks[k - 1].2 };
        let w = ramp_weight(t, start, ramp);
        if w >= 1.0 {
            self.look_color(after, u, v)
        } else {
            mix(self.look_color(before, u, v), self.look_color(after, u, v), w)
        }
    }

    fn illumination(&self, t: usize) -> f64 {
        self.spec
            .events
            .iter()
            .filter_map(|e| match e.kind {
                AppearanceKind::IlluminationShift { amount } => Some(amount * ramp_weight(t, e.frame, e.ramp)),
                _ => None,
            })
            .sum()
    }

    pub fn render(&self, t: usize) -> RgbImage {
        let s = &self.spec;
        let (w, h) = (s.width as usize, s.height as usize);
        let mut px = vec![[128.0f64; 3]; w * h];
        if s.clutter > 0.0 {
            for y in 0..h {
                for x in 0..w {
                    let c = self.background.sample((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
                    px[y * w + x] = c.map(|v| 128.0 + s.clutter * 100.0 * (v - 0.5) * 2.0);
                }
            }
        }

        let paint = |px: &mut Vec<[f64; 3]>, bx: f64, by: f64, color: &dyn Fn(f64, f64) -> [f64; 3]| {
            let (bw, bh) = (s.target_size[0], s.target_size[1]);
            let x0 = bx.floor().max(0.0) as usize;
            let y0 = by.floor().max(0.0) as usize;
            let x1 = ((bx + bw).ceil().max(0.0) as usize).min(w);
            let y1 = ((by + bh).ceil().max(0.0) as usize).min(h);
            for y in y0..y1 {
                let v = (y as f64 + 0.5 - by) / bh;
                if !(0.0..1.0).contains(&v) {
                    continue;
                }
                for x in x0..x1 {
                    let u = (x as f64 + 0.5 - bx) / bw;
                    if (0.0..1.0).contains(&u) {
                        px[y * w + x] = color(u, v);
                    }
                }
            }
        };

        let distractors: Vec<_> = s
            .distractors
            .iter()
            .map(|d| (d, self.texture_for(&d.texture)))
            .collect();
        for (d, tex) in distractors.iter().filter(|(d, _)| !d.above) {
            let (dx, dy) = d.trajectory.position(t);
            paint(&mut px, dx, dy, tex.as_ref());
        }
        let (tx, ty) = s.trajectory.position(t);
        paint(&mut px, tx, ty, &|u, v| self.target_color(t, u, v));
        for e in &s.events {
            if let AppearanceKind::OcclusionBand { duration, fraction, shade } = e.kind {
                if t >= e.frame && t < e.frame + duration {
                    paint(&mut px, tx, ty, &|u, v| {
                        if u < fraction {
                            [shade; 3]
                        } else {
                            self.target_color(t, u, v)
                        }
                    });
                }
            }
        }
        for (d, tex) in distractors.iter().filter(|(d, _)| d.above) {
            let (dx, dy) = d.trajectory.position(t);
            paint(&mut px, dx, dy, tex.as_ref());
        }

        let shift = self.illumination(t);
        RgbImage::from_fn(s.width, s.height, |x, y| {
            let p = px[y as usize * w + x as usize];
            Rgb(p.map(|v| (v + shift).round().clamp(0.0, 255.0) as u8))
        })
    }
}

/// Renders every frame of `spec` into an OTB-style directory under
/// `out_dir/<name>` and returns the loaded sequence.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<Sequence> {
    let renderer = Renderer::new(spec)?;
    let gt = spec.groundtruth()?;
    let dir = out_dir.join(&spec.name);
    let img_dir = dir.join(FRAMES_DIR);
    fs::create_dir_all(&img_dir)?;
    let mut frame_paths = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let path = img_dir.join(format!("{:04}.png", t + 1));
        renderer.render(t).save(&path)?;
        frame_paths.push(path);
    }
    let mut text = String::new();
    for b in &gt {
        text.push_str(&format!("{},{},{},{}\n", b.x + 1.0, b.y + 1.0, b.w, b.h));
    }
    fs::write(dir.join(GROUNDTRUTH_NAME), text)?;
    fs::write(dir.join("spec.json"), serde_json::to_string_pretty(spec)? + "\n")?;
    Sequence::new(spec.name.clone(), frame_paths, gt)
}

fn event(frame: usize, kind: AppearanceKind, ramp: usize) -> AppearanceEvent {
    AppearanceEvent { frame, kind, ramp }
}

/// Built-in sequences: a still target, a moving one, and the evaluation
/// suite from [`suite`].
pub fn presets() -> Vec<SyntheticSpec> {
    let mut still = SyntheticSpec::simple("still", 40, 1);
    still.clutter = 0.3;

    let mut slide = SyntheticSpec::simple("slide", 60, 2);
    slide.width = 420;
    slide.trajectory = Trajectory::linear(20.0, 62.0, 5.0, 0.0);
    slide.clutter = 0.3;

    let mut all = vec![still, slide, drift_scenario()];
    all.extend(suite());
    all
}

/// A resting target that is fully covered from frame 40 to 120 while a
/// half-blended copy of its texture slides away from behind it. Single
/// template matching follows the copy; anything stored during that stretch
/// is a drifted template.
pub fn drift_scenario() -> SyntheticSpec {
    let mut spec = SyntheticSpec::simple("drift", 160, 21);
    spec.width = 320;
    spec.height = 240;
    spec.target_size = [40.0, 40.0];
    spec.trajectory = Trajectory::fixed(90.0, 120.0);
    spec.clutter = 0.3;
    spec.events = vec![
        event(20, AppearanceKind::IlluminationShift { amount: 20.0 }, 10),
        event(40, AppearanceKind::OcclusionBand { duration: 80, fraction: 1.0, shade: 90.0 }, 0),
    ];
    spec.distractors = vec![Distractor {
        trajectory: Trajectory::linear(90.0, 120.0, 1.0, 0.0),
        texture: DistractorTexture::Blend { seed: 99, weight: 0.5 },
        above: false,
    }];
    spec
}

fn swap(seed: u64, mix: f64) -> AppearanceKind {
    AppearanceKind::TextureSwap { seed, mix }
}

fn orbit(cx: f64, cy: f64, ax: f64, ay: f64, period: f64) -> Trajectory {
    Trajectory {
        start: [cx, cy],
        velocity: [0.0, 0.0],
        amplitude: [ax, ay],
        period,
    }
}

fn suite_base(name: &str, seed: u64, trajectory: Trajectory) -> SyntheticSpec {
    SyntheticSpec {
        name: name.into(),
        width: 320,
        height: 240,
        frames: 200,
        seed,
        target_size: [40.0, 40.0],
        texture_cells: 6,
        trajectory,
        events: Vec::new(),
        distractors: Vec::new(),
        clutter: 0.5,
    }
}

/// Moving targets over a cluttered background that change appearance
/// partway through.
pub fn suite() -> Vec<SyntheticSpec> {
    let mut swapped = suite_base("suite_swap", 11, orbit(140.0, 100.0, 70.0, 50.0, 120.0));
    swapped.events = vec![
        event(40, swap(111, 0.6), 30),
        event(120, swap(112, 0.6), 30),
    ];

    let mut rotate = suite_base("suite_rotate", 12, orbit(140.0, 100.0, 80.0, 30.0, 150.0));
    rotate.events = vec![
        event(50, AppearanceKind::Rotation90, 20),
        event(90, AppearanceKind::IlluminationShift { amount: 30.0 }, 5),
        event(130, AppearanceKind::Rotation90, 20),
    ];

    let mut flicker = suite_base("suite_flicker", 13, orbit(140.0, 100.0, 60.0, 60.0, 100.0));
    flicker.events = vec![
        event(30, AppearanceKind::IlluminationShift { amount: 30.0 }, 0),
        event(60, AppearanceKind::IlluminationShift { amount: -45.0 }, 0),
        event(100, swap(131, 0.6), 40),
        event(150, AppearanceKind::IlluminationShift { amount: 30.0 }, 0),
    ];

    let mut occluded = suite_base("suite_occluded", 14, orbit(140.0, 100.0, 70.0, 40.0, 130.0));
    occluded.events = vec![
        event(50, swap(141, 0.6), 30),
        event(100, AppearanceKind::OcclusionBand { duration: 20, fraction: 0.5, shade: 60.0 }, 0),
        event(140, swap(142, 0.6), 30),
    ];

    let mut sudden = suite_base("suite_sudden", 15, orbit(140.0, 100.0, 50.0, 50.0, 80.0));
    sudden.events = vec![
        event(70, swap(151, 0.6), 8),
        event(140, AppearanceKind::IlluminationShift { amount: 25.0 }, 10),
    ];

    vec![swapped, rotate, flicker, occluded, sudden]
}
