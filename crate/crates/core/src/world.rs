//! Pillar-forest worlds: seeded generation, analytic signed distance,
//! collision queries and pinhole depth rendering by ray-cylinder intersection.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Result, SagaError};
use crate::fmt::{round_sig9, sig9};
use crate::geometry::Vec3;
use crate::real::Real;

pub const WORLD_FILE_VERSION: u32 = 1;
/// Depth sentinel and signed-distance cap for empty worlds, meters.
pub const MAX_RANGE: f64 = 20.0;
pub const MIN_PILLAR_RADIUS: f64 = 0.3;
pub const MAX_PILLAR_RADIUS: f64 = 0.8;
/// Extra clearance required between neighbouring pillar surfaces.
pub const PILLAR_GAP: f64 = 0.8;
/// Radius of the pillar-free discs around start and goal.
pub const CLEAR_DISC_RADIUS: f64 = 2.0;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100_000;

pub const DENSITY_SPARSE: f64 = 0.05;
pub const DENSITY_MEDIUM: f64 = 0.10;
pub const DENSITY_DENSE: f64 = 0.15;

/// World position and heading. Roll and pitch are always zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
}

impl Pose {
    pub fn new(position: Vec3, yaw: f64) -> Self {
        Pose { position, yaw }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
pub struct Bounds {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Bounds {
    pub fn area(&self) -> f64 {
        (self.xmax - self.xmin) * (self.ymax - self.ymin)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        p[0] >= self.xmin && p[0] <= self.xmax && p[1] >= self.ymin && p[1] <= self.ymax
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            xmin: -20.0,
            xmax: 20.0,
            ymin: -10.0,
            ymax: 10.0,
        }
    }
}

pub const DEFAULT_START: Vec3 = [-18.0, 0.0, 1.5];
pub const DEFAULT_GOAL: Vec3 = [18.0, 0.0, 1.5];

/// Vertical cylinder of unbounded height.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
pub struct Pillar {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PillarWorld {
    pub seed: u64,
    pub density: f64,
    pub bounds: Bounds,
    pub start: Vec3,
    pub goal: Vec3,
    pub pillars: Vec<Pillar>,
}

fn planar_dist(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

/// Seeded rejection sampling of `round(density × area)` pillars that keep
/// the separation and clear-disc constraints.
pub fn generate_world(
    seed: u64,
    density: f64,
    bounds: Bounds,
    start: Vec3,
    goal: Vec3,
) -> Result<PillarWorld> {
    if !(density >= 0.0) || !density.is_finite() {
        return Err(SagaError::config(format!("density must be >= 0, got {density}")));
    }
    if !(bounds.area() > 0.0) || bounds.xmax <= bounds.xmin {
        return Err(SagaError::config("world bounds must have positive area"));
    }
    let requested = (density * bounds.area()).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pillars: Vec<Pillar> = Vec::with_capacity(requested);
    let mut attempts = 0;
    while pillars.len() < requested {
        if attempts >= MAX_PLACEMENT_ATTEMPTS {
            return Err(SagaError::Placement {
                placed: pillars.len(),
                requested,
                attempts,
            });
        }
        attempts += 1;
        // rounded at birth so the text serialization is exact
        let cand = Pillar {
            x: round_sig9(rng.gen_range(bounds.xmin..bounds.xmax)),
            y: round_sig9(rng.gen_range(bounds.ymin..bounds.ymax)),
            r: round_sig9(rng.gen_range(MIN_PILLAR_RADIUS..MAX_PILLAR_RADIUS)),
        };
        let clear_of_ends = [start, goal]
            .iter()
            .all(|e| planar_dist(cand.x, cand.y, e[0], e[1]) >= CLEAR_DISC_RADIUS + cand.r);
        let separated = pillars
            .iter()
            .all(|p| planar_dist(cand.x, cand.y, p.x, p.y) >= p.r + cand.r + PILLAR_GAP);
        if clear_of_ends && separated {
            pillars.push(cand);
        }
    }
    Ok(PillarWorld {
        seed,
        density,
        bounds,
        start,
        goal,
        pillars,
    })
}

impl PillarWorld {
    /// Default 40 m × 20 m arena with start and goal 36 m apart.
    pub fn generate_default(seed: u64, density: f64) -> Result<Self> {
        generate_world(seed, density, Bounds::default(), DEFAULT_START, DEFAULT_GOAL)
    }

    pub fn empty() -> Self {
        PillarWorld {
            seed: 0,
            density: 0.0,
            bounds: Bounds::default(),
            start: DEFAULT_START,
            goal: DEFAULT_GOAL,
            pillars: Vec::new(),
        }
    }

    /// Index of the pillar whose surface is nearest to `(x, y)`.
    pub fn nearest_pillar(&self, x: f64, y: f64) -> Option<usize> {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.pillars.iter().enumerate() {
            let d = planar_dist(x, y, p.x, p.y) - p.r;
            if d < best_d {
                best_d = d;
                best = Some(i);
            }
        }
        best
    }

    /// Distance to the nearest pillar surface; negative inside a pillar and
    /// [`MAX_RANGE`] when the world is empty.
    pub fn signed_distance<S: Real>(&self, p: &Vec3<S>) -> S {
        match self.nearest_pillar(p[0].value(), p[1].value()) {
            None => S::cst(MAX_RANGE),
            Some(i) => {
                let pl = &self.pillars[i];
                let dx = p[0] - pl.x;
                let dy = p[1] - pl.y;
                (dx * dx + dy * dy).sqrt() - pl.r
            }
        }
    }

    /// True iff the sphere of `vehicle_radius` around `point` touches a pillar.
    pub fn collision(&self, point: &Vec3, vehicle_radius: f64) -> bool {
        self.signed_distance(point) < vehicle_radius
    }

    /// Serializes to the world text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("{\n");
        s.push_str(&format!("  \"version\": {WORLD_FILE_VERSION},\n"));
        s.push_str(&format!("  \"seed\": {},\n", self.seed));
        s.push_str(&format!("  \"density\": {},\n", sig9(self.density)));
        let b = &self.bounds;
        s.push_str(&format!(
            "  \"bounds\": {{\"xmin\": {}, \"xmax\": {}, \"ymin\": {}, \"ymax\": {}}},\n",
            sig9(b.xmin),
            sig9(b.xmax),
            sig9(b.ymin),
            sig9(b.ymax)
        ));
        let v3 = |v: &Vec3| format!("[{}, {}, {}]", sig9(v[0]), sig9(v[1]), sig9(v[2]));
        s.push_str(&format!("  \"start\": {},\n", v3(&self.start)));
        s.push_str(&format!("  \"goal\": {},\n", v3(&self.goal)));
        s.push_str("  \"pillars\": [");
        for (i, p) in self.pillars.iter().enumerate() {
            s.push_str(if i == 0 { "\n" } else { ",\n" });
            s.push_str(&format!(
                "    {{\"x\": {}, \"y\": {}, \"r\": {}}}",
                sig9(p.x),
                sig9(p.y),
                sig9(p.r)
            ));
        }
        if !self.pillars.is_empty() {
            s.push_str("\n  ");
        }
        s.push_str("]\n}\n");
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            version: u32,
            seed: u64,
            density: f64,
            bounds: Bounds,
            start: Vec3,
            goal: Vec3,
            pillars: Vec<Pillar>,
        }
        let raw: Raw = serde_json::from_str(text)
            .map_err(|e| SagaError::format(origin, e.to_string()))?;
        if raw.version != WORLD_FILE_VERSION {
            return Err(SagaError::format(
                origin,
                format!("unsupported world version {}", raw.version),
            ));
        }
        if raw.pillars.iter().any(|p| !(p.r > 0.0)) {
            return Err(SagaError::format(origin, "pillar radius must be positive"));
        }
        Ok(PillarWorld {
            seed: raw.seed,
            density: raw.density,
            bounds: raw.bounds,
            start: raw.start,
            goal: raw.goal,
            pillars: raw.pillars,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| SagaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SagaError::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// Pinhole depth camera. Pixel `(row, col)` looks through image-plane
/// coordinates `(col, row)`; the principal point is `(W/2, H/2)`, so the
/// pixel at `(H/2, W/2)` lies exactly on the optical axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub hfov: f64,
    pub vfov: f64,
    pub width: usize,
    pub height: usize,
    pub max_range: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            hfov: 87f64.to_radians(),
            vfov: 58f64.to_radians(),
            width: 160,
            height: 96,
            max_range: MAX_RANGE,
        }
    }
}

impl CameraModel {
    pub fn fx(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.hfov).tan()
    }

    pub fn fy(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.vfov).tan()
    }

    /// Camera-frame ray (x forward, y left, z up) scaled to unit forward
    /// component, so the ray parameter equals z-depth.
    pub fn ray(&self, row: usize, col: usize) -> Vec3 {
        let cx = 0.5 * self.width as f64;
        let cy = 0.5 * self.height as f64;
        [1.0, (cx - col as f64) / self.fx(), (cy - row as f64) / self.fy()]
    }

    /// Camera ray expressed in the world frame for `pose`.
    pub fn world_ray(&self, pose: &Pose, row: usize, col: usize) -> Vec3 {
        let d = self.ray(row, col);
        let (s, c) = pose.yaw.sin_cos();
        [c * d[0] - s * d[1], s * d[0] + c * d[1], d[2]]
    }
}

/// Depth image in meters, row-major, `max_range` where nothing is hit.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub height: usize,
    pub width: usize,
    pub max_range: f32,
    pub data: Vec<f32>,
}

const DEPTH_MAGIC: &[u8; 4] = b"SDPT";

impl DepthImage {
    pub fn filled(height: usize, width: usize, max_range: f32, value: f32) -> Self {
        DepthImage {
            height,
            width,
            max_range,
            data: vec![value; height * width],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    /// Appends the binary `SDPT` encoding to `out`.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(DEPTH_MAGIC);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&self.max_range.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Decodes one `SDPT` blob from the front of `bytes`; returns the image
    /// and the number of bytes consumed.
    pub fn read_from(bytes: &[u8], origin: &Path) -> Result<(Self, usize)> {
        let bad = |d: &str| SagaError::format(origin, d.to_string());
        if bytes.len() < 16 || &bytes[..4] != DEPTH_MAGIC {
            return Err(bad("missing SDPT header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let height = u32_at(4) as usize;
        let width = u32_at(8) as usize;
        let max_range = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
        let n = height * width;
        let end = 16 + 4 * n;
        if bytes.len() < end {
            return Err(bad("truncated SDPT payload"));
        }
        let data = bytes[16..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((
            DepthImage {
                height,
                width,
                max_range,
                data,
            },
            end,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 4 * self.data.len());
        self.write_to(&mut buf);
        let mut f = fs::File::create(path).map_err(|e| SagaError::io(path, e))?;
        f.write_all(&buf).map_err(|e| SagaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| SagaError::io(path, e))?;
        let (img, used) = Self::read_from(&bytes, path)?;
        if used != bytes.len() {
            return Err(SagaError::format(path, "trailing bytes after SDPT payload"));
        }
        Ok(img)
    }
}

/// Smallest positive ray parameter where `origin + t·dir` meets a pillar,
/// considering the horizontal components only.
pub fn ray_cast(world: &PillarWorld, origin: &Vec3, dir: &Vec3) -> Option<f64> {
    let a = dir[0] * dir[0] + dir[1] * dir[1];
    if a == 0.0 {
        return None;
    }
    let mut best: Option<f64> = None;
    for p in &world.pillars {
        let ox = origin[0] - p.x;
        let oy = origin[1] - p.y;
        let b = 2.0 * (ox * dir[0] + oy * dir[1]);
        let c = ox * ox + oy * oy - p.r * p.r;
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        // numerically stable pair of roots
        let q = -0.5 * (b + b.signum() * sq);
        let (mut t0, mut t1) = if q != 0.0 { (q / a, c / q) } else { (0.0, 0.0) };
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        let t = if t0 > 0.0 {
            t0
        } else if t1 > 0.0 {
            t1
        } else {
            continue;
        };
        if best.is_none_or(|bt| t < bt) {
            best = Some(t);
        }
    }
    best
}

/// z-depth seen by pixel `(row, col)`.
pub fn pixel_depth(world: &PillarWorld, pose: &Pose, camera: &CameraModel, row: usize, col: usize) -> f64 {
    let dir = camera.world_ray(pose, row, col);
    match ray_cast(world, &pose.position, &dir) {
        Some(t) if t < camera.max_range => t,
        _ => camera.max_range,
    }
}

/// Renders a z-depth image. Pillars are unbounded vertically and the camera
/// never pitches, so every row of a column shares the same hit depth.
pub fn render_depth(world: &PillarWorld, pose: &Pose, camera: &CameraModel) -> DepthImage {
    let mut img = DepthImage::filled(
        camera.height,
        camera.width,
        camera.max_range as f32,
        camera.max_range as f32,
    );
    let center_row = camera.height / 2;
    for col in 0..camera.width {
        let d = pixel_depth(world, pose, camera, center_row, col) as f32;
        for row in 0..camera.height {
            img.data[row * camera.width + col] = d;
        }
    }
    img
}
