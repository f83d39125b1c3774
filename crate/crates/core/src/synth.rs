//! Synthetic two-frame scenes with exact ground-truth flow.
//!
//! Each body is a plane patch, box surface or sphere surface sampled with a
//! seeded generator, given analytic normals and colors, and moved rigidly
//! (rotation about its own centroid, then translation). Bodies are laid out
//! along the x axis far enough apart that they never come within the
//! configured gap of each other in either frame, whatever their motions.

use std::str::FromStr;

use nalgebra::{Rotation3, Unit};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::error::{Error, Result};
use crate::io::parse_key_values;
use crate::model::{FlowField, PointCloud, PseudoLabelSet, Vec3};

/// Largest rotation angle per body, radians.
pub const MAX_ROTATION: f64 = 0.3;
/// Largest translation norm per body, meters (below the displacement filter).
pub const MAX_TRANSLATION: f64 = 3.0;
pub const DEFAULT_MIN_GAP: f64 = 2.0;
pub const DEFAULT_EXTENT: f64 = 1.5;
pub const DEFAULT_POINTS_PER_BODY: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Plane,
    Box,
    Sphere,
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Shape> {
        match s {
            "plane" => Ok(Shape::Plane),
            "box" => Ok(Shape::Box),
            "sphere" => Ok(Shape::Sphere),
            other => Err(Error::InvalidParameter(format!("unknown shape {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorMode {
    /// One random color per body.
    PerBody,
    /// Color varies linearly with the local position inside the body.
    #[default]
    Gradient,
}

impl FromStr for ColorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<ColorMode> {
        match s {
            "per-body" | "body" => Ok(ColorMode::PerBody),
            "gradient" => Ok(ColorMode::Gradient),
            other => Err(Error::InvalidParameter(format!("unknown color mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodySpec {
    pub shape: Shape,
    /// Axis-angle rotation applied about the body centroid, radians.
    pub rotation: Vec3,
    pub translation: Vec3,
}

impl BodySpec {
    pub fn translating(shape: Shape, translation: Vec3) -> Self {
        BodySpec {
            shape,
            rotation: Vec3::zeros(),
            translation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub bodies: Vec<BodySpec>,
    pub points_per_body: usize,
    /// Edge length of planes and boxes, diameter of spheres, meters.
    pub extent: f64,
    pub color_mode: ColorMode,
    /// Standard deviation of the Gaussian noise added to frame-2 positions.
    pub jitter: f64,
    /// Fraction of frame-2 points replaced by uniform clutter.
    pub outlier_fraction: f64,
    pub min_gap: f64,
    /// Record ground truth after jitter (`q - p`) instead of the rigid motion.
    pub gt_after_jitter: bool,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            bodies: Vec::new(),
            points_per_body: DEFAULT_POINTS_PER_BODY,
            extent: DEFAULT_EXTENT,
            color_mode: ColorMode::Gradient,
            jitter: 0.0,
            outlier_fraction: 0.0,
            min_gap: DEFAULT_MIN_GAP,
            gt_after_jitter: false,
            seed: 0,
        }
    }
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
    Vec3::new(x, y, z)
}

impl SceneSpec {
    /// `body_count` bodies with random shapes, rotations up to
    /// `MAX_ROTATION` and translations up to `max_translation`, all drawn from
    /// `seed`.
    pub fn random(seed: u64, body_count: usize, points_per_body: usize, max_translation: f64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
        let bodies = (0..body_count)
            .map(|_| {
                let shape = [Shape::Plane, Shape::Box, Shape::Sphere][rng.random_range(0..3)];
                let rotation = random_direction(&mut rng) * rng.random_range(0.0..=MAX_ROTATION);
                let translation = random_direction(&mut rng) * rng.random_range(0.0..=max_translation);
                BodySpec {
                    shape,
                    rotation,
                    translation,
                }
            })
            .collect();
        SceneSpec {
            bodies,
            points_per_body,
            seed,
            ..SceneSpec::default()
        }
    }

    pub fn total_points(&self) -> usize {
        self.bodies.len() * self.points_per_body
    }

    pub fn validate(&self) -> Result<()> {
        if self.bodies.is_empty() {
            return Err(Error::DegenerateScene("scene has no bodies".into()));
        }
        if self.total_points() < 2 {
            return Err(Error::DegenerateScene(format!(
                "scene needs at least 2 points, spec gives {}",
                self.total_points()
            )));
        }
        for (k, body) in self.bodies.iter().enumerate() {
            if !(body.rotation.norm() <= MAX_ROTATION + 1e-12) {
                return Err(Error::DegenerateScene(format!(
                    "body {k}: rotation angle {} exceeds {MAX_ROTATION}",
                    body.rotation.norm()
                )));
            }
            if !(body.translation.norm() <= MAX_TRANSLATION + 1e-12) {
                return Err(Error::DegenerateScene(format!(
                    "body {k}: translation norm {} exceeds {MAX_TRANSLATION}",
                    body.translation.norm()
                )));
            }
        }
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must be a finite value >= 0, got {v}"
                )))
            }
        };
        nonneg("jitter", self.jitter)?;
        nonneg("min_gap", self.min_gap)?;
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "extent must be > 0, got {}",
                self.extent
            )));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(Error::InvalidParameter(format!(
                "outlier_fraction must be in [0, 1], got {}",
                self.outlier_fraction
            )));
        }
        Ok(())
    }

    /// Reads a spec from `key=value` lines. Recognized keys: `seed`,
    /// `points_per_body`, `extent`, `color_mode` (`gradient`|`per-body`),
    /// `jitter`, `outlier_fraction`, `min_gap`, `gt` (`rigid`|`jittered`),
    /// `bodies` (a count of random bodies), `max_translation` (bound for those
    /// random bodies) and repeated `body = <shape> <rx,ry,rz> <tx,ty,tz>`
    /// lines for explicit bodies.
    pub fn from_config(text: &str) -> Result<SceneSpec> {
        let mut spec = SceneSpec::default();
        let mut random_bodies = None;
        let mut max_translation = MAX_TRANSLATION;
        let num = |key: &str, v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Format(format!("{key}: expected a number, got {v:?}")))
        };
        let count = |key: &str, v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Format(format!("{key}: expected a count, got {v:?}")))
        };
        for (key, value) in parse_key_values(text)? {
            let v = value.as_str();
            match key.as_str() {
                "seed" => {
                    spec.seed = v
                        .parse()
                        .map_err(|_| Error::Format(format!("seed: expected an integer, got {v:?}")))?
                }
                "points_per_body" => spec.points_per_body = count(&key, v)?,
                "extent" => spec.extent = num(&key, v)?,
                "color_mode" => spec.color_mode = v.parse()?,
                "jitter" => spec.jitter = num(&key, v)?,
                "outlier_fraction" => spec.outlier_fraction = num(&key, v)?,
                "min_gap" => spec.min_gap = num(&key, v)?,
                "gt" => {
                    spec.gt_after_jitter = match v {
                        "rigid" => false,
                        "jittered" => true,
                        other => return Err(Error::Format(format!("gt: expected rigid|jittered, got {other:?}"))),
                    }
                }
                "bodies" => random_bodies = Some(count(&key, v)?),
                "max_translation" => max_translation = num(&key, v)?,
                "body" => spec.bodies.push(parse_body(v)?),
                other => return Err(Error::Format(format!("unknown scene key {other:?}"))),
            }
        }
        if let Some(n) = random_bodies {
            let random = SceneSpec::random(spec.seed, n, spec.points_per_body, max_translation);
            spec.bodies.extend(random.bodies);
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_vec3(text: &str) -> Result<Vec3> {
    let parts = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Format(format!("expected x,y,z, got {text:?}")))?;
    match parts.as_slice() {
        [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
        _ => Err(Error::Format(format!("expected x,y,z, got {text:?}"))),
    }
}

fn parse_body(text: &str) -> Result<BodySpec> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    match tokens.as_slice() {
        [shape, rotation, translation] => Ok(BodySpec {
            shape: shape.parse()?,
            rotation: parse_vec3(rotation)?,
            translation: parse_vec3(translation)?,
        }),
        _ => Err(Error::Format(format!(
            "body: expected '<shape> <rx,ry,rz> <tx,ty,tz>', got {text:?}"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub p: PointCloud,
    pub q: PointCloud,
    pub gt_flow: FlowField,
    /// Body of each point (same index in both frames).
    pub body_id: Vec<usize>,
    /// Frame-2 points replaced by clutter.
    pub outlier: Vec<bool>,
}

/// Radius of the smallest centered ball containing the body.
fn bounding_radius(shape: Shape, extent: f64) -> f64 {
    match shape {
        Shape::Plane => extent / 2f64.sqrt(),
        Shape::Box => extent * 3f64.sqrt() / 2.0,
        Shape::Sphere => extent / 2.0,
    }
}

/// Fraction of a sampling cell the seeded jitter may move a point; points of
/// one body stay at least `1 - 2 * CELL_JITTER` cells apart.
const CELL_JITTER: f64 = 0.25;

/// `count` points on the body surface in local coordinates (centered at the
/// origin) with their analytic unit normals.
///
/// Sampling is stratified: planes and box faces are divided into square
/// cells, spheres use a golden-angle spiral, and every sample is jittered
/// inside its cell. Unlike independent uniform draws this never produces
/// near-duplicate points, which no matcher could tell apart.
fn sample_surface(shape: Shape, extent: f64, count: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec3, Vec3)> {
    let h = extent / 2.0;
    let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-CELL_JITTER..=CELL_JITTER);
    // cell centers on an m x m grid over [-h, h]^2, in shuffled order
    let grid = |faces: usize, rng: &mut ChaCha8Rng| {
        let m = ((count as f64 / faces as f64).sqrt().ceil() as usize).max(1);
        let cell = extent / m as f64;
        let picked = sample(rng, faces * m * m, count).into_vec();
        picked
            .into_iter()
            .map(|k| {
                let (face, rest) = (k / (m * m), k % (m * m));
                let u = -h + cell * ((rest / m) as f64 + 0.5 + jitter(rng));
                let v = -h + cell * ((rest % m) as f64 + 0.5 + jitter(rng));
                (face, u, v)
            })
            .collect::<Vec<_>>()
    };
    match shape {
        Shape::Plane => grid(1, rng)
            .into_iter()
            .map(|(_, u, v)| (Vec3::new(u, v, 0.0), Vec3::z()))
            .collect(),
        Shape::Box => grid(6, rng)
            .into_iter()
            .map(|(face, u, v)| {
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut p = Vec3::zeros();
                p[axis] = sign * h;
                p[(axis + 1) % 3] = u;
                p[(axis + 2) % 3] = v;
                let mut n = Vec3::zeros();
                n[axis] = sign;
                (p, n)
            })
            .collect(),
        Shape::Sphere => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            // typical spacing between spiral neighbors on the unit sphere
            let spacing = (4.0 * std::f64::consts::PI / count as f64).sqrt();
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * k as f64;
                    let site = Vec3::new(r * phi.cos(), r * phi.sin(), z);
                    let offset = Vec3::new(jitter(rng), jitter(rng), jitter(rng)) * spacing;
                    let n = (site + offset - site * site.dot(&offset)).normalize();
                    (n * h, n)
                })
                .collect()
        }
    }
}

fn color_for(mode: ColorMode, local: &Vec3, extent: f64, body_color: &Vec3) -> Vec3 {
    match mode {
        ColorMode::PerBody => *body_color,
        ColorMode::Gradient => local.map(|c| (0.5 + c / extent).clamp(0.0, 1.0)),
    }
}

fn rotation_of(axis_angle: &Vec3) -> Rotation3<f64> {
    let angle = axis_angle.norm();
    if angle == 0.0 {
        Rotation3::identity()
    } else {
        Rotation3::from_axis_angle(&Unit::new_normalize(*axis_angle), angle)
    }
}

/// Builds the scene described by `spec`; identical specs give bitwise
/// identical scenes.
pub fn generate(spec: &SceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.total_points();
    let mut p_pos = Vec::with_capacity(n);
    let mut q_pos = Vec::with_capacity(n);
    let mut p_nrm = Vec::with_capacity(n);
    let mut q_nrm = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut gt = Vec::with_capacity(n);
    let mut body_id = Vec::with_capacity(n);

    // centers far enough apart that two bodies moving toward each other by
    // the largest allowed translation still keep `min_gap` between them
    let mut center_x = 0.0;
    let mut previous_radius = None;
    for (k, body) in spec.bodies.iter().enumerate() {
        let radius = bounding_radius(body.shape, spec.extent);
        if let Some(prev) = previous_radius {
            center_x += prev + radius + spec.min_gap + 2.0 * MAX_TRANSLATION;
        }
        previous_radius = Some(radius);
        let center = Vec3::new(center_x, 0.0, 0.0);
        // a random resting orientation so bodies are not all axis-aligned
        let pose = rotation_of(&(random_direction(&mut rng) * rng.random_range(0.0..std::f64::consts::PI)));
        let motion = rotation_of(&body.rotation);
        let body_color = Vec3::new(rng.random(), rng.random(), rng.random());
        for (local, normal) in sample_surface(body.shape, spec.extent, spec.points_per_body, &mut rng) {
            let offset = pose * local;
            let p = center + offset;
            let q = center + motion * offset + body.translation;
            p_pos.push(p);
            q_pos.push(q);
            let n1 = pose * normal;
            p_nrm.push(n1);
            q_nrm.push(motion * n1);
            colors.push(color_for(spec.color_mode, &local, spec.extent, &body_color));
            gt.push(q - p);
            body_id.push(k);
        }
    }

    if spec.jitter > 0.0 {
        let noise = Normal::new(0.0, spec.jitter).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for (i, q) in q_pos.iter_mut().enumerate() {
            *q += Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            if spec.gt_after_jitter {
                gt[i] = *q - p_pos[i];
            }
        }
    }

    let mut q_colors = colors.clone();
    let mut outlier = vec![false; n];
    let replaced = (spec.outlier_fraction * n as f64).round() as usize;
    if replaced > 0 {
        let (lo, hi) = q_pos.iter().fold(
            (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), q| (lo.inf(q), hi.sup(q)),
        );
        for i in sample(&mut rng, n, replaced).into_vec() {
            let u = Vec3::new(rng.random(), rng.random(), rng.random());
            q_pos[i] = lo + (hi - lo).component_mul(&u);
            q_colors[i] = Vec3::new(rng.random(), rng.random(), rng.random());
            q_nrm[i] = random_direction(&mut rng);
            outlier[i] = true;
        }
    }

    Ok(SynthScene {
        p: PointCloud::new(p_pos).with_colors(colors).with_normals(p_nrm),
        q: PointCloud::new(q_pos).with_colors(q_colors).with_normals(q_nrm),
        gt_flow: FlowField(gt),
        body_id,
        outlier,
    })
}

/// Adds uniform noise in `[-magnitude, magnitude]` per component to a seeded
/// random `fraction` of the valid labels. Invalid labels are left alone.
pub fn corrupt_labels(labels: &PseudoLabelSet, fraction: f64, magnitude: f64, seed: u64) -> Result<PseudoLabelSet> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!(
            "fraction must be in [0, 1], got {fraction}"
        )));
    }
    if !(magnitude >= 0.0 && magnitude.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "magnitude must be >= 0, got {magnitude}"
        )));
    }
    let mut out = labels.clone();
    if magnitude == 0.0 {
        return Ok(out);
    }
    let valid = labels.labeled_indices();
    let count = (fraction * valid.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in sample(&mut rng, valid.len(), count).into_vec() {
        let noise = Vec3::new(
            rng.random_range(-magnitude..=magnitude),
            rng.random_range(-magnitude..=magnitude),
            rng.random_range(-magnitude..=magnitude),
        );
        out.labels[valid[k]] += noise;
    }
    Ok(out)
}
