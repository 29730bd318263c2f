//! Analytic lighting of flat albedo labels.
//!
//! An environment is an ambient term plus up to eight directional lights in
//! camera space (camera looks down −z, so lights facing the label have
//! z > 0). Shading is Lambertian diffuse plus Blinn-Phong specular under an
//! orthographic view vector (0,0,1), followed by a Reinhard tonemap.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{AlbedoImage, LinearImage, LitImage};
use crate::label_synth::LabelSpec;
use crate::seed;

pub const MAX_LIGHTS: usize = 8;
/// Diffuse is scaled by `1 - metalness * METAL_DIFFUSE_ATTENUATION`.
pub const METAL_DIFFUSE_ATTENUATION: f64 = 0.7;
pub const SPECULAR_EXPONENT_RANGE: (f64, f64) = (2.0, 512.0);
pub const CYLINDER_ARC_RANGE: (f64, f64) = (30.0, 150.0);
pub const BOX_CREASES: (f64, f64) = (0.25, 0.75);
pub const BOX_TILT_DEG: f64 = 15.0;
pub const DEFAULT_ROUGHNESS_THRESHOLD: f64 = 0.4;

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimness {
    Bright,
    Medium,
    Dim,
}

impl Dimness {
    pub const ALL: [Dimness; 3] = [Dimness::Bright, Dimness::Medium, Dimness::Dim];

    fn ambient_range(self) -> (f64, f64) {
        match self {
            Dimness::Bright => (0.4, 0.8),
            Dimness::Medium => (0.15, 0.4),
            Dimness::Dim => (0.02, 0.15),
        }
    }

    fn light_count_range(self) -> (usize, usize) {
        match self {
            Dimness::Bright => (2, 5),
            Dimness::Medium => (1, 4),
            Dimness::Dim => (1, 2),
        }
    }

    fn radiance_norm_range(self) -> (f64, f64) {
        match self {
            Dimness::Bright => (0.5, 2.0),
            Dimness::Medium => (0.3, 1.2),
            Dimness::Dim => (0.1, 0.6),
        }
    }
}

impl fmt::Display for Dimness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimness::Bright => "bright",
            Dimness::Medium => "medium",
            Dimness::Dim => "dim",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalLight {
    /// Unit vector from the surface toward the light.
    pub direction: [f64; 3],
    pub radiance: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentLight {
    pub env_id: String,
    pub ambient: [f64; 3],
    pub lights: Vec<DirectionalLight>,
    pub rotation_deg: f64,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

impl EnvironmentLight {
    pub fn validate(&self) -> Result<()> {
        if self.lights.len() > MAX_LIGHTS {
            return Err(Error::validation(
                "lights",
                format!("{} lights exceed the limit of {MAX_LIGHTS}", self.lights.len()),
            ));
        }
        if !self.ambient.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::validation("ambient", "must be finite and non-negative"));
        }
        for (i, light) in self.lights.iter().enumerate() {
            if (norm(light.direction) - 1.0).abs() > UNIT_TOLERANCE || !(light.direction[2] > 0.0) {
                return Err(Error::validation(
                    "direction",
                    format!("light {i} direction {:?} is not a camera-facing unit vector", light.direction),
                ));
            }
            if !light.radiance.iter().all(|v| v.is_finite() && *v >= 0.0) {
                return Err(Error::validation(
                    "radiance",
                    format!("light {i} radiance must be finite and non-negative"),
                ));
            }
        }
        if !(0.0..360.0).contains(&self.rotation_deg) {
            return Err(Error::validation("rotation_deg", "must lie in [0, 360)"));
        }
        Ok(())
    }
}

fn sample_hemisphere(rng: &mut impl Rng) -> [f64; 3] {
    // Uniform on the z > 0 hemisphere: z is uniform, azimuth uniform.
    let z = 1.0 - rng.random_range(0.0..1.0f64);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    normalize([r * phi.cos(), r * phi.sin(), z])
}

pub fn make_environment(seed: u64, class: Dimness) -> EnvironmentLight {
    let mut rng = seed::rng(seed);
    let (amb_lo, amb_hi) = class.ambient_range();
    let level = rng.random_range(amb_lo..=amb_hi);
    let ambient = [0; 3].map(|_| (level * (1.0 + rng.random_range(-0.1..=0.1))).clamp(amb_lo, amb_hi));

    let (n_lo, n_hi) = class.light_count_range();
    let (r_lo, r_hi) = class.radiance_norm_range();
    let count = rng.random_range(n_lo..=n_hi);
    let lights = (0..count)
        .map(|_| {
            let direction = sample_hemisphere(&mut rng);
            let magnitude = rng.random_range(r_lo..=r_hi);
            let mut tint: [f64; 3] = [0; 3].map(|_| 1.0 + rng.random_range(-0.15..=0.15));
            if class == Dimness::Dim {
                tint.sort_by(|a, b| b.total_cmp(a));
            }
            let tint = normalize(tint);
            DirectionalLight {
                direction,
                radiance: tint.map(|t| t * magnitude),
            }
        })
        .collect();
    EnvironmentLight {
        env_id: format!("{class}-{seed:016x}"),
        ambient,
        lights,
        rotation_deg: 0.0,
    }
}

/// Rotates every light about the camera z-axis.
pub fn rotate_environment(env: &EnvironmentLight, angle_deg: f64) -> EnvironmentLight {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let lights = env
        .lights
        .iter()
        .map(|l| {
            let [x, y, z] = l.direction;
            DirectionalLight {
                direction: [c * x - s * y, s * x + c * y, z],
                radiance: l.radiance,
            }
        })
        .collect();
    let mut rotation_deg = (env.rotation_deg + angle_deg).rem_euclid(360.0);
    if rotation_deg >= 360.0 {
        rotation_deg = 0.0;
    }
    EnvironmentLight {
        env_id: env.env_id.clone(),
        ambient: env.ambient,
        lights,
        rotation_deg,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub roughness: f64,
    pub metalness: f64,
    pub specular_strength: f64,
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.roughness > 0.0 && self.roughness <= 1.0) {
            return Err(Error::validation("roughness", format!("{} outside (0, 1]", self.roughness)));
        }
        if !(0.0..=1.0).contains(&self.metalness) {
            return Err(Error::validation("metalness", format!("{} outside [0, 1]", self.metalness)));
        }
        if !(0.0..=1.0).contains(&self.specular_strength) {
            return Err(Error::validation(
                "specular_strength",
                format!("{} outside [0, 1]", self.specular_strength),
            ));
        }
        Ok(())
    }

    /// Blinn-Phong exponent `2/r^2 - 2`, clamped to `[2, 512]`.
    pub fn specular_exponent(&self) -> f64 {
        let r2 = self.roughness * self.roughness;
        (2.0 / r2 - 2.0).clamp(SPECULAR_EXPONENT_RANGE.0, SPECULAR_EXPONENT_RANGE.1)
    }
}

/// Two families: dielectric (80%) and metallic (20%).
pub fn sample_material(seed: u64, roughness_threshold: f64) -> Result<MaterialParams> {
    if !(roughness_threshold > 0.0 && roughness_threshold <= 1.0) {
        return Err(Error::validation(
            "roughness_threshold",
            format!("{roughness_threshold} outside (0, 1]"),
        ));
    }
    let mut rng = seed::rng(seed);
    let roughness = rng.random_range(roughness_threshold * 0.25..=1.0);
    let metalness = if rng.random_bool(0.8) {
        0.0
    } else {
        rng.random_range(0.5..=1.0)
    };
    let specular_strength = rng.random_range(0.1..=0.9);
    Ok(MaterialParams {
        roughness,
        metalness,
        specular_strength,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GeometryProxy {
    Flat,
    /// Vertical-axis cylinder showing `arc_deg` degrees of its circumference.
    Cylinder { arc_deg: f64 },
    Box,
}

impl GeometryProxy {
    pub fn validate(&self) -> Result<()> {
        if let GeometryProxy::Cylinder { arc_deg } = *self {
            if !(arc_deg > 0.0 && arc_deg <= 180.0) {
                return Err(Error::validation("arc_deg", format!("{arc_deg} outside (0, 180]")));
            }
        }
        Ok(())
    }
}

/// Per-pixel unit normals, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<[f64; 3]>,
}

impl NormalMap {
    pub fn at(&self, x: usize, y: usize) -> [f64; 3] {
        self.normals[y * self.width + x]
    }
}

/// Normals under an orthographic camera; every normal depends on the column only.
pub fn normal_map(geometry: GeometryProxy, width: usize, height: usize) -> Result<NormalMap> {
    if width == 0 || height == 0 {
        return Err(Error::validation("dimensions", format!("{width}x{height} must be positive")));
    }
    geometry.validate()?;
    let row: Vec<[f64; 3]> = (0..width)
        .map(|u| {
            // Pixel-center coordinate in (0, 1).
            let t = (u as f64 + 0.5) / width as f64;
            let theta = match geometry {
                GeometryProxy::Flat => 0.0,
                GeometryProxy::Cylinder { arc_deg } => (t - 0.5) * arc_deg.to_radians(),
                GeometryProxy::Box => {
                    if t < BOX_CREASES.0 {
                        -BOX_TILT_DEG.to_radians()
                    } else if t > BOX_CREASES.1 {
                        BOX_TILT_DEG.to_radians()
                    } else {
                        0.0
                    }
                }
            };
            if theta == 0.0 {
                [0.0, 0.0, 1.0]
            } else {
                [theta.sin(), 0.0, theta.cos()]
            }
        })
        .collect();
    let mut normals = Vec::with_capacity(width * height);
    for _ in 0..height {
        normals.extend_from_slice(&row);
    }
    Ok(NormalMap {
        width,
        height,
        normals,
    })
}

pub fn tonemap(x: f64) -> f64 {
    (x / (1.0 + x)).clamp(0.0, 1.0)
}

/// Radiance before tonemapping. Values may exceed 1.
pub fn shade_linear(
    albedo: &AlbedoImage,
    normals: &NormalMap,
    env: &EnvironmentLight,
    material: &MaterialParams,
) -> Result<LinearImage> {
    if albedo.dims() != (normals.width, normals.height) {
        return Err(Error::Shape(format!(
            "albedo is {}x{} but normal map is {}x{}",
            albedo.width(),
            albedo.height(),
            normals.width,
            normals.height
        )));
    }
    env.validate()?;
    material.validate()?;

    let exponent = material.specular_exponent();
    let diffuse_scale = 1.0 - material.metalness * METAL_DIFFUSE_ATTENUATION;
    let view = [0.0, 0.0, 1.0];
    let halves: Vec<[f64; 3]> = env
        .lights
        .iter()
        .map(|l| normalize([l.direction[0] + view[0], l.direction[1] + view[1], l.direction[2] + view[2]]))
        .collect();

    let mut out = albedo.clone();
    for (px, n) in out.data_mut().chunks_exact_mut(3).zip(&normals.normals) {
        let a = [px[0] as f64, px[1] as f64, px[2] as f64];
        let mut irradiance = env.ambient;
        let mut highlight = [0.0; 3];
        for (light, half) in env.lights.iter().zip(&halves) {
            let cos = dot(*n, light.direction).max(0.0);
            let spec = dot(*n, *half).max(0.0).powf(exponent);
            for k in 0..3 {
                irradiance[k] += light.radiance[k] * cos;
                highlight[k] += light.radiance[k] * spec;
            }
        }
        for k in 0..3 {
            let diffuse = a[k] * irradiance[k] * diffuse_scale;
            let spec_color = (1.0 - material.metalness) + a[k] * material.metalness;
            let specular = material.specular_strength * highlight[k] * spec_color;
            px[k] = (diffuse + specular) as f32;
        }
    }
    Ok(out)
}

pub fn shade(
    albedo: &AlbedoImage,
    normals: &NormalMap,
    env: &EnvironmentLight,
    material: &MaterialParams,
) -> Result<LitImage> {
    let mut img = shade_linear(albedo, normals, env, material)?;
    for v in img.data_mut() {
        *v = tonemap(*v as f64) as f32;
    }
    Ok(img)
}

/// Everything needed to reproduce a render, minus the pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderProvenance {
    pub label_id: String,
    pub env_id: String,
    pub rotation_deg: f64,
    pub material: MaterialParams,
    pub geometry: GeometryProxy,
    pub render_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPair {
    pub lit: LitImage,
    pub albedo: AlbedoImage,
    pub provenance: RenderProvenance,
}

pub fn render_pair(
    label: (&LabelSpec, &AlbedoImage),
    env_pool: &[EnvironmentLight],
    render_seed: u64,
    roughness_threshold: f64,
) -> Result<RenderedPair> {
    let (spec, albedo) = label;
    if env_pool.is_empty() {
        return Err(Error::validation("env_pool", "must contain at least one environment"));
    }
    let mut rng = seed::rng(seed::stable_hash(&[spec.label_id.as_bytes(), &render_seed.to_le_bytes()]));
    let env = &env_pool[rng.random_range(0..env_pool.len())];
    let rotation = rng.random_range(0.0..360.0);
    let geometry = match rng.random_range(0..3u32) {
        0 => GeometryProxy::Flat,
        1 => GeometryProxy::Cylinder {
            arc_deg: rng.random_range(CYLINDER_ARC_RANGE.0..=CYLINDER_ARC_RANGE.1),
        },
        _ => GeometryProxy::Box,
    };
    let material = sample_material(rng.random(), roughness_threshold)?;

    let rotated = rotate_environment(env, rotation);
    let normals = normal_map(geometry, albedo.width(), albedo.height())?;
    let lit = shade(albedo, &normals, &rotated, &material)?;
    Ok(RenderedPair {
        lit,
        albedo: albedo.clone(),
        provenance: RenderProvenance {
            label_id: spec.label_id.clone(),
            env_id: env.env_id.clone(),
            rotation_deg: rotated.rotation_deg,
            material,
            geometry,
            render_seed,
        },
    })
}

/// Extracts an environment from an equirectangular panorama by median cut.
///
/// Pixel (u, v) maps to longitude `2π(u − ½)` and latitude `π(½ − v)`; the
/// panorama center looks back toward the camera (+z). The sphere is cut into
/// eight regions of equal energy; the per-channel floor of the region mean
/// radiances becomes the ambient term and each camera-facing region's energy
/// above that floor becomes one directional light at its energy centroid.
pub fn load_environment(path: &Path, env_id: &str) -> Result<EnvironmentLight> {
    let img = LinearImage::load(path)?;
    environment_from_panorama(&img, env_id)
}

struct Region {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

pub fn environment_from_panorama(img: &LinearImage, env_id: &str) -> Result<EnvironmentLight> {
    let (w, h) = img.dims();
    if w < 2 || h < 2 {
        return Err(Error::validation("panorama", format!("{w}x{h} is too small")));
    }
    let pixel_dir = |x: usize, y: usize| {
        let lon = std::f64::consts::TAU * ((x as f64 + 0.5) / w as f64 - 0.5);
        let lat = std::f64::consts::PI * (0.5 - (y as f64 + 0.5) / h as f64);
        [lat.cos() * lon.sin(), lat.sin(), lat.cos() * lon.cos()]
    };
    let d_omega = |y: usize| {
        let lat = std::f64::consts::PI * (0.5 - (y as f64 + 0.5) / h as f64);
        lat.cos() * (std::f64::consts::TAU / w as f64) * (std::f64::consts::PI / h as f64)
    };
    let energy = |x: usize, y: usize| {
        let p = img.pixel(x, y);
        (0.2126 * p[0] as f64 + 0.7152 * p[1] as f64 + 0.0722 * p[2] as f64) * d_omega(y)
    };

    let mut regions = vec![Region {
        x0: 0,
        x1: w,
        y0: 0,
        y1: h,
    }];
    for _ in 0..3 {
        let mut next = Vec::new();
        for r in regions {
            let mid_lat = std::f64::consts::PI * (0.5 - ((r.y0 + r.y1) as f64 / 2.0) / h as f64);
            let split_x = (r.x1 - r.x0) as f64 * mid_lat.cos().max(0.05) >= (r.y1 - r.y0) as f64 * 0.5;
            let (lo, hi) = if split_x { (r.x0, r.x1) } else { (r.y0, r.y1) };
            if hi - lo < 2 {
                next.push(r);
                continue;
            }
            let slice_energy = |i: usize| -> f64 {
                if split_x {
                    (r.y0..r.y1).map(|y| energy(i, y)).sum()
                } else {
                    (r.x0..r.x1).map(|x| energy(x, i)).sum()
                }
            };
            let slices: Vec<f64> = (lo..hi).map(slice_energy).collect();
            let total: f64 = slices.iter().sum();
            let mut acc = 0.0;
            let mut cut = lo + 1;
            for (i, e) in slices.iter().enumerate() {
                acc += e;
                if acc >= total / 2.0 {
                    cut = (lo + i + 1).clamp(lo + 1, hi - 1);
                    break;
                }
            }
            if split_x {
                next.push(Region { x1: cut, ..r });
                next.push(Region { x0: cut, ..r });
            } else {
                next.push(Region { y1: cut, ..r });
                next.push(Region { y0: cut, ..r });
            }
        }
        regions = next;
    }

    struct Summary {
        dir: [f64; 3],
        radiance_sum: [f64; 3],
        solid_angle: f64,
    }
    let summaries: Vec<Summary> = regions
        .iter()
        .map(|r| {
            let mut dir = [0.0; 3];
            let mut radiance_sum = [0.0; 3];
            let mut solid_angle = 0.0;
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    let dw = d_omega(y);
                    let p = img.pixel(x, y);
                    let e = energy(x, y) + 1e-12 * dw;
                    let d = pixel_dir(x, y);
                    for k in 0..3 {
                        dir[k] += d[k] * e;
                        radiance_sum[k] += p[k] as f64 * dw;
                    }
                    solid_angle += dw;
                }
            }
            Summary {
                dir,
                radiance_sum,
                solid_angle,
            }
        })
        .collect();

    let mut ambient = [f64::INFINITY; 3];
    for s in &summaries {
        for k in 0..3 {
            ambient[k] = ambient[k].min(s.radiance_sum[k] / s.solid_angle.max(1e-12));
        }
    }
    let mut lights = Vec::new();
    for s in &summaries {
        if norm(s.dir) == 0.0 {
            continue;
        }
        let dir = normalize(s.dir);
        if dir[2] <= 1e-3 {
            continue;
        }
        let radiance = [0, 1, 2].map(|k| ((s.radiance_sum[k] - ambient[k] * s.solid_angle) / std::f64::consts::PI).max(0.0));
        if radiance.iter().all(|v| *v == 0.0) {
            continue;
        }
        lights.push(DirectionalLight {
            direction: dir,
            radiance,
        });
    }
    lights.truncate(MAX_LIGHTS);
    let env = EnvironmentLight {
        env_id: env_id.to_string(),
        ambient: ambient.map(|a| if a.is_finite() { a.max(0.0) } else { 0.0 }),
        lights,
        rotation_deg: 0.0,
    };
    env.validate()?;
    Ok(env)
}
