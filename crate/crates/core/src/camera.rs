//! Pinhole depth rendering of box worlds via ray casting, plus the sensor
//! noise, invalid-pixel and mount-perturbation models.
//!
//! Camera frame convention: +x is the optical axis, +y points left in the
//! image, +z up. Pixels store z-depth (projection of the hit on the optical
//! axis), not Euclidean ray length. Sentinel 0.0 marks an invalid pixel.

use crate::error::{Error, Result};
use crate::math::{Pose, Quaternion, Vector3};
use crate::num::{real, Real};
use crate::rng;
use crate::world::{Obstacle, WorldSpec};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Value of a pixel with no measurement.
pub const INVALID: f64 = 0.0;

/// A rectangular grid of range values in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> DepthImage<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.get(x, y) != T::zero()
    }

    /// True exactly where the pixel is not the invalid sentinel.
    pub fn valid_mask(&self) -> Vec<bool> {
        self.data.iter().map(|&v| v != T::zero()).collect()
    }
}

/// Pinhole intrinsics with square pixels; focal length in pixels is derived
/// from the horizontal field of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub horizontal_fov_deg: f64,
    pub min_range: f64,
    pub max_range: f64,
}

impl CameraIntrinsics {
    pub fn new(width: usize, height: usize, horizontal_fov_deg: f64) -> Self {
        Self {
            width,
            height,
            horizontal_fov_deg,
            min_range: 0.2,
            max_range: 10.0,
        }
    }

    /// Desk-scale default: 160x120 at 87 degrees horizontal FOV.
    pub fn default_desk() -> Self {
        Self::new(160, 120, 87.0)
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        self.width as f64 / (2.0 * (self.horizontal_fov_deg.to_radians() / 2.0).tan())
    }
}

/// Depth-dependent Gaussian noise plus Bernoulli pixel dropout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorNoiseParams {
    /// Base standard deviation in meters.
    pub sigma0: f64,
    /// Additional standard deviation per meter of depth.
    pub sigma_slope: f64,
    /// Probability that a pixel is dropped as invalid.
    pub p_invalid: f64,
}

impl Default for SensorNoiseParams {
    fn default() -> Self {
        Self {
            sigma0: 0.01,
            sigma_slope: 0.004,
            p_invalid: 0.02,
        }
    }
}

impl SensorNoiseParams {
    pub fn none() -> Self {
        Self {
            sigma0: 0.0,
            sigma_slope: 0.0,
            p_invalid: 0.0,
        }
    }
}

/// Ray/OBB intersection in the obstacle's local frame. The ray direction is
/// unnormalized with unit optical-axis component, so the returned parameter
/// is directly the z-depth of the entry point.
fn ray_obb_entry<T: Real>(origin: Vector3<T>, dir: Vector3<T>, o: &Obstacle<T>) -> Option<T> {
    let lo = o.orientation.rotate_inv(origin - o.center);
    let ld = o.orientation.rotate_inv(dir);
    let mut t_near = T::neg_infinity();
    let mut t_far = T::infinity();
    for a in 0..3 {
        let h = o.half_extents[a];
        if ld[a].abs() < real(1e-12) {
            if lo[a].abs() > h {
                return None;
            }
        } else {
            let inv = T::one() / ld[a];
            let mut t0 = (-h - lo[a]) * inv;
            let mut t1 = (h - lo[a]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_near = t_near.max(t0);
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
    }
    if t_far < T::zero() {
        return None;
    }
    Some(t_near.max(T::zero()))
}

/// Exit parameter of a ray from inside an axis-aligned room.
fn ray_room_exit<T: Real>(origin: Vector3<T>, dir: Vector3<T>, lo: Vector3<T>, hi: Vector3<T>) -> T {
    let mut t_exit = T::infinity();
    for a in 0..3 {
        if dir[a].abs() < real(1e-12) {
            continue;
        }
        let inv = T::one() / dir[a];
        let t0 = (lo[a] - origin[a]) * inv;
        let t1 = (hi[a] - origin[a]) * inv;
        t_exit = t_exit.min(t0.max(t1));
    }
    t_exit
}

/// Render obstacles with optional room walls. `room = None` gives an
/// unbounded scene where misses saturate at max range.
pub fn render_scene<T: Real>(
    obstacles: &[Obstacle<T>],
    room: Option<(Vector3<T>, Vector3<T>)>,
    camera_pose: Pose<T>,
    intr: &CameraIntrinsics,
) -> DepthImage<T> {
    let f = real::<T>(intr.focal());
    let cx = real::<T>(intr.width as f64 / 2.0);
    let cy = real::<T>(intr.height as f64 / 2.0);
    let half = real::<T>(0.5);
    let max_range = real::<T>(intr.max_range);
    let min_range = real::<T>(intr.min_range);
    let origin = camera_pose.position;
    let q = camera_pose.orientation;

    let mut img = DepthImage::filled(intr.width, intr.height, T::zero());
    for v in 0..intr.height {
        for u in 0..intr.width {
            // Unit forward component: the ray parameter equals z-depth.
            let dy = (cx - (real::<T>(u as f64) + half)) / f;
            let dz = (cy - (real::<T>(v as f64) + half)) / f;
            let dir = q.rotate(Vector3::new(T::one(), dy, dz));

            let mut depth = match room {
                Some((lo, hi)) => ray_room_exit(origin, dir, lo, hi),
                None => T::infinity(),
            };
            for o in obstacles {
                if let Some(t) = ray_obb_entry(origin, dir, o) {
                    depth = depth.min(t);
                }
            }

            let value = if depth > max_range {
                max_range
            } else if depth < min_range {
                T::zero()
            } else {
                depth
            };
            img.set(u, v, value);
        }
    }
    img
}

/// Render a generated world; its walls bound every ray.
pub fn render_depth<T: Real>(
    world: &WorldSpec<T>,
    camera_pose: Pose<T>,
    intr: &CameraIntrinsics,
) -> DepthImage<T> {
    render_scene(
        &world.obstacles,
        Some((world.room_min(), world.room_max())),
        camera_pose,
        intr,
    )
}

/// Perturb valid pixels with N(0, (sigma0 + sigma_slope * d)^2), clamp back
/// into the sensor range, then drop pixels with probability `p_invalid`.
pub fn apply_sensor_noise<T: Real>(
    img: &DepthImage<T>,
    p: &SensorNoiseParams,
    intr: &CameraIntrinsics,
    seed: u64,
) -> DepthImage<T> {
    let mut r = rng::stream(seed, 0x6e_6f_69_73_65); // "noise"
    let mut out = img.clone();
    for px in out.data.iter_mut() {
        if *px == T::zero() {
            continue;
        }
        let d = px.to_f64_lossy();
        if p.sigma0 > 0.0 || p.sigma_slope > 0.0 {
            let sigma = p.sigma0 + p.sigma_slope * d;
            let noisy = (d + sigma * rng::standard_normal(&mut r))
                .clamp(intr.min_range, intr.max_range);
            *px = real(noisy);
        }
        if p.p_invalid > 0.0 && r.gen_bool(p.p_invalid) {
            *px = T::zero();
        }
    }
    out
}

/// Bounds of the random camera mounting error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MountPerturbation {
    pub max_translation_m: f64,
    pub max_rotation_deg: f64,
}

impl Default for MountPerturbation {
    fn default() -> Self {
        Self {
            max_translation_m: 0.05,
            max_rotation_deg: 3.0,
        }
    }
}

/// Offset a mount pose by uniform per-axis translation and Euler rotation
/// errors within the configured bounds.
pub fn perturb_camera_mount<T: Real>(
    base_mount: Pose<T>,
    p: &MountPerturbation,
    seed: u64,
) -> Pose<T> {
    let mut r = rng::stream(seed, 0x6d_6f_75_6e_74); // "mount"
    let mut draw = |lim: f64| -> T {
        if lim == 0.0 {
            T::zero()
        } else {
            real(r.gen_range(-lim..=lim))
        }
    };
    let dt = Vector3::new(
        draw(p.max_translation_m),
        draw(p.max_translation_m),
        draw(p.max_translation_m),
    );
    let rl = p.max_rotation_deg.to_radians();
    let dq = Quaternion::from_euler(draw(rl), draw(rl), draw(rl));
    base_mount.compose(Pose::new(dt, dq))
}

const RASTER_MAGIC: &[u8; 4] = b"LNDR";

/// Write the binary raster format: 16-byte header (magic, width, height,
/// reserved), then row-major little-endian f32 values.
pub fn write_raster<T: Real, W: Write>(img: &DepthImage<T>, mut w: W) -> Result<()> {
    w.write_all(RASTER_MAGIC)?;
    w.write_all(&(img.width as u32).to_le_bytes())?;
    w.write_all(&(img.height as u32).to_le_bytes())?;
    w.write_all(&[0u8; 4])?;
    for &v in &img.data {
        w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_raster<T: Real, R: Read>(mut r: R) -> Result<DepthImage<T>> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[0..4] != RASTER_MAGIC {
        return Err(Error::format("raster", "bad magic"));
    }
    let width = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut data = Vec::with_capacity(width * height);
    let mut buf = [0u8; 4];
    for _ in 0..width * height {
        r.read_exact(&mut buf)?;
        data.push(real(f32::from_le_bytes(buf) as f64));
    }
    Ok(DepthImage {
        width,
        height,
        data,
    })
}

pub fn save_raster<T: Real>(img: &DepthImage<T>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_raster(img, std::io::BufWriter::new(file))
}

pub fn load_raster<T: Real>(path: &Path) -> Result<DepthImage<T>> {
    let file = std::fs::File::open(path)?;
    read_raster(std::io::BufReader::new(file))
}

/// Import a user-supplied 16-bit grayscale PNG holding millimeter depths;
/// zero stays the invalid sentinel.
pub fn load_depth_png16<T: Real>(path: &Path) -> Result<DepthImage<T>> {
    let img = image::open(path).map_err(|e| Error::Image(e.to_string()))?;
    let gray = img.into_luma16();
    let (width, height) = (gray.width() as usize, gray.height() as usize);
    let data = gray
        .pixels()
        .map(|p| real(p.0[0] as f64 / 1000.0))
        .collect();
    Ok(DepthImage {
        width,
        height,
        data,
    })
}
