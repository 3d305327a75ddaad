//! Procedural room worlds: bounded rooms filled with randomized box
//! obstacles, one obstacle per curriculum level, plus collision queries.
//!
//! Levels 1..=5 place wall-like panels spanning most of the room
//! cross-section with a guaranteed traversable gap; higher levels add small
//! boxes comparable to the robot scale. Obstacles float (gravity is not
//! applied), so placement ignores support.

use crate::error::{Error, Result};
use crate::math::{Pose, Quaternion, Vector3};
use crate::num::{real, Real};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A posed box obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle<T> {
    pub center: Vector3<T>,
    pub half_extents: Vector3<T>,
    pub orientation: Quaternion<T>,
}

/// The robot collision model: a box of depth x width x height meters,
/// axis-aligned with the vehicle frame (yaw only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotBox<T> {
    pub depth: T,
    pub width: T,
    pub height: T,
}

impl<T: Real> RobotBox<T> {
    pub fn new(depth: T, width: T, height: T) -> Self {
        Self {
            depth,
            width,
            height,
        }
    }

    /// 0.43 x 0.43 x 0.25 m. The height is a documented config value; the
    /// platform's published dimension is its 0.43 m diameter.
    pub fn default_platform() -> Self {
        Self::new(real(0.43), real(0.43), real(0.25))
    }

    pub fn half_extents(&self) -> Vector3<T> {
        let half = real::<T>(0.5);
        Vector3::new(self.depth * half, self.width * half, self.height * half)
    }
}

/// A generated room at some curriculum level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec<T> {
    /// Room dimensions (L, W, H); the interior is the axis-aligned box
    /// centered at the origin.
    pub room_dims: Vector3<T>,
    pub obstacles: Vec<Obstacle<T>>,
    pub level: u32,
    pub seed: u64,
}

impl<T: Real> WorldSpec<T> {
    pub fn room_min(&self) -> Vector3<T> {
        self.room_dims * real::<T>(-0.5)
    }

    pub fn room_max(&self) -> Vector3<T> {
        self.room_dims * real::<T>(0.5)
    }

    pub fn contains_point(&self, p: Vector3<T>) -> bool {
        let lo = self.room_min();
        let hi = self.room_max();
        p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z
    }
}

/// Tunables for world generation. All distances in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldGenConfig {
    pub room_length: (f64, f64),
    pub room_width: (f64, f64),
    pub room_height: (f64, f64),
    /// Levels up to this count place panels; beyond it, small boxes.
    pub panel_levels: u32,
    pub panel_thickness: f64,
    /// Panels span at least this fraction of the room cross-section.
    pub panel_min_span_frac: f64,
    /// Minimum traversable gap left by a panel.
    pub panel_gap_min: f64,
    pub panel_max_yaw_deg: f64,
    pub small_half_extent: (f64, f64),
    pub placement_retries: usize,
}

impl Default for WorldGenConfig {
    fn default() -> Self {
        Self {
            room_length: (8.0, 12.0),
            room_width: (5.0, 8.0),
            room_height: (4.0, 6.0),
            panel_levels: 5,
            panel_thickness: 0.1,
            panel_min_span_frac: 0.6,
            // 2 * max(W_R, H_R) for the default robot box.
            panel_gap_min: 0.86,
            panel_max_yaw_deg: 10.0,
            small_half_extent: (0.15, 0.6),
            placement_retries: 200,
        }
    }
}

fn uniform<T: Real>(rng: &mut rng::Stream, lo: f64, hi: f64) -> T {
    real(rng.gen_range(lo..=hi))
}

/// Generate a room with exactly `level` obstacles. Pure in (level, config,
/// seed): identical inputs give identical output.
pub fn generate_world<T: Real>(level: u32, config: &WorldGenConfig, seed: u64) -> WorldSpec<T> {
    let mut r = rng::stream(seed, 0x77_6f_72_6c_64); // "world"
    let room_dims = Vector3::new(
        uniform::<T>(&mut r, config.room_length.0, config.room_length.1),
        uniform::<T>(&mut r, config.room_width.0, config.room_width.1),
        uniform::<T>(&mut r, config.room_height.0, config.room_height.1),
    );

    let n_panels = level.min(config.panel_levels);
    let n_small = level - n_panels;
    let mut obstacles = Vec::with_capacity(level as usize);

    let length = room_dims.x.to_f64_lossy();
    // Panels are spread across evenly sized slots along the room length so
    // consecutive panels cannot stack into an untraversable block.
    let usable = length - 2.0;
    for i in 0..n_panels {
        let slot = usable / n_panels.max(1) as f64;
        let x_lo = -length / 2.0 + 1.0 + i as f64 * slot;
        let x = r.gen_range(x_lo..=x_lo + slot);

        // Gap axis: y (lateral opening) or z (over/under opening).
        let gap_on_y = r.gen_bool(0.5);
        let cross = if gap_on_y { room_dims.y } else { room_dims.z }.to_f64_lossy();
        let gap_hi = (1.0 - config.panel_min_span_frac) * cross;
        let gap = r.gen_range(config.panel_gap_min..=gap_hi.max(config.panel_gap_min));
        let low_side = r.gen_bool(0.5);
        let span = cross - gap;
        let offset = if low_side { -gap / 2.0 } else { gap / 2.0 };

        let yaw_lim = config.panel_max_yaw_deg.to_radians();
        let yaw: T = uniform(&mut r, -yaw_lim, yaw_lim);

        let ht = config.panel_thickness / 2.0;
        let (center, half) = if gap_on_y {
            (
                Vector3::new(real(x), real(offset), T::zero()),
                Vector3::new(real(ht), real(span / 2.0), room_dims.z * real(0.5)),
            )
        } else {
            (
                Vector3::new(real(x), T::zero(), real(offset)),
                Vector3::new(real(ht), room_dims.y * real(0.5), real(span / 2.0)),
            )
        };
        obstacles.push(Obstacle {
            center,
            half_extents: half,
            orientation: Quaternion::from_yaw(yaw),
        });
    }

    for _ in 0..n_small {
        let he = Vector3::new(
            uniform::<T>(&mut r, config.small_half_extent.0, config.small_half_extent.1),
            uniform::<T>(&mut r, config.small_half_extent.0, config.small_half_extent.1),
            uniform::<T>(&mut r, config.small_half_extent.0, config.small_half_extent.1),
        );
        let margin = he.max_component().to_f64_lossy() + 0.05;
        let mut c = Vector3::zeros();
        for axis in 0..3 {
            let half = room_dims[axis].to_f64_lossy() / 2.0 - margin;
            c[axis] = uniform(&mut r, -half, half);
        }
        let pi = std::f64::consts::PI;
        let (roll, pitch, yaw): (T, T, T) = (
            uniform(&mut r, -pi, pi),
            uniform(&mut r, -pi, pi),
            uniform(&mut r, -pi, pi),
        );
        obstacles.push(Obstacle {
            center: c,
            half_extents: he,
            orientation: Quaternion::from_euler(roll, pitch, yaw),
        });
    }

    WorldSpec {
        room_dims,
        obstacles,
        level,
        seed,
    }
}

/// Separating-axis test for two oriented boxes.
pub fn obb_overlap<T: Real>(
    c_a: Vector3<T>,
    h_a: Vector3<T>,
    q_a: Quaternion<T>,
    c_b: Vector3<T>,
    h_b: Vector3<T>,
    q_b: Quaternion<T>,
) -> bool {
    let axes_a: [Vector3<T>; 3] = [
        q_a.rotate(Vector3::new(T::one(), T::zero(), T::zero())),
        q_a.rotate(Vector3::new(T::zero(), T::one(), T::zero())),
        q_a.rotate(Vector3::new(T::zero(), T::zero(), T::one())),
    ];
    let axes_b: [Vector3<T>; 3] = [
        q_b.rotate(Vector3::new(T::one(), T::zero(), T::zero())),
        q_b.rotate(Vector3::new(T::zero(), T::one(), T::zero())),
        q_b.rotate(Vector3::new(T::zero(), T::zero(), T::one())),
    ];
    let d = c_b - c_a;
    let ha = h_a.to_array();
    let hb = h_b.to_array();

    let separated = |axis: Vector3<T>| -> bool {
        let len2 = axis.dot(axis);
        if len2 < real(1e-12) {
            return false; // degenerate cross product, skip
        }
        let mut ra = T::zero();
        let mut rb = T::zero();
        for i in 0..3 {
            ra = ra + (axes_a[i].dot(axis)).abs() * ha[i];
            rb = rb + (axes_b[i].dot(axis)).abs() * hb[i];
        }
        d.dot(axis).abs() > ra + rb
    };

    for axis in axes_a {
        if separated(axis) {
            return false;
        }
    }
    for axis in axes_b {
        if separated(axis) {
            return false;
        }
    }
    for a in axes_a {
        for b in axes_b {
            if separated(a.cross(b)) {
                return false;
            }
        }
    }
    true
}

/// The robot's oriented box at a pose. Only the yaw of the pose is applied;
/// roll and pitch stay small under the tilt model and are ignored for
/// collision purposes.
pub fn robot_obb<T: Real>(pose: Pose<T>, robot: &RobotBox<T>) -> (Vector3<T>, Vector3<T>, Quaternion<T>) {
    (
        pose.position,
        robot.half_extents(),
        Quaternion::from_yaw(pose.orientation.yaw()),
    )
}

/// True iff the robot box at `pose` overlaps any obstacle or pokes out of
/// the room interior.
pub fn check_collision<T: Real>(world: &WorldSpec<T>, pose: Pose<T>, robot: &RobotBox<T>) -> bool {
    let (c, h, q) = robot_obb(pose, robot);

    // World-space AABB of the yaw-rotated robot box against the room walls.
    let yaw = q.yaw();
    let (s, co) = (yaw.sin().abs(), yaw.cos().abs());
    let ext = Vector3::new(h.x * co + h.y * s, h.x * s + h.y * co, h.z);
    let lo = world.room_min();
    let hi = world.room_max();
    if c.x - ext.x < lo.x
        || c.x + ext.x > hi.x
        || c.y - ext.y < lo.y
        || c.y + ext.y > hi.y
        || c.z - ext.z < lo.z
        || c.z + ext.z > hi.z
    {
        return true;
    }

    world
        .obstacles
        .iter()
        .any(|o| obb_overlap(c, h, q, o.center, o.half_extents, o.orientation))
}

/// Sample a collision-free start/goal pair in the opposite end-thirds of the
/// room along its longest axis, at least half the room length apart.
pub fn sample_start_goal<T: Real>(
    world: &WorldSpec<T>,
    robot: &RobotBox<T>,
    seed: u64,
) -> Result<(Vector3<T>, Vector3<T>)> {
    let mut r = rng::stream(seed, 0x73_67); // "sg"
    let axis = {
        let d = world.room_dims;
        if d.x >= d.y && d.x >= d.z {
            0
        } else if d.y >= d.z {
            1
        } else {
            2
        }
    };
    let length = world.room_dims[axis].to_f64_lossy();
    let he = robot.half_extents();
    let retries = 500;

    let sample_in = |r: &mut rng::Stream, lo_frac: f64, hi_frac: f64| -> Vector3<T> {
        let mut p = Vector3::zeros();
        for a in 0..3 {
            let dim = world.room_dims[a].to_f64_lossy();
            // Generous wall clearance so a freshly spawned (or hovering)
            // robot is never a single control step away from contact; the
            // vertical margin is wider still so start and goal always sit
            // in a flight corridor away from floor and ceiling.
            let margin = he[a].to_f64_lossy() + if a == 2 { 0.65 } else { 0.30 };
            let (lo, hi) = if a == axis {
                (-dim / 2.0 + dim * lo_frac, -dim / 2.0 + dim * hi_frac)
            } else {
                (-dim / 2.0, dim / 2.0)
            };
            p[a] = uniform(r, (lo + margin).min(hi - margin), (hi - margin).max(lo + margin));
        }
        p
    };

    let free = |p: Vector3<T>| {
        !check_collision(
            world,
            Pose::new(p, Quaternion::identity()),
            robot,
        )
    };

    for _ in 0..retries {
        let start = sample_in(&mut r, 0.0, 1.0 / 3.0);
        let goal = sample_in(&mut r, 2.0 / 3.0, 1.0);
        if !free(start) || !free(goal) {
            continue;
        }
        if (goal - start).norm().to_f64_lossy() < 0.5 * length {
            continue;
        }
        return Ok((start, goal));
    }
    Err(Error::PlacementFailed { retries })
}

/// Serialize to the textual replay format: one key-value line per field,
/// one `obstacle` record per obstacle.
pub fn to_text<T: Real>(world: &WorldSpec<T>) -> String {
    let mut s = String::new();
    s.push_str("latnav-world v1\n");
    s.push_str(&format!("seed {}\n", world.seed));
    s.push_str(&format!("level {}\n", world.level));
    s.push_str(&format!(
        "room {} {} {}\n",
        world.room_dims.x.to_f64_lossy(),
        world.room_dims.y.to_f64_lossy(),
        world.room_dims.z.to_f64_lossy()
    ));
    for o in &world.obstacles {
        s.push_str(&format!(
            "obstacle {} {} {} {} {} {} {} {} {} {}\n",
            o.center.x.to_f64_lossy(),
            o.center.y.to_f64_lossy(),
            o.center.z.to_f64_lossy(),
            o.half_extents.x.to_f64_lossy(),
            o.half_extents.y.to_f64_lossy(),
            o.half_extents.z.to_f64_lossy(),
            o.orientation.w.to_f64_lossy(),
            o.orientation.x.to_f64_lossy(),
            o.orientation.y.to_f64_lossy(),
            o.orientation.z.to_f64_lossy()
        ));
    }
    s
}

/// Parse the textual format produced by [`to_text`].
pub fn from_text<T: Real>(text: &str) -> Result<WorldSpec<T>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != "latnav-world v1" {
        return Err(Error::format("world file", format!("bad header {header:?}")));
    }
    let mut seed = 0u64;
    let mut level = 0u32;
    let mut room_dims = Vector3::zeros();
    let mut obstacles = Vec::new();
    for line in lines {
        let mut parts = line.split_whitespace();
        let key = match parts.next() {
            Some(k) => k,
            None => continue,
        };
        let nums: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|e| Error::format("world file", format!("{line:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        match key {
            "seed" => seed = nums[0] as u64,
            "level" => level = nums[0] as u32,
            "room" => room_dims = Vector3::new(real(nums[0]), real(nums[1]), real(nums[2])),
            "obstacle" => {
                if nums.len() != 10 {
                    return Err(Error::format("world file", format!("short record {line:?}")));
                }
                obstacles.push(Obstacle {
                    center: Vector3::new(real(nums[0]), real(nums[1]), real(nums[2])),
                    half_extents: Vector3::new(real(nums[3]), real(nums[4]), real(nums[5])),
                    orientation: Quaternion::new(
                        real(nums[6]),
                        real(nums[7]),
                        real(nums[8]),
                        real(nums[9]),
                    ),
                });
            }
            other => return Err(Error::format("world file", format!("unknown key {other:?}"))),
        }
    }
    Ok(WorldSpec {
        room_dims,
        obstacles,
        level,
        seed,
    })
}
