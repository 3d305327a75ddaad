//! Robot-size-aware remapping of depth images into "collision images".
//!
//! Each output pixel is the minimum source depth over the neighborhood that
//! the robot's width/height would occupy when projected at that pixel's
//! depth, reduced by half the robot depth. The result is obstacle inflation
//! in image space: a pixel is the nearest range at which the robot center
//! can still sit without the box clipping whatever the window sees.
//!
//! Two implementations ship: a naive per-pixel double loop (the oracle) and
//! a row sparse-table version. Both reduce with `min`, which is exact and
//! order-invariant for floats, so the outputs are bitwise identical.

use crate::camera::{CameraIntrinsics, DepthImage};
use crate::num::{real, Real};
use crate::world::RobotBox;
use std::ops::Deref;

/// A depth image remapped for the robot size. Same dimensions and invalid
/// sentinel as the source.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionImage<T>(pub DepthImage<T>);

impl<T> Deref for CollisionImage<T> {
    type Target = DepthImage<T>;
    fn deref(&self) -> &DepthImage<T> {
        &self.0
    }
}

/// Which min-filter implementation to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// Per-pixel double loop; the reference the optimized path is checked
    /// against.
    Naive,
    /// Row-wise sparse tables; O(window height) per pixel.
    Rmq,
}

/// True exactly where the pixel is not the invalid sentinel.
pub fn valid_mask<T: Real>(img: &DepthImage<T>) -> Vec<bool> {
    img.valid_mask()
}

/// Pixel half-extent of a physical half-size projected at depth `d`.
fn window_radius(focal: f64, half_size: f64, d: f64) -> usize {
    (focal * half_size / d).round() as usize
}

/// Remap with the robot's default axial clearance of half its depth.
pub fn collision_image<T: Real>(
    img: &DepthImage<T>,
    intr: &CameraIntrinsics,
    robot: &RobotBox<T>,
    mode: FilterMode,
) -> CollisionImage<T> {
    let offset = robot.depth * real(0.5);
    collision_image_with_offset(img, intr, robot, offset, mode)
}

/// Remap with an explicit axial clearance subtracted from the window
/// minimum (config scalar; half the robot depth by default).
pub fn collision_image_with_offset<T: Real>(
    img: &DepthImage<T>,
    intr: &CameraIntrinsics,
    robot: &RobotBox<T>,
    axial_offset: T,
    mode: FilterMode,
) -> CollisionImage<T> {
    match mode {
        FilterMode::Naive => naive_filter(img, intr, robot, axial_offset),
        FilterMode::Rmq => rmq_filter(img, intr, robot, axial_offset),
    }
}

fn naive_filter<T: Real>(
    img: &DepthImage<T>,
    intr: &CameraIntrinsics,
    robot: &RobotBox<T>,
    axial_offset: T,
) -> CollisionImage<T> {
    let f = intr.focal();
    let half_w = robot.width.to_f64_lossy() / 2.0;
    let half_h = robot.height.to_f64_lossy() / 2.0;
    let min_range = real::<T>(intr.min_range);
    let (w, h) = (img.width, img.height);
    let mut out = DepthImage::filled(w, h, T::zero());

    for v in 0..h {
        for u in 0..w {
            let center = img.get(u, v);
            // Invalid pixels still get a window; its size is taken at max
            // range since the true depth is unknown.
            let d = if center == T::zero() {
                intr.max_range
            } else {
                center.to_f64_lossy()
            };
            let ku = window_radius(f, half_w, d);
            let kv = window_radius(f, half_h, d);

            let u_lo = u.saturating_sub(ku);
            let u_hi = (u + ku).min(w - 1);
            let v_lo = v.saturating_sub(kv);
            let v_hi = (v + kv).min(h - 1);

            let mut m = T::infinity();
            for vv in v_lo..=v_hi {
                for uu in u_lo..=u_hi {
                    let s = img.get(uu, vv);
                    if s != T::zero() {
                        m = m.min(s);
                    }
                }
            }
            if m.is_finite() {
                out.set(u, v, (m - axial_offset).max(min_range));
            }
        }
    }
    CollisionImage(out)
}

/// Sparse table (range-minimum query) per image row. Invalid pixels enter
/// as +inf so they never contribute a minimum.
struct RowRmq<T> {
    width: usize,
    levels: usize,
    /// table[level][row * width + col] = min of 2^level pixels from col.
    table: Vec<Vec<T>>,
}

impl<T: Real> RowRmq<T> {
    fn build(img: &DepthImage<T>) -> Self {
        let (w, h) = (img.width, img.height);
        let levels = (usize::BITS - w.leading_zeros()) as usize; // floor(log2(w)) + 1
        let mut table = Vec::with_capacity(levels);
        let base: Vec<T> = img
            .data
            .iter()
            .map(|&v| if v == T::zero() { T::infinity() } else { v })
            .collect();
        table.push(base);
        for lvl in 1..levels {
            let span = 1usize << lvl;
            let prev = &table[lvl - 1];
            let mut cur = vec![T::infinity(); w * h];
            for row in 0..h {
                let off = row * w;
                for col in 0..=w.saturating_sub(span) {
                    cur[off + col] = prev[off + col].min(prev[off + col + span / 2]);
                }
            }
            table.push(cur);
        }
        Self {
            width: w,
            levels,
            table,
        }
    }

    #[inline]
    fn row_min(&self, row: usize, lo: usize, hi: usize) -> T {
        let len = hi - lo + 1;
        let lvl = (usize::BITS - 1 - (len as usize).leading_zeros()) as usize;
        let lvl = lvl.min(self.levels - 1);
        let off = row * self.width;
        let a = self.table[lvl][off + lo];
        let b = self.table[lvl][off + hi + 1 - (1 << lvl)];
        a.min(b)
    }
}

fn rmq_filter<T: Real>(
    img: &DepthImage<T>,
    intr: &CameraIntrinsics,
    robot: &RobotBox<T>,
    axial_offset: T,
) -> CollisionImage<T> {
    let f = intr.focal();
    let half_w = robot.width.to_f64_lossy() / 2.0;
    let half_h = robot.height.to_f64_lossy() / 2.0;
    let min_range = real::<T>(intr.min_range);
    let (w, h) = (img.width, img.height);
    let rmq = RowRmq::build(img);
    let mut out = DepthImage::filled(w, h, T::zero());

    for v in 0..h {
        for u in 0..w {
            let center = img.get(u, v);
            let d = if center == T::zero() {
                intr.max_range
            } else {
                center.to_f64_lossy()
            };
            let ku = window_radius(f, half_w, d);
            let kv = window_radius(f, half_h, d);

            let u_lo = u.saturating_sub(ku);
            let u_hi = (u + ku).min(w - 1);
            let v_lo = v.saturating_sub(kv);
            let v_hi = (v + kv).min(h - 1);

            let mut m = T::infinity();
            for vv in v_lo..=v_hi {
                m = m.min(rmq.row_min(vv, u_lo, u_hi));
            }
            if m.is_finite() {
                out.set(u, v, (m - axial_offset).max(min_range));
            }
        }
    }
    CollisionImage(out)
}
