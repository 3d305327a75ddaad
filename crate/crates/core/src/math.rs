//! Small fixed-size linear algebra: 3-vectors and unit quaternions.

use crate::num::{real, Real};
use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Div, Index, IndexMut, Mul, Neg, Sub};

/// A 3-vector of scalars.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vector3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vector3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zeros() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn splat(v: T) -> Self {
        Self::new(v, v, v)
    }

    pub fn unit_x() -> Self {
        Self::new(T::one(), T::zero(), T::zero())
    }

    pub fn dot(self, rhs: Self) -> T {
        self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    pub fn cross(self, rhs: Self) -> Self {
        Self::new(
            self.y * rhs.z - self.z * rhs.y,
            self.z * rhs.x - self.x * rhs.z,
            self.x * rhs.y - self.y * rhs.x,
        )
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n == T::zero() {
            Self::zeros()
        } else {
            self / n
        }
    }

    pub fn abs(self) -> Self {
        Self::new(self.x.abs(), self.y.abs(), self.z.abs())
    }

    pub fn component_min(self, rhs: Self) -> Self {
        Self::new(self.x.min(rhs.x), self.y.min(rhs.y), self.z.min(rhs.z))
    }

    pub fn component_max(self, rhs: Self) -> Self {
        Self::new(self.x.max(rhs.x), self.y.max(rhs.y), self.z.max(rhs.z))
    }

    pub fn max_component(self) -> T {
        self.x.max(self.y).max(self.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl<T: Real> Index<usize> for Vector3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vector3 index {i} out of range"),
        }
    }
}

impl<T: Real> IndexMut<usize> for Vector3<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        match i {
            0 => &mut self.x,
            1 => &mut self.y,
            2 => &mut self.z,
            _ => panic!("Vector3 index {i} out of range"),
        }
    }
}

impl<T: Real> Add for Vector3<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl<T: Real> AddAssign for Vector3<T> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<T: Real> Sub for Vector3<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl<T: Real> Neg for Vector3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vector3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Div<T> for Vector3<T> {
    type Output = Self;
    fn div(self, s: T) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

/// A quaternion `w + xi + yj + zk`; unit-norm when used as a rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Quaternion<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn from_axis_angle(axis: Vector3<T>, angle: T) -> Self {
        let half = angle * real::<T>(0.5);
        let (s, c) = (half.sin(), half.cos());
        let a = axis.normalized();
        Self::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn from_yaw(yaw: T) -> Self {
        Self::from_axis_angle(Vector3::new(T::zero(), T::zero(), T::one()), yaw)
    }

    /// Intrinsic Z-Y-X (yaw, pitch, roll) composition.
    pub fn from_euler(roll: T, pitch: T, yaw: T) -> Self {
        let qz = Self::from_axis_angle(Vector3::new(T::zero(), T::zero(), T::one()), yaw);
        let qy = Self::from_axis_angle(Vector3::new(T::zero(), T::one(), T::zero()), pitch);
        let qx = Self::from_axis_angle(Vector3::new(T::one(), T::zero(), T::zero()), roll);
        (qz * qy * qx).normalized()
    }

    pub fn norm(self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Rotate a vector by this (unit) quaternion.
    pub fn rotate(self, v: Vector3<T>) -> Vector3<T> {
        let u = Vector3::new(self.x, self.y, self.z);
        let two = real::<T>(2.0);
        let t = u.cross(v) * two;
        v + t * self.w + u.cross(t)
    }

    /// Inverse rotation (world -> local for a local -> world quaternion).
    pub fn rotate_inv(self, v: Vector3<T>) -> Vector3<T> {
        self.conjugate().rotate(v)
    }

    /// Yaw (rotation about +z) of the Z-Y-X Euler decomposition.
    pub fn yaw(self) -> T {
        let two = real::<T>(2.0);
        let siny = two * (self.w * self.z + self.x * self.y);
        let cosy = T::one() - two * (self.y * self.y + self.z * self.z);
        siny.atan2(cosy)
    }

    /// (roll, pitch, yaw) of the Z-Y-X Euler decomposition.
    pub fn euler(self) -> (T, T, T) {
        let two = real::<T>(2.0);
        let sinr = two * (self.w * self.x + self.y * self.z);
        let cosr = T::one() - two * (self.x * self.x + self.y * self.y);
        let roll = sinr.atan2(cosr);
        let sinp = two * (self.w * self.y - self.z * self.x);
        let pitch = if sinp.abs() >= T::one() {
            T::FRAC_PI_2() * sinp.signum()
        } else {
            sinp.asin()
        };
        (roll, pitch, self.yaw())
    }
}

impl<T: Real> Mul for Quaternion<T> {
    type Output = Self;
    fn mul(self, r: Self) -> Self {
        Self::new(
            self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        )
    }
}

/// A rigid pose: translation plus rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    pub position: Vector3<T>,
    pub orientation: Quaternion<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(position: Vector3<T>, orientation: Quaternion<T>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), Quaternion::identity())
    }

    /// Compose: `self` then `local` expressed in `self`'s frame.
    pub fn compose(self, local: Pose<T>) -> Self {
        Self::new(
            self.position + self.orientation.rotate(local.position),
            (self.orientation * local.orientation).normalized(),
        )
    }

    /// Map a point from this pose's local frame to the world frame.
    pub fn transform_point(self, p: Vector3<T>) -> Vector3<T> {
        self.position + self.orientation.rotate(p)
    }

    /// Map a world point into this pose's local frame.
    pub fn inverse_transform_point(self, p: Vector3<T>) -> Vector3<T> {
        self.orientation.rotate_inv(p - self.position)
    }
}
