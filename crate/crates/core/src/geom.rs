//! Planar vectors, poses and oriented rectangles.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    /// Unit vector pointing along `angle` (radians, counter-clockwise from +x).
    pub fn from_angle(angle: f64) -> Self {
        Vec2::new(angle.cos(), angle.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Position plus heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub pos: Vec2,
    pub heading: f64,
}

impl Pose {
    pub const IDENTITY: Pose = Pose { pos: Vec2::ZERO, heading: 0.0 };

    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose { pos: Vec2::new(x, y), heading: wrap_angle(heading) }
    }

    /// Maps a pose expressed in this frame into the parent frame.
    pub fn compose(&self, local: &Pose) -> Pose {
        Pose {
            pos: self.pos + local.pos.rotate(self.heading),
            heading: wrap_angle(self.heading + local.heading),
        }
    }

    pub fn inverse(&self) -> Pose {
        Pose {
            pos: (-self.pos).rotate(-self.heading),
            heading: wrap_angle(-self.heading),
        }
    }

    pub fn direction(&self) -> Vec2 {
        Vec2::from_angle(self.heading)
    }
}

/// Rectangle of `length` along its heading and `width` across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedRect {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        OrientedRect { center, heading, length, width }
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let u = Vec2::from_angle(self.heading) * (self.length / 2.0);
        let v = Vec2::from_angle(self.heading + PI / 2.0) * (self.width / 2.0);
        let c = self.center;
        [c + u + v, c - u + v, c - u - v, c + u - v]
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }

    fn axes(&self) -> [Vec2; 2] {
        [Vec2::from_angle(self.heading), Vec2::from_angle(self.heading + PI / 2.0)]
    }

    pub fn radius_along(&self, n: Vec2) -> f64 {
        let [u, v] = self.axes();
        0.5 * self.length * u.dot(n).abs() + 0.5 * self.width * v.dot(n).abs()
    }

    /// Separating-axis test. Projections must overlap by more than `tol`
    /// on every axis, so rectangles that merely touch do not intersect.
    pub fn overlaps(&self, other: &OrientedRect, tol: f64) -> bool {
        let d = other.center - self.center;
        if d.norm() > self.half_diagonal() + other.half_diagonal() + tol {
            return false;
        }
        self.axes()
            .into_iter()
            .chain(other.axes())
            .all(|n| self.radius_along(n) + other.radius_along(n) - d.dot(n).abs() > tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_inverse_is_identity() {
        let p = Pose::new(3.0, -2.0, 0.7);
        let q = p.compose(&p.inverse());
        assert!(q.pos.norm() < 1e-12);
        assert!(q.heading.abs() < 1e-12);
    }

    #[test]
    fn wrap_stays_in_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn touching_rectangles_do_not_overlap() {
        let a = OrientedRect::new(Vec2::new(0.0, 0.0), 0.0, 2.0, 2.0);
        let b = OrientedRect::new(Vec2::new(2.0, 0.0), 0.0, 2.0, 2.0);
        assert!(!a.overlaps(&b, 0.0));
        let c = OrientedRect::new(Vec2::new(1.9, 0.0), 0.0, 2.0, 2.0);
        assert!(a.overlaps(&c, 0.0));
    }

    #[test]
    fn rotated_rectangles() {
        let a = OrientedRect::new(Vec2::new(0.0, 0.0), 0.0, 4.0, 1.0);
        let b = OrientedRect::new(Vec2::new(0.0, 0.0), PI / 2.0, 4.0, 1.0);
        assert!(a.overlaps(&b, 0.0));
        // diamond just outside the corner of a square
        let sq = OrientedRect::new(Vec2::ZERO, 0.0, 2.0, 2.0);
        let d = OrientedRect::new(Vec2::new(1.0 + 0.75, 1.0 + 0.75), PI / 4.0, 1.0, 1.0);
        assert!(!sq.overlaps(&d, 0.0));
    }
}
