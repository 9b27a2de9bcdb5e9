use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{cross, dot, mat_vec, normalize, sub, Vec3};

/// Pinhole camera. `rotation` maps camera axes to world axes (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    /// Camera at `eye` looking at `target`, with square pixels and the principal
    /// point at the image center.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Self {
        let forward = normalize(sub(target, eye));
        let right = normalize(cross(forward, up));
        let down = cross(forward, right);
        let rotation = [
            [right[0], down[0], forward[0]],
            [right[1], down[1], forward[1]],
            [right[2], down[2], forward[2]],
        ];
        CameraModel {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            translation: eye,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Camera(format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Camera("image must be non-empty".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::Camera(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        let r = &self.rotation;
        let cols = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot(cols[i], cols[j]) - expected).abs() > 1e-6 {
                    return Err(Error::Camera("rotation is not orthonormal".into()));
                }
            }
        }
        let det = dot(cols[0], cross(cols[1], cols[2]));
        if (det - 1.0).abs() > 1e-6 {
            return Err(Error::Camera(format!("rotation determinant {det} != 1")));
        }
        Ok(())
    }

    /// Unit world-space direction through the center of pixel `(u, v)`.
    pub fn pixel_direction(&self, u: usize, v: usize) -> Vec3 {
        let local = [
            (u as f64 + 0.5 - self.cx) / self.fx,
            (v as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        ];
        normalize(mat_vec(&self.rotation, local))
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }
}
