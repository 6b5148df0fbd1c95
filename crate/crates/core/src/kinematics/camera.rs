use serde::{Deserialize, Serialize};

use super::rotation::{add, mat_vec, Mat3, Vec3};
use crate::error::{Error, Result};

/// Pinhole camera: `X_cam = rotation · X_world + translation`, then
/// `u = fx·X/Z + cx`, `v = fy·Y/Z + cy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::Config(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        Ok(Camera {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        })
    }

    /// Camera frame equal to the world frame.
    pub fn at_origin(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::new(fx, fy, cx, cy, super::rotation::IDENTITY, [0.0; 3])
    }

    /// 1920×1080 camera `distance` meters in front of the body origin, looking
    /// back at it with image y pointing down.
    pub fn facing_subject(distance: f64) -> Self {
        let rotation = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
        Camera {
            fx: 1000.0,
            fy: 1000.0,
            cx: 960.0,
            cy: 540.0,
            rotation,
            translation: [0.0, 0.0, distance],
        }
    }

    pub fn to_camera_frame(&self, p: Vec3) -> Vec3 {
        add(mat_vec(&self.rotation, p), self.translation)
    }

    /// Projects world points to pixels; the error names the first point
    /// that sits on or behind the image plane.
    pub fn project(&self, points: &[Vec3]) -> Result<Vec<[f64; 2]>> {
        points
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let c = self.to_camera_frame(p);
                if c[2] <= 0.0 {
                    return Err(Error::Projection { joint: i, depth: c[2] });
                }
                Ok([self.fx * c[0] / c[2] + self.cx, self.fy * c[1] / c[2] + self.cy])
            })
            .collect()
    }
}
