//! Pinhole camera (x right, y down, z forward) and Gaussian projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Mat3, Quat, Vec3};

/// Added to every projected covariance, in squared pixels.
pub const COV_FLOOR: f64 = 0.3;
pub const RIG_ELEVATION_DEG: f64 = 20.0;
pub const RIG_RADIUS: f64 = 2.0;
pub const RIG_FOV_DEG: f64 = 40.0;

/// A ring of square orbit cameras at evenly spaced azimuths starting from 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub views: usize,
    pub elevation_deg: f64,
    pub radius: f64,
    pub fov_deg: f64,
    /// Image side in pixels.
    pub size: usize,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            views: 4,
            elevation_deg: RIG_ELEVATION_DEG,
            radius: RIG_RADIUS,
            fov_deg: RIG_FOV_DEG,
            size: 64,
        }
    }
}

impl RigConfig {
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        if self.views == 0 {
            return Err(Error::Config("rig.views must be positive".into()));
        }
        if !(self.radius > 0.0) {
            return Err(Error::Config("rig.radius must be positive".into()));
        }
        (0..self.views)
            .map(|i| {
                Camera::orbit(
                    std::f64::consts::TAU * i as f64 / self.views as f64,
                    self.elevation_deg.to_radians(),
                    self.radius,
                    self.fov_deg.to_radians(),
                    (self.size, self.size),
                )
            })
            .collect::<Result<_>>()
            .map_err(|e| Error::Config(format!("rig: {e}")))
    }
}

/// Default rig geometry with `views` cameras of `size`×`size` pixels.
pub fn camera_rig(views: usize, size: usize) -> Result<Vec<Camera>> {
    RigConfig {
        views,
        size,
        ..RigConfig::default()
    }
    .cameras()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub vertical_fov: f64,
    pub height: usize,
    pub width: usize,
    pub near: f64,
}

impl Camera {
    pub fn new(
        position: Vec3,
        look_at: Vec3,
        up: Vec3,
        vertical_fov: f64,
        (height, width): (usize, usize),
    ) -> Result<Self> {
        let cam = Self {
            position,
            look_at,
            up,
            vertical_fov,
            height,
            width,
            near: 0.01,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera on a sphere around the origin looking at it, `y` up.
    pub fn orbit(
        azimuth: f64,
        elevation: f64,
        radius: f64,
        vertical_fov: f64,
        resolution: (usize, usize),
    ) -> Result<Self> {
        let (se, ce) = elevation.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        Self::new(
            [radius * ce * sa, radius * se, radius * ce * ca],
            [0.0; 3],
            [0.0, 1.0, 0.0],
            vertical_fov,
            resolution,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.vertical_fov > 0.0 && self.vertical_fov < std::f64::consts::PI) {
            return Err(Error::InvalidInput(format!("fov {} outside (0, pi)", self.vertical_fov)));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::InvalidInput(format!(
                "resolution {}x{} below 8x8",
                self.height, self.width
            )));
        }
        let f = geom::sub(self.look_at, self.position);
        if geom::norm(f) == 0.0 || geom::norm(geom::cross(f, self.up)) == 0.0 {
            return Err(Error::InvalidInput("degenerate camera orientation".into()));
        }
        Ok(())
    }

    /// World-to-camera rotation; rows are the right, down and forward axes.
    pub fn rotation(&self) -> Mat3 {
        let f = geom::normalize(geom::sub(self.look_at, self.position));
        let r = geom::normalize(geom::cross(f, self.up));
        let d = geom::cross(f, r);
        [r, d, f]
    }

    pub fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.vertical_fov).tan()
    }

    pub fn principal(&self) -> [f64; 2] {
        [0.5 * self.width as f64, 0.5 * self.height as f64]
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        geom::mat_vec(&self.rotation(), geom::sub(p, self.position))
    }

    /// Pixel coordinates of a camera-space point; pixel `i` has its center at `i + 0.5`.
    pub fn project_point(&self, t: Vec3) -> [f64; 2] {
        let f = self.focal();
        let c = self.principal();
        [f * t[0] / t[2] + c[0], f * t[1] / t[2] + c[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub mean: [f64; 2],
    /// `(xx, xy, yy)` before the floor is added.
    pub cov_raw: [f64; 3],
    /// `(xx, xy, yy)` including [`COV_FLOOR`].
    pub cov: [f64; 3],
    pub depth: f64,
}

/// World covariance `R diag(exp(2s)) Rᵀ` for a unit quaternion.
pub fn covariance3d(log_scales: Vec3, rotation: Quat) -> Mat3 {
    let r = geom::quat_to_mat(rotation);
    let d = log_scales.map(|s| (2.0 * s).exp());
    let mut sigma = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            sigma[i][j] = (0..3).map(|k| r[i][k] * d[k] * r[j][k]).sum();
        }
    }
    sigma
}

/// Perspective Jacobian of [`Camera::project_point`] at camera-space `t`.
pub fn perspective_jacobian(focal: f64, t: Vec3) -> [Vec3; 2] {
    let iz = 1.0 / t[2];
    [
        [focal * iz, 0.0, -focal * t[0] * iz * iz],
        [0.0, focal * iz, -focal * t[1] * iz * iz],
    ]
}

/// `None` when the center lies at or behind the near plane.
pub fn project_gaussian(
    cam: &Camera,
    position: Vec3,
    log_scales: Vec3,
    rotation: Quat,
) -> Option<Projection> {
    let t = cam.to_camera(position);
    if t[2] <= cam.near {
        return None;
    }
    let q = rotation.map(|x| x / geom::quat_norm(rotation));
    let sigma = covariance3d(log_scales, q);
    let w = cam.rotation();
    let j = perspective_jacobian(cam.focal(), t);
    let m = [0, 1].map(|r| [0, 1, 2].map(|c| (0..3).map(|k| j[r][k] * w[k][c]).sum::<f64>()));
    let quad = |a: Vec3, b: Vec3| geom::dot(a, geom::mat_vec(&sigma, b));
    let cov_raw = [quad(m[0], m[0]), quad(m[0], m[1]), quad(m[1], m[1])];
    Some(Projection {
        mean: cam.project_point(t),
        cov_raw,
        cov: [cov_raw[0] + COV_FLOOR, cov_raw[1], cov_raw[2] + COV_FLOOR],
        depth: t[2],
    })
}
