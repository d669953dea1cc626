//! Standardized camera pose and bounding-sphere fit distance.
//!
//! Cameras sit on a sphere around the target: azimuth is measured in the
//! XY plane from +X toward +Y, elevation up from that plane toward +Z. The
//! default pose is the front-right-top view at 45° azimuth, 30° elevation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_AZIMUTH_DEG: f64 = 45.0;
pub const DEFAULT_ELEVATION_DEG: f64 = 30.0;
pub const DEFAULT_MARGIN: f64 = 1.1;
/// Field of view of a 50 mm lens on a 36 mm sensor, rounded.
pub const DEFAULT_FOV_DEG: f64 = 39.6;
/// Distance used when the scene has no geometry to frame.
pub const EMPTY_SCENE_DISTANCE: f64 = 10.0;

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum CameraError {
    #[error("distance must be positive, got {0}")]
    NonpositiveDistance(f64),
    #[error("bounding radius must be positive, got {0}")]
    NonpositiveRadius(f64),
    #[error("field of view must lie strictly between 0 and 180 degrees, got {0}")]
    InvalidFov(f64),
    #[error("margin must be at least 1, got {0}")]
    InvalidMargin(f64),
}

fn to_rad(deg: f64) -> f64 {
    deg * (core::f64::consts::PI / 180.0)
}

fn to_deg(rad: f64) -> f64 {
    rad * (180.0 / core::f64::consts::PI)
}

/// `target + r · (cos el · cos az, cos el · sin az, sin el)`.
pub fn compute_camera_position(
    azimuth_deg: f64,
    elevation_deg: f64,
    distance: f64,
    target: Vec3,
) -> Result<Vec3, CameraError> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(CameraError::NonpositiveDistance(distance));
    }
    let (az, el) = (to_rad(azimuth_deg), to_rad(elevation_deg));
    let planar = libm::cos(el);
    Ok([
        target[0] + distance * planar * libm::cos(az),
        target[1] + distance * planar * libm::sin(az),
        target[2] + distance * libm::sin(el),
    ])
}

/// Unit vector from `position` toward `target`.
pub fn look_direction(position: Vec3, target: Vec3) -> Option<Vec3> {
    let d = [
        target[0] - position[0],
        target[1] - position[1],
        target[2] - position[2],
    ];
    let n = libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    (n > 0.0).then(|| [d[0] / n, d[1] / n, d[2] / n])
}

fn check_fov(fov_deg: f64) -> Result<(), CameraError> {
    if fov_deg > 0.0 && fov_deg < 180.0 {
        Ok(())
    } else {
        Err(CameraError::InvalidFov(fov_deg))
    }
}

/// Distance at which a sphere of radius `radius` fills at most `1 / margin`
/// of the narrow half field of view: `margin · radius / sin(fov / 2)`.
pub fn fit_distance(radius: f64, fov_deg: f64, margin: f64) -> Result<f64, CameraError> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(CameraError::NonpositiveRadius(radius));
    }
    check_fov(fov_deg)?;
    if !(margin >= 1.0) || !margin.is_finite() {
        return Err(CameraError::InvalidMargin(margin));
    }
    Ok(margin * radius / libm::sin(to_rad(fov_deg) / 2.0))
}

/// Half-angle in degrees subtended by a sphere of `radius` seen from `distance`.
pub fn subtended_half_angle_deg(radius: f64, distance: f64) -> f64 {
    to_deg(libm::asin((radius / distance).min(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    pub target: Vec3,
    /// Narrow-axis field of view in degrees.
    pub fov: f64,
    pub margin: f64,
}

impl CameraSpec {
    /// Standard pose framing a bounding sphere; `None` frames an empty scene
    /// at [`EMPTY_SCENE_DISTANCE`].
    pub fn framing(
        sphere: Option<(Vec3, f64)>,
        fov: f64,
        margin: f64,
    ) -> Result<Self, CameraError> {
        check_fov(fov)?;
        let (target, distance) = match sphere {
            Some((center, radius)) => (center, fit_distance(radius, fov, margin)?),
            None => ([0.0; 3], EMPTY_SCENE_DISTANCE),
        };
        let spec = Self {
            azimuth: DEFAULT_AZIMUTH_DEG,
            elevation: DEFAULT_ELEVATION_DEG,
            distance,
            target,
            fov,
            margin,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        check_fov(self.fov)?;
        if !(self.distance > 0.0) {
            return Err(CameraError::NonpositiveDistance(self.distance));
        }
        if !(self.margin >= 1.0) {
            return Err(CameraError::InvalidMargin(self.margin));
        }
        Ok(())
    }

    pub fn position(&self) -> Result<Vec3, CameraError> {
        compute_camera_position(self.azimuth, self.elevation, self.distance, self.target)
    }
}
