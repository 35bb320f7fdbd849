//! Known exterior wave fields used as boundary data and reference solutions.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

/// Temporal signal `T(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Signal {
    /// `amplitude * cos(omega t)`.
    Cosine { amplitude: f64, omega: f64 },
    /// `amplitude * exp(-(t - center)^2 / (2 width^2))`.
    Gaussian { amplitude: f64, center: f64, width: f64 },
}

impl Signal {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Signal::Cosine { amplitude, omega } => amplitude * (omega * t).cos(),
            Signal::Gaussian {
                amplitude,
                center,
                width,
            } => {
                let s = (t - center) / width;
                amplitude * (-0.5 * s * s).exp()
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Signal::Cosine { amplitude, omega } => -amplitude * omega * (omega * t).sin(),
            Signal::Gaussian {
                amplitude,
                center,
                width,
            } => {
                let s = (t - center) / width;
                -amplitude * s / width * (-0.5 * s * s).exp()
            }
        }
    }
}

/// Monopole `u(x, t) = T(t - R) / (4 pi R)`, `R = |x - center|`, which solves
/// the wave equation away from `center`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub center: [f64; 3],
    pub signal: Signal,
}

impl PointSource {
    fn offset(&self, x: &Vec3) -> (Vec3, f64) {
        let d = x - Vec3::from(self.center);
        let r = d.norm();
        (d, r)
    }

    pub fn value(&self, x: &Vec3, t: f64) -> f64 {
        let (_, r) = self.offset(x);
        self.signal.value(t - r) / (4.0 * std::f64::consts::PI * r)
    }

    pub fn time_derivative(&self, x: &Vec3, t: f64) -> f64 {
        let (_, r) = self.offset(x);
        self.signal.derivative(t - r) / (4.0 * std::f64::consts::PI * r)
    }

    pub fn gradient(&self, x: &Vec3, t: f64) -> Vec3 {
        let (d, r) = self.offset(x);
        let four_pi = 4.0 * std::f64::consts::PI;
        let radial = -self.signal.derivative(t - r) / (four_pi * r)
            - self.signal.value(t - r) / (four_pi * r * r);
        d * (radial / r)
    }

    pub fn normal_derivative(&self, x: &Vec3, normal: &Vec3, t: f64) -> f64 {
        self.gradient(x, t).dot(normal)
    }
}

/// Plane wave `u_inc(x, t) = T(t - d.x)` travelling along the unit vector `d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneWave {
    pub direction: [f64; 3],
    pub signal: Signal,
}

impl PlaneWave {
    fn unit_direction(&self) -> Vec3 {
        Vec3::from(self.direction).normalize()
    }

    pub fn value(&self, x: &Vec3, t: f64) -> f64 {
        self.signal.value(t - self.unit_direction().dot(x))
    }
}
