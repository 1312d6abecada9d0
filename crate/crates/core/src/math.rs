//! Small geometric helpers shared by the plant and the controller.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Unit vertical, pointing up.
pub const E3: Vec3 = Vector3::new(0.0, 0.0, 1.0);

pub fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Polar projection onto SO(3) by Newton iteration `R <- R (3I - RᵀR) / 2`.
///
/// Converges quadratically for matrices close to a rotation, which is the
/// only case that arises after an integration step.
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    let mut r = *r;
    for _ in 0..6 {
        let rtr = r.transpose() * r;
        let err = (rtr - Mat3::identity()).abs().max();
        if err < 1e-15 {
            break;
        }
        r = r * (Mat3::identity() * 3.0 - rtr) * 0.5;
    }
    r
}

/// ZYX Euler angles `(roll, pitch, yaw)` of `R = Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn euler_zyx(r: &Mat3) -> (f64, f64, f64) {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    (roll, pitch, yaw)
}

/// Rotation from ZYX Euler angles.
pub fn from_euler_zyx(roll: f64, pitch: f64, yaw: f64) -> Mat3 {
    let rx = nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), roll);
    let ry = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), pitch);
    let rz = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
    (rz * ry * rx).into_inner()
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut x = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if x <= -std::f64::consts::PI {
        x += two_pi;
    }
    x
}
