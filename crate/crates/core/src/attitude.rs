//! Rotational motion of the tumbling target.
//!
//! The attitude is a scalar-first unit quaternion `q` describing body axes
//! `B` relative to the LVLH frame `L`. Its rotation matrix maps body
//! coordinates into LVLH coordinates, so the direction-cosine matrix used
//! everywhere else (LVLH to body) is its transpose. The angular velocity is
//! that of `B` relative to `L`, expressed in body axes.

use std::io::Write;

use nalgebra::{Matrix3, Quaternion, SymmetricEigen, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::relative_dynamics::OrbitParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttitudeError {
    #[error("invalid inertia tensor: {0}")]
    InvalidInertia(String),
    #[error("attitude propagation produced a non-finite state at step {0}")]
    NonFinite(usize),
    #[error("invalid propagation request: {0}")]
    InvalidRequest(String),
    #[error("angular momentum {h} and energy {energy} do not describe a polhode")]
    NoPolhode { h: f64, energy: f64 },
}

/// Target inertia tensor (kg·m²) in body axes.
///
/// Any symmetric positive-definite tensor is accepted. The feasibility
/// envelope only consumes its principal moments, which are obtained by
/// diagonalisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InertiaTensor {
    tensor: Matrix3<f64>,
    inverse: Matrix3<f64>,
    principal: Vector3<f64>,
}

impl InertiaTensor {
    pub fn principal(i1: f64, i2: f64, i3: f64) -> Result<Self, AttitudeError> {
        Self::from_tensor(Matrix3::from_diagonal(&Vector3::new(i1, i2, i3)))
    }

    pub fn from_tensor(tensor: Matrix3<f64>) -> Result<Self, AttitudeError> {
        if !tensor.iter().all(|v| v.is_finite()) {
            return Err(AttitudeError::InvalidInertia("non-finite entry".into()));
        }
        if (tensor - tensor.transpose()).amax() > 1e-9 * tensor.amax() {
            return Err(AttitudeError::InvalidInertia("tensor is not symmetric".into()));
        }
        let eig = SymmetricEigen::new(tensor);
        let mut moments = eig.eigenvalues;
        moments.as_mut_slice().sort_by(|a, b| a.total_cmp(b));
        if moments[0] <= 0.0 {
            return Err(AttitudeError::InvalidInertia(format!(
                "principal moments must be positive, got {moments:?}"
            )));
        }
        let slack = 1e-9 * moments[2];
        if moments[0] + moments[1] < moments[2] - slack {
            return Err(AttitudeError::InvalidInertia(format!(
                "principal moments {moments:?} violate the triangle inequality"
            )));
        }
        let inverse = tensor
            .try_inverse()
            .ok_or_else(|| AttitudeError::InvalidInertia("singular tensor".into()))?;
        Ok(Self {
            tensor,
            inverse,
            principal: moments,
        })
    }

    pub fn tensor(&self) -> &Matrix3<f64> {
        &self.tensor
    }

    pub fn inverse(&self) -> &Matrix3<f64> {
        &self.inverse
    }

    /// Principal moments sorted ascending.
    pub fn principal_moments(&self) -> Vector3<f64> {
        self.principal
    }

    /// Moment about the minor axis (the smallest principal moment).
    pub fn minor_axis_moment(&self) -> f64 {
        self.principal[0]
    }

    pub fn major_axis_moment(&self) -> f64 {
        self.principal[2]
    }
}

/// Attitude and angular velocity of the target relative to LVLH.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationalState {
    pub q: UnitQuaternion<f64>,
    /// rad/s, body axes.
    pub omega: Vector3<f64>,
}

impl RotationalState {
    pub fn new(q: UnitQuaternion<f64>, omega: Vector3<f64>) -> Self {
        Self { q, omega }
    }

    /// From scalar-first quaternion components; the quaternion is normalised.
    pub fn from_components(q: [f64; 4], omega: Vector3<f64>) -> Self {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        Self { q, omega }
    }

    /// Direction-cosine matrix taking LVLH coordinates to body coordinates.
    pub fn dcm(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner().transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttitudeMode {
    /// Euler-Poinsot with the LVLH rotation-rate coupling.
    #[default]
    Full,
    /// Euler-Poinsot as if LVLH were inertial.
    TorqueFree,
}

/// Angular acceleration of the body relative to LVLH, body axes.
pub fn euler_poinsot_rate(
    state: &RotationalState,
    inertia: &InertiaTensor,
    mean_motion: f64,
    mode: AttitudeMode,
) -> Vector3<f64> {
    let omega = state.omega;
    match mode {
        AttitudeMode::TorqueFree => -inertia.inverse() * omega.cross(&(inertia.tensor() * omega)),
        AttitudeMode::Full => {
            // LVLH rate about its own z axis, seen from the body
            let lvlh_rate = state.dcm() * Vector3::new(0.0, 0.0, mean_motion);
            let inertial = omega + lvlh_rate;
            omega.cross(&lvlh_rate) - inertia.inverse() * inertial.cross(&(inertia.tensor() * inertial))
        }
    }
}

fn derivative(
    q: &Quaternion<f64>,
    omega: &Vector3<f64>,
    inertia: &InertiaTensor,
    mean_motion: f64,
    mode: AttitudeMode,
) -> (Quaternion<f64>, Vector3<f64>) {
    let unit = UnitQuaternion::new_normalize(*q);
    let q_dot = q * Quaternion::from_imag(*omega) * 0.5;
    let w_dot = euler_poinsot_rate(&RotationalState::new(unit, *omega), inertia, mean_motion, mode);
    (q_dot, w_dot)
}

/// Integrates the rotational state over `dt` (which may be negative) with
/// `substeps` RK4 steps, renormalising the quaternion after each one.
pub fn integrate_rotation(
    state: &RotationalState,
    inertia: &InertiaTensor,
    mean_motion: f64,
    mode: AttitudeMode,
    dt: f64,
    substeps: usize,
) -> RotationalState {
    let h = dt / substeps as f64;
    let mut q = *state.q.quaternion();
    let mut w = state.omega;
    for _ in 0..substeps {
        let (k1q, k1w) = derivative(&q, &w, inertia, mean_motion, mode);
        let (k2q, k2w) = derivative(&(q + k1q * (h / 2.0)), &(w + k1w * (h / 2.0)), inertia, mean_motion, mode);
        let (k3q, k3w) = derivative(&(q + k2q * (h / 2.0)), &(w + k2w * (h / 2.0)), inertia, mean_motion, mode);
        let (k4q, k4w) = derivative(&(q + k3q * h), &(w + k3w * h), inertia, mean_motion, mode);
        q += (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0);
        w += (k1w + k2w * 2.0 + k3w * 2.0 + k4w) * (h / 6.0);
        q = q.normalize();
    }
    RotationalState::new(UnitQuaternion::new_unchecked(q), w)
}

/// Target attitude sampled on the controller grid `t = kT`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttitudeTrajectory {
    pub states: Vec<RotationalState>,
    pub dcm: Vec<Matrix3<f64>>,
    pub sampling_period: f64,
}

impl AttitudeTrajectory {
    /// Number of grid points (steps + 1).
    pub fn len(&self) -> usize {
        self.dcm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dcm.is_empty()
    }

    pub fn omega(&self, k: usize) -> Vector3<f64> {
        self.states[k].omega
    }

    /// Writes `k, t, 9 DCM entries (row-major), 3 angular-rate components`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "k", "t_s", "c11", "c12", "c13", "c21", "c22", "c23", "c31", "c32", "c33", "wB_x_rad_s",
            "wB_y_rad_s", "wB_z_rad_s",
        ])?;
        for (k, (c, s)) in self.dcm.iter().zip(&self.states).enumerate() {
            let mut row = vec![k.to_string(), format!("{}", k as f64 * self.sampling_period)];
            for i in 0..3 {
                for j in 0..3 {
                    row.push(format!("{:.17e}", c[(i, j)]));
                }
            }
            row.extend(s.omega.iter().map(|v| format!("{v:.17e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Propagates the target for `steps` sampling periods of `orbit`.
pub fn propagate_attitude(
    initial: &RotationalState,
    inertia: &InertiaTensor,
    orbit: &OrbitParams,
    steps: usize,
    substeps: usize,
    mode: AttitudeMode,
) -> Result<AttitudeTrajectory, AttitudeError> {
    if steps == 0 || substeps == 0 {
        return Err(AttitudeError::InvalidRequest(format!(
            "steps ({steps}) and substeps ({substeps}) must be at least 1"
        )));
    }
    let t = orbit.sampling_period();
    let n = orbit.mean_motion();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(*initial);
    let mut current = *initial;
    for k in 1..=steps {
        current = integrate_rotation(&current, inertia, n, mode, t, substeps);
        let finite = current.omega.iter().chain(current.q.coords.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(AttitudeError::NonFinite(k));
        }
        states.push(current);
    }
    let dcm = states.iter().map(RotationalState::dcm).collect();
    Ok(AttitudeTrajectory {
        states,
        dcm,
        sampling_period: t,
    })
}

/// Conserved quantities of torque-free rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolhodeInvariants {
    /// Angular momentum magnitude (kg·m²/s).
    pub h: f64,
    /// Rotational kinetic energy (J).
    pub energy: f64,
}

impl PolhodeInvariants {
    /// Checks `2E·I_min <= h² <= 2E·I_max` up to a relative tolerance.
    pub fn validate(&self, inertia: &InertiaTensor) -> Result<(), AttitudeError> {
        let h2 = self.h * self.h;
        let lo = 2.0 * self.energy * inertia.minor_axis_moment();
        let hi = 2.0 * self.energy * inertia.major_axis_moment();
        let slack = 1e-9 * hi.max(h2);
        if !(self.h >= 0.0 && self.energy >= 0.0) || h2 < lo - slack || h2 > hi + slack {
            return Err(AttitudeError::NoPolhode {
                h: self.h,
                energy: self.energy,
            });
        }
        Ok(())
    }
}

pub fn polhode_invariants(omega: &Vector3<f64>, inertia: &InertiaTensor) -> PolhodeInvariants {
    let momentum = inertia.tensor() * omega;
    PolhodeInvariants {
        h: momentum.norm(),
        energy: 0.5 * omega.dot(&momentum),
    }
}
