//! Discrete Hill-Clohessy-Wiltshire relative motion in the target LVLH frame.
//!
//! The LVLH frame has `x` radial, `y` along-track and `z` along the orbit
//! angular momentum. Control enters as an impulsive velocity change applied
//! at the start of each sampling interval, so the input matrix is `[0; I]`.

use nalgebra::{Matrix3, Matrix6, Matrix6x3, Vector3, Vector6};
use thiserror::Error;

/// Earth gravitational parameter (km³/s²).
pub const MU_EARTH_KM3_S2: f64 = 398_600.4;

/// Standard gravity used by the rocket equation (m/s²).
pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid orbit parameter: {0}")]
    InvalidOrbit(String),
    #[error("position/velocity coupling block is singular for n*T = {0}")]
    SingularCoupling(f64),
}

/// Circular target orbit plus controller sampling period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitParams {
    mu_km3_s2: f64,
    radius_km: f64,
    mean_motion: f64,
    sampling_period: f64,
}

impl OrbitParams {
    /// Builds the orbit from gravitational parameter and radius; `n = sqrt(mu / R³)`.
    pub fn circular(mu_km3_s2: f64, radius_km: f64, sampling_period: f64) -> Result<Self, DynamicsError> {
        if !(mu_km3_s2 > 0.0 && mu_km3_s2.is_finite()) {
            return Err(DynamicsError::InvalidOrbit(format!("mu must be positive, got {mu_km3_s2}")));
        }
        if !(radius_km > 0.0 && radius_km.is_finite()) {
            return Err(DynamicsError::InvalidOrbit(format!("radius must be positive, got {radius_km}")));
        }
        let mean_motion = (mu_km3_s2 / radius_km.powi(3)).sqrt();
        Self::validated(mu_km3_s2, radius_km, mean_motion, sampling_period)
    }

    /// Builds an orbit directly from its mean motion (rad/s). The radius is
    /// back-computed with Earth's gravitational parameter.
    pub fn from_mean_motion(mean_motion: f64, sampling_period: f64) -> Result<Self, DynamicsError> {
        if !(mean_motion > 0.0 && mean_motion.is_finite()) {
            return Err(DynamicsError::InvalidOrbit(format!(
                "mean motion must be positive, got {mean_motion}"
            )));
        }
        let radius_km = (MU_EARTH_KM3_S2 / (mean_motion * mean_motion)).cbrt();
        Self::validated(MU_EARTH_KM3_S2, radius_km, mean_motion, sampling_period)
    }

    fn validated(mu: f64, radius: f64, n: f64, t: f64) -> Result<Self, DynamicsError> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(DynamicsError::InvalidOrbit(format!("sampling period must be positive, got {t}")));
        }
        if n * t >= std::f64::consts::FRAC_PI_2 {
            return Err(DynamicsError::InvalidOrbit(format!(
                "n*T = {} leaves the small-step regime (must be < pi/2)",
                n * t
            )));
        }
        Ok(Self {
            mu_km3_s2: mu,
            radius_km: radius,
            mean_motion: n,
            sampling_period: t,
        })
    }

    pub fn mu_km3_s2(&self) -> f64 {
        self.mu_km3_s2
    }

    pub fn radius_km(&self) -> f64 {
        self.radius_km
    }

    /// Mean motion `n` (rad/s).
    pub fn mean_motion(&self) -> f64 {
        self.mean_motion
    }

    /// Sampling period `T` (s).
    pub fn sampling_period(&self) -> f64 {
        self.sampling_period
    }

    /// Orbital period `2π/n` (s).
    pub fn orbital_period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.mean_motion
    }

    /// Same orbit with a different sampling period.
    pub fn with_sampling_period(&self, sampling_period: f64) -> Result<Self, DynamicsError> {
        Self::validated(self.mu_km3_s2, self.radius_km, self.mean_motion, sampling_period)
    }
}

/// State transition and input matrices of the discrete HCW model.
#[derive(Debug, Clone, PartialEq)]
pub struct StmPair {
    pub a: Matrix6<f64>,
    pub b: Matrix6x3<f64>,
}

impl StmPair {
    pub fn a_rr(&self) -> Matrix3<f64> {
        self.a.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn a_rv(&self) -> Matrix3<f64> {
        self.a.fixed_view::<3, 3>(0, 3).into_owned()
    }

    pub fn a_vr(&self) -> Matrix3<f64> {
        self.a.fixed_view::<3, 3>(3, 0).into_owned()
    }

    pub fn a_vv(&self) -> Matrix3<f64> {
        self.a.fixed_view::<3, 3>(3, 3).into_owned()
    }

    /// Always zero: the impulse does not move the chaser within the step.
    pub fn b_ru(&self) -> Matrix3<f64> {
        self.b.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Always the identity.
    pub fn b_vu(&self) -> Matrix3<f64> {
        self.b.fixed_view::<3, 3>(3, 0).into_owned()
    }

    /// Inverse of `A_rv`, which the dead-beat and tracking laws rely on.
    pub fn a_rv_inverse(&self) -> Result<Matrix3<f64>, DynamicsError> {
        let a_rv = self.a_rv();
        let scale = a_rv.norm();
        let det = a_rv.determinant();
        if scale == 0.0 || det.abs() <= 1e-12 * scale.powi(3) {
            return Err(DynamicsError::SingularCoupling(f64::NAN));
        }
        a_rv.try_inverse().ok_or(DynamicsError::SingularCoupling(f64::NAN))
    }
}

/// Raw HCW matrices for mean motion `n` over an interval `dt`.
///
/// Total for every finite input, including `dt = 0` (identity). Use
/// [`hcw_stm`] when the dead-beat machinery needs an invertible `A_rv`.
pub fn hcw_matrices(n: f64, dt: f64) -> StmPair {
    let nt = n * dt;
    let (s, c) = nt.sin_cos();
    #[rustfmt::skip]
    let a = Matrix6::new(
        4.0 - 3.0 * c,        0.0, 0.0,    s / n,               2.0 * (1.0 - c) / n,       0.0,
        6.0 * (s - nt),       1.0, 0.0,    -2.0 * (1.0 - c) / n, (4.0 * s - 3.0 * nt) / n, 0.0,
        0.0,                  0.0, c,      0.0,                 0.0,                       s / n,
        3.0 * n * s,          0.0, 0.0,    c,                   2.0 * s,                   0.0,
        -6.0 * n * (1.0 - c), 0.0, 0.0,    -2.0 * s,            4.0 * c - 3.0,             0.0,
        0.0,                  0.0, -n * s, 0.0,                 0.0,                       c,
    );
    let mut b = Matrix6x3::zeros();
    b.fixed_view_mut::<3, 3>(3, 0).copy_from(&Matrix3::identity());
    StmPair { a, b }
}

/// HCW matrices for one sampling period of `orbit`.
pub fn hcw_stm(orbit: &OrbitParams) -> Result<StmPair, DynamicsError> {
    let stm = hcw_matrices(orbit.mean_motion(), orbit.sampling_period());
    let nt = orbit.mean_motion() * orbit.sampling_period();
    stm.a_rv_inverse()
        .map_err(|_| DynamicsError::SingularCoupling(nt))?;
    Ok(stm)
}

/// Relative position (m) and velocity (m/s), both in LVLH axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LvlhState {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl LvlhState {
    pub fn new(r: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { r, v }
    }

    pub fn zeros() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self::new(x.fixed_rows::<3>(0).into_owned(), x.fixed_rows::<3>(3).into_owned())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.r.x, self.r.y, self.r.z, self.v.x, self.v.y, self.v.z)
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(self.v.iter()).all(|v| v.is_finite())
    }
}

/// One step of `x(k+1) = A_L x(k) + B_L u(k)`.
pub fn propagate_lvlh(x: &LvlhState, u: &Vector3<f64>, stm: &StmPair) -> LvlhState {
    LvlhState::from_vector(&(stm.a * x.to_vector() + stm.b * u))
}

/// Running impulse accumulators plus the propulsion data needed by the
/// rocket equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpulseBudget {
    pub total_dv: f64,
    pub total_dv_sq: f64,
    /// Specific impulse (s).
    pub isp: f64,
    /// Initial chaser mass (kg).
    pub m0: f64,
}

impl ImpulseBudget {
    pub fn new(isp: f64, m0: f64) -> Self {
        Self {
            total_dv: 0.0,
            total_dv_sq: 0.0,
            isp,
            m0,
        }
    }

    pub fn record(&mut self, u: &Vector3<f64>) {
        let norm_sq = u.norm_squared();
        self.total_dv += norm_sq.sqrt();
        self.total_dv_sq += norm_sq;
    }
}

/// Propellant mass consumed for the accumulated `Δv`:
/// `Δm = m0 (1 - exp(-Δv / (Isp g0)))`.
pub fn fuel_mass(budget: &ImpulseBudget) -> f64 {
    budget.m0 * (1.0 - (-budget.total_dv / (budget.isp * STANDARD_GRAVITY)).exp())
}

/// Rocket equation in its usual direction: `Δv = Isp g0 ln(m0 / (m0 - Δm))`.
pub fn delta_v_for_mass(isp: f64, m0: f64, dm: f64) -> f64 {
    isp * STANDARD_GRAVITY * (m0 / (m0 - dm)).ln()
}
