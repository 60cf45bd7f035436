use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::attitude::{AttitudeMode, InertiaTensor, RotationalState};
use crate::feasibility::{AccelerationBound, ControlPolytope, LosGeometry};
use crate::mpct::{HorizonConfig, Mode, Weights};
use crate::relative_dynamics::{OrbitParams, MU_EARTH_KM3_S2};

/// Envisat inertia tensor in body axes (kg·m²), externally sourced.
pub const ENVISAT_INERTIA_KG_M2: [[f64; 3]; 3] = [
    [17023.3, 397.1, -2171.4],
    [397.1, 124825.7, 344.2],
    [-2171.4, 344.2, 129112.2],
];

/// Envisat nominal orbit: 770 km altitude on a 6371 km Earth.
pub const ENVISAT_ORBIT_RADIUS_KM: f64 = 7141.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitSection {
    pub mu_km3_s2: f64,
    pub radius_km: f64,
    pub sampling_period_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttitudeModeKey {
    Full,
    TorqueFree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub inertia_kg_m2: [[f64; 3]; 3],
    /// Scalar-first quaternion from LVLH to body.
    pub quaternion: [f64; 4],
    /// Body rate relative to LVLH, body axes.
    pub omega_rad_s: [f64; 3],
    pub attitude_model: AttitudeModeKey,
    /// RK4 substeps per sampling period.
    pub attitude_substeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaserSection {
    pub position_body_m: [f64; 3],
    pub velocity_lvlh_m_s: [f64; 3],
    pub specific_impulse_s: Option<f64>,
    pub mass_kg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub mode: ModeKey,
    pub control_horizon: usize,
    pub lqr_horizon: usize,
    pub state_weights: [f64; 6],
    pub control_weights: [f64; 3],
    pub equilibrium_weights: [f64; 3],
    pub lqr_q: f64,
    pub lqr_alpha: f64,
    pub reduce_constraints: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKey {
    Mpct,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKey {
    TorqueFree,
    MixedProduct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsSection {
    pub c_x: f64,
    pub c_z: f64,
    pub x0_m: f64,
    pub z0_m: f64,
    pub u_max_m_s: f64,
    /// Acceleration bound used for the feasibility envelope.
    pub acceleration_bound: BoundKey,
    /// Overrides the computed cap on the equilibrium `y_B`.
    pub y_max_m: Option<f64>,
    /// Disables the cap altogether.
    pub cap_equilibrium: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub steps: usize,
}

/// Scenario description as stored on disk. Every physical key carries its
/// unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub orbit: OrbitSection,
    pub target: TargetSection,
    pub chaser: ChaserSection,
    pub controller: ControllerSection,
    pub constraints: ConstraintsSection,
    pub run: RunSection,
}

/// Validated runtime objects derived from a [`ScenarioConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub orbit: OrbitParams,
    pub inertia: InertiaTensor,
    pub attitude: RotationalState,
    pub attitude_mode: AttitudeMode,
    pub attitude_substeps: usize,
    pub position_body: Vector3<f64>,
    pub velocity_lvlh: Vector3<f64>,
    pub horizon: HorizonConfig,
    pub weights: Weights,
    pub lqr_q: f64,
    pub lqr_alpha: f64,
    pub mode: Mode,
    pub reduce: bool,
    pub los: LosGeometry,
    pub control: ControlPolytope,
    pub bound: AccelerationBound,
    pub y_max_override: Option<f64>,
    pub cap_equilibrium: bool,
    pub steps: usize,
    pub propulsion: Option<(f64, f64)>,
}

impl ScenarioConfig {
    /// Envisat case study: chaser at `(1.5, 2.5, 1.5)` m in body axes, at
    /// rest in LVLH, target aligned with LVLH and spinning at 3.53 deg/s
    /// about body y and z. 35 steps of 1 s with `N_c = 3`, `N = 30`.
    pub fn envisat_case_study() -> Self {
        let w = 3.53f64.to_radians();
        Self {
            orbit: OrbitSection {
                mu_km3_s2: MU_EARTH_KM3_S2,
                radius_km: ENVISAT_ORBIT_RADIUS_KM,
                sampling_period_s: 1.0,
            },
            target: TargetSection {
                inertia_kg_m2: ENVISAT_INERTIA_KG_M2,
                quaternion: [1.0, 0.0, 0.0, 0.0],
                omega_rad_s: [0.0, w, w],
                attitude_model: AttitudeModeKey::Full,
                attitude_substeps: 10,
            },
            chaser: ChaserSection {
                position_body_m: [1.5, 2.5, 1.5],
                velocity_lvlh_m_s: [0.0; 3],
                specific_impulse_s: None,
                mass_kg: None,
            },
            controller: ControllerSection {
                mode: ModeKey::Mpct,
                control_horizon: 3,
                lqr_horizon: 30,
                state_weights: [1.0, 1.0, 1.0, 10.0, 10.0, 10.0],
                control_weights: [1.0; 3],
                equilibrium_weights: [1000.0, 100.0, 1000.0],
                lqr_q: 1.0,
                lqr_alpha: 10.0,
                reduce_constraints: true,
            },
            constraints: ConstraintsSection {
                c_x: 1.0,
                c_z: 1.0,
                x0_m: 0.1,
                z0_m: 0.1,
                u_max_m_s: 0.075,
                acceleration_bound: BoundKey::TorqueFree,
                y_max_m: None,
                cap_equilibrium: true,
            },
            run: RunSection { steps: 35 },
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String, SimError> {
        toml::to_string(self).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<Scenario, SimError> {
        let invalid = |e: &dyn std::fmt::Display| SimError::Config(e.to_string());
        let orbit = OrbitParams::circular(self.orbit.mu_km3_s2, self.orbit.radius_km, self.orbit.sampling_period_s)
            .map_err(|e| invalid(&e))?;
        let t = &self.target;
        let rows = t.inertia_kg_m2;
        let inertia = InertiaTensor::from_tensor(Matrix3::from_fn(|i, j| rows[i][j])).map_err(|e| invalid(&e))?;
        let q_norm = t.quaternion.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !q_norm.is_finite() || q_norm < 1e-12 {
            return Err(SimError::Config(format!("quaternion {:?} cannot be normalised", t.quaternion)));
        }
        let omega = Vector3::from(t.omega_rad_s);
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(omega.as_slice()) {
            return Err(SimError::Config("target rate must be finite".into()));
        }
        if t.attitude_substeps == 0 {
            return Err(SimError::Config("attitude_substeps must be at least 1".into()));
        }
        let c = &self.chaser;
        if !finite(&c.position_body_m) || !finite(&c.velocity_lvlh_m_s) {
            return Err(SimError::Config("chaser state must be finite".into()));
        }
        let propulsion = match (c.specific_impulse_s, c.mass_kg) {
            (Some(isp), Some(m0)) if isp > 0.0 && m0 > 0.0 => Some((isp, m0)),
            (None, None) => None,
            other => return Err(SimError::Config(format!("propulsion needs positive Isp and mass, got {other:?}"))),
        };
        let ctl = &self.controller;
        let horizon = HorizonConfig::new(ctl.control_horizon, ctl.lqr_horizon).map_err(|e| invalid(&e))?;
        let weights =
            Weights::new(ctl.state_weights, ctl.control_weights, ctl.equilibrium_weights).map_err(|e| invalid(&e))?;
        let k = &self.constraints;
        let los = LosGeometry::new(k.c_x, k.c_z, k.x0_m, k.z0_m).map_err(|e| invalid(&e))?;
        let control = ControlPolytope::symmetric_box(k.u_max_m_s).map_err(|e| invalid(&e))?;
        if let Some(y) = k.y_max_m {
            if !(y >= 0.0 && y.is_finite()) {
                return Err(SimError::Config(format!("y_max_m must be nonnegative, got {y}")));
            }
        }
        if self.run.steps == 0 {
            return Err(SimError::Config("run.steps must be at least 1".into()));
        }
        Ok(Scenario {
            orbit,
            inertia,
            attitude: RotationalState::from_components(t.quaternion, omega),
            attitude_mode: match t.attitude_model {
                AttitudeModeKey::Full => AttitudeMode::Full,
                AttitudeModeKey::TorqueFree => AttitudeMode::TorqueFree,
            },
            attitude_substeps: t.attitude_substeps,
            position_body: Vector3::from(c.position_body_m),
            velocity_lvlh: Vector3::from(c.velocity_lvlh_m_s),
            horizon,
            weights,
            lqr_q: ctl.lqr_q,
            lqr_alpha: ctl.lqr_alpha,
            mode: match ctl.mode {
                ModeKey::Mpct => Mode::Mpct,
                ModeKey::Baseline => Mode::Baseline,
            },
            reduce: ctl.reduce_constraints,
            los,
            control,
            bound: match k.acceleration_bound {
                BoundKey::TorqueFree => AccelerationBound::TorqueFree,
                BoundKey::MixedProduct => AccelerationBound::MixedProduct,
            },
            y_max_override: k.y_max_m,
            cap_equilibrium: k.cap_equilibrium,
            steps: self.run.steps,
            propulsion,
        })
    }
}
