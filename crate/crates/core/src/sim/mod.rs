//! Closed-loop harness: the LVLH plant driven by the receding-horizon
//! controller, with telemetry and run metrics.

mod config;
mod telemetry;

pub use config::{
    AttitudeModeKey, BoundKey, ChaserSection, ConstraintsSection, ControllerSection, ModeKey, OrbitSection, RunSection,
    Scenario, ScenarioConfig, TargetSection, ENVISAT_INERTIA_KG_M2, ENVISAT_ORBIT_RADIUS_KM,
};
pub use telemetry::{metrics, RunSummary, Telemetry, TelemetryRow, SUMMARY_HEADER, TELEMETRY_HEADER, V_STAR_TOLERANCE};

use nalgebra::{DVector, Vector3};
use thiserror::Error;

use crate::attitude::{polhode_invariants, propagate_attitude, AttitudeTrajectory};
use crate::feasibility::{theta_max_envelope_with, tracking_control_matrix, FeasibilityEnvelope};
use crate::ltv_model::RelativeState;
use crate::mpct::{
    build_qp, extract_control, reduce_constraints, CondensedQp, ConstraintSet, PredictionModel, RowTag,
};
use crate::qp_solver::{solve_qp, QpOptions, QpSolution, QpStatus};
use crate::relative_dynamics::{hcw_stm, propagate_lvlh, LvlhState, StmPair};
use crate::terminal_control::LqrDesign;

/// Most negative slack tolerated before the run is declared unsafe.
pub const MARGIN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("model setup: {0}")]
    Model(String),
    #[error("telemetry: {0}")]
    Telemetry(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("QP infeasible at step {k}; {report}")]
    Infeasible {
        k: usize,
        report: String,
        telemetry: Box<Telemetry>,
    },
    #[error("constraint margin {margin:e} at step {k}; {report}")]
    ConstraintViolation {
        k: usize,
        margin: f64,
        report: String,
        telemetry: Box<Telemetry>,
    },
    #[error("solver stopped with status {status} at step {k}")]
    Solver {
        k: usize,
        status: &'static str,
        telemetry: Box<Telemetry>,
    },
}

impl SimError {
    /// Telemetry recorded before an in-loop failure.
    pub fn partial_telemetry(&self) -> Option<&Telemetry> {
        match self {
            SimError::Infeasible { telemetry, .. }
            | SimError::ConstraintViolation { telemetry, .. }
            | SimError::Solver { telemetry, .. } => Some(telemetry),
            _ => None,
        }
    }
}

fn model_error(e: impl std::fmt::Display) -> SimError {
    SimError::Model(e.to_string())
}

/// Everything that stays fixed during a run.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub scenario: Scenario,
    pub stm: StmPair,
    pub attitude: AttitudeTrajectory,
    pub envelope: FeasibilityEnvelope,
    pub constraints: ConstraintSet,
    pub model: PredictionModel,
}

/// Equilibrium envelope of a scenario: `θ_max` and the line-of-sight cap.
pub fn feasibility_envelope(scenario: &Scenario, stm: &StmPair) -> Result<FeasibilityEnvelope, SimError> {
    let t = scenario.orbit.sampling_period();
    let tracking = tracking_control_matrix(stm, t).map_err(model_error)?;
    let inv = polhode_invariants(&scenario.attitude.omega, &scenario.inertia);
    let envelope = theta_max_envelope_with(&scenario.control, &tracking, &scenario.inertia, &inv, t, scenario.bound)
        .map_err(model_error)?;
    if envelope.theta_max.is_finite() {
        envelope.with_los_cap(&scenario.los).map_err(model_error)
    } else {
        Ok(envelope)
    }
}

pub fn prepare(scenario: &Scenario) -> Result<PreparedRun, SimError> {
    let stm = hcw_stm(&scenario.orbit).map_err(model_error)?;
    let envelope = feasibility_envelope(scenario, &stm)?;
    let y_max = if scenario.cap_equilibrium {
        scenario.y_max_override.or(envelope.y_max)
    } else {
        None
    };
    let constraints = ConstraintSet::new(scenario.los, scenario.control.clone(), y_max);
    let grid = scenario.steps + scenario.horizon.n_p() + 2;
    let attitude = propagate_attitude(
        &scenario.attitude,
        &scenario.inertia,
        &scenario.orbit,
        grid,
        scenario.attitude_substeps,
        scenario.attitude_mode,
    )
    .map_err(model_error)?;
    let lqr = LqrDesign::new(&stm, scenario.lqr_q, scenario.lqr_alpha).map_err(model_error)?;
    let model = PredictionModel::new(&stm, &lqr, &attitude.dcm).map_err(model_error)?;
    Ok(PreparedRun {
        scenario: scenario.clone(),
        stm,
        attitude,
        envelope,
        constraints,
        model,
    })
}

/// One controller evaluation.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub qp: CondensedQp,
    pub solution: QpSolution,
    pub u_b: Vector3<f64>,
    pub theta: Vector3<f64>,
    pub v_star: f64,
    /// Smallest raw QP slack at the returned point, predicted rows included.
    pub qp_margin: f64,
}

impl PreparedRun {
    /// Hybrid state at step `k` from the LVLH state.
    pub fn hybrid_state(&self, k: usize, x: &LvlhState) -> RelativeState {
        RelativeState::from_lvlh(x, &self.attitude.dcm[k])
    }

    pub fn solve_step(&self, k: usize, x: &LvlhState) -> Result<StepOutcome, SimError> {
        let s = &self.scenario;
        let x_k = self.hybrid_state(k, x).to_vector();
        let qp = build_qp(&self.model, k, &x_k, &s.horizon, &s.weights, &self.constraints, s.mode).map_err(model_error)?;
        let qp = if s.reduce { reduce_constraints(&qp) } else { qp };
        let solution = solve_qp(&qp.h, &qp.f, &qp.g_mat, &qp.g, &QpOptions::default());
        let (u_b, theta) = extract_control(&solution.z, s.mode);
        let v_star = solution.objective + qp.constant;
        let qp_margin = qp.margins(&solution.z).iter().copied().fold(f64::INFINITY, f64::min);
        Ok(StepOutcome {
            qp,
            solution,
            u_b,
            theta,
            v_star,
            qp_margin,
        })
    }

    /// Smallest slack of the executed step: line-of-sight rows on the current
    /// position and control rows on the applied impulse.
    pub fn executed_margin(&self, k: usize, x: &LvlhState, u_b: &Vector3<f64>) -> f64 {
        let (a, b) = self.scenario.los.rows();
        let r = self.hybrid_state(k, x).r_b;
        let los = (b - a * DVector::from_column_slice(r.as_slice())).min();
        let poly = &self.scenario.control;
        let control = (&poly.b_u - &poly.a_u * DVector::from_column_slice(u_b.as_slice())).min();
        los.min(control)
    }
}

fn describe(tag: &RowTag) -> String {
    format!("{}[{}].{}#{}", tag.kind.as_str(), tag.step, tag.phase.as_str(), tag.row)
}

/// Rows carrying the largest Farkas weights, i.e. the conflicting subset.
fn infeasibility_report(qp: &CondensedQp, sol: &QpSolution) -> String {
    let mut parts = Vec::new();
    if let Some(b) = sol.blocking {
        parts.push(format!("blocking row {}", describe(&qp.tags[b])));
    }
    if let Some(y) = &sol.certificate {
        let peak = y.amax();
        let mut weighted: Vec<(usize, f64)> = y.iter().copied().enumerate().filter(|&(_, w)| w > 1e-9 * peak).collect();
        weighted.sort_by(|a, b| b.1.total_cmp(&a.1));
        let listed: Vec<String> =
            weighted.iter().take(8).map(|&(i, w)| format!("{} ({:.3e})", describe(&qp.tags[i]), w / peak)).collect();
        parts.push(format!("certificate rows: {}", listed.join(", ")));
    }
    parts.join("; ")
}

fn violation_report(prepared: &PreparedRun, k: usize, x: &LvlhState, u_b: &Vector3<f64>) -> String {
    let r = prepared.hybrid_state(k, x).r_b;
    format!("r_B = ({:.6}, {:.6}, {:.6}) m, u_B = ({:.6}, {:.6}, {:.6}) m/s", r.x, r.y, r.z, u_b.x, u_b.y, u_b.z)
}

pub fn run_closed_loop(config: &ScenarioConfig) -> Result<Telemetry, SimError> {
    run_closed_loop_with(config, |_, x| *x)
}

/// Closed loop with a plant hook applied after every propagation step; the
/// identity hook gives the nominal run.
pub fn run_closed_loop_with<F>(config: &ScenarioConfig, disturbance: F) -> Result<Telemetry, SimError>
where
    F: FnMut(usize, &LvlhState) -> LvlhState,
{
    let scenario = config.validate()?;
    let prepared = prepare(&scenario)?;
    run_prepared(&prepared, disturbance)
}

pub fn run_prepared<F>(prepared: &PreparedRun, mut disturbance: F) -> Result<Telemetry, SimError>
where
    F: FnMut(usize, &LvlhState) -> LvlhState,
{
    let s = &prepared.scenario;
    let t = s.orbit.sampling_period();
    let mut telemetry = Telemetry {
        rows: Vec::with_capacity(s.steps),
        theta_max: prepared.envelope.theta_max,
        y_max: prepared.constraints.y_max,
    };
    let c0 = &prepared.attitude.dcm[0];
    let mut x = RelativeState::new(s.position_body, s.velocity_lvlh).to_lvlh(c0);
    let mut cum_dv = 0.0;
    for k in 0..s.steps {
        let step = prepared.solve_step(k, &x)?;
        match step.solution.status {
            QpStatus::Optimal => {}
            QpStatus::Infeasible => {
                return Err(SimError::Infeasible {
                    k,
                    report: infeasibility_report(&step.qp, &step.solution),
                    telemetry: Box::new(telemetry),
                })
            }
            status => {
                return Err(SimError::Solver {
                    k,
                    status: status.as_str(),
                    telemetry: Box::new(telemetry),
                })
            }
        }
        let min_margin = prepared.executed_margin(k, &x, &step.u_b);
        if min_margin < -MARGIN_TOLERANCE {
            return Err(SimError::ConstraintViolation {
                k,
                margin: min_margin,
                report: violation_report(prepared, k, &x, &step.u_b),
                telemetry: Box::new(telemetry),
            });
        }
        cum_dv += step.u_b.norm();
        let c_k = &prepared.attitude.dcm[k];
        telemetry.push(TelemetryRow {
            step: k,
            t_s: k as f64 * t,
            r_b: c_k * x.r,
            r_l: x.r,
            v_l: x.v,
            u_b: step.u_b,
            theta: step.theta,
            v_star: step.v_star,
            status: step.solution.status.as_str().to_string(),
            min_margin,
            cum_dv,
        });
        let next = propagate_lvlh(&x, &(c_k.transpose() * step.u_b), &prepared.stm);
        x = disturbance(k, &next);
        if !x.is_finite() {
            return Err(SimError::Model(format!("plant state became non-finite after step {k}")));
        }
    }
    Ok(telemetry)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hybrid_state_matches_initial_conditions() {
        let scenario = ScenarioConfig::envisat_case_study().validate().unwrap();
        let prepared = prepare(&scenario).unwrap();
        let x = RelativeState::new(scenario.position_body, scenario.velocity_lvlh).to_lvlh(&prepared.attitude.dcm[0]);
        let back = prepared.hybrid_state(0, &x);
        assert!((back.r_b - scenario.position_body).norm() < 1e-14);
        assert!(prepared.executed_margin(0, &x, &Vector3::zeros()) > 0.0);
        assert_eq!(prepared.attitude.dcm.len(), 35 + 35 + 3);
    }

    #[test]
    fn envelope_uses_selected_bound() {
        let mut cfg = ScenarioConfig::envisat_case_study();
        let scenario = cfg.validate().unwrap();
        let stm = hcw_stm(&scenario.orbit).unwrap();
        let exact = feasibility_envelope(&scenario, &stm).unwrap();
        cfg.constraints.acceleration_bound = BoundKey::MixedProduct;
        let mixed = feasibility_envelope(&cfg.validate().unwrap(), &stm).unwrap();
        assert!(mixed.theta_max < exact.theta_max);
        assert!((mixed.y_max.unwrap() - 2.008).abs() < 0.01);
    }
}
