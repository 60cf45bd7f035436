//! Condensed MPC-for-tracking problem.
//!
//! The decision vector is `z = (u(k), …, u(k+N_c−1), θ̄)`. Beyond the
//! control horizon the predicted inputs follow the rotated LQR law up to
//! `k+N_p−2` and the two-step dead-beat law at `k+N_p−1` and `k+N_p`, both
//! steering toward the artificial equilibrium `M(·)θ̄`.

mod condense;
mod dump;
mod reduce;

pub use condense::{build_qp, extract_control, CondensedQp, ConstraintKind, Phase, RowTag};
pub use dump::{read_qp_dump, write_qp_dump, QpDump};
pub use reduce::reduce_constraints;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6};
use thiserror::Error;

use crate::feasibility::{ControlPolytope, LosGeometry};
use crate::ltv_model::{body_ltv_step, equilibrium_basis, EquilibriumBasis, LtvError, LtvStep};
use crate::relative_dynamics::StmPair;
use crate::terminal_control::{GainSchedule, LqrDesign, TerminalError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpctError {
    #[error("prediction schedule covers {available} steps, step {k} needs {needed}")]
    Coverage { k: usize, needed: usize, available: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ltv(#[from] LtvError),
    #[error(transparent)]
    Terminal(#[from] TerminalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HorizonConfig {
    pub n_c: usize,
    pub n: usize,
}

impl HorizonConfig {
    pub fn new(n_c: usize, n: usize) -> Result<Self, MpctError> {
        if n_c == 0 {
            return Err(MpctError::InvalidConfig("control horizon must be at least 1".into()));
        }
        Ok(Self { n_c, n })
    }

    /// `N_p = N_c + N + 2`.
    pub fn n_p(&self) -> usize {
        self.n_c + self.n + 2
    }
}

/// Diagonal cost weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub q: Matrix6<f64>,
    pub r: Matrix3<f64>,
    pub t: Matrix3<f64>,
}

impl Weights {
    pub fn new(q: [f64; 6], r: [f64; 3], t: [f64; 3]) -> Result<Self, MpctError> {
        let finite = q.iter().chain(&r).chain(&t).all(|v| v.is_finite());
        if !finite || q.iter().any(|&v| v < 0.0) || r.iter().chain(&t).any(|&v| v <= 0.0) {
            return Err(MpctError::InvalidConfig(format!(
                "weights need Q >= 0 and R, T > 0, got Q = {q:?}, R = {r:?}, T = {t:?}"
            )));
        }
        Ok(Self {
            q: Matrix6::from_diagonal(&q.into()),
            r: Matrix3::from_diagonal(&r.into()),
            t: Matrix3::from_diagonal(&t.into()),
        })
    }

    /// `Q = diag(1,1,1,10,10,10)`, `R = I₃`, `T = diag(1000, 100, 1000)`.
    /// The lateral offsets weigh more than the radial one so the reference
    /// prefers the prism axis over its walls.
    pub fn default_tracking() -> Self {
        Self::new([1.0, 1.0, 1.0, 10.0, 10.0, 10.0], [1.0; 3], [1000.0, 100.0, 1000.0]).expect("valid defaults")
    }
}

/// Polytopic constraints shared by every step of the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub los: LosGeometry,
    /// Optional extra rows on the full hybrid state (6 columns).
    pub state_rows: Option<(DMatrix<f64>, DVector<f64>)>,
    pub control: ControlPolytope,
    /// Cap `y_B ≤ y_max` on the equilibrium parameter.
    pub y_max: Option<f64>,
}

impl ConstraintSet {
    pub fn new(los: LosGeometry, control: ControlPolytope, y_max: Option<f64>) -> Self {
        Self {
            los,
            state_rows: None,
            control,
            y_max,
        }
    }

    /// All state rows `A_x x ≤ b_x`: line of sight on the position, then any
    /// extra rows.
    pub fn state_polytope(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (a_los, b_los) = self.los.rows();
        let extra = self.state_rows.as_ref().map_or(0, |(a, _)| a.nrows());
        let mut a = DMatrix::zeros(a_los.nrows() + extra, 6);
        let mut b = DVector::zeros(a_los.nrows() + extra);
        a.view_mut((0, 0), (a_los.nrows(), 3)).copy_from(&a_los);
        b.rows_mut(0, b_los.len()).copy_from(&b_los);
        if let Some((ax, bx)) = &self.state_rows {
            a.view_mut((a_los.nrows(), 0), (extra, 6)).copy_from(ax);
            b.rows_mut(b_los.len(), extra).copy_from(bx);
        }
        (a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Artificial equilibrium `θ̄` is a decision variable.
    #[default]
    Mpct,
    /// `θ̄ ≡ 0`: plain MPC toward the docking point with the same terminal laws.
    Baseline,
}

/// Hybrid-frame models, equilibrium bases and terminal gains over an
/// attitude grid. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionModel {
    pub dcm: Vec<Matrix3<f64>>,
    pub steps: Vec<LtvStep>,
    pub bases: Vec<EquilibriumBasis>,
    pub gains: GainSchedule,
}

impl PredictionModel {
    pub fn new(stm: &StmPair, lqr: &LqrDesign, dcm: &[Matrix3<f64>]) -> Result<Self, MpctError> {
        if dcm.len() < 3 {
            return Err(MpctError::InvalidConfig("attitude grid needs at least 3 samples".into()));
        }
        let steps: Vec<_> = dcm.windows(2).enumerate().map(|(k, w)| body_ltv_step(stm, &w[0], &w[1], k)).collect();
        let bases = steps.iter().map(equilibrium_basis).collect::<Result<Vec<_>, _>>()?;
        let gains = GainSchedule::new(lqr, stm, dcm)?;
        Ok(Self {
            dcm: dcm.to_vec(),
            steps,
            bases,
            gains,
        })
    }

    /// Last control step `k` for which a horizon of `n_p` is covered.
    pub fn last_covered_step(&self, n_p: usize) -> Option<usize> {
        (self.dcm.len()).checked_sub(n_p + 3)
    }

    fn check_coverage(&self, k: usize, n_p: usize) -> Result<(), MpctError> {
        let needed = k + n_p + 3;
        if self.dcm.len() < needed {
            return Err(MpctError::Coverage {
                k,
                needed,
                available: self.dcm.len(),
            });
        }
        Ok(())
    }
}
