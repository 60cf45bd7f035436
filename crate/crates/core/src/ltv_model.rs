//! Hybrid body/LVLH linear time-varying model and equilibrium trajectories.
//!
//! The state is `x = (r_B, v_L)`: relative position in target body axes and
//! relative velocity in LVLH axes. The impulse `u` is expressed in body axes.

use nalgebra::{Matrix3, Matrix6, Matrix6x3, SMatrix, Vector3, Vector6};
use thiserror::Error;

use crate::relative_dynamics::{LvlhState, StmPair};

pub type Matrix9x3 = SMatrix<f64, 9, 3>;
pub type Matrix6x9 = SMatrix<f64, 6, 9>;

/// Relative singular-value threshold used to count the kernel dimension.
pub const RANK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LtvError {
    #[error("equilibrium kernel at step {k} has dimension {nullity}, expected 3")]
    KernelDimension { k: usize, nullity: usize },
    #[error("equilibrium kernel at step {0} does not project onto the position block")]
    SingularNormalization(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeState {
    pub r_b: Vector3<f64>,
    pub v_l: Vector3<f64>,
}

impl RelativeState {
    pub fn new(r_b: Vector3<f64>, v_l: Vector3<f64>) -> Self {
        Self { r_b, v_l }
    }

    /// `dcm` maps LVLH coordinates to body coordinates.
    pub fn from_lvlh(state: &LvlhState, dcm: &Matrix3<f64>) -> Self {
        Self {
            r_b: dcm * state.r,
            v_l: state.v,
        }
    }

    pub fn to_lvlh(&self, dcm: &Matrix3<f64>) -> LvlhState {
        LvlhState::new(dcm.transpose() * self.r_b, self.v_l)
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self {
            r_b: x.fixed_rows::<3>(0).into_owned(),
            v_l: x.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut x = Vector6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.r_b);
        x.fixed_rows_mut::<3>(3).copy_from(&self.v_l);
        x
    }

    pub fn is_finite(&self) -> bool {
        self.r_b.iter().chain(self.v_l.iter()).all(|v| v.is_finite())
    }
}

/// One step `x(k+1) = A_B(k) x(k) + B_B(k) u(k)` of the hybrid model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtvStep {
    pub a: Matrix6<f64>,
    pub b: Matrix6x3<f64>,
    pub k: usize,
}

impl LtvStep {
    pub fn propagate(&self, x: &Vector6<f64>, u: &Vector3<f64>) -> Vector6<f64> {
        self.a * x + self.b * u
    }
}

/// Assembles the hybrid step from the LVLH transition matrices and the
/// attitudes at `k` and `k+1`.
pub fn body_ltv_step(stm: &StmPair, c_k: &Matrix3<f64>, c_k1: &Matrix3<f64>, k: usize) -> LtvStep {
    let c_kt = c_k.transpose();
    let mut a = Matrix6::zeros();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&(c_k1 * stm.a_rr() * c_kt));
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&(c_k1 * stm.a_rv()));
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(stm.a_vr() * c_kt));
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&stm.a_vv());
    let mut b = Matrix6x3::zeros();
    b.fixed_view_mut::<3, 3>(0, 0).copy_from(&(c_k1 * stm.b_ru() * c_kt));
    b.fixed_view_mut::<3, 3>(3, 0).copy_from(&(stm.b_vu() * c_kt));
    LtvStep { a, b, k }
}

/// Map `θ -> (x_e, u_e)` of equilibrium pairs at one step. The position
/// rows form the identity, so `θ` is the body-frame equilibrium position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumBasis {
    pub m: Matrix9x3,
    pub k: usize,
}

impl EquilibriumBasis {
    pub fn m_x(&self) -> Matrix6x3<f64> {
        self.m.fixed_rows::<6>(0).into_owned()
    }

    pub fn m_v(&self) -> Matrix3<f64> {
        self.m.fixed_rows::<3>(3).into_owned()
    }

    pub fn m_u(&self) -> Matrix3<f64> {
        self.m.fixed_rows::<3>(6).into_owned()
    }

    pub fn state(&self, theta: &Vector3<f64>) -> Vector6<f64> {
        self.m_x() * theta
    }

    pub fn control(&self, theta: &Vector3<f64>) -> Vector3<f64> {
        self.m_u() * theta
    }

    /// Largest singular value of `[A_B - I, B_B] M`.
    pub fn residual(&self, step: &LtvStep) -> f64 {
        (kernel_matrix(step) * self.m).svd(false, false).singular_values.max()
    }
}

fn kernel_matrix(step: &LtvStep) -> Matrix6x9 {
    let mut k = Matrix6x9::zeros();
    k.fixed_view_mut::<6, 6>(0, 0).copy_from(&(step.a - Matrix6::identity()));
    k.fixed_view_mut::<6, 3>(0, 6).copy_from(&step.b);
    k
}

pub fn equilibrium_basis(step: &LtvStep) -> Result<EquilibriumBasis, LtvError> {
    // pad to square so the decomposition yields the full right basis
    let mut square = SMatrix::<f64, 9, 9>::zeros();
    square.fixed_view_mut::<6, 9>(0, 0).copy_from(&kernel_matrix(step));
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma = svd.singular_values;
    let threshold = RANK_TOLERANCE * sigma.max();
    let nullity = sigma.iter().filter(|&&s| s <= threshold).count();
    if nullity != 3 {
        return Err(LtvError::KernelDimension { k: step.k, nullity });
    }
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| sigma[i].total_cmp(&sigma[j]));
    let mut null = Matrix9x3::zeros();
    for (col, &idx) in order.iter().take(3).enumerate() {
        null.set_column(col, &v_t.row(idx).transpose());
    }
    let top: Matrix3<f64> = null.fixed_rows::<3>(0).into_owned();
    let top_inv = top
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or(LtvError::SingularNormalization(step.k))?;
    let mut m = null * top_inv;
    // the identity block is exact by construction
    m.fixed_rows_mut::<3>(0).copy_from(&Matrix3::identity());
    Ok(EquilibriumBasis { m, k: step.k })
}

/// `(x_s(k), u_s(k)) = M(k) θ` for each basis in order.
pub fn equilibrium_trajectory(
    theta: &Vector3<f64>,
    bases: &[EquilibriumBasis],
) -> Vec<(Vector6<f64>, Vector3<f64>)> {
    bases.iter().map(|b| (b.state(theta), b.control(theta))).collect()
}
