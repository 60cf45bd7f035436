//! Terminal virtual controllers: LVLH LQR gain rotated into the hybrid frame
//! and the two-step dead-beat law.

use nalgebra::{DMatrix, Matrix3, Matrix3x6, Matrix6, SymmetricEigen};
use thiserror::Error;

use crate::relative_dynamics::{DynamicsError, StmPair};

pub const DARE_MAX_ITERATIONS: usize = 10_000;
pub const DARE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TerminalError {
    #[error("Riccati iteration did not converge after {iterations} iterations (relative change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("Riccati solution is indefinite (minimum eigenvalue {0:e})")]
    Indefinite(f64),
    #[error("singular matrix in Riccati update")]
    Singular,
    #[error("invalid LQR weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Solution `P` of the discrete algebraic Riccati equation and the gain
/// `K = -(R + BᵀPB)⁻¹ BᵀPA` (so that `u = K x`).
#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub iterations: usize,
}

fn gain(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>, TerminalError> {
    let btp = b.transpose() * p;
    let s = r + &btp * b;
    let s_inv = s.cholesky().ok_or(TerminalError::Singular)?.inverse();
    Ok(-(s_inv * btp * a))
}

fn check_definite(p: &DMatrix<f64>) -> Result<(), TerminalError> {
    let min = SymmetricEigen::new(p.clone()).eigenvalues.min();
    if min < -1e-10 * p.norm().max(f64::MIN_POSITIVE) {
        return Err(TerminalError::Indefinite(min));
    }
    Ok(())
}

/// Fixed-point Riccati iteration started from `P = Q`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DareSolution, TerminalError> {
    let mut p = q.clone();
    let mut change = f64::INFINITY;
    for it in 1..=DARE_MAX_ITERATIONS {
        let k = gain(a, b, r, &p)?;
        // P⁺ = Q + AᵀPA + AᵀPB K
        let mut next = q + a.transpose() * &p * a + a.transpose() * &p * b * &k;
        next = (&next + next.transpose()) * 0.5;
        let delta = (&next - &p).norm();
        let scale = next.norm();
        p = next;
        change = if scale > 0.0 { delta / scale } else { delta };
        if change <= DARE_TOLERANCE {
            check_definite(&p)?;
            let k = gain(a, b, r, &p)?;
            return Ok(DareSolution { p, k, iterations: it });
        }
    }
    Err(TerminalError::NoConvergence {
        iterations: DARE_MAX_ITERATIONS,
        change,
    })
}

/// Structure-preserving doubling; an independent route to the same `P`.
pub fn solve_dare_doubling(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DareSolution, TerminalError> {
    let n = a.nrows();
    let r_inv = r.clone().try_inverse().ok_or(TerminalError::Singular)?;
    let mut ak = a.clone();
    let mut gk = b * r_inv * b.transpose();
    let mut hk = q.clone();
    let mut change = f64::INFINITY;
    for it in 1..=64 {
        let w = DMatrix::identity(n, n) + &gk * &hk;
        let w_inv = w.try_inverse().ok_or(TerminalError::Singular)?;
        let a_next = &ak * &w_inv * &ak;
        let g_next = &gk + &ak * &w_inv * &gk * ak.transpose();
        let mut h_next = &hk + ak.transpose() * &hk * &w_inv * &ak;
        h_next = (&h_next + h_next.transpose()) * 0.5;
        let delta = (&h_next - &hk).norm();
        let scale = h_next.norm();
        change = if scale > 0.0 { delta / scale } else { delta };
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if change <= DARE_TOLERANCE {
            check_definite(&hk)?;
            let k = gain(a, b, r, &hk)?;
            return Ok(DareSolution { p: hk, k, iterations: it });
        }
    }
    Err(TerminalError::NoConvergence { iterations: 64, change })
}

/// `‖P − Q − AᵀPA − AᵀPB K‖` (Frobenius).
pub fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    sol: &DareSolution,
) -> f64 {
    let p = &sol.p;
    (p - q - a.transpose() * p * a - a.transpose() * p * b * &sol.k).norm()
}

/// Constant LVLH LQR design with weights `q_lqr · diag(I₃, α I₃)` and `R = I₃`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrDesign {
    pub q: Matrix6<f64>,
    pub r: Matrix3<f64>,
    pub p: Matrix6<f64>,
    pub k_f: Matrix3x6<f64>,
}

impl LqrDesign {
    pub fn new(stm: &StmPair, q_lqr: f64, alpha_lqr: f64) -> Result<Self, TerminalError> {
        if !(q_lqr > 0.0 && alpha_lqr > 0.0 && q_lqr.is_finite() && alpha_lqr.is_finite()) {
            return Err(TerminalError::InvalidWeights(format!(
                "q_lqr = {q_lqr}, alpha_lqr = {alpha_lqr}; both must be positive"
            )));
        }
        let mut q = Matrix6::zeros();
        for i in 0..3 {
            q[(i, i)] = q_lqr;
            q[(i + 3, i + 3)] = q_lqr * alpha_lqr;
        }
        let r = Matrix3::identity();
        let to_d = |m: &[f64], rows, cols| DMatrix::from_column_slice(rows, cols, m);
        let sol = solve_dare(
            &to_d(stm.a.as_slice(), 6, 6),
            &to_d(stm.b.as_slice(), 6, 3),
            &to_d(q.as_slice(), 6, 6),
            &to_d(r.as_slice(), 3, 3),
        )?;
        Ok(Self {
            q,
            r,
            p: Matrix6::from_column_slice(sol.p.as_slice()),
            k_f: Matrix3x6::from_column_slice(sol.k.as_slice()),
        })
    }

    /// Spectral radius of `A_L + B_L K_F`.
    pub fn closed_loop_radius(&self, stm: &StmPair) -> f64 {
        (stm.a + stm.b * self.k_f)
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

/// `C K_F blockdiag(Cᵀ, I₃)`: the LVLH gain acting on hybrid states and
/// producing body-frame impulses.
pub fn rotate_lqr_gain(k_f: &Matrix3x6<f64>, c_k: &Matrix3<f64>) -> Matrix3x6<f64> {
    let mut g = Matrix3x6::zeros();
    g.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(c_k * k_f.fixed_view::<3, 3>(0, 0) * c_k.transpose()));
    g.fixed_view_mut::<3, 3>(0, 3).copy_from(&(c_k * k_f.fixed_view::<3, 3>(0, 3)));
    g
}

/// Dead-beat law `u(k) = K_x x(k) + K_θ θ` placing `r_B(k+2)` on `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadbeatGains {
    pub k_x: Matrix3x6<f64>,
    pub k_theta: Matrix3<f64>,
}

/// Gains from the two-step reachability relation
/// `r(k+2) = (A_rr² + A_rv A_vr) r + (A_rr A_rv + A_rv A_vv) v + A_rv u(k)`.
pub fn deadbeat_gains(stm: &StmPair, c_k: &Matrix3<f64>, c_k2: &Matrix3<f64>) -> Result<DeadbeatGains, TerminalError> {
    let (a_rr, a_rv, a_vr, a_vv) = (stm.a_rr(), stm.a_rv(), stm.a_vr(), stm.a_vv());
    let a_rv_inv = stm.a_rv_inverse()?;
    let k_r = -a_rv_inv * (a_rr * a_rr + a_rv * a_vr);
    let k_v = -a_rv_inv * (a_rr * a_rv + a_rv * a_vv);
    let mut k_hat = Matrix3x6::zeros();
    k_hat.fixed_view_mut::<3, 3>(0, 0).copy_from(&k_r);
    k_hat.fixed_view_mut::<3, 3>(0, 3).copy_from(&k_v);
    Ok(DeadbeatGains {
        k_x: rotate_lqr_gain(&k_hat, c_k),
        k_theta: c_k * a_rv_inv * c_k2.transpose(),
    })
}

/// Per-step gains over an attitude grid. Entry `k` of the dead-beat
/// schedule needs `C(k+2)`, so it is two shorter than the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub k_lqr: Vec<Matrix3x6<f64>>,
    pub k_db: Vec<DeadbeatGains>,
}

impl GainSchedule {
    pub fn new(design: &LqrDesign, stm: &StmPair, dcm: &[Matrix3<f64>]) -> Result<Self, TerminalError> {
        let k_lqr = dcm.iter().map(|c| rotate_lqr_gain(&design.k_f, c)).collect();
        let k_db = dcm
            .windows(3)
            .map(|w| deadbeat_gains(stm, &w[0], &w[2]))
            .collect::<Result<_, _>>()?;
        Ok(Self { k_lqr, k_db })
    }
}

/// Block-diagonal `diag(Cᵀ, I₃)` that maps hybrid states to LVLH states.
pub fn hybrid_to_lvlh(c_k: &Matrix3<f64>) -> Matrix6<f64> {
    let mut t = Matrix6::identity();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(&c_k.transpose());
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ltv_model::{body_ltv_step, equilibrium_basis};
    use crate::relative_dynamics::{hcw_stm, OrbitParams, MU_EARTH_KM3_S2};
    use nalgebra::{Rotation3, Vector3, Vector6};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stm() -> StmPair {
        hcw_stm(&OrbitParams::circular(MU_EARTH_KM3_S2, 7141.0, 1.0).unwrap()).unwrap()
    }

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn random_dcm(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        Rotation3::new(axis * rng.random_range(0.0..3.0)).into_inner()
    }

    fn random_vec6(rng: &mut ChaCha8Rng, r: f64, v: f64) -> Vector6<f64> {
        Vector6::from_fn(|i, _| if i < 3 { rng.random_range(-r..r) } else { rng.random_range(-v..v) })
    }

    #[test]
    fn golden_ratio_scalar() {
        let sol = solve_dare(&scalar(1.0), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sol.p[(0, 0)] - phi).abs() <= 1e-10);
        assert!((sol.k[(0, 0)] + phi / (1.0 + phi)).abs() <= 1e-10);
        let dbl = solve_dare_doubling(&scalar(1.0), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        assert!((dbl.p[(0, 0)] - phi).abs() <= 1e-10);
    }

    #[test]
    fn zero_cost_stable_plant() {
        let sol = solve_dare(&scalar(0.5), &scalar(1.0), &scalar(0.0), &scalar(1.0)).unwrap();
        assert_eq!(sol.p[(0, 0)], 0.0);
        assert_eq!(sol.k[(0, 0)], 0.0);
    }

    #[test]
    fn hcw_design_is_stabilizing() {
        let stm = stm();
        let design = LqrDesign::new(&stm, 1.0, 10.0).unwrap();
        let to_d = |m: &[f64], r, c| DMatrix::from_column_slice(r, c, m);
        let (a, b) = (to_d(stm.a.as_slice(), 6, 6), to_d(stm.b.as_slice(), 6, 3));
        let q = to_d(design.q.as_slice(), 6, 6);
        let sol = DareSolution {
            p: to_d(design.p.as_slice(), 6, 6),
            k: to_d(design.k_f.as_slice(), 3, 6),
            iterations: 0,
        };
        assert!(dare_residual(&a, &b, &q, &sol) <= 1e-8 * design.p.norm());
        assert!(design.closed_loop_radius(&stm) < 1.0);
        assert!(design.p.symmetric_eigen().eigenvalues.min() > 0.0);
    }

    #[test]
    fn doubling_agrees_with_iteration() {
        let stm = stm();
        let to_d = |m: &[f64], r, c| DMatrix::from_column_slice(r, c, m);
        let (a, b) = (to_d(stm.a.as_slice(), 6, 6), to_d(stm.b.as_slice(), 6, 3));
        for (q_lqr, alpha) in [(1.0, 10.0), (0.1, 1.0), (5.0, 100.0)] {
            let q = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(6, |i, _| if i < 3 { q_lqr } else { q_lqr * alpha }));
            let r = DMatrix::identity(3, 3);
            let it = solve_dare(&a, &b, &q, &r).unwrap();
            let db = solve_dare_doubling(&a, &b, &q, &r).unwrap();
            assert!((&it.p - &db.p).norm() <= 1e-8 * it.p.norm());
        }
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(LqrDesign::new(&stm(), 0.0, 1.0).is_err());
        assert!(LqrDesign::new(&stm(), 1.0, -1.0).is_err());
    }

    #[test]
    fn rotated_gain_is_frame_equivalent() {
        let stm = stm();
        let design = LqrDesign::new(&stm, 1.0, 10.0).unwrap();
        assert_eq!(rotate_lqr_gain(&design.k_f, &Matrix3::identity()), design.k_f);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let c = random_dcm(&mut rng);
            let x = random_vec6(&mut rng, 10.0, 0.1);
            let u_b = rotate_lqr_gain(&design.k_f, &c) * x;
            let u_l = design.k_f * hybrid_to_lvlh(&c) * x;
            assert!((u_b - c * u_l).amax() <= 1e-12);
            let norm = rotate_lqr_gain(&design.k_f, &c).svd(false, false).singular_values.max();
            assert!((norm - (design.k_f * hybrid_to_lvlh(&c)).svd(false, false).singular_values.max()).abs() <= 1e-12);
            assert!(norm <= design.k_f.svd(false, false).singular_values.max() + 1e-12);
        }
    }

    #[test]
    fn lqr_lyapunov_decrease_about_equilibrium() {
        let stm = stm();
        let design = LqrDesign::new(&stm, 1.0, 10.0).unwrap();
        let weight = design.q + design.k_f.transpose() * design.r * design.k_f;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_dcm(&mut rng);
        let step = body_ltv_step(&stm, &c, &c, 0);
        let basis = equilibrium_basis(&step).unwrap();
        let k = rotate_lqr_gain(&design.k_f, &c);
        let t = hybrid_to_lvlh(&c);
        let mut violations = 0;
        for _ in 0..1000 {
            let theta = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(0.0..3.0), rng.random_range(-2.0..2.0));
            let xs = basis.state(&theta);
            let us = basis.control(&theta);
            let x = xs + random_vec6(&mut rng, 5.0, 0.05);
            let u = k * (x - xs) + us;
            let next = step.propagate(&x, &u);
            let p_now = (t * (x - xs)).dot(&(design.p * t * (x - xs)));
            let p_next = (t * (next - xs)).dot(&(design.p * t * (next - xs)));
            let stage = (t * (x - xs)).dot(&(weight * t * (x - xs)));
            // value function decreases by exactly the stage cost
            assert!((p_now - p_next - stage).abs() <= 1e-9 * p_now);
            if p_next >= p_now {
                violations += 1;
            }
        }
        assert_eq!(violations, 0);
    }

    #[test]
    fn deadbeat_static_target_reduces_to_inverse() {
        let stm = stm();
        let g = deadbeat_gains(&stm, &Matrix3::identity(), &Matrix3::identity()).unwrap();
        assert!((g.k_theta - stm.a_rv_inverse().unwrap()).amax() <= 1e-15);
    }

    #[test]
    fn deadbeat_lands_in_two_steps() {
        let stm = stm();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let c: Vec<_> = (0..4).map(|_| random_dcm(&mut rng)).collect();
            let theta = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(0.0..3.0), rng.random_range(-3.0..3.0));
            let mut x = random_vec6(&mut rng, 20.0, 0.5);
            for k in 0..2 {
                let g = deadbeat_gains(&stm, &c[k], &c[k + 2]).unwrap();
                let u = g.k_x * x + g.k_theta * theta;
                x = body_ltv_step(&stm, &c[k], &c[k + 1], k).propagate(&x, &u);
            }
            assert!((x.fixed_rows::<3>(0) - theta).norm() <= 1e-9);
        }
    }

    #[test]
    fn deadbeat_holds_static_equilibrium() {
        let stm = stm();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = random_dcm(&mut rng);
        let basis = equilibrium_basis(&body_ltv_step(&stm, &c, &c, 0)).unwrap();
        let g = deadbeat_gains(&stm, &c, &c).unwrap();
        let theta = Vector3::new(0.4, 2.0, -0.3);
        let u = g.k_x * basis.state(&theta) + g.k_theta * theta;
        assert!((u - basis.control(&theta)).amax() <= 1e-10);
    }

    #[test]
    fn schedule_lengths() {
        let stm = stm();
        let design = LqrDesign::new(&stm, 1.0, 10.0).unwrap();
        let dcm = vec![Matrix3::identity(); 7];
        let s = GainSchedule::new(&design, &stm, &dcm).unwrap();
        assert_eq!(s.k_lqr.len(), 7);
        assert_eq!(s.k_db.len(), 5);
    }
}
