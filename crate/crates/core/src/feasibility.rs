//! Closed-form envelope on the equilibrium parameter.
//!
//! Holding a body-fixed equilibrium at distance `θ` from the target requires
//! impulses built from the equilibrium position, its LVLH velocity and the
//! per-step velocity increment. Bounding each of those by a ball whose radius
//! scales with `θ` yields the largest `θ` compatible with the control
//! polytope. A planar cap on `y_B` inside the line-of-sight prism then gives a
//! linear inner approximation of that sphere.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::attitude::{InertiaTensor, PolhodeInvariants};
use crate::relative_dynamics::{DynamicsError, StmPair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeasibilityError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("angular momentum {h} and energy {energy} do not describe a polhode")]
    NoPolhode { h: f64, energy: f64 },
    #[error("invalid control polytope: {0}")]
    InvalidPolytope(String),
    #[error("invalid line-of-sight geometry: {0}")]
    InvalidGeometry(String),
    #[error("theta_max = {theta_max} m does not reach past the prism apex; no cap exists")]
    NoCap { theta_max: f64 },
}

fn spectral_norm(m: &Matrix3<f64>) -> f64 {
    m.svd(false, false).singular_values.max()
}

/// Blocks of the map from (equilibrium position, velocity, velocity
/// increment) to the impulse holding the equilibrium. Depends on `(n, T)` only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingControlMatrix {
    pub u_r: Matrix3<f64>,
    pub u_v: Matrix3<f64>,
    pub u_dv: Matrix3<f64>,
    pub norm_r: f64,
    pub norm_v: f64,
    pub norm_dv: f64,
}

impl TrackingControlMatrix {
    pub fn norms(&self) -> [f64; 3] {
        [self.norm_r, self.norm_v, self.norm_dv]
    }
}

pub fn tracking_control_matrix(stm: &StmPair, sampling_period: f64) -> Result<TrackingControlMatrix, FeasibilityError> {
    let t = sampling_period;
    let a_rv_inv = stm.a_rv_inverse()?;
    let a_prime = Matrix3::identity() - stm.a_rr();
    let a_vv = stm.a_vv();
    let u_r = a_rv_inv * a_prime - a_vv * a_rv_inv * a_prime - stm.a_vr();
    let u_v = (a_rv_inv * a_prime - a_vv * a_rv_inv + a_rv_inv) * t;
    let u_dv = a_rv_inv * t;
    Ok(TrackingControlMatrix {
        u_r,
        u_v,
        u_dv,
        norm_r: spectral_norm(&u_r),
        norm_v: spectral_norm(&u_v),
        norm_dv: spectral_norm(&u_dv),
    })
}

/// Which angular-acceleration bound feeds the velocity-increment ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccelerationBound {
    /// Exact maximum of `‖I⁻¹(ω × Iω)‖²` over the polhode.
    #[default]
    TorqueFree,
    /// Maximum of `‖(I⁻¹ω) × (Iω)‖²`, a looser bound with a pairwise closed
    /// form; kept for comparison with reference envelopes.
    MixedProduct,
}

/// Principal-axis squared rates `x_k = ω_k²` at the ends of the polhode
/// segment `{Σ I_k² x_k = h², Σ I_k x_k = 2E, x ≥ 0}`.
fn polhode_endpoints(moments: &Vector3<f64>, h2: f64, e2: f64) -> Vec<Vector3<f64>> {
    let i = moments;
    let mut out = Vec::new();
    for k in 0..3 {
        let (a, b) = ((k + 1) % 3, (k + 2) % 3);
        if (i[a] - i[b]).abs() <= 1e-12 * i.max() {
            continue;
        }
        let xa = (h2 - i[b] * e2) / (i[a] * (i[a] - i[b]));
        let xb = (h2 - i[a] * e2) / (i[b] * (i[b] - i[a]));
        let tol = 1e-12 * (h2 / (i.min() * i.min()));
        if xa >= -tol && xb >= -tol {
            let mut x = Vector3::zeros();
            x[a] = xa.max(0.0);
            x[b] = xb.max(0.0);
            out.push(x);
        }
    }
    out
}

/// Maximum over the polhode of `‖I⁻¹(ω × Iω)‖²` ((rad/s²)²).
///
/// In squared principal rates the objective is the bilinear form
/// `Σ ((I_a − I_b)/I_k)² x_a x_b`, so along the polhode segment it is a
/// quadratic in one parameter and its maximum is at an end or at the
/// interior stationary point.
pub fn polhode_extremum(inertia: &InertiaTensor, inv: &PolhodeInvariants) -> Result<f64, FeasibilityError> {
    inv.validate(inertia).map_err(|_| FeasibilityError::NoPolhode {
        h: inv.h,
        energy: inv.energy,
    })?;
    let i = inertia.principal_moments();
    let ends = polhode_endpoints(&i, inv.h * inv.h, 2.0 * inv.energy);
    let mut s = Matrix3::zeros();
    for k in 0..3 {
        let (a, b) = ((k + 1) % 3, (k + 2) % 3);
        let c = ((i[a] - i[b]) / i[k]).powi(2);
        s[(a, b)] = c;
        s[(b, a)] = c;
    }
    let f = |x: &Vector3<f64>| 0.5 * x.dot(&(s * x));
    let Some(p) = ends.first() else {
        return Ok(0.0);
    };
    let q = ends
        .iter()
        .max_by(|a, b| (*a - p).norm().total_cmp(&(*b - p).norm()))
        .unwrap_or(p);
    let d = q - p;
    let mut best = f(p).max(f(q));
    let curvature = 0.5 * d.dot(&(s * d));
    let slope = p.dot(&(s * d));
    if curvature < 0.0 {
        let t = -slope / (2.0 * curvature);
        if (0.0..=1.0).contains(&t) {
            best = best.max(f(&(p + d * t)));
        }
    }
    Ok(best.max(0.0))
}

/// Maximum over the polhode of `‖(I⁻¹ω) × (Iω)‖²`, in closed form over the
/// pairs of principal moments:
/// `max_{i≠j} −((I_i + I_j)²/(I_i I_j)³)(h² − 2 I_i E)(h² − 2 I_j E)`.
pub fn polhode_extremum_mixed(inertia: &InertiaTensor, inv: &PolhodeInvariants) -> Result<f64, FeasibilityError> {
    inv.validate(inertia).map_err(|_| FeasibilityError::NoPolhode {
        h: inv.h,
        energy: inv.energy,
    })?;
    let m = inertia.principal_moments();
    let h2 = inv.h * inv.h;
    let e = inv.energy;
    let mut best = 0.0_f64;
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let (ii, ij) = (m[i], m[j]);
        let value = -((ii + ij).powi(2) / (ii * ij).powi(3)) * (h2 - 2.0 * ii * e) * (h2 - 2.0 * ij * e);
        best = best.max(value);
    }
    Ok(best)
}

/// Largest `θ` such that `Σ_j A^j x_j ≤ b` for every `x_j` in the ball of
/// radius `r_j θ`. Rows that no ball can move are skipped; if none remain the
/// result is `+∞`.
pub fn ball_robust_theta_max(a_list: &[DMatrix<f64>], b: &DVector<f64>, r: &[f64]) -> f64 {
    assert_eq!(a_list.len(), r.len(), "one radius per matrix");
    let mut best = f64::INFINITY;
    for i in 0..b.len() {
        let denom: f64 = a_list.iter().zip(r).map(|(a, rj)| rj * a.row(i).norm()).sum();
        if denom > 0.0 {
            best = best.min(b[i] / denom);
        }
    }
    best
}

/// `A_u u ≤ b_u` on the body-frame impulse (m/s).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPolytope {
    pub a_u: DMatrix<f64>,
    pub b_u: DVector<f64>,
}

impl ControlPolytope {
    pub fn new(a_u: DMatrix<f64>, b_u: DVector<f64>) -> Result<Self, FeasibilityError> {
        if a_u.ncols() != 3 || a_u.nrows() != b_u.len() {
            return Err(FeasibilityError::InvalidPolytope(format!(
                "A_u is {}x{}, b_u has {} rows",
                a_u.nrows(),
                a_u.ncols(),
                b_u.len()
            )));
        }
        if !a_u.iter().chain(b_u.iter()).all(|v| v.is_finite()) || b_u.iter().any(|&v| v < 0.0) {
            return Err(FeasibilityError::InvalidPolytope("entries must be finite and b_u >= 0".into()));
        }
        Ok(Self { a_u, b_u })
    }

    /// `|u_i| ≤ u_max` for each axis.
    pub fn symmetric_box(u_max: f64) -> Result<Self, FeasibilityError> {
        let mut a = DMatrix::zeros(6, 3);
        for i in 0..3 {
            a[(i, i)] = 1.0;
            a[(i + 3, i)] = -1.0;
        }
        Self::new(a, DVector::from_element(6, u_max))
    }

    pub fn rows(&self) -> usize {
        self.b_u.len()
    }

    pub fn contains(&self, u: &Vector3<f64>, tol: f64) -> bool {
        (&self.a_u * DVector::from_column_slice(u.as_slice()) - &self.b_u).max() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityEnvelope {
    pub varpi_star: f64,
    /// `h / I_min` (1/s).
    pub radius_v: f64,
    /// `√ϖ* T` (1/s).
    pub radius_dv: f64,
    pub theta_max: f64,
    pub y_max: Option<f64>,
}

impl FeasibilityEnvelope {
    pub fn with_los_cap(mut self, geometry: &LosGeometry) -> Result<Self, FeasibilityError> {
        self.y_max = Some(los_cap(geometry, self.theta_max)?);
        Ok(self)
    }
}

pub fn theta_max_envelope(
    polytope: &ControlPolytope,
    tracking: &TrackingControlMatrix,
    inertia: &InertiaTensor,
    inv: &PolhodeInvariants,
    sampling_period: f64,
) -> Result<FeasibilityEnvelope, FeasibilityError> {
    theta_max_envelope_with(polytope, tracking, inertia, inv, sampling_period, AccelerationBound::TorqueFree)
}

pub fn theta_max_envelope_with(
    polytope: &ControlPolytope,
    tracking: &TrackingControlMatrix,
    inertia: &InertiaTensor,
    inv: &PolhodeInvariants,
    sampling_period: f64,
    bound: AccelerationBound,
) -> Result<FeasibilityEnvelope, FeasibilityError> {
    let varpi_star = match bound {
        AccelerationBound::TorqueFree => polhode_extremum(inertia, inv)?,
        AccelerationBound::MixedProduct => polhode_extremum_mixed(inertia, inv)?,
    };
    let radius_v = inv.h / inertia.minor_axis_moment();
    let radius_dv = varpi_star.sqrt() * sampling_period;
    let a_list: Vec<_> = tracking.norms().iter().map(|&s| &polytope.a_u * s).collect();
    let theta_max = ball_robust_theta_max(&a_list, &polytope.b_u, &[1.0, radius_v, radius_dv]);
    Ok(FeasibilityEnvelope {
        varpi_star,
        radius_v,
        radius_dv,
        theta_max,
        y_max: None,
    })
}

/// Line-of-sight prism in body axes: `y ≥ 0`, `|x| ≤ x0 + y/c_x`,
/// `|z| ≤ z0 + y/c_z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosGeometry {
    pub c_x: f64,
    pub c_z: f64,
    pub x0: f64,
    pub z0: f64,
}

impl LosGeometry {
    pub fn new(c_x: f64, c_z: f64, x0: f64, z0: f64) -> Result<Self, FeasibilityError> {
        if !(c_x > 0.0 && c_z > 0.0 && x0 >= 0.0 && z0 >= 0.0) || ![c_x, c_z, x0, z0].iter().all(|v| v.is_finite()) {
            return Err(FeasibilityError::InvalidGeometry(format!(
                "c_x = {c_x}, c_z = {c_z}, x0 = {x0}, z0 = {z0}"
            )));
        }
        Ok(Self { c_x, c_z, x0, z0 })
    }

    /// The five half-spaces `A r ≤ b` on the body-frame position.
    pub fn rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (cx, cz) = (self.c_x, self.c_z);
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(5, 3, &[
            0.0, -1.0, 0.0,
            cx, -1.0, 0.0,
            -cx, -1.0, 0.0,
            0.0, -1.0, cz,
            0.0, -1.0, -cz,
        ]);
        let b = DVector::from_column_slice(&[0.0, cx * self.x0, cx * self.x0, cz * self.z0, cz * self.z0]);
        (a, b)
    }

    fn xi(&self) -> (f64, f64) {
        let (cx, cz) = (self.c_x, self.c_z);
        let xi2 = cx * self.z0 + cz * self.x0;
        let xi3 = cx * cx * cz * cz + cx * cx + cz * cz;
        (xi2, xi3)
    }
}

fn cap_from(geometry: &LosGeometry, theta_max: f64, xi1: f64) -> Result<f64, FeasibilityError> {
    let (xi2, xi3) = geometry.xi();
    let disc = xi3 * theta_max * theta_max - xi1;
    if !(disc >= 0.0) {
        return Err(FeasibilityError::NoCap { theta_max });
    }
    let y = geometry.c_x * geometry.c_z * (disc.sqrt() - xi2) / xi3;
    if y < 0.0 {
        return Err(FeasibilityError::NoCap { theta_max });
    }
    Ok(y)
}

/// Planar cap `y_B ≤ y_max` with
/// `ξ₁ = c_x²c_z²(x0² + z0²) + (c_z z0 + c_x x0)²`. This `ξ₁` exceeds the
/// exact-corner value by `4 c_x c_z x0 z0`, so the cap never exceeds
/// [`los_cap_exact`] and the capped prism stays inside the sphere.
pub fn los_cap(geometry: &LosGeometry, theta_max: f64) -> Result<f64, FeasibilityError> {
    let g = geometry;
    let xi1 = (g.c_x * g.c_z).powi(2) * (g.x0 * g.x0 + g.z0 * g.z0) + (g.c_z * g.z0 + g.c_x * g.x0).powi(2);
    cap_from(g, theta_max, xi1)
}

/// Cap at which the far corners of the prism cross-section lie exactly on
/// the sphere of radius `theta_max`.
pub fn los_cap_exact(geometry: &LosGeometry, theta_max: f64) -> Result<f64, FeasibilityError> {
    let (xi2, xi3) = geometry.xi();
    let xi1 = xi3 * (geometry.x0 * geometry.x0 + geometry.z0 * geometry.z0) - xi2 * xi2;
    cap_from(geometry, theta_max, xi1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attitude::polhode_invariants;
    use crate::relative_dynamics::{hcw_stm, OrbitParams, MU_EARTH_KM3_S2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn envisat() -> InertiaTensor {
        #[rustfmt::skip]
        let t = Matrix3::new(
            17023.3, 397.1, -2171.4,
            397.1, 124825.7, 344.2,
            -2171.4, 344.2, 129112.2,
        );
        InertiaTensor::from_tensor(t).unwrap()
    }

    fn stm(t: f64) -> StmPair {
        hcw_stm(&OrbitParams::circular(MU_EARTH_KM3_S2, 7141.0, t).unwrap()).unwrap()
    }

    fn case_study_invariants() -> PolhodeInvariants {
        polhode_invariants(&Vector3::new(0.0, 3.53, 3.53).map(f64::to_radians), &envisat())
    }

    /// Maximum of `objective(ω)` over `samples` points of the polhode,
    /// parameterized by the squared principal rates.
    fn sampled_polhode_max(
        moments: &Vector3<f64>,
        inv: &PolhodeInvariants,
        samples: usize,
        objective: impl Fn(&Vector3<f64>) -> f64,
    ) -> f64 {
        let i = moments;
        let h2 = inv.h * inv.h;
        let e2 = 2.0 * inv.energy;
        let a1 = i.component_mul(i);
        let dir = a1.cross(i);
        let sys = nalgebra::Matrix2::new(a1[0], a1[1], i[0], i[1]);
        let base2 = sys.try_inverse().unwrap() * nalgebra::Vector2::new(h2, e2);
        let base = Vector3::new(base2[0], base2[1], 0.0);
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in 0..3 {
            if dir[k] > 0.0 {
                lo = lo.max(-base[k] / dir[k]);
            } else if dir[k] < 0.0 {
                hi = hi.min(-base[k] / dir[k]);
            }
        }
        (0..=samples)
            .map(|s| {
                let x = base + dir * (lo + (hi - lo) * s as f64 / samples as f64);
                objective(&x.map(|v| v.max(0.0).sqrt()))
            })
            .fold(0.0, f64::max)
    }

    fn torque_free(moments: &Vector3<f64>) -> impl Fn(&Vector3<f64>) -> f64 + '_ {
        move |w: &Vector3<f64>| w.cross(&moments.component_mul(w)).component_div(moments).norm_squared()
    }

    fn mixed(moments: &Vector3<f64>) -> impl Fn(&Vector3<f64>) -> f64 + '_ {
        move |w: &Vector3<f64>| w.component_div(moments).cross(&w.component_mul(moments)).norm_squared()
    }

    fn random_body(rng: &mut ChaCha8Rng) -> (InertiaTensor, PolhodeInvariants) {
        loop {
            let m = Vector3::new(rng.random_range(1.0..10.0), rng.random_range(1.0..10.0), rng.random_range(1.0..10.0));
            if let Ok(inertia) = InertiaTensor::principal(m[0], m[1], m[2]) {
                let w = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                // invariants are computed in the sorted principal frame
                let sorted = inertia.principal_moments();
                let diag = InertiaTensor::principal(sorted[0], sorted[1], sorted[2]).unwrap();
                return (diag, polhode_invariants(&w, &diag));
            }
        }
    }

    #[test]
    fn tracking_blocks_match_station_keeping() {
        use crate::ltv_model::{body_ltv_step, equilibrium_basis};
        let s = stm(1.0);
        let u = tracking_control_matrix(&s, 1.0).unwrap();
        assert_eq!(u.u_r * Vector3::zeros(), Vector3::zeros());
        let basis = equilibrium_basis(&body_ltv_step(&s, &Matrix3::identity(), &Matrix3::identity(), 0)).unwrap();
        let theta = Vector3::new(1.0, 2.0, -0.5);
        let n = 1.0 * (MU_EARTH_KM3_S2 / 7141f64.powi(3)).sqrt();
        assert!((u.u_r * theta - basis.control(&theta)).norm() <= (n * 1.0).powi(2) * theta.norm());
    }

    #[test]
    fn tracking_norms_match_power_iteration() {
        let u = tracking_control_matrix(&stm(1.0), 1.0).unwrap();
        for (m, norm) in [(u.u_r, u.norm_r), (u.u_v, u.norm_v), (u.u_dv, u.norm_dv)] {
            // power iteration by repeated squaring: G^(2^60) applied to a start vector
            let g = m.transpose() * m;
            let mut p = g / g.norm();
            for _ in 0..60 {
                p = p * p;
                p /= p.norm();
            }
            let v = (p * Vector3::new(1.0, 0.7, 0.3)).normalize();
            let est = v.dot(&(g * v)).sqrt();
            assert!((est - norm).abs() <= 1e-8 * norm, "{est} vs {norm}");
        }
    }

    #[test]
    fn isotropic_and_principal_spins_have_no_extremum() {
        let sphere = InertiaTensor::principal(4.0, 4.0, 4.0).unwrap();
        let inv = polhode_invariants(&Vector3::new(0.1, -0.3, 0.2), &sphere);
        assert!(polhode_extremum(&sphere, &inv).unwrap().abs() <= 1e-18);
        let body = InertiaTensor::principal(2.0, 3.0, 4.0).unwrap();
        for axis in [0, 2] {
            let mut w = Vector3::zeros();
            w[axis] = 0.5;
            let v = polhode_extremum(&body, &polhode_invariants(&w, &body)).unwrap();
            assert!(v.abs() <= 1e-15, "axis {axis}: {v}");
        }
    }

    #[test]
    fn extremum_matches_polhode_sampling_for_envisat() {
        let inertia = envisat();
        let inv = case_study_invariants();
        let m = inertia.principal_moments();
        let closed = polhode_extremum(&inertia, &inv).unwrap();
        let sampled = sampled_polhode_max(&m, &inv, 100_000, torque_free(&m));
        assert!(closed >= sampled * (1.0 - 1e-12));
        assert!(closed <= sampled * 1.005);
    }

    #[test]
    fn extremum_bounds_propagated_tumble() {
        // integrate the full-tensor motion and sample the actual acceleration
        use crate::attitude::{euler_poinsot_rate, integrate_rotation, AttitudeMode, RotationalState};
        use nalgebra::UnitQuaternion;
        let inertia = envisat();
        let mut s = RotationalState::new(UnitQuaternion::identity(), Vector3::new(0.0, 3.53, 3.53).map(f64::to_radians));
        let closed = polhode_extremum(&inertia, &case_study_invariants()).unwrap();
        let mut peak = 0.0_f64;
        for _ in 0..20_000 {
            let a = euler_poinsot_rate(&s, &inertia, 0.0, AttitudeMode::TorqueFree).norm_squared();
            peak = peak.max(a);
            s = integrate_rotation(&s, &inertia, 0.0, AttitudeMode::TorqueFree, 0.5, 2);
        }
        assert!(peak <= closed * (1.0 + 1e-9), "{peak} > {closed}");
        assert!(peak >= 0.99 * closed, "{peak} < 0.99 * {closed}");
    }

    #[test]
    fn extremum_matches_sampling_on_random_bodies() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let (inertia, inv) = random_body(&mut rng);
            let m = inertia.principal_moments();
            let closed = polhode_extremum(&inertia, &inv).unwrap();
            let sampled = sampled_polhode_max(&m, &inv, 100_000, torque_free(&m));
            assert!(closed >= sampled * (1.0 - 1e-12));
            assert!(closed <= sampled * 1.005 + 1e-300);
            let closed_mixed = polhode_extremum_mixed(&inertia, &inv).unwrap();
            let sampled_mixed = sampled_polhode_max(&m, &inv, 100_000, mixed(&m));
            assert!(closed_mixed >= sampled_mixed * (1.0 - 1e-12));
            assert!(closed_mixed <= sampled_mixed * 1.005 + 1e-300);
        }
    }

    #[test]
    fn extremum_rejects_inconsistent_invariants() {
        let inertia = InertiaTensor::principal(1.0, 2.0, 2.5).unwrap();
        assert!(polhode_extremum(&inertia, &PolhodeInvariants { h: 10.0, energy: 1.0 }).is_err());
    }

    #[test]
    fn ball_robust_small_cases() {
        let a = DMatrix::from_element(1, 1, 2.0);
        assert_eq!(ball_robust_theta_max(&[a], &DVector::from_element(1, 4.0), &[1.0]), 2.0);
        let a1 = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let a2 = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert_eq!(ball_robust_theta_max(&[a1, a2], &DVector::from_element(1, 1.0), &[1.0, 1.0]), 0.5);
        let zero = DMatrix::zeros(2, 3);
        assert_eq!(ball_robust_theta_max(&[zero], &DVector::from_element(2, 1.0), &[1.0]), f64::INFINITY);
    }

    fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn ball_robust_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let a_list: Vec<DMatrix<f64>> = (0..3).map(|_| DMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0))).collect();
            let b = DVector::from_fn(8, |_, _| rng.random_range(0.1..2.0));
            let r = [rng.random_range(0.2..2.0), rng.random_range(0.2..2.0), rng.random_range(0.2..2.0)];
            let closed = ball_robust_theta_max(&a_list, &b, &r);
            // sup over the product of balls separates per ball; sample each
            let samples = 1_000_000 / 3;
            let mut sup = vec![[0.0_f64; 3]; 8];
            for _ in 0..samples {
                let x: Vec<_> = (0..3).map(|_| random_unit(&mut rng)).collect();
                for (i, row) in sup.iter_mut().enumerate() {
                    for j in 0..3 {
                        let v = r[j] * (a_list[j].row(i) * x[j])[0];
                        row[j] = row[j].max(v);
                    }
                }
            }
            let sampled = (0..8).map(|i| b[i] / sup[i].iter().sum::<f64>()).fold(f64::INFINITY, f64::min);
            assert!(closed <= sampled, "{closed} > {sampled}");
            assert!(closed >= 0.98 * sampled, "{closed} < 0.98 * {sampled}");
            // joint samples at theta_max never violate
            for _ in 0..20_000 {
                let mut lhs = DVector::zeros(8);
                for j in 0..3 {
                    let x = random_unit(&mut rng) * (r[j] * closed * rng.random_range(0.0..1.0f64).cbrt());
                    lhs += &a_list[j] * DVector::from_column_slice(x.as_slice());
                }
                assert!((lhs - &b).max() <= 1e-12);
            }
        }
    }

    #[test]
    fn ball_robust_is_tight_on_minimizing_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a_list: Vec<DMatrix<f64>> = (0..3).map(|_| DMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0))).collect();
        let b = DVector::from_fn(8, |_, _| rng.random_range(0.1..2.0));
        let r = [0.5, 1.0, 1.5];
        let theta = ball_robust_theta_max(&a_list, &b, &r);
        let row = (0..8)
            .min_by(|&i, &k| {
                let d = |i: usize| b[i] / (0..3).map(|j| r[j] * a_list[j].row(i).norm()).sum::<f64>();
                d(i).total_cmp(&d(k))
            })
            .unwrap();
        let mut best = 0.0_f64;
        for j in 0..3 {
            let mut sup = 0.0_f64;
            for _ in 0..100_000 {
                let x = random_unit(&mut rng) * (r[j] * theta);
                sup = sup.max((a_list[j].row(row) * x)[0]);
            }
            best += sup;
        }
        assert!(best >= 0.99 * b[row]);
    }

    #[test]
    fn mixed_bound_reproduces_reference_envisat_envelope() {
        let s = stm(1.0);
        let u = tracking_control_matrix(&s, 1.0).unwrap();
        let boxed = ControlPolytope::symmetric_box(0.075).unwrap();
        let env = theta_max_envelope_with(&boxed, &u, &envisat(), &case_study_invariants(), 1.0, AccelerationBound::MixedProduct).unwrap();
        assert!((env.theta_max - 3.597).abs() <= 0.05 * 3.597, "{}", env.theta_max);
        let exact = theta_max_envelope(&boxed, &u, &envisat(), &case_study_invariants(), 1.0).unwrap();
        assert!(exact.theta_max > env.theta_max);
    }

    #[test]
    fn zero_tumble_reduces_to_station_keeping_ball() {
        let s = stm(1.0);
        let u = tracking_control_matrix(&s, 1.0).unwrap();
        let inertia = envisat();
        let inv = polhode_invariants(&Vector3::zeros(), &inertia);
        let env = theta_max_envelope(&ControlPolytope::symmetric_box(0.075).unwrap(), &u, &inertia, &inv, 1.0).unwrap();
        assert_eq!(env.varpi_star, 0.0);
        assert!((env.theta_max - 0.075 / u.norm_r).abs() <= 1e-9 * env.theta_max);
    }

    #[test]
    fn envelope_monotonicity() {
        let inertia = envisat();
        let boxed = ControlPolytope::symmetric_box(0.075).unwrap();
        let doubled = ControlPolytope::symmetric_box(0.15).unwrap();
        let u = tracking_control_matrix(&stm(1.0), 1.0).unwrap();
        let base = theta_max_envelope(&boxed, &u, &inertia, &case_study_invariants(), 1.0).unwrap();
        let twice = theta_max_envelope(&doubled, &u, &inertia, &case_study_invariants(), 1.0).unwrap();
        assert_eq!(twice.theta_max, 2.0 * base.theta_max);
        let mut prev = f64::INFINITY;
        for rate in [0.0, 0.5, 1.0, 2.0, 3.53, 5.0] {
            let inv = polhode_invariants(&Vector3::new(0.0, rate, rate).map(f64::to_radians), &inertia);
            let env = theta_max_envelope(&boxed, &u, &inertia, &inv, 1.0).unwrap();
            assert!(env.theta_max <= prev);
            prev = env.theta_max;
        }
        let mut prev = f64::INFINITY;
        for t in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let u = tracking_control_matrix(&stm(t), t).unwrap();
            let env = theta_max_envelope(&boxed, &u, &inertia, &case_study_invariants(), t).unwrap();
            assert!(env.theta_max <= prev, "T = {t}: {} > {prev}", env.theta_max);
            prev = env.theta_max;
        }
    }

    #[test]
    fn reference_cap_value() {
        let g = LosGeometry::new(1.0, 1.0, 0.1, 0.1).unwrap();
        assert!((los_cap(&g, 3.597).unwrap() - 2.008).abs() <= 1e-3);
    }

    #[test]
    fn apex_at_origin_cap() {
        let g = LosGeometry::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let y = los_cap(&g, 3.0).unwrap();
        assert!((y - 3.0 / 3f64.sqrt()).abs() <= 1e-15);
        assert_eq!(y, los_cap_exact(&g, 3.0).unwrap());
    }

    #[test]
    fn cap_requires_reach() {
        let g = LosGeometry::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(los_cap(&g, 0.5), Err(FeasibilityError::NoCap { .. })));
        assert!(LosGeometry::new(0.0, 1.0, 0.1, 0.1).is_err());
    }

    /// Vertices of `{A x ≤ b}` by enumerating all triples of planes.
    fn vertices(a: &DMatrix<f64>, b: &DVector<f64>) -> Vec<Vector3<f64>> {
        let m = a.nrows();
        let mut out = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                for k in j + 1..m {
                    let sys = Matrix3::from_rows(&[a.fixed_view::<1, 3>(i, 0).into_owned(), a.fixed_view::<1, 3>(j, 0).into_owned(), a.fixed_view::<1, 3>(k, 0).into_owned()]);
                    if let Some(inv) = sys.try_inverse() {
                        let p = inv * Vector3::new(b[i], b[j], b[k]);
                        let x = DVector::from_column_slice(p.as_slice());
                        if (a * x - b).max() <= 1e-9 {
                            out.push(p);
                        }
                    }
                }
            }
        }
        out
    }

    fn capped(g: &LosGeometry, y_max: f64) -> (DMatrix<f64>, DVector<f64>) {
        let (a, b) = g.rows();
        let mut a6 = a.clone().insert_row(5, 0.0);
        a6[(5, 1)] = 1.0;
        let b6 = b.clone().insert_row(5, y_max);
        (a6, b6)
    }

    #[test]
    fn cap_is_inner_on_random_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..500 {
            let g = LosGeometry::new(rng.random_range(0.2..4.0), rng.random_range(0.2..4.0), rng.random_range(0.0..0.5), rng.random_range(0.0..0.5)).unwrap();
            let theta = rng.random_range(2.0..10.0);
            let y = los_cap(&g, theta).unwrap();
            assert!(y <= los_cap_exact(&g, theta).unwrap());
            let (a, b) = capped(&g, y);
            let vs = vertices(&a, &b);
            assert_eq!(vs.len(), 8);
            let far = vs.iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(far <= theta * (1.0 + 1e-12));
            // the exact cap puts the far corners on the sphere
            let (a, b) = capped(&g, los_cap_exact(&g, theta).unwrap());
            let far = vertices(&a, &b).iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!((far - theta).abs() <= 1e-9 * theta);
        }
    }

    #[test]
    fn envelope_cap_uses_inner_value() {
        let g = LosGeometry::new(1.0, 1.0, 0.1, 0.1).unwrap();
        let env = FeasibilityEnvelope { varpi_star: 0.0, radius_v: 0.0, radius_dv: 0.0, theta_max: 3.597, y_max: None }
            .with_los_cap(&g)
            .unwrap();
        assert!((env.y_max.unwrap() - 2.008).abs() <= 1e-3);
        assert!(env.y_max.unwrap() <= env.theta_max);
    }
}
