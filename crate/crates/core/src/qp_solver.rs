//! Dense strictly convex QP solver for `min ½zᵀHz + fᵀz  s.t.  Gz ≤ g`.
//!
//! Dual active-set method (Goldfarb-Idnani): start from the unconstrained
//! minimizer and add the most violated constraint at each major iteration,
//! dropping active constraints whose multipliers would turn negative. Every
//! iterate is optimal for the constraints currently active, so the method
//! needs no feasible starting point, and it reports infeasibility with a
//! Farkas certificate `y ≥ 0`, `Gᵀy = 0`, `gᵀy < 0`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::IterationLimit => "iteration_limit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Violation threshold on each unit-normalized row, relative to
    /// `1 + |b_i|` with `b_i` the normalized bound.
    pub feasibility_tol: f64,
    /// Cap on constraint additions plus removals.
    pub max_iterations: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-11,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// One multiplier per row of `G`; zero for inactive rows.
    pub lambda: DVector<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    /// Rows active at termination, in order of addition.
    pub active: Vec<usize>,
    /// Row that could not be added when infeasibility was detected.
    pub blocking: Option<usize>,
    /// Farkas certificate for the infeasible case.
    pub certificate: Option<DVector<f64>>,
    pub objective: f64,
    pub iterations: usize,
}

/// Maximum of stationarity, primal violation, dual negativity and
/// complementarity magnitudes (all ∞-norms).
pub fn kkt_residual(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    g_mat: &DMatrix<f64>,
    g: &DVector<f64>,
    z: &DVector<f64>,
    lambda: &DVector<f64>,
) -> f64 {
    let stationarity = (h * z + f + g_mat.transpose() * lambda).amax();
    let slack = g_mat * z - g;
    let primal = slack.iter().fold(0.0_f64, |m, &s| m.max(s));
    let dual = lambda.iter().fold(0.0_f64, |m, &l| m.max(-l));
    let comp = lambda.iter().zip(slack.iter()).fold(0.0_f64, |m, (l, s)| m.max((l * s).abs()));
    stationarity.max(primal).max(dual).max(comp)
}

/// Cholesky factor of `H`, regularized with `εI`, `ε = 1e-10·tr(H)/d`
/// (growing tenfold) when `H` is only semidefinite.
fn factor(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = h.nrows();
    let sym = (h + h.transpose()) * 0.5;
    if let Some(c) = sym.clone().cholesky() {
        return Some(c.l());
    }
    let trace = sym.trace();
    let mut eps = if trace > 0.0 { 1e-10 * trace / d as f64 } else { 1e-10 };
    for _ in 0..12 {
        if let Some(c) = (&sym + DMatrix::identity(d, d) * eps).cholesky() {
            return Some(c.l());
        }
        eps *= 10.0;
    }
    None
}

struct Workspace {
    j1: DMatrix<f64>,
    j2: DMatrix<f64>,
    r: DMatrix<f64>,
}

/// `J = L⁻ᵀ Q` with `Q R = L⁻¹ N_A`, so `JᵀHJ = I` and the first `q`
/// columns of `J` span the active normals.
fn workspace(j0: &DMatrix<f64>, normals: &DMatrix<f64>, active: &[usize]) -> Workspace {
    let d = j0.nrows();
    let q = active.len();
    let mut stacked = DMatrix::zeros(d, q + d);
    for (c, &i) in active.iter().enumerate() {
        stacked.set_column(c, &(j0.transpose() * normals.column(i)));
    }
    stacked.view_mut((0, q), (d, d)).copy_from(&DMatrix::identity(d, d));
    let qr = stacked.qr();
    let qm = qr.q();
    let rm = qr.r();
    let j = j0 * qm;
    Workspace {
        j1: j.columns(0, q).into_owned(),
        j2: j.columns(q, d - q).into_owned(),
        r: rm.view((0, 0), (q, q)).into_owned(),
    }
}

fn upper_solve(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if r.nrows() == 0 {
        return DVector::zeros(0);
    }
    r.solve_upper_triangular(b).unwrap_or_else(|| DVector::from_element(b.len(), f64::NAN))
}

pub fn solve_qp(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    g_mat: &DMatrix<f64>,
    g: &DVector<f64>,
    options: &QpOptions,
) -> QpSolution {
    let d = h.nrows();
    let p = g_mat.nrows();
    assert_eq!(h.ncols(), d, "H must be square");
    assert_eq!(f.len(), d, "f must match H");
    assert!(p == 0 || g_mat.ncols() == d, "G must have d columns");
    assert_eq!(g.len(), p, "g must match G");

    let l = factor(h).expect("H is not positive semidefinite");
    let l_inv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .expect("Cholesky factor is nonsingular");
    let j0 = l_inv.transpose();
    let h_reg = &l * l.transpose();

    // constraints as n_iᵀz ≥ b_i on unit normals
    let mut normals = DMatrix::zeros(d, p);
    let mut b = DVector::zeros(p);
    let mut scale = DVector::zeros(p);
    for i in 0..p {
        let row = g_mat.row(i);
        let norm = row.norm();
        scale[i] = norm;
        if norm > 0.0 {
            normals.set_column(i, &(-row.transpose() / norm));
            b[i] = -g[i] / norm;
        }
    }
    let tol = options.feasibility_tol * (1.0 + b.amax());
    let row_tol = DVector::from_iterator(p, b.iter().map(|bi| options.feasibility_tol * (1.0 + bi.abs())));

    let mut z = -(&j0 * (j0.transpose() * f));
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;

    let finish = |z: DVector<f64>, active: &[usize], u: &[f64], status, blocking, certificate, iterations| {
        let mut lambda = DVector::zeros(p);
        for (&i, &ui) in active.iter().zip(u) {
            lambda[i] = ui / scale[i];
        }
        let objective = 0.5 * z.dot(&(h * &z)) + f.dot(&z);
        QpSolution {
            kkt_residual: kkt_residual(h, f, g_mat, g, &z, &lambda),
            z,
            lambda,
            status,
            active: active.to_vec(),
            blocking,
            certificate,
            objective,
            iterations,
        }
    };

    // rows with no normal only test their bound
    for i in 0..p {
        if scale[i] == 0.0 && g[i] < -tol {
            let mut y = DVector::zeros(p);
            y[i] = 1.0;
            return finish(z, &[], &[], QpStatus::Infeasible, Some(i), Some(y), 0);
        }
    }

    loop {
        // most violated row, lowest index on ties
        let mut entering = None;
        let mut worst = 0.0;
        for i in 0..p {
            if scale[i] == 0.0 || active.contains(&i) {
                continue;
            }
            let s = normals.column(i).dot(&z) - b[i];
            if s < -row_tol[i] && s < worst {
                worst = s;
                entering = Some(i);
            }
        }
        let Some(np_idx) = entering else {
            // polish on the final active set
            let ws = workspace(&j0, &normals, &active);
            let b_a = DVector::from_iterator(active.len(), active.iter().map(|&i| b[i]));
            let y1 = if active.is_empty() {
                Some(DVector::zeros(0))
            } else {
                ws.r.transpose().solve_lower_triangular(&b_a)
            };
            let Some(y1) = y1 else {
                return finish(z, &active, &u, QpStatus::Optimal, None, None, iterations);
            };
            let polished = &ws.j1 * y1 - &ws.j2 * (ws.j2.transpose() * f);
            let mut polished = polished;
            let mut u_new = upper_solve(&ws.r, &(ws.j1.transpose() * (&h_reg * &polished + f)));
            // iterative refinement of the equality-constrained KKT system
            let n_a = DMatrix::from_fn(d, active.len(), |r, c| normals[(r, active[c])]);
            for _ in 0..2 {
                if active.is_empty() || u_new.iter().any(|v| !v.is_finite()) {
                    break;
                }
                let r_s = &h_reg * &polished + f - &n_a * &u_new;
                let r_c = n_a.transpose() * &polished - &b_a;
                let Some(w) = ws.r.transpose().solve_lower_triangular(&(-r_c)) else { break };
                let dz = &ws.j1 * w - &ws.j2 * (ws.j2.transpose() * &r_s);
                let du = upper_solve(&ws.r, &(ws.j1.transpose() * (&h_reg * &dz + &r_s)));
                polished += dz;
                u_new += du;
            }
            let feasible = (0..p).all(|i| scale[i] == 0.0 || normals.column(i).dot(&polished) - b[i] >= -row_tol[i]);
            if feasible && u_new.iter().all(|v| v.is_finite() && *v >= -tol) {
                let u_clamped: Vec<f64> = u_new.iter().map(|v| v.max(0.0)).collect();
                return finish(polished, &active, &u_clamped, QpStatus::Optimal, None, None, iterations);
            }
            return finish(z, &active, &u, QpStatus::Optimal, None, None, iterations);
        };

        let n_p = normals.column(np_idx).into_owned();
        let mut u_p = 0.0;
        loop {
            iterations += 1;
            if iterations > options.max_iterations {
                return finish(z, &active, &u, QpStatus::IterationLimit, Some(np_idx), None, iterations);
            }
            let ws = workspace(&j0, &normals, &active);
            let step = &ws.j2 * (ws.j2.transpose() * &n_p);
            let r = upper_solve(&ws.r, &(ws.j1.transpose() * &n_p));

            // partial step: first active multiplier to reach zero
            let mut t1 = f64::INFINITY;
            let mut leaving = None;
            for (k, (&rk, &uk)) in r.iter().zip(&u).enumerate() {
                if rk > 0.0 {
                    let t = uk / rk;
                    if t < t1 {
                        t1 = t;
                        leaving = Some(k);
                    }
                }
            }
            // full step: makes the entering row active
            let curvature = step.dot(&n_p);
            let s_p = n_p.dot(&z) - b[np_idx];
            let t2 = if step.amax() > 1e-14 && curvature > 1e-300 {
                -s_p / curvature
            } else {
                f64::INFINITY
            };
            let t2 = if t2.is_nan() { f64::INFINITY } else { t2 };

            if t1.is_infinite() && t2.is_infinite() {
                // n_p = N_A r with r ≤ 0: certificate y_p = 1, y_A = −r
                let mut y = DVector::zeros(p);
                y[np_idx] = 1.0 / scale[np_idx];
                for (k, &i) in active.iter().enumerate() {
                    y[i] = (-r[k]).max(0.0) / scale[i];
                }
                return finish(z, &active, &u, QpStatus::Infeasible, Some(np_idx), Some(y), iterations);
            }

            let t = t1.min(t2);
            for (uk, rk) in u.iter_mut().zip(r.iter()) {
                *uk -= t * rk;
            }
            u_p += t;
            if t2.is_finite() {
                z += &step * t;
            }
            if t2 <= t1 {
                active.push(np_idx);
                u.push(u_p);
                break;
            }
            let k = leaving.expect("finite partial step has a leaving row");
            active.remove(k);
            u.remove(k);
        }
    }
}
