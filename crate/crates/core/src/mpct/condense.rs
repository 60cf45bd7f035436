use nalgebra::{DMatrix, DVector, Vector3, Vector6};

use super::{ConstraintSet, HorizonConfig, Mode, MpctError, PredictionModel, Weights};

/// Which law generates the predicted input at a horizon step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Free,
    Lqr,
    Deadbeat,
    /// Rows on `θ̄` itself.
    Equilibrium,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Free => "mpc",
            Phase::Lqr => "lqr",
            Phase::Deadbeat => "deadbeat",
            Phase::Equilibrium => "equilibrium",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    State,
    Control,
    Cap,
    EquilibriumState,
}

impl ConstraintKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConstraintKind::State => "state",
            ConstraintKind::Control => "control",
            ConstraintKind::Cap => "y_cap",
            ConstraintKind::EquilibriumState => "equilibrium_state",
        }
    }
}

/// Origin of a condensed inequality row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowTag {
    pub phase: Phase,
    /// Horizon offset `i` of the constrained quantity.
    pub step: usize,
    pub kind: ConstraintKind,
    /// Row index inside the originating polytope.
    pub row: usize,
}

/// `min ½zᵀHz + fᵀz + constant` subject to `G z ≤ g`.
///
/// The affine maps give every predicted quantity as `S z + s`; they stay in
/// sync with `h`, `f` and `g_mat` by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedQp {
    pub k: usize,
    pub mode: Mode,
    pub horizon: HorizonConfig,
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub constant: f64,
    pub g_mat: DMatrix<f64>,
    pub g: DVector<f64>,
    pub tags: Vec<RowTag>,
    /// `x(k+i)` for `i = 0..=N_p`.
    pub state_maps: Vec<(DMatrix<f64>, Vector6<f64>)>,
    /// `u(k+i)` for `i = 0..=N_p`.
    pub control_maps: Vec<(DMatrix<f64>, Vector3<f64>)>,
    /// `θ̄ = E z`; zero in baseline mode.
    pub theta_map: DMatrix<f64>,
}

impl CondensedQp {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn rows(&self) -> usize {
        self.g.len()
    }

    pub fn cost(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f.dot(z) + self.constant
    }

    /// `g − G z`; nonnegative entries mean satisfied rows.
    pub fn margins(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.g - &self.g_mat * z
    }

    pub fn predicted_states(&self, z: &DVector<f64>) -> Vec<Vector6<f64>> {
        self.state_maps.iter().map(|(s, c)| Vector6::from_iterator((s * z).iter().copied()) + c).collect()
    }

    pub fn predicted_controls(&self, z: &DVector<f64>) -> Vec<Vector3<f64>> {
        self.control_maps.iter().map(|(s, c)| Vector3::from_iterator((s * z).iter().copied()) + c).collect()
    }

    pub fn theta(&self, z: &DVector<f64>) -> Vector3<f64> {
        Vector3::from_iterator((&self.theta_map * z).iter().copied())
    }
}

/// First input and artificial equilibrium from a decision vector.
pub fn extract_control(z: &DVector<f64>, mode: Mode) -> (Vector3<f64>, Vector3<f64>) {
    let u = Vector3::new(z[0], z[1], z[2]);
    let theta = match mode {
        Mode::Mpct => {
            let n = z.len();
            Vector3::new(z[n - 3], z[n - 2], z[n - 1])
        }
        Mode::Baseline => Vector3::zeros(),
    };
    (u, theta)
}

fn phase_of(i: usize, horizon: &HorizonConfig) -> Phase {
    let n_p = horizon.n_p();
    if i < horizon.n_c {
        Phase::Free
    } else if i + 2 <= n_p {
        Phase::Lqr
    } else {
        Phase::Deadbeat
    }
}

/// Accumulates `Σ (Fz + c)ᵀ W (Fz + c)` into `(H, f, constant)` with the
/// factor two of the ½-form folded into `H` and `f`.
struct CostAccumulator {
    h: DMatrix<f64>,
    f: DVector<f64>,
    constant: f64,
}

impl CostAccumulator {
    fn add(&mut self, f_mat: &DMatrix<f64>, c: &DVector<f64>, w: &DMatrix<f64>) {
        let wf = w * f_mat;
        self.h += 2.0 * f_mat.transpose() * &wf;
        self.f += 2.0 * wf.transpose() * c;
        self.constant += c.dot(&(w * c));
    }
}

struct RowBuilder {
    g_rows: Vec<DVector<f64>>,
    g: Vec<f64>,
    tags: Vec<RowTag>,
}

impl RowBuilder {
    /// Rows `A (S z + s) ≤ b`.
    fn add(&mut self, a: &DMatrix<f64>, b: &DVector<f64>, s: &DMatrix<f64>, offset: &DVector<f64>, tag: RowTag) {
        let lhs = a * s;
        let rhs = b - a * offset;
        for r in 0..a.nrows() {
            self.g_rows.push(lhs.row(r).transpose());
            self.g.push(rhs[r]);
            self.tags.push(RowTag { row: r, ..tag });
        }
    }
}

fn to_dmatrix<R: nalgebra::Dim, C: nalgebra::Dim, S: nalgebra::RawStorage<f64, R, C>>(
    m: &nalgebra::Matrix<f64, R, C, S>,
) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Condenses the tracking problem at control step `k` from the hybrid state
/// `x_k = (r_B, v_L)`.
pub fn build_qp(
    model: &PredictionModel,
    k: usize,
    x_k: &Vector6<f64>,
    horizon: &HorizonConfig,
    weights: &Weights,
    constraints: &ConstraintSet,
    mode: Mode,
) -> Result<CondensedQp, MpctError> {
    let n_c = horizon.n_c;
    let n_p = horizon.n_p();
    model.check_coverage(k, n_p)?;

    let d = 3 * n_c + if mode == Mode::Mpct { 3 } else { 0 };
    let mut theta_map = DMatrix::zeros(3, d);
    if mode == Mode::Mpct {
        theta_map.view_mut((0, 3 * n_c), (3, 3)).fill_with_identity();
    }

    let mut state_maps = Vec::with_capacity(n_p + 1);
    let mut control_maps = Vec::with_capacity(n_p + 1);
    let mut sx = DMatrix::zeros(6, d);
    let mut cx = DVector::from_column_slice(x_k.as_slice());
    for i in 0..=n_p {
        let j = k + i;
        let basis = &model.bases[j];
        let (su, cu) = match phase_of(i, horizon) {
            Phase::Free => {
                let mut su = DMatrix::zeros(3, d);
                su.view_mut((0, 3 * i), (3, 3)).fill_with_identity();
                (su, DVector::zeros(3))
            }
            Phase::Lqr => {
                let gain = to_dmatrix(&model.gains.k_lqr[j]);
                let offset = to_dmatrix(&(basis.m_u() - model.gains.k_lqr[j] * basis.m_x()));
                (&gain * &sx + offset * &theta_map, &gain * &cx)
            }
            Phase::Deadbeat | Phase::Equilibrium => {
                let db = &model.gains.k_db[j];
                let gain = to_dmatrix(&db.k_x);
                (&gain * &sx + to_dmatrix(&db.k_theta) * &theta_map, &gain * &cx)
            }
        };
        state_maps.push((sx.clone(), Vector6::from_column_slice(cx.as_slice())));
        control_maps.push((su.clone(), Vector3::from_column_slice(cu.as_slice())));
        if i < n_p {
            let step = &model.steps[j];
            let a = to_dmatrix(&step.a);
            let b = to_dmatrix(&step.b);
            let next_s = &a * &sx + &b * &su;
            let next_c = &a * &cx + &b * &cu;
            sx = next_s;
            cx = next_c;
        }
    }

    let mut cost = CostAccumulator {
        h: DMatrix::zeros(d, d),
        f: DVector::zeros(d),
        constant: 0.0,
    };
    let q = to_dmatrix(&weights.q);
    let r = to_dmatrix(&weights.r);
    for i in 0..=n_p {
        let basis = &model.bases[k + i];
        if i < n_p {
            let (s, c) = &state_maps[i];
            let f_mat = s - to_dmatrix(&basis.m_x()) * &theta_map;
            cost.add(&f_mat, &DVector::from_column_slice(c.as_slice()), &q);
        }
        let (s, c) = &control_maps[i];
        let f_mat = s - to_dmatrix(&basis.m_u()) * &theta_map;
        cost.add(&f_mat, &DVector::from_column_slice(c.as_slice()), &r);
    }
    if mode == Mode::Mpct {
        cost.add(&theta_map, &DVector::zeros(3), &to_dmatrix(&weights.t));
    }

    let (a_x, b_x) = constraints.state_polytope();
    let a_u = &constraints.control.a_u;
    let b_u = &constraints.control.b_u;
    let mut rows = RowBuilder {
        g_rows: Vec::new(),
        g: Vec::new(),
        tags: Vec::new(),
    };
    for i in 0..=n_p {
        let phase = phase_of(i, horizon);
        let (su, cu) = &control_maps[i];
        let tag = |kind| RowTag {
            phase,
            step: i,
            kind,
            row: 0,
        };
        rows.add(a_u, b_u, su, &DVector::from_column_slice(cu.as_slice()), tag(ConstraintKind::Control));
        if i >= 1 {
            let (sx, cx) = &state_maps[i];
            rows.add(&a_x, &b_x, sx, &DVector::from_column_slice(cx.as_slice()), tag(ConstraintKind::State));
        }
    }
    if mode == Mode::Mpct {
        let eq_tag = |kind| RowTag {
            phase: Phase::Equilibrium,
            step: 0,
            kind,
            row: 0,
        };
        // The reference itself must sit inside the position rows; its velocity
        // and control are not constrained here because they change with k.
        let (a_los, b_los) = constraints.los.rows();
        rows.add(&a_los, &b_los, &theta_map, &DVector::zeros(3), eq_tag(ConstraintKind::EquilibriumState));
        if let Some(y_max) = constraints.y_max {
            let a = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
            rows.add(&a, &DVector::from_element(1, y_max), &theta_map, &DVector::zeros(3), eq_tag(ConstraintKind::Cap));
        }
    }

    let p = rows.g.len();
    let mut g_mat = DMatrix::zeros(p, d);
    for (r, row) in rows.g_rows.iter().enumerate() {
        g_mat.row_mut(r).copy_from(&row.transpose());
    }
    // Symmetrize against round-off so Cholesky sees an exactly symmetric H.
    let h = 0.5 * (&cost.h + cost.h.transpose());

    Ok(CondensedQp {
        k,
        mode,
        horizon: *horizon,
        h,
        f: cost.f,
        constant: cost.constant,
        g_mat,
        g: DVector::from_vec(rows.g),
        tags: rows.tags,
        state_maps,
        control_maps,
        theta_map,
    })
}
