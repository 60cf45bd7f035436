use std::io::{Read, Write};

use nalgebra::Vector3;

use super::SimError;

pub const TELEMETRY_HEADER: [&str; 21] = [
    "step", "t_s", "rB_x", "rB_y", "rB_z", "rL_x", "rL_y", "rL_z", "vL_x", "vL_y", "vL_z", "uB_x", "uB_y", "uB_z",
    "thb_x", "thb_y", "thb_z", "Vstar", "status", "min_margin", "cum_dv",
];

/// State before the impulse at `step`, the impulse itself and solver data.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRow {
    pub step: usize,
    pub t_s: f64,
    pub r_b: Vector3<f64>,
    pub r_l: Vector3<f64>,
    pub v_l: Vector3<f64>,
    pub u_b: Vector3<f64>,
    pub theta: Vector3<f64>,
    pub v_star: f64,
    pub status: String,
    /// Smallest slack of the executed position and control rows.
    pub min_margin: f64,
    /// `Σ‖u‖` up to and including this step.
    pub cum_dv: f64,
}

/// Append-only run record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Telemetry {
    pub rows: Vec<TelemetryRow>,
    pub theta_max: f64,
    pub y_max: Option<f64>,
}

impl Telemetry {
    pub fn push(&mut self, row: TelemetryRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.step < row.step));
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Writes the fixed header and one line per row. Floats use the
    /// shortest representation that parses back to the same value.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TELEMETRY_HEADER)?;
        for r in &self.rows {
            let mut record = vec![r.step.to_string(), r.t_s.to_string()];
            for v in [&r.r_b, &r.r_l, &r.v_l, &r.u_b, &r.theta] {
                record.extend(v.iter().map(f64::to_string));
            }
            record.push(r.v_star.to_string());
            record.push(r.status.clone());
            record.push(r.min_margin.to_string());
            record.push(r.cum_dv.to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses a telemetry file written by [`Telemetry::write_csv`]. Envelope
    /// data is not stored in the file and comes back as defaults.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, SimError> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        if header.iter().ne(TELEMETRY_HEADER.iter().copied()) {
            return Err(SimError::Telemetry(format!("unexpected header {header:?}")));
        }
        let mut telemetry = Telemetry::default();
        for record in rdr.records() {
            let record = record?;
            let num = |i: usize| -> Result<f64, SimError> {
                record[i].parse::<f64>().map_err(|e| SimError::Telemetry(format!("column {}: {e}", TELEMETRY_HEADER[i])))
            };
            let vec3 = |i: usize| -> Result<Vector3<f64>, SimError> { Ok(Vector3::new(num(i)?, num(i + 1)?, num(i + 2)?)) };
            let step = record[0].parse::<usize>().map_err(|e| SimError::Telemetry(format!("column step: {e}")))?;
            telemetry.rows.push(TelemetryRow {
                step,
                t_s: num(1)?,
                r_b: vec3(2)?,
                r_l: vec3(5)?,
                v_l: vec3(8)?,
                u_b: vec3(11)?,
                theta: vec3(14)?,
                v_star: num(17)?,
                status: record[18].to_string(),
                min_margin: num(19)?,
                cum_dv: num(20)?,
            });
        }
        Ok(telemetry)
    }
}

/// Aggregate figures of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub sum_u_norm: f64,
    pub sum_u_sq: f64,
    pub max_abs_u: f64,
    pub min_margin: f64,
    /// `‖r_B − θ̄‖` at the last recorded step.
    pub final_tracking_error: f64,
    pub initial_theta_norm: f64,
    pub final_theta_norm: f64,
    pub final_distance: f64,
    /// Steps where `V*` grew by more than `1e-6 (1 + V*)`.
    pub v_star_increases: usize,
    pub fuel_kg: Option<f64>,
}

pub const SUMMARY_HEADER: [&str; 11] = [
    "steps",
    "sum_u_norm",
    "sum_u_sq",
    "max_abs_u",
    "min_margin",
    "final_tracking_error",
    "initial_theta_norm",
    "final_theta_norm",
    "final_distance",
    "vstar_increases",
    "fuel_kg",
];

/// Tolerance on `V*` growth between consecutive steps, relative to `1 + V*`.
pub const V_STAR_TOLERANCE: f64 = 1e-6;

pub fn metrics(telemetry: &Telemetry, propulsion: Option<(f64, f64)>) -> Result<RunSummary, SimError> {
    let rows = &telemetry.rows;
    let (first, last) = match (rows.first(), rows.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(SimError::Telemetry("empty telemetry".into())),
    };
    let sum_u_norm: f64 = rows.iter().map(|r| r.u_b.norm()).sum();
    let sum_u_sq: f64 = rows.iter().map(|r| r.u_b.norm_squared()).sum();
    let v_star_increases = rows
        .windows(2)
        .filter(|w| w[1].v_star > w[0].v_star + V_STAR_TOLERANCE * (1.0 + w[0].v_star.abs()))
        .count();
    let fuel_kg = propulsion.map(|(isp, m0)| {
        let mut budget = crate::relative_dynamics::ImpulseBudget::new(isp, m0);
        rows.iter().for_each(|r| budget.record(&r.u_b));
        crate::relative_dynamics::fuel_mass(&budget)
    });
    Ok(RunSummary {
        steps: rows.len(),
        sum_u_norm,
        sum_u_sq,
        max_abs_u: rows.iter().map(|r| r.u_b.amax()).fold(0.0, f64::max),
        min_margin: rows.iter().map(|r| r.min_margin).fold(f64::INFINITY, f64::min),
        final_tracking_error: (last.r_b - last.theta).norm(),
        initial_theta_norm: first.theta.norm(),
        final_theta_norm: last.theta.norm(),
        final_distance: last.r_b.norm(),
        v_star_increases,
        fuel_kg,
    })
}

impl RunSummary {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SUMMARY_HEADER)?;
        w.write_record([
            self.steps.to_string(),
            self.sum_u_norm.to_string(),
            self.sum_u_sq.to_string(),
            self.max_abs_u.to_string(),
            self.min_margin.to_string(),
            self.final_tracking_error.to_string(),
            self.initial_theta_norm.to_string(),
            self.final_theta_norm.to_string(),
            self.final_distance.to_string(),
            self.v_star_increases.to_string(),
            self.fuel_kg.map_or(String::new(), |v| v.to_string()),
        ])?;
        w.flush()?;
        Ok(())
    }
}
