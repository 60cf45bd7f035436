use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mpct_rendezvous::attitude::propagate_attitude;
use mpct_rendezvous::mpct::write_qp_dump;
use mpct_rendezvous::relative_dynamics::{hcw_matrices, LvlhState};
use mpct_rendezvous::sim::{self, feasibility_envelope, metrics, prepare, ScenarioConfig, SimError};

#[derive(Parser)]
#[command(name = "mpct-rdv", version, about = "Receding-horizon rendezvous with a tumbling target")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop and write telemetry.csv and summary.csv.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Also write the condensed QP of this step to qp_step<K>.txt.
        #[arg(long)]
        dump_qp: Option<usize>,
    },
    /// Tabulate the equilibrium envelope over spin rates and sampling periods.
    Feasibility {
        config: PathBuf,
        /// Spin-rate magnitudes (rad/s) along the configured rate direction.
        #[arg(long, value_delimiter = ',')]
        spin_rates_rad_s: Option<Vec<f64>>,
        /// Sampling periods (s).
        #[arg(long, value_delimiter = ',')]
        periods_s: Option<Vec<f64>>,
        /// Output CSV; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the propagated target attitude as CSV.
    Attitude {
        config: PathBuf,
        /// Number of sampling periods; defaults to the run length.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the discrete HCW matrices for mean motion n (rad/s) and period T (s).
    Stm { n: f64, t: f64 },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn simulate(config: &Path, out_dir: &Path, dump_qp: Option<usize>) -> Result<ExitCode> {
    let cfg = ScenarioConfig::load(config)?;
    let scenario = cfg.validate()?;
    let prepared = prepare(&scenario)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    eprintln!(
        "theta_max = {:.6} m, y_max = {}",
        prepared.envelope.theta_max,
        prepared.constraints.y_max.map_or("none".into(), |y| format!("{y:.6} m"))
    );

    let result = sim::run_prepared(&prepared, |_, x| *x);
    let (telemetry, failure) = match result {
        Ok(t) => (t, None),
        Err(e) => match e.partial_telemetry() {
            Some(t) => (t.clone(), Some(e)),
            None => return Err(e.into()),
        },
    };
    telemetry.write_csv(File::create(out_dir.join("telemetry.csv"))?)?;
    if !telemetry.is_empty() {
        let summary = metrics(&telemetry, scenario.propulsion)?;
        summary.write_csv(File::create(out_dir.join("summary.csv"))?)?;
        println!(
            "steps {} | sum |u| {:.6} m/s | sum |u|^2 {:.6e} | min margin {:.3e} | final |r_B - theta| {:.4} m",
            summary.steps, summary.sum_u_norm, summary.sum_u_sq, summary.min_margin, summary.final_tracking_error
        );
    }
    if let Some(k) = dump_qp {
        let Some(row) = telemetry.rows.get(k) else {
            bail!("--dump-qp {k}: only {} steps were recorded", telemetry.len());
        };
        let step = prepared.solve_step(k, &LvlhState::new(row.r_l, row.v_l))?;
        let mut w = BufWriter::new(File::create(out_dir.join(format!("qp_step{k}.txt")))?);
        write_qp_dump(&mut w, &step.qp)?;
        w.flush()?;
    }
    match failure {
        None => Ok(ExitCode::SUCCESS),
        Some(e @ (SimError::Infeasible { .. } | SimError::ConstraintViolation { .. })) => {
            eprintln!("{e}");
            Ok(ExitCode::from(2))
        }
        Some(e) => Err(e.into()),
    }
}

fn feasibility(config: &Path, rates: Option<Vec<f64>>, periods: Option<Vec<f64>>, out: Option<&Path>) -> Result<()> {
    let cfg = ScenarioConfig::load(config)?;
    let base = cfg.validate()?;
    let omega = base.attitude.omega;
    let direction = if omega.norm() > 0.0 { omega / omega.norm() } else { omega };
    let rates = rates.unwrap_or_else(|| vec![omega.norm()]);
    let periods = periods.unwrap_or_else(|| vec![base.orbit.sampling_period()]);
    let mut w = csv::Writer::from_writer(output(out)?);
    w.write_record(["spin_rate_rad_s", "sampling_period_s", "varpi_star", "theta_max_m", "y_max_m"])?;
    for &rate in &rates {
        for &period in &periods {
            let mut scenario = base.clone();
            scenario.attitude.omega = direction * rate;
            scenario.orbit = base.orbit.with_sampling_period(period)?;
            let stm = mpct_rendezvous::relative_dynamics::hcw_stm(&scenario.orbit)?;
            let env = feasibility_envelope(&scenario, &stm)?;
            w.write_record([
                rate.to_string(),
                period.to_string(),
                env.varpi_star.to_string(),
                env.theta_max.to_string(),
                env.y_max.map_or(String::new(), |y| y.to_string()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn attitude(config: &Path, steps: Option<usize>, out: Option<&Path>) -> Result<()> {
    let cfg = ScenarioConfig::load(config)?;
    let s = cfg.validate()?;
    let traj = propagate_attitude(
        &s.attitude,
        &s.inertia,
        &s.orbit,
        steps.unwrap_or(s.steps),
        s.attitude_substeps,
        s.attitude_mode,
    )?;
    traj.write_csv(output(out)?)?;
    Ok(())
}

fn write_matrix(w: &mut impl Write, name: &str, rows: usize, cols: usize, at: impl Fn(usize, usize) -> f64) -> io::Result<()> {
    writeln!(w, "{name} {rows} {cols}")?;
    for i in 0..rows {
        let row: Vec<String> = (0..cols).map(|j| format!("{:.16e}", at(i, j))).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

fn stm(n: f64, t: f64) -> Result<()> {
    if !(n.is_finite() && n >= 0.0 && t.is_finite() && t > 0.0) {
        bail!("need n >= 0 and T > 0, got n = {n}, T = {t}");
    }
    let m = hcw_matrices(n, t);
    let mut w = io::stdout().lock();
    write_matrix(&mut w, "A", m.a.nrows(), m.a.ncols(), |i, j| m.a[(i, j)])?;
    write_matrix(&mut w, "B", m.b.nrows(), m.b.ncols(), |i, j| m.b[(i, j)])?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out_dir, dump_qp } => simulate(&config, &out_dir, dump_qp),
        Command::Feasibility {
            config,
            spin_rates_rad_s,
            periods_s,
            out,
        } => feasibility(&config, spin_rates_rad_s, periods_s, out.as_deref()).map(|_| ExitCode::SUCCESS),
        Command::Attitude { config, steps, out } => attitude(&config, steps, out.as_deref()).map(|_| ExitCode::SUCCESS),
        Command::Stm { n, t } => stm(n, t).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
