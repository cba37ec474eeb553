//! Experiment driver: independent trials over a channel sweep, aggregation
//! with binomial error bars, state-evolution comparison runs, and the CSV
//! and manifest formats.
//!
//! Trials are the unit of parallelism. Every trial derives its own seed
//! tree from (master seed, point index, trial index), and aggregation
//! reduces the collected per-trial results in index order, so a run is
//! reproducible byte-for-byte for a given configuration and master seed.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use sparc_core::amp::decode_tracked;
use sparc_core::base_matrix::BaseMatrix;
use sparc_core::channel::add_awgn;
use sparc_core::design::{DesignOperator, OperatorKind};
use sparc_core::encoder::{encode, MessageVector};
use sparc_core::metrics::{frame_result, FrameResult};
use sparc_core::params::{nats_per_use_to_bits_per_dim, SparcParams};
use sparc_core::se::{run_se, ser_bound_constant, McConfig};
use sparc_core::seeding::derive_seed;

use crate::config::{ResolvedPoint, RunConfig};
use crate::HarnessError;

/// Slack for the deterministic error-bound check, covering only float
/// roundoff in the comparison itself.
const LEMMA_EPS: f64 = 1e-9;

/// Aggregated results for one sweep point.
#[derive(Debug, Clone, Serialize)]
pub struct PointResult {
    pub ebn0_db: f64,
    pub sigma2: f64,
    pub trials: usize,
    pub ser: f64,
    pub ser_stderr: f64,
    pub ber: f64,
    pub ber_stderr: f64,
    pub fer: f64,
    pub fer_stderr: f64,
    pub location_error_rate: f64,
    pub value_error_rate: f64,
    pub mean_iterations: f64,
    /// Trials on which the decoder produced non-finite values; counted,
    /// scored as full frame errors, never fatal.
    pub diverged: usize,
    /// Frames violating the deterministic SER <= c(K) * NMSE bound.
    pub bound_violations: usize,
    pub wall_seconds: f64,
}

struct TrialOutcome {
    frame: FrameResult,
    iterations: usize,
    diverged: bool,
    bound_violation: bool,
}

fn run_trial(
    point: &ResolvedPoint,
    config: &RunConfig,
    fixed_operator: Option<&DesignOperator>,
    trial_seed: u64,
) -> Result<TrialOutcome, HarnessError> {
    let params = &point.params;
    let fresh;
    let operator = match fixed_operator {
        Some(op) => op,
        None => {
            fresh = build_operator(
                config.run.operator,
                &point.base,
                params,
                derive_seed(trial_seed, 0, 1),
            )?;
            &fresh
        }
    };
    let mut msg_rng = ChaCha8Rng::seed_from_u64(derive_seed(trial_seed, 0, 2));
    let message = MessageVector::random(params, &mut msg_rng);
    let x = encode(operator, &message)?;
    let y = add_awgn(&x, params.sigma2, derive_seed(trial_seed, 0, 3))?;
    let (decoded, report) = decode_tracked(
        &y,
        operator,
        &point.base,
        params,
        &config.decoder.to_decoder_config(),
        None,
    )?;
    let diverged = report.diverged_at.is_some() || decoded.is_none();
    let frame = match &decoded {
        Some(d) => frame_result(
            d,
            &message,
            &report.final_soft,
            params,
            config.run.value_error_rule,
        )?,
        // A diverged decode counts as a fully errored frame.
        None => FrameResult {
            ser: 1.0,
            ber: 0.5,
            frame_error: true,
            location_error_rate: 1.0,
            value_error_rate: 1.0,
            nmse_per_block: vec![f64::INFINITY; params.col_blocks],
            nmse_total: f64::INFINITY,
        },
    };
    let bound_violation = if diverged {
        false
    } else {
        let c = ser_bound_constant(params.psk_order)?;
        frame.ser > c * frame.nmse_total + LEMMA_EPS
    };
    Ok(TrialOutcome {
        frame,
        iterations: report.iterations,
        diverged,
        bound_violation,
    })
}

pub fn build_operator(
    kind: OperatorKind,
    base: &BaseMatrix,
    params: &SparcParams,
    seed: u64,
) -> Result<DesignOperator, HarnessError> {
    Ok(match kind {
        OperatorKind::GaussianExplicit => DesignOperator::sample_gaussian(base, params, seed)?,
        OperatorKind::DftImplicit => DesignOperator::build_dft(base, params, seed)?,
    })
}

/// Binomial standard error of an empirical fraction over `n` observations.
fn binomial_stderr(p: f64, n: f64) -> f64 {
    (p.clamp(0.0, 1.0) * (1.0 - p.clamp(0.0, 1.0)) / n).sqrt()
}

/// Run all trials of one sweep point and aggregate.
pub fn run_point(config: &RunConfig, point_index: usize) -> Result<PointResult, HarnessError> {
    let point = config.resolve_point(config.channel.ebn0_db[point_index])?;
    run_point_resolved(config, &point, point_index)
}

pub fn run_point_resolved(
    config: &RunConfig,
    point: &ResolvedPoint,
    point_index: usize,
) -> Result<PointResult, HarnessError> {
    let start = std::time::Instant::now();
    let fixed_operator = if config.run.fresh_operator {
        None
    } else {
        Some(build_operator(
            config.run.operator,
            &point.base,
            &point.params,
            derive_seed(config.run.master_seed, point_index as u64, u64::MAX),
        )?)
    };
    let outcomes: Vec<Result<TrialOutcome, HarnessError>> = (0..config.run.trials)
        .into_par_iter()
        .map(|trial| {
            let trial_seed = derive_seed(
                config.run.master_seed,
                point_index as u64,
                trial as u64,
            );
            run_trial(point, config, fixed_operator.as_ref(), trial_seed)
        })
        .collect();

    let mut ser = 0.0;
    let mut ber = 0.0;
    let mut fer = 0.0;
    let mut loc = 0.0;
    let mut val = 0.0;
    let mut iters = 0usize;
    let mut diverged = 0usize;
    let mut violations = 0usize;
    for outcome in &outcomes {
        let o = match outcome {
            Ok(o) => o,
            Err(e) => return Err(HarnessError::Config(format!("trial failed: {e}"))),
        };
        ser += o.frame.ser;
        ber += o.frame.ber;
        fer += if o.frame.frame_error { 1.0 } else { 0.0 };
        loc += o.frame.location_error_rate;
        val += o.frame.value_error_rate;
        iters += o.iterations;
        diverged += usize::from(o.diverged);
        violations += usize::from(o.bound_violation);
    }
    let trials = config.run.trials as f64;
    let sections = point.params.sections as f64;
    let bits = point.params.frame_bits() as f64;
    Ok(PointResult {
        ebn0_db: point.ebn0_db,
        sigma2: point.params.sigma2,
        trials: config.run.trials,
        ser: ser / trials,
        ser_stderr: binomial_stderr(ser / trials, trials * sections),
        ber: ber / trials,
        ber_stderr: binomial_stderr(ber / trials, trials * bits),
        fer: fer / trials,
        fer_stderr: binomial_stderr(fer / trials, trials),
        location_error_rate: loc / trials,
        value_error_rate: val / trials,
        mean_iterations: iters as f64 / trials,
        diverged,
        bound_violations: violations,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Exact header of the sweep results CSV.
pub const RESULTS_CSV_HEADER: &str = "ebn0_db,K,M,L,n,R_bits_per_dim,omega,lambda,rho,operator,trials,ser,ser_stderr,ber,ber_stderr,fer,fer_stderr,loc_err,val_err,mean_iters";

/// Exact header of the state-evolution comparison CSV.
pub const SE_COMPARE_CSV_HEADER: &str =
    "iter,block,psi_se,psi_se_stderr,nmse_amp_mean,nmse_amp_stderr,abs_dev";

/// Run manifest: everything needed to reproduce a run byte-for-byte with
/// the same tool version, plus the aggregate results.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: RunConfig,
    pub resolved_points: Vec<ResolvedPointSummary>,
    pub results: Vec<PointResult>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedPointSummary {
    pub ebn0_db: f64,
    pub sigma2: f64,
    pub rate_nats: f64,
    pub rate_bits_per_dim: f64,
    pub code_length: usize,
    pub base_kind: String,
    pub base_matrix: Vec<Vec<f64>>,
    pub operator: OperatorKind,
    pub fresh_operator_per_trial: bool,
    pub master_seed: u64,
}

fn summarize(point: &ResolvedPoint, config: &RunConfig) -> ResolvedPointSummary {
    ResolvedPointSummary {
        ebn0_db: point.ebn0_db,
        sigma2: point.params.sigma2,
        rate_nats: point.params.rate_nats,
        rate_bits_per_dim: nats_per_use_to_bits_per_dim(point.params.rate_nats),
        code_length: point.params.code_length,
        base_kind: config.base_kind_label().to_string(),
        base_matrix: point.base.to_rows(),
        operator: config.run.operator,
        fresh_operator_per_trial: config.run.fresh_operator,
        master_seed: config.run.master_seed,
    }
}

/// Outputs of a sweep: per-point aggregates plus the file paths written.
pub struct SweepOutput {
    pub results: Vec<PointResult>,
    pub csv_path: std::path::PathBuf,
    pub manifest_path: std::path::PathBuf,
}

/// Run the full sweep, write `results.csv` and `manifest.json` under
/// `out_dir`, and return the aggregates.
pub fn run_sweep(config: &RunConfig, out_dir: &Path) -> Result<SweepOutput, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let start = std::time::Instant::now();
    let mut results = Vec::with_capacity(config.channel.ebn0_db.len());
    let mut summaries = Vec::new();
    for index in 0..config.channel.ebn0_db.len() {
        let point = config.resolve_point(config.channel.ebn0_db[index])?;
        summaries.push(summarize(&point, config));
        results.push(run_point_resolved(config, &point, index)?);
    }

    let csv_path = out_dir.join("results.csv");
    write_results_csv(&csv_path, config, &results)?;

    let manifest = RunManifest {
        schema_version: 1,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        resolved_points: summaries,
        results: results.clone(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;

    Ok(SweepOutput {
        results,
        csv_path,
        manifest_path,
    })
}

/// Write sweep results with the exact column set of [`RESULTS_CSV_HEADER`].
pub fn write_results_csv(
    path: &Path,
    config: &RunConfig,
    results: &[PointResult],
) -> Result<(), HarnessError> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{RESULTS_CSV_HEADER}")?;
    let n = config.resolve_code_length()?;
    let nats = config.code.sections as f64
        * ((config.code.psk_order * config.code.section_size) as f64).ln();
    let bits_per_dim = nats_per_use_to_bits_per_dim(nats / n as f64);
    let (omega, lambda, rho) = config.coupling_summary();
    for r in results {
        writeln!(
            file,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.ebn0_db,
            config.code.psk_order,
            config.code.section_size,
            config.code.sections,
            n,
            bits_per_dim,
            omega,
            lambda,
            rho,
            config.run.operator,
            r.trials,
            r.ser,
            r.ser_stderr,
            r.ber,
            r.ber_stderr,
            r.fer,
            r.fer_stderr,
            r.location_error_rate,
            r.value_error_rate,
            r.mean_iterations,
        )?;
    }
    Ok(())
}

/// One row of the state-evolution comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct SeCompareRow {
    pub iter: usize,
    pub block: usize,
    pub psi_se: f64,
    pub psi_se_stderr: f64,
    pub nmse_amp_mean: f64,
    pub nmse_amp_stderr: f64,
    pub abs_dev: f64,
}

/// Run decoder instances against the offline state-evolution trajectory at
/// the first sweep point and tabulate per-(iteration, block) deviations.
///
/// Decoders run with early stopping disabled for the full trajectory
/// length so every instance contributes to every cell.
pub fn run_se_compare(config: &RunConfig) -> Result<Vec<SeCompareRow>, HarnessError> {
    let point = config.resolve_point(config.channel.ebn0_db[0])?;
    let params = &point.params;
    let mc = McConfig {
        samples: config.se.samples,
        seed: derive_seed(config.run.master_seed, u64::MAX, 1),
    };
    let trajectory = run_se(&point.base, params, config.se.max_iterations, &mc)?;
    let horizon = trajectory.len() - 1;
    if horizon == 0 {
        return Ok(Vec::new());
    }

    let decoder = sparc_core::DecoderConfig {
        max_iterations: horizon,
        stop_tolerance: 0.0,
        sigma2_known: config.decoder.sigma2_known,
    };
    let traces: Vec<Vec<Vec<f64>>> = (0..config.run.trials)
        .into_par_iter()
        .map(|trial| -> Result<Vec<Vec<f64>>, HarnessError> {
            let trial_seed = derive_seed(config.run.master_seed, 0, trial as u64);
            let operator = build_operator(
                config.run.operator,
                &point.base,
                params,
                derive_seed(trial_seed, 0, 1),
            )?;
            let mut msg_rng = ChaCha8Rng::seed_from_u64(derive_seed(trial_seed, 0, 2));
            let message = MessageVector::random(params, &mut msg_rng);
            let x = encode(&operator, &message)?;
            let y = add_awgn(&x, params.sigma2, derive_seed(trial_seed, 0, 3))?;
            let (_, report) = decode_tracked(
                &y,
                &operator,
                &point.base,
                params,
                &decoder,
                Some(&message),
            )?;
            Ok(report.nmse_trace.expect("truth was supplied"))
        })
        .collect::<Result<_, _>>()?;

    let instances = traces.len() as f64;
    let blocks = params.col_blocks;
    let mut rows = Vec::with_capacity(horizon * blocks);
    for t in 1..=horizon {
        let state = &trajectory[t];
        for block in 0..blocks {
            let values: Vec<f64> = traces.iter().map(|tr| tr[t - 1][block]).collect();
            let mean = values.iter().sum::<f64>() / instances;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (instances - 1.0).max(1.0);
            let stderr = (var / instances).sqrt();
            rows.push(SeCompareRow {
                iter: t,
                block,
                psi_se: state.psi[block],
                psi_se_stderr: state.psi_std_err[block],
                nmse_amp_mean: mean,
                nmse_amp_stderr: stderr,
                abs_dev: (mean - state.psi[block]).abs(),
            });
        }
    }
    Ok(rows)
}

pub fn write_se_compare_csv(path: &Path, rows: &[SeCompareRow]) -> Result<(), HarnessError> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{SE_COMPARE_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            file,
            "{},{},{},{},{},{},{}",
            r.iter, r.block, r.psi_se, r.psi_se_stderr, r.nmse_amp_mean, r.nmse_amp_stderr, r.abs_dev
        )?;
    }
    Ok(())
}

/// Rows of the SE trajectory CSV emitted by the `se` subcommand.
pub fn write_se_csv(
    path_or_stdout: Option<&Path>,
    trajectory: &[sparc_core::SeState],
) -> Result<(), HarnessError> {
    let mut out: Box<dyn Write> = match path_or_stdout {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    writeln!(out, "t,block,gamma,phi,tau,psi,nu,psi_std_err")?;
    for state in trajectory {
        // gamma and phi live on row blocks, the rest on column blocks;
        // indices one side does not have are left blank.
        let rows = state.gamma.len().max(state.psi.len());
        let cell = |v: Option<&f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for i in 0..rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                state.iteration,
                i,
                cell(state.gamma.get(i)),
                cell(state.phi.get(i)),
                cell(state.tau.get(i)),
                cell(state.psi.get(i)),
                cell(state.nu.get(i)),
                cell(state.psi_std_err.get(i)),
            )?;
        }
    }
    Ok(())
}
