//! AMP decoder: the section-wise posterior-mean denoiser, the residual
//! recursion with its Onsager correction, online tracking of the noise
//! scales, early stopping, and the final hard decision.

use num_complex::Complex64;
use serde::Serialize;

use crate::base_matrix::BaseMatrix;
use crate::design::{DesignOperator, WeightMatrixBlocks};
use crate::encoder::{psk_table, MessageVector};
use crate::error::{Result, SparcError};
use crate::params::SparcParams;

/// Floor applied to estimated noise scales so a near-exact decode cannot
/// divide by zero.
const SCALE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecoderConfig {
    /// Hard iteration cap.
    pub max_iterations: usize,
    /// Stop when the relative change of the scalar NMSE proxy drops below
    /// this. `f64::INFINITY` stops after one iteration; `0.0` never stops
    /// early.
    pub stop_tolerance: f64,
    /// Whether the decoder is told the channel noise variance. When false,
    /// the residual norm estimates it.
    pub sigma2_known: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            max_iterations: 100,
            stop_tolerance: 1e-6,
            sigma2_known: true,
        }
    }
}

/// Mutable decoder state across iterations.
///
/// After `t` completed steps: `beta` holds the running estimate, `residual`
/// the latest modified residual, `effective_obs` the latest noisy view of
/// the message vector (input of the last denoiser call), and `phi`/`tau`
/// the online noise-scale estimates that produced them.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub beta: Vec<Complex64>,
    pub residual: Vec<Complex64>,
    pub effective_obs: Vec<Complex64>,
    pub gamma: Vec<f64>,
    pub phi: Vec<f64>,
    pub tau: Vec<f64>,
    pub iteration: usize,
    pub clip_warnings: usize,
}

impl DecoderState {
    /// Cold start: zero estimate, zero residual history.
    pub fn initial(params: &SparcParams) -> Self {
        DecoderState {
            beta: vec![Complex64::ZERO; params.total_columns()],
            residual: vec![Complex64::ZERO; params.code_length],
            effective_obs: Vec::new(),
            gamma: Vec::new(),
            phi: Vec::new(),
            tau: Vec::new(),
            iteration: 0,
            clip_warnings: 0,
        }
    }
}

/// Online estimates of the state-evolution scales, computed from the
/// current estimate and residual.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineEstimates {
    pub gamma: Vec<f64>,
    pub phi: Vec<f64>,
    pub tau: Vec<f64>,
    pub clipped: usize,
}

/// Per-row-block unresolved power: `gamma_r = (1/C) sum_c W[r,c] *
/// (1 - ||beta_c||^2 / (L/C))`.
fn gamma_estimate(beta: &[Complex64], base: &BaseMatrix, params: &SparcParams) -> Vec<f64> {
    let unresolved = unresolved_fractions(beta, params);
    (0..base.row_blocks())
        .map(|r| {
            base.row(r)
                .iter()
                .zip(&unresolved)
                .map(|(w, u)| w * u)
                .sum::<f64>()
                / base.col_blocks() as f64
        })
        .collect()
}

/// `1 - ||beta_c||^2 / (L/C)` per column block.
fn unresolved_fractions(beta: &[Complex64], params: &SparcParams) -> Vec<f64> {
    let per_block = params.cols_per_block();
    let sections_per_block = params.sections_per_block() as f64;
    (0..params.col_blocks)
        .map(|c| {
            let energy: f64 = beta[c * per_block..(c + 1) * per_block]
                .iter()
                .map(|v| v.norm_sqr())
                .sum();
            1.0 - energy / sections_per_block
        })
        .collect()
}

fn phi_from_gamma(gamma: &[f64], sigma2: f64, clipped: &mut usize) -> Vec<f64> {
    gamma
        .iter()
        .map(|g| {
            let phi = sigma2 + g;
            if phi <= 0.0 {
                *clipped += 1;
                SCALE_FLOOR
            } else {
                phi
            }
        })
        .collect()
}

fn phi_from_residual(residual: &[Complex64], params: &SparcParams, clipped: &mut usize) -> Vec<f64> {
    let per_block = params.rows_per_block() as f64;
    (0..params.row_blocks)
        .map(|r| {
            let energy: f64 = residual
                [r * params.rows_per_block()..(r + 1) * params.rows_per_block()]
                .iter()
                .map(|v| v.norm_sqr())
                .sum();
            let phi = energy / per_block;
            if phi <= 0.0 {
                *clipped += 1;
                SCALE_FLOOR
            } else {
                phi
            }
        })
        .collect()
}

/// `tau_c = (R/2)/ln(KM) * [(1/Rblocks) sum_r W[r,c]/phi_r]^{-1}`, floored.
fn tau_from_phi(phi: &[f64], base: &BaseMatrix, params: &SparcParams) -> Vec<f64> {
    let prefactor = params.rate_nats / 2.0 / params.nats_per_section();
    (0..base.col_blocks())
        .map(|c| {
            let mean: f64 = (0..base.row_blocks())
                .map(|r| base.entry(r, c) / phi[r])
                .sum::<f64>()
                / base.row_blocks() as f64;
            (prefactor / mean).max(SCALE_FLOOR)
        })
        .collect()
}

/// Online estimates from a given estimate/residual pair.
pub fn estimate_online(
    beta: &[Complex64],
    residual: &[Complex64],
    base: &BaseMatrix,
    params: &SparcParams,
    sigma2_known: bool,
) -> OnlineEstimates {
    let mut clipped = 0;
    let gamma = gamma_estimate(beta, base, params);
    let phi = if sigma2_known {
        phi_from_gamma(&gamma, params.sigma2, &mut clipped)
    } else {
        phi_from_residual(residual, params, &mut clipped)
    };
    let tau = tau_from_phi(&phi, base, params);
    OnlineEstimates {
        gamma,
        phi,
        tau,
        clipped,
    }
}

/// Section-wise posterior-mean denoiser.
///
/// For index `j` in section `ell`, the output is the posterior mean of the
/// section's nonzero entry under the model `s = beta + sqrt(tau) * noise`:
/// a PSK-symbol mixture weighted by `exp(Re(conj(s_j) p_k) / tau_j)`,
/// normalized over the whole section. Exponents are shifted by the section
/// maximum before exponentiation, which leaves the ratio unchanged.
pub fn eta(s: &[Complex64], tau_blocks: &[f64], params: &SparcParams) -> Result<Vec<Complex64>> {
    if s.len() != params.total_columns() {
        return Err(SparcError::DimensionMismatch {
            expected: params.total_columns(),
            actual: s.len(),
        });
    }
    if tau_blocks.len() != params.col_blocks {
        return Err(SparcError::DimensionMismatch {
            expected: params.col_blocks,
            actual: tau_blocks.len(),
        });
    }
    if tau_blocks.iter().any(|&t| t.is_nan() || t <= 0.0) {
        return Err(SparcError::invalid("tau entries must be positive"));
    }
    let m = params.section_size;
    let k_order = params.psk_order;
    let symbols = psk_table(k_order)?;
    let mut out = vec![Complex64::ZERO; s.len()];
    let mut exps = vec![0.0f64; m * k_order];
    for section in 0..params.sections {
        let inv_tau = 1.0 / tau_blocks[params.col_block_of_section(section)];
        let sec = &s[section * m..(section + 1) * m];
        let mut max_exp = f64::NEG_INFINITY;
        for (j, &sj) in sec.iter().enumerate() {
            for (k, p) in symbols.iter().enumerate() {
                let a = (sj.re * p.re + sj.im * p.im) * inv_tau;
                exps[j * k_order + k] = a;
                if a > max_exp {
                    max_exp = a;
                }
            }
        }
        let mut denom = 0.0;
        let out_sec = &mut out[section * m..(section + 1) * m];
        for j in 0..m {
            let mut num = Complex64::ZERO;
            for (k, p) in symbols.iter().enumerate() {
                let w = (exps[j * k_order + k] - max_exp).exp();
                num += *p * w;
                denom += w;
            }
            out_sec[j] = num;
        }
        let inv_denom = 1.0 / denom;
        for v in out_sec.iter_mut() {
            *v *= inv_denom;
        }
    }
    Ok(out)
}

/// One AMP iteration: residual update with Onsager correction, online
/// scale estimation, effective observation, and denoising.
pub fn amp_step(
    state: &mut DecoderState,
    y: &[Complex64],
    operator: &DesignOperator,
    base: &BaseMatrix,
    params: &SparcParams,
    config: &DecoderConfig,
) -> Result<()> {
    let gamma = gamma_estimate(&state.beta, base, params);

    // z = y - A beta + onsager .* z_prev, with the Onsager multiplier
    // gamma_r / phi_r from the previous iteration (zero on the first).
    let a_beta = operator.apply(&state.beta)?;
    let rows_per_block = params.rows_per_block();
    let mut residual: Vec<Complex64> = y
        .iter()
        .zip(&a_beta)
        .map(|(yi, abi)| yi - abi)
        .collect();
    if state.iteration > 0 {
        for (i, r) in residual.iter_mut().enumerate() {
            let rb = i / rows_per_block;
            *r += (gamma[rb] / state.phi[rb]) * state.residual[i];
        }
    }

    let mut clipped = state.clip_warnings;
    let phi = if config.sigma2_known {
        phi_from_gamma(&gamma, params.sigma2, &mut clipped)
    } else {
        phi_from_residual(&residual, params, &mut clipped)
    };
    let tau = tau_from_phi(&phi, base, params);

    // s = beta + (Q o A)* z with block weights 2 tau_c / phi_r. The factor
    // two keeps the effective observation calibrated as beta plus complex
    // noise of variance 2 tau per entry, which is the model the denoiser
    // exponent assumes; tau itself carries the half-rate prefactor.
    let weights = WeightMatrixBlocks {
        row_factors: phi.iter().map(|p| 1.0 / p).collect(),
        col_factors: tau.iter().map(|t| 2.0 * t).collect(),
        onsager: if state.iteration == 0 {
            vec![0.0; params.row_blocks]
        } else {
            gamma.iter().zip(&state.phi).map(|(g, p)| g / p).collect()
        },
    };
    let correction = operator.weighted_adjoint(&residual, &weights)?;
    let s: Vec<Complex64> = state
        .beta
        .iter()
        .zip(&correction)
        .map(|(b, c)| b + c)
        .collect();

    let beta_next = eta(&s, &tau, params)?;

    if beta_next.iter().chain(residual.iter()).any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(SparcError::DecoderDiverged {
            iteration: state.iteration,
        });
    }

    state.beta = beta_next;
    state.residual = residual;
    state.effective_obs = s;
    state.gamma = gamma;
    state.phi = phi;
    state.tau = tau;
    state.iteration += 1;
    state.clip_warnings = clipped;
    Ok(())
}

/// Scalar NMSE proxy `(1/C) sum_c (1 - ||beta_c||^2 / (L/C))` used by the
/// stopping rule.
pub fn nmse_proxy(beta: &[Complex64], params: &SparcParams) -> f64 {
    unresolved_fractions(beta, params).iter().sum::<f64>() / params.col_blocks as f64
}

/// Hard decision: per section, the (location, symbol) pair maximizing
/// `Re(conj(s_j) p_k)`. Ties break toward the lowest location, then the
/// lowest symbol index.
pub fn hard_decision(s: &[Complex64], params: &SparcParams) -> Result<MessageVector> {
    if s.len() != params.total_columns() {
        return Err(SparcError::DimensionMismatch {
            expected: params.total_columns(),
            actual: s.len(),
        });
    }
    let symbols = psk_table(params.psk_order)?;
    let m = params.section_size;
    let mut positions = Vec::with_capacity(params.sections);
    let mut chosen = Vec::with_capacity(params.sections);
    for section in 0..params.sections {
        let sec = &s[section * m..(section + 1) * m];
        let mut best = f64::NEG_INFINITY;
        let mut best_pos = 0;
        let mut best_sym = 1;
        for (j, &sj) in sec.iter().enumerate() {
            for (k, p) in symbols.iter().enumerate() {
                let corr = sj.re * p.re + sj.im * p.im;
                if corr > best {
                    best = corr;
                    best_pos = j;
                    best_sym = k + 1;
                }
            }
        }
        positions.push(best_pos);
        chosen.push(best_sym);
    }
    MessageVector::from_structure(positions, chosen, params)
}

/// Everything a decode run reports besides the message itself.
#[derive(Debug, Clone, Serialize)]
pub struct DecodeReport {
    /// Completed AMP iterations.
    pub iterations: usize,
    /// Per-iteration online residual variances, one vector per row block.
    pub phi_trace: Vec<Vec<f64>>,
    /// Per-iteration online effective noise scales per column block.
    pub tau_trace: Vec<Vec<f64>>,
    /// Per-iteration scalar NMSE proxy.
    pub nmse_proxy_trace: Vec<f64>,
    pub final_nmse_proxy: f64,
    /// Per-iteration per-column-block NMSE against the true message, when
    /// the truth was supplied.
    pub nmse_trace: Option<Vec<Vec<f64>>>,
    /// Iteration at which the recursion produced non-finite values, if any.
    pub diverged_at: Option<usize>,
    /// Number of noise-scale estimates clipped at the numerical floor.
    pub clip_warnings: usize,
    /// Final soft estimate, kept for error-bound checks.
    #[serde(skip)]
    pub final_soft: Vec<Complex64>,
}

/// Full decode loop. Returns the hard decision and a report; on divergence
/// the message is `None` and the report carries the partial traces.
/// Errors only on malformed inputs.
pub fn decode_tracked(
    y: &[Complex64],
    operator: &DesignOperator,
    base: &BaseMatrix,
    params: &SparcParams,
    config: &DecoderConfig,
    truth: Option<&MessageVector>,
) -> Result<(Option<MessageVector>, DecodeReport)> {
    validate_decodable(y, operator, base, params)?;
    if config.max_iterations == 0 {
        return Err(SparcError::invalid("max_iterations must be at least 1"));
    }
    let mut report = DecodeReport {
        iterations: 0,
        phi_trace: Vec::new(),
        tau_trace: Vec::new(),
        nmse_proxy_trace: Vec::new(),
        final_nmse_proxy: 1.0,
        nmse_trace: truth.map(|_| Vec::new()),
        diverged_at: None,
        clip_warnings: 0,
        final_soft: Vec::new(),
    };
    let mut state = DecoderState::initial(params);
    let mut proxy_prev = nmse_proxy(&state.beta, params);
    for _ in 0..config.max_iterations {
        match amp_step(&mut state, y, operator, base, params, config) {
            Ok(()) => {}
            Err(SparcError::DecoderDiverged { iteration }) => {
                report.diverged_at = Some(iteration);
                break;
            }
            Err(_) => unreachable!("dimensions validated before the loop"),
        }
        let proxy = nmse_proxy(&state.beta, params);
        report.phi_trace.push(state.phi.clone());
        report.tau_trace.push(state.tau.clone());
        report.nmse_proxy_trace.push(proxy);
        if let (Some(trace), Some(truth)) = (report.nmse_trace.as_mut(), truth) {
            trace.push(per_block_nmse(&state.beta, truth, params));
        }
        report.iterations = state.iteration;
        let rel_change = (proxy - proxy_prev).abs() / proxy_prev.max(SCALE_FLOOR);
        proxy_prev = proxy;
        if rel_change < config.stop_tolerance {
            break;
        }
    }
    report.clip_warnings = state.clip_warnings;
    report.final_nmse_proxy = proxy_prev;
    report.final_soft = state.beta;
    if report.diverged_at.is_some() || state.effective_obs.is_empty() {
        return Ok((None, report));
    }
    let message = hard_decision(&state.effective_obs, params)
        .expect("effective observation has validated dimensions");
    Ok((Some(message), report))
}

/// Decode and fail hard on divergence.
pub fn decode(
    y: &[Complex64],
    operator: &DesignOperator,
    base: &BaseMatrix,
    params: &SparcParams,
    config: &DecoderConfig,
) -> Result<(MessageVector, DecodeReport)> {
    let (message, report) = decode_tracked(y, operator, base, params, config, None)?;
    match message {
        Some(m) => Ok((m, report)),
        None => Err(SparcError::DecoderDiverged {
            iteration: report.diverged_at.unwrap_or(0),
        }),
    }
}

fn validate_decodable(
    y: &[Complex64],
    operator: &DesignOperator,
    base: &BaseMatrix,
    params: &SparcParams,
) -> Result<()> {
    if y.len() != params.code_length {
        return Err(SparcError::DimensionMismatch {
            expected: params.code_length,
            actual: y.len(),
        });
    }
    if operator.rows() != params.code_length || operator.cols() != params.total_columns() {
        return Err(SparcError::DimensionMismatch {
            expected: params.code_length,
            actual: operator.rows(),
        });
    }
    base.check_compatible(params)?;
    for c in 0..base.col_blocks() {
        let col_sum: f64 = (0..base.row_blocks()).map(|r| base.entry(r, c)).sum();
        if col_sum <= 0.0 {
            return Err(SparcError::invalid(format!(
                "base matrix column block {c} carries no power"
            )));
        }
    }
    Ok(())
}

/// `||beta_hat_c - beta_c||^2 / (L/C)` per column block.
pub fn per_block_nmse(
    estimate: &[Complex64],
    truth: &MessageVector,
    params: &SparcParams,
) -> Vec<f64> {
    let per_block = params.cols_per_block();
    let sections_per_block = params.sections_per_block() as f64;
    (0..params.col_blocks)
        .map(|c| {
            estimate[c * per_block..(c + 1) * per_block]
                .iter()
                .zip(&truth.values()[c * per_block..(c + 1) * per_block])
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                / sections_per_block
        })
        .collect()
}
