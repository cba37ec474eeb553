//! Error-rate and NMSE computation for decoded frames.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::encoder::{BitPayload, MessageVector};
use crate::error::{Result, SparcError};
use crate::params::SparcParams;

/// How to count a value error when the location is also wrong.
///
/// The default compares the decoded symbol against the true symbol
/// regardless of location, so a section can count toward both the location
/// and value rates. The alternative only scores the value when the
/// location came out right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueErrorRule {
    #[default]
    CompareAlways,
    OnlyWhenLocationCorrect,
}

/// Section-level error rates for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionErrors {
    /// Fraction of sections with a wrong location or wrong value.
    pub ser: f64,
    pub location_rate: f64,
    pub value_rate: f64,
}

/// Per-section comparison of decoded and true messages.
pub fn section_errors(
    decoded: &MessageVector,
    truth: &MessageVector,
    rule: ValueErrorRule,
) -> Result<SectionErrors> {
    if decoded.sections() != truth.sections() {
        return Err(SparcError::DimensionMismatch {
            expected: truth.sections(),
            actual: decoded.sections(),
        });
    }
    let sections = truth.sections();
    let mut loc_errors = 0usize;
    let mut val_errors = 0usize;
    let mut sec_errors = 0usize;
    for i in 0..sections {
        let loc_wrong = decoded.positions()[i] != truth.positions()[i];
        let sym_wrong = decoded.symbols()[i] != truth.symbols()[i];
        if loc_wrong {
            loc_errors += 1;
        }
        let val_wrong = match rule {
            ValueErrorRule::CompareAlways => sym_wrong,
            ValueErrorRule::OnlyWhenLocationCorrect => !loc_wrong && sym_wrong,
        };
        if val_wrong {
            val_errors += 1;
        }
        if loc_wrong || sym_wrong {
            sec_errors += 1;
        }
    }
    let l = sections as f64;
    Ok(SectionErrors {
        ser: sec_errors as f64 / l,
        location_rate: loc_errors as f64 / l,
        value_rate: val_errors as f64 / l,
    })
}

/// Hamming distance over length: the bit error rate of one frame.
pub fn bit_errors(decoded: &BitPayload, truth: &BitPayload) -> Result<f64> {
    if decoded.len() != truth.len() {
        return Err(SparcError::DimensionMismatch {
            expected: truth.len(),
            actual: decoded.len(),
        });
    }
    let wrong = decoded
        .bits()
        .iter()
        .zip(truth.bits())
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// Normalized squared error of a soft estimate: per column block
/// `||est_c - beta_c||^2 / (L/C)` and in total `||est - beta||^2 / L`.
pub fn nmse(
    estimate: &[Complex64],
    truth: &MessageVector,
    params: &SparcParams,
) -> Result<(Vec<f64>, f64)> {
    if estimate.len() != params.total_columns() {
        return Err(SparcError::DimensionMismatch {
            expected: params.total_columns(),
            actual: estimate.len(),
        });
    }
    let per_block = crate::amp::per_block_nmse(estimate, truth, params);
    let total = estimate
        .iter()
        .zip(truth.values())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        / params.sections as f64;
    Ok((per_block, total))
}

/// Everything measured on one decoded frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameResult {
    pub ser: f64,
    pub ber: f64,
    pub frame_error: bool,
    pub location_error_rate: f64,
    pub value_error_rate: f64,
    pub nmse_per_block: Vec<f64>,
    pub nmse_total: f64,
}

/// Score a decoded frame against the truth. `soft_estimate` is the final
/// soft decoder output used for the NMSE figures.
pub fn frame_result(
    decoded: &MessageVector,
    truth: &MessageVector,
    soft_estimate: &[Complex64],
    params: &SparcParams,
    rule: ValueErrorRule,
) -> Result<FrameResult> {
    let sec = section_errors(decoded, truth, rule)?;
    let ber = bit_errors(
        &crate::encoder::message_to_bits(decoded, params)?,
        &crate::encoder::message_to_bits(truth, params)?,
    )?;
    let (nmse_per_block, nmse_total) = nmse(soft_estimate, truth, params)?;
    Ok(FrameResult {
        ser: sec.ser,
        ber,
        frame_error: sec.ser > 0.0,
        location_error_rate: sec.location_rate,
        value_error_rate: sec.value_rate,
        nmse_per_block,
        nmse_total,
    })
}
