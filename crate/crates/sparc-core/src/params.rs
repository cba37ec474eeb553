//! Code parameters, rate/power/SNR arithmetic, and the block-index maps
//! shared by every other module.
//!
//! A code is described by the number of sections `L`, the section size `M`
//! (columns per section), the PSK order `K`, the code length `n` in complex
//! channel uses, the average power `P`, and the noise variance `sigma2`.
//! The rate in nats per channel use is `L * ln(K*M) / n`. Rates are stored
//! in nats; the CLI layer converts to and from bits per dimension
//! (`nats / (2 ln 2)`).

use serde::{Deserialize, Serialize};

use crate::error::{Result, SparcError};

/// Code parameters plus the row/column block structure of the design matrix.
///
/// Immutable after construction; cheap to clone and safe to share across
/// concurrent trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparcParams {
    /// Number of sections `L`.
    pub sections: usize,
    /// Columns per section `M` (power of two).
    pub section_size: usize,
    /// PSK constellation size `K` (power of two; 1 means unmodulated).
    pub psk_order: usize,
    /// Code length `n` in complex channel uses.
    pub code_length: usize,
    /// Rate in nats per complex channel use, exactly `L ln(KM) / n`.
    pub rate_nats: f64,
    /// Average codeword power `P`.
    pub power: f64,
    /// Complex noise variance per channel use.
    pub sigma2: f64,
    /// Number of row blocks of the design matrix.
    pub row_blocks: usize,
    /// Number of column blocks of the design matrix.
    pub col_blocks: usize,
}

impl SparcParams {
    /// Build and validate a parameter set from an explicit code length.
    ///
    /// The rate is derived from the other parameters, so the rate equation
    /// holds exactly.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sections: usize,
        section_size: usize,
        psk_order: usize,
        code_length: usize,
        power: f64,
        sigma2: f64,
        row_blocks: usize,
        col_blocks: usize,
    ) -> Result<Self> {
        if sections == 0 || section_size == 0 || psk_order == 0 || code_length == 0 {
            return Err(SparcError::invalid("L, M, K, n must all be positive"));
        }
        if !section_size.is_power_of_two() {
            return Err(SparcError::invalid(format!(
                "section size M = {section_size} must be a power of two"
            )));
        }
        if !psk_order.is_power_of_two() {
            return Err(SparcError::invalid(format!(
                "PSK order K = {psk_order} must be a power of two"
            )));
        }
        if power <= 0.0 || !power.is_finite() {
            return Err(SparcError::invalid("power P must be positive and finite"));
        }
        if sigma2 <= 0.0 || !sigma2.is_finite() {
            return Err(SparcError::invalid("noise variance must be positive and finite"));
        }
        if row_blocks == 0 || col_blocks == 0 {
            return Err(SparcError::invalid("block counts must be positive"));
        }
        if !sections.is_multiple_of(col_blocks) {
            return Err(SparcError::invalid(format!(
                "column block count {col_blocks} must divide section count {sections}"
            )));
        }
        if !code_length.is_multiple_of(row_blocks) {
            return Err(SparcError::invalid(format!(
                "row block count {row_blocks} must divide code length {code_length}"
            )));
        }
        let rate_nats = sections as f64 * ((psk_order * section_size) as f64).ln()
            / code_length as f64;
        if rate_nats <= 0.0 || rate_nats.is_nan() {
            return Err(SparcError::invalid("derived rate is not positive"));
        }
        Ok(SparcParams {
            sections,
            section_size,
            psk_order,
            code_length,
            rate_nats,
            power,
            sigma2,
            row_blocks,
            col_blocks,
        })
    }

    /// Total number of design matrix columns, `L * M`.
    pub fn total_columns(&self) -> usize {
        self.sections * self.section_size
    }

    /// `ln(K * M)`, the nats carried per section.
    pub fn nats_per_section(&self) -> f64 {
        ((self.psk_order * self.section_size) as f64).ln()
    }

    /// Information bits carried per section, `log2 M + log2 K`.
    pub fn bits_per_section(&self) -> u32 {
        self.section_size.trailing_zeros() + self.psk_order.trailing_zeros()
    }

    /// Payload capacity of one frame in bits.
    pub fn frame_bits(&self) -> usize {
        self.sections * self.bits_per_section() as usize
    }

    /// Rows per row block, `n / R`.
    pub fn rows_per_block(&self) -> usize {
        self.code_length / self.row_blocks
    }

    /// Columns per column block, `L M / C`.
    pub fn cols_per_block(&self) -> usize {
        self.total_columns() / self.col_blocks
    }

    /// Sections per column block, `L / C`.
    pub fn sections_per_block(&self) -> usize {
        self.sections / self.col_blocks
    }

    /// Row block index of row `i` (0-based, contiguous equal-size blocks).
    pub fn row_block_of(&self, row: usize) -> usize {
        debug_assert!(row < self.code_length);
        row / self.rows_per_block()
    }

    /// Column block index of column `j` (0-based).
    pub fn col_block_of(&self, col: usize) -> usize {
        debug_assert!(col < self.total_columns());
        col / self.cols_per_block()
    }

    /// Column block containing section `ell` (0-based).
    pub fn col_block_of_section(&self, section: usize) -> usize {
        debug_assert!(section < self.sections);
        section / self.sections_per_block()
    }

    /// Signal-to-noise ratio `P / sigma2`.
    pub fn snr(&self) -> f64 {
        self.power / self.sigma2
    }

    /// Channel quantities implied by this parameter set.
    pub fn channel_spec(&self) -> ChannelSpec {
        ChannelSpec::new(self.power, self.sigma2, self.rate_nats)
    }
}

/// Channel-side quantities derived from power, noise variance, and rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    /// `P / sigma2`.
    pub snr: f64,
    /// Shannon capacity `ln(1 + snr)` in nats per channel use.
    pub capacity_nats: f64,
    /// Energy per bit over noise density, in dB.
    pub ebn0_db: f64,
}

impl ChannelSpec {
    pub fn new(power: f64, sigma2: f64, rate_nats: f64) -> Self {
        let snr = power / sigma2;
        let bits_per_use = rate_nats / std::f64::consts::LN_2;
        ChannelSpec {
            snr,
            capacity_nats: snr.ln_1p(),
            ebn0_db: 10.0 * (snr / bits_per_use).log10(),
        }
    }
}

/// Code length for a target rate: `n = round(L ln(KM) / R)`, together with
/// the rate actually achieved at that integer length.
pub fn derive_code_length(
    sections: usize,
    section_size: usize,
    psk_order: usize,
    target_rate_nats: f64,
) -> Result<(usize, f64)> {
    if sections == 0 || section_size == 0 || psk_order == 0 {
        return Err(SparcError::invalid("L, M, K must be positive"));
    }
    if target_rate_nats <= 0.0 || !target_rate_nats.is_finite() {
        return Err(SparcError::invalid("target rate must be positive"));
    }
    let nats = sections as f64 * ((psk_order * section_size) as f64).ln();
    let n = (nats / target_rate_nats).round().max(1.0) as usize;
    Ok((n, nats / n as f64))
}

/// Same as [`derive_code_length`] but rounds to the nearest positive
/// multiple of `row_blocks` so the block maps stay valid.
pub fn derive_code_length_blocks(
    sections: usize,
    section_size: usize,
    psk_order: usize,
    target_rate_nats: f64,
    row_blocks: usize,
) -> Result<(usize, f64)> {
    if row_blocks == 0 {
        return Err(SparcError::invalid("row block count must be positive"));
    }
    let (n, _) = derive_code_length(sections, section_size, psk_order, target_rate_nats)?;
    let b = row_blocks as f64;
    let n_blocks = ((n as f64 / b).round().max(1.0)) as usize;
    let n = n_blocks * row_blocks;
    let nats = sections as f64 * ((psk_order * section_size) as f64).ln();
    Ok((n, nats / n as f64))
}

/// Bits per section, `log2 M + log2 K`.
pub fn bits_per_section(section_size: usize, psk_order: usize) -> Result<u32> {
    if section_size == 0 || !section_size.is_power_of_two() {
        return Err(SparcError::invalid("M must be a power of two"));
    }
    if psk_order == 0 || !psk_order.is_power_of_two() {
        return Err(SparcError::invalid("K must be a power of two"));
    }
    Ok(section_size.trailing_zeros() + psk_order.trailing_zeros())
}

/// Noise variance for a given Eb/N0 operating point.
///
/// Convention: with `b = R / ln 2` bits per complex channel use, the energy
/// per bit is `Eb = P / b` and `N0` is identified with the total complex
/// noise variance, so `sigma2 = P / (b * 10^(ebn0_db/10))`.
pub fn ebn0_to_sigma2(ebn0_db: f64, power: f64, rate_nats: f64) -> Result<f64> {
    if power.is_nan() || power <= 0.0 {
        return Err(SparcError::invalid("power must be positive"));
    }
    if rate_nats.is_nan() || rate_nats <= 0.0 {
        return Err(SparcError::invalid("rate must be positive"));
    }
    let bits_per_use = rate_nats / std::f64::consts::LN_2;
    Ok(power / (bits_per_use * 10f64.powf(ebn0_db / 10.0)))
}

/// Inverse of [`ebn0_to_sigma2`].
pub fn sigma2_to_ebn0(sigma2: f64, power: f64, rate_nats: f64) -> f64 {
    let bits_per_use = rate_nats / std::f64::consts::LN_2;
    10.0 * (power / (bits_per_use * sigma2)).log10()
}

/// Rate unit conversions used at the CLI boundary.
pub fn nats_per_use_to_bits_per_dim(rate_nats: f64) -> f64 {
    rate_nats / (2.0 * std::f64::consts::LN_2)
}

pub fn bits_per_dim_to_nats_per_use(bits_per_dim: f64) -> f64 {
    bits_per_dim * 2.0 * std::f64::consts::LN_2
}
