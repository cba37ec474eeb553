//! Exhaustive maximum-likelihood decoding for toy code sizes, used as a
//! test oracle against the iterative decoder.

use num_complex::Complex64;
use sparc_core::design::DesignOperator;
use sparc_core::encoder::MessageVector;
use sparc_core::error::SparcError;
use sparc_core::params::SparcParams;

use crate::HarnessError;

/// Largest number of candidate messages the oracle will enumerate.
pub const ML_CANDIDATE_CAP: u64 = 1 << 16;

/// Minimize `||y - A beta||^2` over every valid message vector.
///
/// The candidate count is `(M K)^L`; sizes above [`ML_CANDIDATE_CAP`] are
/// rejected. Ties resolve to the first candidate in lexicographic
/// (position, symbol) order, matching the decoder's tie-breaking direction.
pub fn ml_oracle_decode(
    y: &[Complex64],
    operator: &DesignOperator,
    params: &SparcParams,
) -> Result<MessageVector, HarnessError> {
    if y.len() != params.code_length {
        return Err(HarnessError::Core(SparcError::DimensionMismatch {
            expected: params.code_length,
            actual: y.len(),
        }));
    }
    let per_section = (params.section_size * params.psk_order) as u64;
    let candidates = per_section
        .checked_pow(params.sections as u32)
        .filter(|&c| c <= ML_CANDIDATE_CAP);
    let Some(_) = candidates else {
        return Err(HarnessError::Core(SparcError::invalid(format!(
            "(MK)^L = {per_section}^{} exceeds the oracle cap of {ML_CANDIDATE_CAP}",
            params.sections
        ))));
    };

    // Precompute the scaled columns A[:, j] * p_k seen by each candidate
    // choice, via one operator application per column.
    let m = params.section_size;
    let symbols = sparc_core::encoder::psk_table(params.psk_order)?;
    let mut columns: Vec<Vec<Complex64>> = Vec::with_capacity(params.total_columns());
    let mut basis = vec![Complex64::ZERO; params.total_columns()];
    for j in 0..params.total_columns() {
        basis[j] = Complex64::new(1.0, 0.0);
        columns.push(operator.apply(&basis)?);
        basis[j] = Complex64::ZERO;
    }

    let mut best_cost = f64::INFINITY;
    let mut best: Option<(Vec<usize>, Vec<usize>)> = None;
    // Mixed-radix counter over (position, symbol) per section.
    let mut choice = vec![0u64; params.sections];
    let mut codeword = vec![Complex64::ZERO; params.code_length];
    loop {
        codeword.fill(Complex64::ZERO);
        for (section, &c) in choice.iter().enumerate() {
            let pos = (c / params.psk_order as u64) as usize;
            let sym = (c % params.psk_order as u64) as usize ;
            let col = &columns[section * m + pos];
            let p = symbols[sym];
            for (acc, &a) in codeword.iter_mut().zip(col) {
                *acc += a * p;
            }
        }
        let cost: f64 = y
            .iter()
            .zip(&codeword)
            .map(|(yi, xi)| (yi - xi).norm_sqr())
            .sum();
        if cost < best_cost {
            best_cost = cost;
            best = Some((
                choice
                    .iter()
                    .map(|&c| (c / params.psk_order as u64) as usize)
                    .collect(),
                choice
                    .iter()
                    .map(|&c| (c % params.psk_order as u64) as usize + 1)
                    .collect(),
            ));
        }
        // Advance the counter.
        let mut section = params.sections;
        loop {
            if section == 0 {
                break;
            }
            section -= 1;
            choice[section] += 1;
            if choice[section] < per_section {
                break;
            }
            choice[section] = 0;
            if section == 0 {
                let (positions, syms) = best.expect("at least one candidate evaluated");
                return Ok(MessageVector::from_structure(positions, syms, params)?);
            }
        }
    }
}
