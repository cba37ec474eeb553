//! Bit-to-message mapping and codeword generation.
//!
//! Each section of the message vector carries `log2 M` location bits (read
//! MSB-first as the index of the nonzero entry within the section) followed
//! by `log2 K` value bits (mapped to a PSK symbol through a binary-reflected
//! Gray code). Location bits precede value bits; both orderings are fixed so
//! bit error rates are reproducible.

use num_complex::Complex64;
use rand::Rng;

use crate::design::DesignOperator;
use crate::error::{Result, SparcError};
use crate::params::SparcParams;

/// PSK constellation symbol `e^{i 2 pi k / K}` for `k` in `1..=K`.
///
/// `k = K` is the symbol `1 + 0i`; for `K = 2` the constellation is `{-1, +1}`.
pub fn psk_symbol(k: usize, psk_order: usize) -> Result<Complex64> {
    if psk_order == 0 || !psk_order.is_power_of_two() {
        return Err(SparcError::invalid("K must be a power of two"));
    }
    if k < 1 || k > psk_order {
        return Err(SparcError::invalid(format!(
            "symbol index {k} out of range 1..={psk_order}"
        )));
    }
    // Reduce k = K to angle zero so the anchor symbol is exactly 1 + 0i.
    let angle = 2.0 * std::f64::consts::PI * ((k % psk_order) as f64) / psk_order as f64;
    Ok(Complex64::new(angle.cos(), angle.sin()))
}

/// Table of all `K` constellation symbols indexed by `k - 1`.
pub fn psk_table(psk_order: usize) -> Result<Vec<Complex64>> {
    (1..=psk_order).map(|k| psk_symbol(k, psk_order)).collect()
}

/// Map `log2 K` value bits (MSB first) to a symbol index in `1..=K` via the
/// binary-reflected Gray code walked counterclockwise from the symbol `+1`.
pub fn gray_map(bits: &[bool], psk_order: usize) -> Result<usize> {
    if psk_order == 0 || !psk_order.is_power_of_two() {
        return Err(SparcError::invalid("K must be a power of two"));
    }
    let width = psk_order.trailing_zeros() as usize;
    if bits.len() != width {
        return Err(SparcError::DimensionMismatch {
            expected: width,
            actual: bits.len(),
        });
    }
    let gray = bits
        .iter()
        .fold(0usize, |acc, &b| (acc << 1) | usize::from(b));
    // Invert g = j ^ (j >> 1) to recover the position j on the circle.
    let mut pos = gray;
    let mut shift = 1;
    while shift < width {
        pos ^= pos >> shift;
        shift <<= 1;
    }
    Ok(if pos == 0 { psk_order } else { pos })
}

/// Inverse of [`gray_map`]: bits (MSB first) labeling symbol index `k`.
pub fn gray_unmap(k: usize, psk_order: usize) -> Result<Vec<bool>> {
    if psk_order == 0 || !psk_order.is_power_of_two() {
        return Err(SparcError::invalid("K must be a power of two"));
    }
    if k < 1 || k > psk_order {
        return Err(SparcError::invalid(format!(
            "symbol index {k} out of range 1..={psk_order}"
        )));
    }
    let width = psk_order.trailing_zeros() as usize;
    let pos = k % psk_order;
    let gray = pos ^ (pos >> 1);
    Ok((0..width).rev().map(|b| (gray >> b) & 1 == 1).collect())
}

/// A frame's worth of information bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPayload {
    bits: Vec<bool>,
}

impl BitPayload {
    /// Wrap a bit vector, checking it against the frame capacity.
    pub fn new(bits: Vec<bool>, params: &SparcParams) -> Result<Self> {
        if bits.len() != params.frame_bits() {
            return Err(SparcError::DimensionMismatch {
                expected: params.frame_bits(),
                actual: bits.len(),
            });
        }
        Ok(BitPayload { bits })
    }

    /// Bytes unpacked MSB-first, zero-padded or truncated to the frame size.
    pub fn from_bytes(bytes: &[u8], params: &SparcParams) -> Self {
        let total = params.frame_bits();
        let mut bits = Vec::with_capacity(total);
        'outer: for byte in bytes {
            for b in (0..8).rev() {
                bits.push((byte >> b) & 1 == 1);
                if bits.len() == total {
                    break 'outer;
                }
            }
        }
        bits.resize(total, false);
        BitPayload { bits }
    }

    /// Hex string unpacked MSB-first, zero-padded to the frame size.
    /// Returns the payload plus the number of padding bits appended.
    pub fn from_hex(hex: &str, params: &SparcParams) -> Result<(Self, usize)> {
        let cleaned: String = hex.chars().filter(|c| !c.is_whitespace()).collect();
        let mut bytes = Vec::with_capacity(cleaned.len().div_ceil(2) + 1);
        let mut chars = cleaned.chars();
        while let Some(hi) = chars.next() {
            let lo = chars.next().unwrap_or('0');
            let hi = hi
                .to_digit(16)
                .ok_or_else(|| SparcError::invalid(format!("bad hex digit '{hi}'")))?;
            let lo = lo
                .to_digit(16)
                .ok_or_else(|| SparcError::invalid(format!("bad hex digit '{lo}'")))?;
            bytes.push(((hi << 4) | lo) as u8);
        }
        let supplied_bits = (params.frame_bits()).min(cleaned.len() * 4);
        let payload = Self::from_bytes(&bytes, params);
        Ok((payload, params.frame_bits() - supplied_bits))
    }

    pub fn random<R: Rng>(params: &SparcParams, rng: &mut R) -> Self {
        BitPayload {
            bits: (0..params.frame_bits()).map(|_| rng.random()).collect(),
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// A valid message vector: one unit-modulus PSK entry per section.
///
/// The nonzero position and symbol index of every section are kept explicit
/// so error metrics compare structure instead of floating-point values.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageVector {
    values: Vec<Complex64>,
    /// Per section, the 0-based offset of the nonzero entry within it.
    positions: Vec<usize>,
    /// Per section, the PSK symbol index in `1..=K`.
    symbols: Vec<usize>,
}

impl MessageVector {
    pub fn from_structure(
        positions: Vec<usize>,
        symbols: Vec<usize>,
        params: &SparcParams,
    ) -> Result<Self> {
        if positions.len() != params.sections || symbols.len() != params.sections {
            return Err(SparcError::DimensionMismatch {
                expected: params.sections,
                actual: positions.len().min(symbols.len()),
            });
        }
        let table = psk_table(params.psk_order)?;
        let mut values = vec![Complex64::new(0.0, 0.0); params.total_columns()];
        for (section, (&pos, &sym)) in positions.iter().zip(&symbols).enumerate() {
            if pos >= params.section_size {
                return Err(SparcError::MalformedMessage(format!(
                    "section {section} position {pos} out of range"
                )));
            }
            if sym < 1 || sym > params.psk_order {
                return Err(SparcError::MalformedMessage(format!(
                    "section {section} symbol index {sym} out of range"
                )));
            }
            values[section * params.section_size + pos] = table[sym - 1];
        }
        Ok(MessageVector {
            values,
            positions,
            symbols,
        })
    }

    /// Reconstruct the structure from a dense vector, verifying that it is a
    /// valid message (exactly one nonzero per section, PSK-valued).
    pub fn from_values(values: &[Complex64], params: &SparcParams) -> Result<Self> {
        if values.len() != params.total_columns() {
            return Err(SparcError::DimensionMismatch {
                expected: params.total_columns(),
                actual: values.len(),
            });
        }
        let table = psk_table(params.psk_order)?;
        let m = params.section_size;
        let mut positions = Vec::with_capacity(params.sections);
        let mut symbols = Vec::with_capacity(params.sections);
        for section in 0..params.sections {
            let sec = &values[section * m..(section + 1) * m];
            let nonzero: Vec<usize> = (0..m).filter(|&j| sec[j] != Complex64::ZERO).collect();
            if nonzero.len() != 1 {
                return Err(SparcError::MalformedMessage(format!(
                    "section {section} has {} nonzero entries",
                    nonzero.len()
                )));
            }
            let pos = nonzero[0];
            let v = sec[pos];
            let sym = table
                .iter()
                .position(|p| (p - v).norm() < 1e-9)
                .ok_or_else(|| {
                    SparcError::MalformedMessage(format!(
                        "section {section} value {v} is not a PSK symbol"
                    ))
                })?
                + 1;
            positions.push(pos);
            symbols.push(sym);
        }
        Ok(MessageVector {
            values: values.to_vec(),
            positions,
            symbols,
        })
    }

    pub fn random<R: Rng>(params: &SparcParams, rng: &mut R) -> Self {
        let positions = (0..params.sections)
            .map(|_| rng.random_range(0..params.section_size))
            .collect();
        let symbols = (0..params.sections)
            .map(|_| rng.random_range(1..=params.psk_order))
            .collect();
        MessageVector::from_structure(positions, symbols, params)
            .expect("randomly drawn structure is always valid")
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    pub fn sections(&self) -> usize {
        self.positions.len()
    }
}

/// Map a payload onto the sparse message vector.
pub fn bits_to_message(payload: &BitPayload, params: &SparcParams) -> Result<MessageVector> {
    if payload.len() != params.frame_bits() {
        return Err(SparcError::DimensionMismatch {
            expected: params.frame_bits(),
            actual: payload.len(),
        });
    }
    let loc_bits = params.section_size.trailing_zeros() as usize;
    let val_bits = params.psk_order.trailing_zeros() as usize;
    let per_section = loc_bits + val_bits;
    let mut positions = Vec::with_capacity(params.sections);
    let mut symbols = Vec::with_capacity(params.sections);
    for section in 0..params.sections {
        let group = &payload.bits()[section * per_section..(section + 1) * per_section];
        let pos = group[..loc_bits]
            .iter()
            .fold(0usize, |acc, &b| (acc << 1) | usize::from(b));
        let sym = gray_map(&group[loc_bits..], params.psk_order)?;
        positions.push(pos);
        symbols.push(sym);
    }
    MessageVector::from_structure(positions, symbols, params)
}

/// Exact inverse of [`bits_to_message`].
pub fn message_to_bits(message: &MessageVector, params: &SparcParams) -> Result<BitPayload> {
    if message.sections() != params.sections {
        return Err(SparcError::DimensionMismatch {
            expected: params.sections,
            actual: message.sections(),
        });
    }
    let loc_bits = params.section_size.trailing_zeros() as usize;
    let mut bits = Vec::with_capacity(params.frame_bits());
    for section in 0..params.sections {
        let pos = message.positions()[section];
        for b in (0..loc_bits).rev() {
            bits.push((pos >> b) & 1 == 1);
        }
        bits.extend(gray_unmap(message.symbols()[section], params.psk_order)?);
    }
    BitPayload::new(bits, params)
}

/// Codeword `A beta` for a message vector.
pub fn encode(operator: &DesignOperator, message: &MessageVector) -> Result<Vec<Complex64>> {
    operator.apply(message.values())
}
