//! BPSK / Gray QPSK mapping and exact LLR demapping.
//!
//! LLR sign convention: positive means bit 0 is more likely.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Bpsk,
    Qpsk,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
        }
    }

    /// Order of the power that strips the modulation, `m` in the m-power estimator.
    pub fn power(self) -> i32 {
        match self {
            Modulation::Bpsk => 2,
            Modulation::Qpsk => 4,
        }
    }
}

pub fn modulate(bits: &[u8], scheme: Modulation) -> Result<Vec<Complex64>> {
    let bps = scheme.bits_per_symbol();
    if bits.len() % bps != 0 {
        return Err(Error::LengthMismatch {
            expected: bits.len().next_multiple_of(bps),
            actual: bits.len(),
        });
    }
    let level = |b: u8| 1.0 - 2.0 * f64::from(b & 1);
    Ok(match scheme {
        Modulation::Bpsk => bits.iter().map(|&b| Complex64::new(level(b), 0.0)).collect(),
        Modulation::Qpsk => bits
            .chunks_exact(2)
            .map(|c| Complex64::new(level(c[0]), level(c[1])) * FRAC_1_SQRT_2)
            .collect(),
    })
}

/// LLRs of one received symbol `y = gain * x + n`, `n ~ CN(0, noise_var)`.
#[inline]
pub fn symbol_llrs(y: Complex64, gain: Complex64, noise_var: f64, scheme: Modulation, out: &mut Vec<f64>) {
    let z = gain.conj() * y;
    match scheme {
        Modulation::Bpsk => out.push(4.0 * z.re / noise_var),
        Modulation::Qpsk => {
            let k = 2.0 * std::f64::consts::SQRT_2 / noise_var;
            out.push(k * z.re);
            out.push(k * z.im);
        }
    }
}

pub fn demap_llr(symbols: &[Complex64], gain: Complex64, noise_var: f64, scheme: Modulation) -> Vec<f64> {
    let mut out = Vec::with_capacity(symbols.len() * scheme.bits_per_symbol());
    for &y in symbols {
        symbol_llrs(y, gain, noise_var, scheme, &mut out);
    }
    out
}

pub fn hard_decision(llrs: &[f64]) -> Vec<u8> {
    llrs.iter().map(|&l| u8::from(l < 0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bpsk_mapping() {
        let s = modulate(&[0, 1], Modulation::Bpsk).unwrap();
        assert_eq!(s, vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)]);
    }

    #[test]
    fn qpsk_unit_energy_gray() {
        let s = modulate(&[0, 0, 0, 1, 1, 1, 1, 0], Modulation::Qpsk).unwrap();
        for x in &s {
            assert!((x.norm_sqr() - 1.0).abs() < 1e-12);
        }
        // Neighbours differ in one bit: 00 -> 01 flips only the imaginary sign.
        assert_eq!(s[0].re, s[1].re);
        assert!(s[0].im > 0.0 && s[1].im < 0.0);
        assert!(modulate(&[0, 1, 1], Modulation::Qpsk).is_err());
    }

    #[test]
    fn bpsk_llr_formula() {
        let l = demap_llr(&[Complex64::new(1.0, 0.0)], Complex64::new(1.0, 0.0), 1.0, Modulation::Bpsk);
        assert_eq!(l, vec![4.0]);
    }

    #[test]
    fn round_trip_noiseless() {
        let bits: Vec<u8> = (0..64).map(|i| ((i * 7 + 3) % 5 % 2) as u8).collect();
        let g = Complex64::from_polar(0.7, 1.1);
        for scheme in [Modulation::Bpsk, Modulation::Qpsk] {
            let y: Vec<_> = modulate(&bits, scheme).unwrap().into_iter().map(|x| g * x).collect();
            let llr = demap_llr(&y, g, 1e-9, scheme);
            assert_eq!(hard_decision(&llr), bits);
        }
    }
}
