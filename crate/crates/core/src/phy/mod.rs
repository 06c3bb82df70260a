//! Bit-level chain: CRC, LDPC and BPSK/QPSK mapping.

mod crc;
mod ldpc;
mod modulation;

use std::sync::Arc;

pub use self::crc::{crc_attach, crc_check, CRC_BITS};
pub use self::ldpc::{DecodeOutput, LdpcCode};
pub use self::modulation::{demap_llr, hard_decision, modulate, symbol_llrs, Modulation};

use crate::error::{Error, Result};

pub const DEFAULT_INFO_BITS: usize = 320;
pub const DEFAULT_CODED_BITS: usize = 864;
pub const DEFAULT_CODE_SEED: u64 = 2021;
pub const DEFAULT_MAX_ITERATIONS: usize = 50;

/// Transport block layout plus the LDPC code built for it. Cheap to clone.
#[derive(Debug, Clone)]
pub struct CodeConfig {
    info_bits: usize,
    coded_bits: usize,
    max_iterations: usize,
    code: Arc<LdpcCode>,
}

/// Outcome of decoding one block of LLRs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockDecode {
    /// Payload without CRC.
    pub payload: Vec<u8>,
    pub converged: bool,
    pub crc_ok: bool,
    pub iterations: usize,
}

impl CodeConfig {
    pub fn new(info_bits: usize, coded_bits: usize, seed: u64, max_iterations: usize) -> Result<Self> {
        let k = info_bits + CRC_BITS;
        if info_bits == 0 || k >= coded_bits {
            return Err(Error::InvalidConfig(format!(
                "need 0 < info_bits + {CRC_BITS} < coded_bits, got {info_bits} and {coded_bits}"
            )));
        }
        if max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        let code = LdpcCode::new(coded_bits, coded_bits - k, seed)?;
        Ok(Self {
            info_bits,
            coded_bits,
            max_iterations,
            code: Arc::new(code),
        })
    }

    /// 320 payload bits, 16 CRC bits, 864 coded bits.
    pub fn table_default() -> Self {
        Self::new(DEFAULT_INFO_BITS, DEFAULT_CODED_BITS, DEFAULT_CODE_SEED, DEFAULT_MAX_ITERATIONS)
            .expect("default code parameters are valid")
    }

    pub fn info_bits(&self) -> usize {
        self.info_bits
    }

    pub fn crc_bits(&self) -> usize {
        CRC_BITS
    }

    pub fn coded_bits(&self) -> usize {
        self.coded_bits
    }

    pub fn rate(&self) -> f64 {
        (self.info_bits + CRC_BITS) as f64 / self.coded_bits as f64
    }

    pub fn seed(&self) -> u64 {
        self.code.seed()
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iterations
    }

    pub fn parity_check(&self) -> &LdpcCode {
        &self.code
    }

    pub fn ldpc_encode(&self, bits: &[u8]) -> Result<Vec<u8>> {
        self.code.encode(bits)
    }

    pub fn ldpc_decode(&self, llrs: &[f64]) -> Result<DecodeOutput> {
        self.code.decode(llrs, self.max_iterations)
    }

    /// CRC attach followed by LDPC encoding.
    pub fn encode_payload(&self, payload: &[u8]) -> Result<Vec<u8>> {
        let block = crc_attach(payload, self.info_bits)?;
        self.code.encode(&block)
    }

    pub fn decode_block(&self, llrs: &[f64]) -> Result<BlockDecode> {
        let out = self.ldpc_decode(llrs)?;
        let crc_ok = crc_check(&out.info);
        let mut payload = out.info;
        payload.truncate(self.info_bits);
        Ok(BlockDecode {
            payload,
            converged: out.converged,
            crc_ok,
            iterations: out.iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_dimensions() {
        let c = CodeConfig::table_default();
        assert_eq!(c.info_bits(), 320);
        assert_eq!(c.crc_bits(), 16);
        assert_eq!(c.coded_bits(), 864);
        assert_eq!(format!("{:.4}", c.rate()), "0.3889");
        assert_eq!(c.parity_check().m(), 528);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(CodeConfig::new(320, 300, 1, 50).is_err());
        assert!(CodeConfig::new(0, 864, 1, 50).is_err());
        assert!(CodeConfig::new(320, 864, 1, 0).is_err());
    }

    #[test]
    fn noiseless_chain() {
        let c = CodeConfig::table_default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for scheme in [Modulation::Bpsk, Modulation::Qpsk] {
            for _ in 0..200 {
                let payload: Vec<u8> = (0..320).map(|_| rng.random_range(0..2)).collect();
                let cw = c.encode_payload(&payload).unwrap();
                let syms = modulate(&cw, scheme).unwrap();
                let llrs = demap_llr(&syms, num_complex::Complex64::new(1.0, 0.0), 0.05, scheme);
                let out = c.decode_block(&llrs).unwrap();
                assert!(out.converged && out.crc_ok);
                assert_eq!(out.payload, payload);
            }
        }
    }
}
