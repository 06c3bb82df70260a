//! CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, unreflected) over bit vectors.

use crc::{Crc, CRC_16_IBM_3740};

use crate::error::{Error, Result};

pub const CRC_BITS: usize = 16;

const CRC16: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

/// Packs bits MSB-first; a trailing partial byte is zero-padded.
fn pack(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |b, (i, &x)| b | ((x & 1) << (7 - i))))
        .collect()
}

fn checksum(bits: &[u8]) -> u16 {
    if bits.len() % 8 == 0 {
        return CRC16.checksum(&pack(bits));
    }
    // Bitwise fallback for payloads that are not byte aligned.
    let mut reg: u16 = 0xFFFF;
    for &b in bits {
        let fb = ((reg >> 15) as u8 ^ (b & 1)) != 0;
        reg <<= 1;
        if fb {
            reg ^= 0x1021;
        }
    }
    reg
}

/// Appends the 16 CRC bits to `payload`.
pub fn crc_attach(payload: &[u8], info_bits: usize) -> Result<Vec<u8>> {
    if payload.len() != info_bits {
        return Err(Error::LengthMismatch {
            expected: info_bits,
            actual: payload.len(),
        });
    }
    let c = checksum(payload);
    let mut out = payload.to_vec();
    out.extend((0..CRC_BITS).map(|i| ((c >> (15 - i)) & 1) as u8));
    Ok(out)
}

/// True when the trailing 16 bits match the CRC of the leading bits.
pub fn crc_check(block: &[u8]) -> bool {
    if block.len() < CRC_BITS {
        return false;
    }
    let (payload, tail) = block.split_at(block.len() - CRC_BITS);
    let c = checksum(payload);
    tail.iter()
        .enumerate()
        .all(|(i, &b)| b & 1 == ((c >> (15 - i)) & 1) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bits(rng: &mut impl Rng, n: usize) -> Vec<u8> {
        (0..n).map(|_| rng.random_range(0..2)).collect()
    }

    #[test]
    fn check_value() {
        // "123456789" -> 0x29B1 for CRC-16/CCITT-FALSE.
        let bits: Vec<u8> = b"123456789"
            .iter()
            .flat_map(|&byte| (0..8).map(move |i| (byte >> (7 - i)) & 1))
            .collect();
        assert_eq!(checksum(&bits), 0x29B1);
        // Bitwise path agrees with the table path.
        let mut reg: u16 = 0xFFFF;
        for &b in &bits {
            let fb = ((reg >> 15) as u8 ^ b) != 0;
            reg <<= 1;
            if fb {
                reg ^= 0x1021;
            }
        }
        assert_eq!(reg, 0x29B1);
    }

    #[test]
    fn round_trip() {
        let zeros = vec![0u8; 320];
        assert!(crc_check(&crc_attach(&zeros, 320).unwrap()));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = random_bits(&mut rng, 320);
            let b = crc_attach(&p, 320).unwrap();
            assert_eq!(b.len(), 336);
            assert!(crc_check(&b));
        }
    }

    #[test]
    fn detects_every_single_bit_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = crc_attach(&random_bits(&mut rng, 320), 320).unwrap();
        for pos in 0..b.len() {
            let mut e = b.clone();
            e[pos] ^= 1;
            assert!(!crc_check(&e), "missed flip at {pos}");
        }
        for _ in 0..100 {
            let mut e = crc_attach(&random_bits(&mut rng, 320), 320).unwrap();
            let pos = rng.random_range(0..e.len());
            e[pos] ^= 1;
            assert!(!crc_check(&e));
        }
    }

    #[test]
    fn unaligned_payload() {
        let p = vec![1u8, 0, 1, 1, 0];
        assert!(crc_check(&crc_attach(&p, 5).unwrap()));
    }

    #[test]
    fn length_mismatch() {
        assert!(crc_attach(&[0; 10], 320).is_err());
    }
}
