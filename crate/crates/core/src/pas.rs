//! Probabilistic amplitude shaping framing around the ESS matcher.
//!
//! A block of `n` cascaded matchers consumes `n·(k − ν)` information bits and
//! `n` flip values of `ν` bits each, produces `l·n` amplitudes and combines
//! them with `l·n` sign bits into `L_s = l·n/4` dual-polarization symbols.
//!
//! 4D mapping convention: amplitudes `(a1, a2, a3, a4)` of symbol `j` go to
//! `(I1, Q1, I2, Q2)`, and sign bit 0 means `+`, 1 means `−`.

use std::sync::Arc;

use num_bigint::BigUint;
use num_complex::Complex64;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::ess::{empirical_amplitude_distribution, entropy_bits, AmplitudeSequence, EnergyTrellis, PamAlphabet};
use crate::signal::DualPolSymbolBlock;

/// Samples used for the amplitude entropy in [`rate_loss`].
pub const RATE_LOSS_SAMPLES: usize = 1 << 20;
/// Seed used for the amplitude entropy in [`rate_loss`].
pub const RATE_LOSS_SEED: u64 = 0x5eed_0fa7_e105;

/// Default fraction of sign bits taken from the information stream.
pub const DEFAULT_SIGN_INFO_FRACTION: f64 = 5.0 / 6.0;

/// `n` cascaded matchers with `ν` flipping bits each.
#[derive(Debug, Clone)]
pub struct DmChainConfig {
    pub n: usize,
    pub nu: u32,
    pub trellis: Arc<EnergyTrellis>,
}

impl DmChainConfig {
    pub fn new(n: usize, nu: u32, trellis: Arc<EnergyTrellis>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("at least one matcher is required"));
        }
        if u64::from(nu) > trellis.bits() {
            return Err(invalid(format!("nu = {nu} exceeds k = {}", trellis.bits())));
        }
        if !(trellis.block_len() * n).is_multiple_of(4) {
            return Err(invalid(format!(
                "l·n = {} is not a multiple of 4",
                trellis.block_len() * n
            )));
        }
        if nu >= 32 || (nu as usize) * n >= 48 {
            return Err(invalid("too many flipping bits to enumerate"));
        }
        Ok(Self { n, nu, trellis })
    }

    pub fn block_len(&self) -> usize {
        self.trellis.block_len()
    }

    /// `k` of one matcher.
    pub fn k(&self) -> usize {
        self.trellis.bits() as usize
    }

    /// Information bits consumed by one matcher, `k − ν`.
    pub fn info_bits_per_dm(&self) -> usize {
        self.k() - self.nu as usize
    }

    /// Amplitudes (and sign bits) per candidate sequence, `l·n`.
    pub fn amplitudes_per_block(&self) -> usize {
        self.block_len() * self.n
    }

    /// 4D symbols per candidate, `L_s = l·n/4`.
    pub fn symbols_per_block(&self) -> usize {
        self.amplitudes_per_block() / 4
    }

    pub fn flip_values_per_dm(&self) -> u64 {
        1u64 << self.nu
    }

    /// `2^(ν·n)`.
    pub fn candidate_count(&self) -> u64 {
        1u64 << (self.nu as usize * self.n)
    }
}

/// Bit layout of one selection block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramedBits {
    /// `n` chunks of `k − ν` payload bits.
    pub info_bits: Vec<Vec<u8>>,
    /// `n` flip values, each below `2^ν`.
    pub flip_values: Vec<u64>,
    /// `l·n` sign bits; the first `sign_info_len` come from the payload.
    pub sign_bits: Vec<u8>,
    pub sign_info_len: usize,
}

/// MSB-first bit vector to integer.
pub fn bits_to_biguint(bits: &[u8]) -> BigUint {
    let mut out = BigUint::zero();
    for chunk in bits.chunks(32) {
        let mut word = 0u32;
        for &b in chunk {
            word = (word << 1) | u32::from(b & 1);
        }
        out = (out << chunk.len()) + BigUint::from(word);
    }
    out
}

/// Integer to an MSB-first bit vector of exactly `width` bits.
pub fn biguint_to_bits(value: &BigUint, width: usize) -> Vec<u8> {
    (0..width)
        .rev()
        .map(|i| u8::from(value.bit(i as u64)))
        .collect()
}

/// Matcher index `flip_value · 2^(k−ν) + value(info_bits)`; the flipping bits
/// are the most significant bits.
pub fn assemble_dm_input(info_bits: &[u8], flip_value: u64, nu: u32) -> Result<BigUint> {
    if nu < 64 && flip_value >> nu != 0 {
        return Err(invalid(format!(
            "flip value {flip_value} does not fit in {nu} bits"
        )));
    }
    Ok((BigUint::from(flip_value) << info_bits.len()) + bits_to_biguint(info_bits))
}

/// Splits a matcher index back into `(info_bits, flip_value)`.
pub fn split_dm_input(index: &BigUint, k: usize, nu: u32) -> (Vec<u8>, u64) {
    let payload = k - nu as usize;
    let bits = biguint_to_bits(index, k);
    let flip = bits[..nu as usize]
        .iter()
        .fold(0u64, |acc, &b| (acc << 1) | u64::from(b));
    (bits[nu as usize..payload + nu as usize].to_vec(), flip)
}

fn signed(amplitude: u32, sign: u8) -> f64 {
    let a = f64::from(amplitude);
    if sign & 1 == 0 {
        a
    } else {
        -a
    }
}

/// Maps `l·n` amplitudes and sign bits to `l·n/4` dual-polarization symbols.
pub fn map_4d(amplitudes: &[u32], sign_bits: &[u8]) -> Result<DualPolSymbolBlock> {
    if amplitudes.len() != sign_bits.len() {
        return Err(Error::LengthMismatch {
            expected: amplitudes.len(),
            got: sign_bits.len(),
        });
    }
    if amplitudes.is_empty() || !amplitudes.len().is_multiple_of(4) {
        return Err(invalid(format!(
            "amplitude count {} is not a positive multiple of 4",
            amplitudes.len()
        )));
    }
    let (pol1, pol2) = amplitudes
        .chunks_exact(4)
        .zip(sign_bits.chunks_exact(4))
        .map(|(a, s)| {
            (
                Complex64::new(signed(a[0], s[0]), signed(a[1], s[1])),
                Complex64::new(signed(a[2], s[2]), signed(a[3], s[3])),
            )
        })
        .unzip();
    DualPolSymbolBlock::new(pol1, pol2)
}

fn split_component(v: f64, alphabet: &PamAlphabet) -> Result<(u32, u8)> {
    let r = v.round();
    if (v - r).abs() > 1e-9 || r == 0.0 {
        return Err(Error::NotAConstellationPoint(v));
    }
    let mag = r.abs();
    if mag > f64::from(u32::MAX) || alphabet.position(mag as u32).is_none() {
        return Err(Error::NotAConstellationPoint(v));
    }
    Ok((mag as u32, u8::from(r < 0.0)))
}

/// Inverse of [`map_4d`].
pub fn demap_4d(block: &DualPolSymbolBlock, alphabet: &PamAlphabet) -> Result<(Vec<u32>, Vec<u8>)> {
    let mut amps = Vec::with_capacity(4 * block.len());
    let mut signs = Vec::with_capacity(4 * block.len());
    for (x1, x2) in block.pol1.iter().zip(&block.pol2) {
        for v in [x1.re, x1.im, x2.re, x2.im] {
            let (a, s) = split_component(v, alphabet)?;
            amps.push(a);
            signs.push(s);
        }
    }
    Ok((amps, signs))
}

/// `H(P_a) − (k − ν)/l` for a given amplitude distribution.
pub fn rate_loss_with(trellis: &EnergyTrellis, nu: u32, amplitude_probs: &[f64]) -> f64 {
    let k = trellis.bits() as f64;
    entropy_bits(amplitude_probs) - (k - f64::from(nu)) / trellis.block_len() as f64
}

/// Rate loss per 1D symbol with `H(P_a)` estimated from
/// [`RATE_LOSS_SAMPLES`] encoded blocks under [`RATE_LOSS_SEED`].
pub fn rate_loss(trellis: &EnergyTrellis, nu: u32) -> Result<f64> {
    if u64::from(nu) > trellis.bits() {
        return Err(invalid(format!("nu = {nu} exceeds k = {}", trellis.bits())));
    }
    let p = empirical_amplitude_distribution(trellis, RATE_LOSS_SAMPLES, RATE_LOSS_SEED);
    Ok(rate_loss_with(trellis, nu, &p))
}

/// Number of sign bits drawn from the payload for `total` sign positions.
pub fn sign_info_len(total: usize, info_fraction: f64) -> usize {
    ((total as f64 * info_fraction).round() as usize).min(total)
}

fn pack_bits(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1)))
        .collect()
}

/// Stand-in for the parity bits of the previous block: `count` bits from a
/// generator keyed on a digest of `prev_block_bits` and `seed`.
pub fn parity_stub_bits(prev_block_bits: &[u8], count: usize, seed: u64) -> Vec<u8> {
    let mut hasher = Sha256::new();
    hasher.update(b"dss-parity-stub");
    hasher.update(seed.to_le_bytes());
    hasher.update((prev_block_bits.len() as u64).to_le_bytes());
    hasher.update(pack_bits(prev_block_bits));
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha20Rng::from_seed(key);
    (0..count).map(|_| u8::from(rng.random::<bool>())).collect()
}

/// Sign bits of one block: `s_bits ∥ c_bits`, where the `c` part is derived
/// from the previous selected block (or from `seed` alone for the first
/// block, when `prev_block_bits` is empty).
pub fn sign_bit_source(prev_block_bits: &[u8], s_bits: &[u8], total: usize, seed: u64) -> Result<Vec<u8>> {
    if s_bits.len() > total {
        return Err(Error::LengthMismatch {
            expected: total,
            got: s_bits.len(),
        });
    }
    let mut out = s_bits.to_vec();
    out.extend(parity_stub_bits(prev_block_bits, total - s_bits.len(), seed));
    Ok(out)
}

/// Runs the `n` matchers of a chain with the given flip values and
/// concatenates their outputs head to tail.
pub fn encode_chain(chain: &DmChainConfig, info_bits: &[Vec<u8>], flip_values: &[u64]) -> Result<Vec<u32>> {
    if info_bits.len() != chain.n || flip_values.len() != chain.n {
        return Err(Error::LengthMismatch {
            expected: chain.n,
            got: info_bits.len().min(flip_values.len()),
        });
    }
    let mut out = Vec::with_capacity(chain.amplitudes_per_block());
    for (bits, &flip) in info_bits.iter().zip(flip_values) {
        if bits.len() != chain.info_bits_per_dm() {
            return Err(Error::LengthMismatch {
                expected: chain.info_bits_per_dm(),
                got: bits.len(),
            });
        }
        let index = assemble_dm_input(bits, flip, chain.nu)?;
        out.extend(chain.trellis.encode(&index)?.values);
    }
    Ok(out)
}

/// Full transmit mapping of one framed block.
pub fn encode_frame(chain: &DmChainConfig, frame: &FramedBits) -> Result<DualPolSymbolBlock> {
    let amps = encode_chain(chain, &frame.info_bits, &frame.flip_values)?;
    map_4d(&amps, &frame.sign_bits)
}

/// `(info_bits, flip_values, sign_bits)` of one block.
pub type DecodedFrame = (Vec<Vec<u8>>, Vec<u64>, Vec<u8>);

/// Receiver-side inverse: demap, decode every matcher and strip the flipping
/// prefix.
pub fn decode_frame(chain: &DmChainConfig, block: &DualPolSymbolBlock) -> Result<DecodedFrame> {
    let (amps, signs) = demap_4d(block, chain.trellis.alphabet())?;
    if amps.len() != chain.amplitudes_per_block() {
        return Err(Error::LengthMismatch {
            expected: chain.amplitudes_per_block(),
            got: amps.len(),
        });
    }
    let mut info = Vec::with_capacity(chain.n);
    let mut flips = Vec::with_capacity(chain.n);
    for seg in amps.chunks(chain.block_len()) {
        let index = chain.trellis.decode(&AmplitudeSequence::new(seg.to_vec()))?;
        let (bits, flip) = split_dm_input(&index, chain.k(), chain.nu);
        info.push(bits);
        flips.push(flip);
    }
    Ok((info, flips, signs))
}
