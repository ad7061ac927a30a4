//! Enumerative sphere shaping: bijective mapping between integer indices and
//! bounded-energy amplitude sequences.
//!
//! Amplitudes are positive odd integers, so every square is `1 mod 8`. A
//! prefix of `i` amplitudes therefore has energy `i + 8m` for some `m ≥ 0`
//! and the trellis only stores those reachable energy levels:
//! `levels[i][m]` is the number of suffixes of length `l − i` whose energy
//! fits in the remaining budget `E_max − i − 8m`.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Ascending set of distinct positive odd PAM amplitudes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct PamAlphabet {
    amplitudes: Vec<u32>,
}

impl PamAlphabet {
    pub fn new(amplitudes: Vec<u32>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(invalid("empty alphabet"));
        }
        if amplitudes.iter().any(|&a| a % 2 == 0) {
            return Err(invalid("alphabet amplitudes must be positive odd integers"));
        }
        if amplitudes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("alphabet must be strictly ascending"));
        }
        Ok(Self { amplitudes })
    }

    /// `{1, 3, ..., 2m − 1}`: the amplitudes of `2m`-PAM.
    pub fn pam(levels: u32) -> Self {
        Self {
            amplitudes: (0..levels.max(1)).map(|i| 2 * i + 1).collect(),
        }
    }

    pub fn amplitudes(&self) -> &[u32] {
        &self.amplitudes
    }

    pub fn energies(&self) -> Vec<u64> {
        self.amplitudes.iter().map(|&a| u64::from(a) * u64::from(a)).collect()
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn position(&self, amplitude: u32) -> Option<usize> {
        self.amplitudes.binary_search(&amplitude).ok()
    }

    /// `(a² − 1)/8` for each amplitude: the energy-level step in trellis units.
    fn steps(&self) -> Vec<usize> {
        self.amplitudes
            .iter()
            .map(|&a| ((u64::from(a) * u64::from(a) - 1) / 8) as usize)
            .collect()
    }
}

impl TryFrom<Vec<u32>> for PamAlphabet {
    type Error = Error;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PamAlphabet> for Vec<u32> {
    fn from(a: PamAlphabet) -> Self {
        a.amplitudes
    }
}

/// A length-`l` block of amplitudes produced by one matcher.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmplitudeSequence {
    pub values: Vec<u32>,
    pub total_energy: u64,
}

impl AmplitudeSequence {
    pub fn new(values: Vec<u32>) -> Self {
        let total_energy = values.iter().map(|&a| u64::from(a) * u64::from(a)).sum();
        Self {
            values,
            total_energy,
        }
    }
}

/// Counts of bounded-energy amplitude suffixes for one `(l, alphabet, E_max)`.
#[derive(Debug, Clone)]
pub struct EnergyTrellis {
    block_len: usize,
    alphabet: PamAlphabet,
    e_max: u64,
    steps: Vec<usize>,
    levels: Vec<Vec<BigUint>>,
    bits: u64,
}

/// Number of stored energy levels per trellis stage, `None` when even the
/// all-ones sequence exceeds the bound.
fn level_count(block_len: usize, e_max: u64) -> Option<usize> {
    let l = block_len as u64;
    (e_max >= l).then(|| ((e_max - l) / 8) as usize + 1)
}

fn next_level(prev: &[BigUint], steps: &[usize]) -> Vec<BigUint> {
    let width = prev.len();
    (0..width)
        .map(|m| {
            let mut acc = BigUint::zero();
            for &t in steps {
                if let Some(c) = prev.get(m + t) {
                    acc += c;
                }
            }
            acc
        })
        .collect()
}

impl EnergyTrellis {
    /// Builds the counts table `T(i, e)` for block length `block_len`.
    pub fn build(block_len: usize, alphabet: PamAlphabet, e_max: u64) -> Result<Self> {
        if block_len == 0 {
            return Err(invalid("block length must be at least 1"));
        }
        let infeasible = Error::InfeasibleEnergyBound {
            len: block_len,
            e_max,
        };
        let width = level_count(block_len, e_max).ok_or(infeasible.clone())?;
        let steps = alphabet.steps();
        let mut levels = vec![Vec::new(); block_len + 1];
        levels[block_len] = vec![BigUint::one(); width];
        for i in (0..block_len).rev() {
            levels[i] = next_level(&levels[i + 1], &steps);
        }
        let total = &levels[0][0];
        if total.is_zero() {
            return Err(infeasible);
        }
        let bits = total.bits() - 1;
        Ok(Self {
            block_len,
            alphabet,
            e_max,
            steps,
            levels,
            bits,
        })
    }

    /// Smallest `E_max` for which the codebook holds at least `2^target_bits`
    /// sequences.
    pub fn smallest_e_max(block_len: usize, alphabet: &PamAlphabet, target_bits: u64) -> Result<u64> {
        if block_len == 0 {
            return Err(invalid("block length must be at least 1"));
        }
        let max_a = u64::from(*alphabet.amplitudes().last().expect("nonempty alphabet"));
        let e_top = block_len as u64 * max_a * max_a;
        let width = level_count(block_len, e_top).expect("e_top >= block_len");
        let steps = alphabet.steps();
        let mut level = vec![BigUint::one(); width];
        for _ in 0..block_len {
            level = next_level(&level, &steps);
        }
        // level[m] = T(0, e_top − 8m), nonincreasing in m.
        let need = BigUint::one() << target_bits;
        if level[0] < need {
            return Err(invalid(format!(
                "no energy bound reaches {target_bits} bits at block length {block_len}"
            )));
        }
        let m = level.iter().rposition(|c| *c >= need).expect("level[0] qualifies");
        Ok(e_top - 8 * m as u64)
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn alphabet(&self) -> &PamAlphabet {
        &self.alphabet
    }

    pub fn e_max(&self) -> u64 {
        self.e_max
    }

    /// `k = ⌊log2 T(0, E_max)⌋`, the number of input bits per block.
    pub fn bits(&self) -> u64 {
        self.bits
    }

    /// `T(0, E_max)`: the size of the full bounded-energy codebook.
    pub fn codebook_size(&self) -> &BigUint {
        &self.levels[0][0]
    }

    /// `T(i, e)` for a remaining energy budget `e`, or `None` when `e` lies
    /// above every budget reachable at stage `i`.
    pub fn count(&self, stage: usize, budget: u64) -> Option<BigUint> {
        assert!(stage <= self.block_len);
        let remaining = (self.block_len - stage) as u64;
        if budget < remaining {
            return Some(BigUint::zero());
        }
        // Suffix energies are `remaining + 8j`; entry m holds j ≤ M − m.
        let j = ((budget - remaining) / 8) as usize;
        let top = self.levels[stage].len() - 1;
        (j <= top).then(|| self.levels[stage][top - j].clone())
    }

    fn entry(&self, stage: usize, m: usize) -> Option<&BigUint> {
        self.levels[stage].get(m)
    }

    /// Maps `index ∈ [0, 2^k)` to the `index`-th sequence in lexicographic
    /// order.
    pub fn encode(&self, index: &BigUint) -> Result<AmplitudeSequence> {
        if index.bits() > self.bits {
            return Err(Error::IndexOutOfRange { bits: self.bits });
        }
        let mut rest = index.clone();
        let mut m = 0usize;
        let mut values = Vec::with_capacity(self.block_len);
        for stage in 0..self.block_len {
            let mut chosen = None;
            for (pos, &t) in self.steps.iter().enumerate() {
                let Some(c) = self.entry(stage + 1, m + t) else {
                    break;
                };
                if rest < *c {
                    chosen = Some((pos, t));
                    break;
                }
                rest -= c;
            }
            let (pos, t) = chosen.expect("index below 2^k always lands in the codebook");
            values.push(self.alphabet.amplitudes[pos]);
            m += t;
        }
        Ok(AmplitudeSequence::new(values))
    }

    /// Lexicographic rank of `seq`; inverse of [`EnergyTrellis::encode`].
    pub fn decode(&self, seq: &AmplitudeSequence) -> Result<BigUint> {
        if seq.values.len() != self.block_len {
            return Err(Error::LengthMismatch {
                expected: self.block_len,
                got: seq.values.len(),
            });
        }
        let positions = seq
            .values
            .iter()
            .map(|&a| self.alphabet.position(a).ok_or(Error::NotInAlphabet(i64::from(a))))
            .collect::<Result<Vec<_>>>()?;
        let energy: u64 = seq.values.iter().map(|&a| u64::from(a) * u64::from(a)).sum();
        if energy > self.e_max {
            return Err(Error::EnergyBoundViolated {
                energy,
                e_max: self.e_max,
            });
        }
        let mut rank = BigUint::zero();
        let mut m = 0usize;
        for (stage, &pos) in positions.iter().enumerate() {
            for &t in &self.steps[..pos] {
                if let Some(c) = self.entry(stage + 1, m + t) {
                    rank += c;
                }
            }
            m += self.steps[pos];
        }
        if rank.bits() > self.bits {
            return Err(Error::UnusedCodeword { bits: self.bits });
        }
        Ok(rank)
    }
}

/// Uniform integer in `[0, 2^bits)`.
pub fn random_index<R: Rng + ?Sized>(rng: &mut R, bits: u64) -> BigUint {
    let words = bits.div_ceil(32) as usize;
    let mut digits: Vec<u32> = (0..words).map(|_| rng.random::<u32>()).collect();
    let spare = (words as u64 * 32) - bits;
    if let Some(top) = digits.last_mut() {
        if spare > 0 {
            *top >>= spare;
        }
    }
    BigUint::new(digits)
}

/// Marginal amplitude distribution estimated by encoding `n_samples`
/// uniformly drawn indices. Entry `j` is the probability of
/// `alphabet.amplitudes()[j]`.
pub fn empirical_amplitude_distribution(trellis: &EnergyTrellis, n_samples: usize, seed: u64) -> Vec<f64> {
    let n_samples = n_samples.max(1);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let indices: Vec<BigUint> = (0..n_samples).map(|_| random_index(&mut rng, trellis.bits())).collect();
    let counts = indices
        .par_chunks(4096)
        .map(|chunk| {
            let mut hist = vec![0u64; trellis.alphabet().len()];
            for idx in chunk {
                let seq = trellis.encode(idx).expect("index drawn below 2^k");
                for a in seq.values {
                    hist[trellis.alphabet().position(a).expect("alphabet amplitude")] += 1;
                }
            }
            hist
        })
        .reduce(
            || vec![0u64; trellis.alphabet().len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let total: u64 = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Entropy in bits of a probability vector.
pub fn entropy_bits(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum()
}
