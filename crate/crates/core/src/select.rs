//! Candidate enumeration through flipping bits and metric-based selection.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{propagate_link, rrc_shape, LinkPlan};
use crate::error::{invalid, Error, Result};
use crate::metrics::{d_edi, edi, DispersionSchedule, EdiWindow};
use crate::pas::{assemble_dm_input, map_4d, DmChainConfig};
use crate::rx::{cdc_waveform, extract_and_match, genie_equalize};
use crate::signal::{dbm_to_mw, DualPolSymbolBlock};

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// One flip value per matcher.
    pub flip_values: Vec<u64>,
    /// Flip values read as one integer, first matcher most significant.
    pub flip_index: u64,
    pub amplitudes: Vec<u32>,
    pub block: DualPolSymbolBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// Sorted by `flip_index`.
    pub candidates: Vec<Candidate>,
    pub subsample_size: Option<usize>,
    pub seed: u64,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Settings of the split-step NLI oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliOracleConfig {
    pub link: LinkPlan,
    pub launch_power_dbm: f64,
    /// Mean 4D symbol energy of the stream that is launched at
    /// `launch_power_dbm`.
    pub reference_energy: f64,
    pub symbol_rate_gbaud: f64,
    pub rolloff: f64,
    pub samples_per_symbol: usize,
    pub step_km: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectorKind {
    Edi { w: EdiWindow },
    DEdi { w: EdiWindow, schedule: DispersionSchedule },
    SsfmNli { oracle: NliOracleConfig },
}

impl SelectorKind {
    pub fn metric(&self, block: &DualPolSymbolBlock) -> Result<f64> {
        match self {
            SelectorKind::Edi { w } => edi(block, *w),
            SelectorKind::DEdi { w, schedule } => d_edi(block, *w, schedule),
            SelectorKind::SsfmNli { oracle } => ssfm_nli_oracle(block, oracle),
        }
    }
}

fn flip_vector(flip_index: u64, n: usize, nu: u32) -> Vec<u64> {
    let mask = (1u64 << nu) - 1;
    (0..n)
        .map(|i| (flip_index >> (u64::from(nu) * (n - 1 - i) as u64)) & mask)
        .collect()
}

/// Flip-vector integers to evaluate: all of them, or `size` drawn uniformly
/// without replacement, always including 0.
fn flip_indices(total: u64, subsample: Option<(usize, u64)>) -> Result<Vec<u64>> {
    match subsample {
        Some((size, seed)) => {
            if size == 0 {
                return Err(invalid("subsample size must be >= 1"));
            }
            if size as u64 > total {
                return Err(invalid(format!("subsample size {size} exceeds {total} candidates")));
            }
            if size as u64 == total {
                return Ok((0..total).collect());
            }
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut out: Vec<u64> = std::iter::once(0)
                .chain(index::sample(&mut rng, (total - 1) as usize, size - 1).into_iter().map(|i| i as u64 + 1))
                .collect();
            out.sort_unstable();
            Ok(out)
        }
        None => Ok((0..total).collect()),
    }
}

/// Builds the candidate blocks of one selection block. Every matcher is run
/// once per flip value; candidates then combine those outputs head to tail
/// and share `signs`.
pub fn enumerate_candidates(info_bits: &[Vec<u8>], chain: &DmChainConfig, signs: &[u8], subsample: Option<(usize, u64)>) -> Result<CandidateSet> {
    let n = chain.n;
    if info_bits.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: info_bits.len(),
        });
    }
    if signs.len() != chain.amplitudes_per_block() {
        return Err(Error::LengthMismatch {
            expected: chain.amplitudes_per_block(),
            got: signs.len(),
        });
    }
    let per_dm = chain.flip_values_per_dm();
    let mut variants: Vec<Vec<Vec<u32>>> = Vec::with_capacity(n);
    for bits in info_bits {
        if bits.len() != chain.info_bits_per_dm() {
            return Err(Error::LengthMismatch {
                expected: chain.info_bits_per_dm(),
                got: bits.len(),
            });
        }
        let outs = (0..per_dm)
            .map(|f| Ok(chain.trellis.encode(&assemble_dm_input(bits, f, chain.nu)?)?.values))
            .collect::<Result<Vec<_>>>()?;
        variants.push(outs);
    }
    let indices = flip_indices(chain.candidate_count(), subsample)?;
    let candidates = indices
        .into_par_iter()
        .map(|flip_index| {
            let flip_values = flip_vector(flip_index, n, chain.nu);
            let amplitudes: Vec<u32> = flip_values
                .iter()
                .enumerate()
                .flat_map(|(j, &f)| variants[j][f as usize].iter().copied())
                .collect();
            let block = map_4d(&amplitudes, signs)?;
            Ok(Candidate {
                flip_values,
                flip_index,
                amplitudes,
                block,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidateSet {
        candidates,
        subsample_size: subsample.map(|s| s.0),
        seed: subsample.map_or(0, |s| s.1),
    })
}

/// Index of the candidate with the smallest metric, and every metric value.
/// Ties go to the lowest flip-vector integer.
pub fn select_min(set: &CandidateSet, selector: &SelectorKind) -> Result<(usize, Vec<f64>)> {
    if set.is_empty() {
        return Err(invalid("empty candidate set"));
    }
    let metrics = set
        .candidates
        .par_iter()
        .map(|c| {
            let wrap = |e: Error| Error::Candidate {
                candidate: c.flip_index,
                source: Box::new(e),
            };
            let m = selector.metric(&c.block).map_err(wrap)?;
            if m.is_nan() {
                return Err(wrap(invalid("metric is NaN")));
            }
            Ok(m)
        })
        .collect::<Result<Vec<f64>>>()?;
    let winner = (0..metrics.len())
        .min_by(|&a, &b| {
            metrics[a]
                .total_cmp(&metrics[b])
                .then(set.candidates[a].flip_index.cmp(&set.candidates[b].flip_index))
        })
        .expect("nonempty");
    Ok((winner, metrics))
}

/// Candidate sequences evaluated per 108 4D symbols, `(4/n)·2^(νn)`.
pub fn n_s_108(n: u32, nu: u32) -> Result<u64> {
    if !matches!(n, 1 | 2 | 4) {
        return Err(invalid(format!("n must divide 4, got {n}")));
    }
    if nu * n >= 62 {
        return Err(invalid("candidate count overflows"));
    }
    Ok(u64::from(4 / n) << (nu * n))
}

/// Nonlinear distortion a block suffers on its own: the block is shaped
/// periodically, launched at the configured power over the link without
/// ASE, dispersion-compensated, matched-filtered and passed through the
/// genie 2×2 equalizer, so polarization rotation is not scored. Returns the mean
/// squared error per 4D symbol, in units of `block`, after MMSE scaling.
pub fn ssfm_nli_oracle(block: &DualPolSymbolBlock, cfg: &NliOracleConfig) -> Result<f64> {
    let rs = cfg.symbol_rate_gbaud * 1e9;
    if !(cfg.reference_energy > 0.0) {
        return Err(invalid("reference energy must be positive"));
    }
    let mut w = rrc_shape(block, cfg.rolloff, cfg.samples_per_symbol, rs)?;
    // zero stuffing and a unit-gain RRC give a mean power of E/sps²
    w.scale(cfg.samples_per_symbol as f64 * (dbm_to_mw(cfg.launch_power_dbm) / cfg.reference_energy).sqrt());
    let tx = block;
    let link = cfg.link.with_overrides(false, None);
    let out = propagate_link(&w, &link, cfg.step_km, cfg.seed)?;
    let first = link.spans.first().ok_or_else(|| invalid("empty link"))?;
    let out = cdc_waveform(&out, first.fiber.dispersion, first.fiber.lambda_nm, link.total_length());
    let rx = extract_and_match(&out, 0.0, cfg.symbol_rate_gbaud, cfg.rolloff)?;
    let rx = genie_equalize(&rx, tx)?;
    let pairs = || rx.pol1.iter().zip(&tx.pol1).chain(rx.pol2.iter().zip(&tx.pol2));
    let yx: num_complex::Complex64 = pairs().map(|(y, x)| y.conj() * x).sum();
    let yy: f64 = pairs().map(|(y, _)| y.norm_sqr()).sum();
    if yy == 0.0 {
        return Err(Error::ZeroPower);
    }
    let a = yx / yy;
    let err: f64 = pairs().map(|(y, x)| (x - a * y).norm_sqr()).sum();
    Ok(err / tx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::FiberParams;
    use crate::ess::{EnergyTrellis, PamAlphabet};
    use crate::pas::DmChainConfig;
    use rand::Rng;
    use std::sync::Arc;

    fn chain(l: usize, n: usize, nu: u32) -> DmChainConfig {
        let target = (3 * l / 2) as u64 + u64::from(nu);
        let alpha = PamAlphabet::pam(4);
        let e = EnergyTrellis::smallest_e_max(l, &alpha, target).unwrap();
        DmChainConfig::new(n, nu, Arc::new(EnergyTrellis::build(l, alpha, e).unwrap())).unwrap()
    }

    fn random_bits(len: usize, rng: &mut impl Rng) -> Vec<u8> {
        (0..len).map(|_| rng.random_range(0..2)).collect()
    }

    fn inputs(c: &DmChainConfig, seed: u64) -> (Vec<Vec<u8>>, Vec<u8>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let info = (0..c.n).map(|_| random_bits(c.info_bits_per_dm(), &mut rng)).collect();
        let signs = random_bits(c.amplitudes_per_block(), &mut rng);
        (info, signs)
    }

    #[test]
    fn candidate_counts() {
        for (n, nu, sub, expect) in [(1, 3, None, 8), (4, 1, None, 16), (4, 3, Some((256, 9)), 256)] {
            let c = chain(12, n, nu);
            let (info, signs) = inputs(&c, 1);
            let set = enumerate_candidates(&info, &c, &signs, sub).unwrap();
            assert_eq!(set.len(), expect);
            assert_eq!(set.candidates[0].flip_index, 0);
            assert!(set.candidates.windows(2).all(|w| w[0].flip_index < w[1].flip_index));
        }
    }

    #[test]
    fn candidates_distinct_and_share_signs() {
        let c = chain(12, 2, 2);
        let (info, signs) = inputs(&c, 2);
        let set = enumerate_candidates(&info, &c, &signs, None).unwrap();
        for (i, a) in set.candidates.iter().enumerate() {
            for b in &set.candidates[i + 1..] {
                assert_ne!(a.amplitudes, b.amplitudes);
            }
            let block_signs: Vec<bool> = a.block.pol1.iter().chain(&a.block.pol2).flat_map(|x| [x.re < 0.0, x.im < 0.0]).collect();
            assert_eq!(block_signs.iter().filter(|&&s| s).count(), signs.iter().filter(|&&s| s == 1).count());
        }
    }

    #[test]
    fn subsample_errors_and_full_size() {
        let c = chain(12, 2, 2);
        let (info, signs) = inputs(&c, 3);
        assert!(enumerate_candidates(&info, &c, &signs, Some((17, 0))).is_err());
        let full = enumerate_candidates(&info, &c, &signs, None).unwrap();
        let sub = enumerate_candidates(&info, &c, &signs, Some((16, 4))).unwrap();
        assert_eq!(full.candidates, sub.candidates);
    }

    #[test]
    fn flip_vector_layout() {
        assert_eq!(flip_vector(0b10_01_11, 3, 2), vec![2, 1, 3]);
        assert_eq!(flip_vector(5, 1, 3), vec![5]);
    }

    fn fake_set(metrics_flips: &[u64]) -> CandidateSet {
        let block = DualPolSymbolBlock::new(vec![num_complex::Complex64::new(1.0, 1.0); 8], vec![num_complex::Complex64::new(1.0, 1.0); 8]).unwrap();
        CandidateSet {
            candidates: metrics_flips
                .iter()
                .map(|&f| Candidate {
                    flip_values: vec![f],
                    flip_index: f,
                    amplitudes: vec![],
                    block: block.clone(),
                })
                .collect(),
            subsample_size: None,
            seed: 0,
        }
    }

    #[test]
    fn singleton_and_ties() {
        let sel = SelectorKind::Edi { w: EdiWindow::new(2).unwrap() };
        let set = fake_set(&[0]);
        assert_eq!(select_min(&set, &sel).unwrap().0, 0);
        // identical blocks: lowest flip index wins regardless of position
        let set = fake_set(&[5, 3, 7]);
        assert_eq!(select_min(&set, &sel).unwrap().0, 1);
        assert!(select_min(&fake_set(&[]), &sel).is_err());
    }

    #[test]
    fn errors_carry_candidate_id() {
        let sel = SelectorKind::Edi { w: EdiWindow::new(32).unwrap() };
        match select_min(&fake_set(&[4]), &sel) {
            Err(Error::Candidate { candidate: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ns108_values() {
        assert_eq!(n_s_108(1, 3).unwrap(), 32);
        assert_eq!(n_s_108(4, 1).unwrap(), 16);
        assert_eq!(n_s_108(2, 2).unwrap(), 32);
        assert!(n_s_108(3, 1).is_err());
    }

    #[test]
    fn selector_json_roundtrip() {
        let s = SelectorKind::Edi { w: EdiWindow::new(4).unwrap() };
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"kind":"edi","w":4}"#);
        assert_eq!(serde_json::from_str::<SelectorKind>(&j).unwrap(), s);
        assert!(serde_json::from_str::<SelectorKind>(r#"{"kind":"edi","w":3}"#).is_err());
    }

    fn oracle(gamma: f64, power: f64) -> NliOracleConfig {
        let mut fiber = FiberParams::ssmf(40.0);
        fiber.gamma = gamma;
        NliOracleConfig {
            link: LinkPlan::transparent(2, fiber, 5.0, true),
            launch_power_dbm: power,
            reference_energy: 40.0,
            symbol_rate_gbaud: 10.0,
            rolloff: 0.1,
            samples_per_symbol: 2,
            step_km: 1.0,
            seed: 1,
        }
    }

    #[test]
    fn oracle_linear_floor_and_power_growth() {
        let c = chain(16, 4, 1);
        let (info, signs) = inputs(&c, 5);
        let block = enumerate_candidates(&info, &c, &signs, None).unwrap().candidates[0].block.clone();
        let per_symbol = block.total_energy() / block.len() as f64;
        let lin = ssfm_nli_oracle(&block, &oracle(0.0, 4.0)).unwrap();
        assert!(lin <= 1e-20 * per_symbol, "{lin}");
        let p2 = ssfm_nli_oracle(&block, &oracle(1.3, 2.0)).unwrap();
        let p6 = ssfm_nli_oracle(&block, &oracle(1.3, 6.0)).unwrap();
        assert!(p6 > p2);
        assert_eq!(p2, ssfm_nli_oracle(&block, &oracle(1.3, 2.0)).unwrap());
        let loud = ssfm_nli_oracle(&block.scaled(2.0), &oracle(1.3, 2.0)).unwrap() / 4.0;
        assert!(loud > p2, "{loud} vs {p2}");
        let mut rotated = oracle(0.0, 4.0);
        rotated.link.spans.iter_mut().for_each(|s| s.fiber.pmd = 0.1);
        let floor = ssfm_nli_oracle(&block, &rotated).unwrap();
        assert!(floor <= 1e-4 * per_symbol, "{floor}");
        let mut bad = oracle(1.3, 2.0);
        bad.reference_energy = 0.0;
        assert!(ssfm_nli_oracle(&block, &bad).is_err());
    }
}
