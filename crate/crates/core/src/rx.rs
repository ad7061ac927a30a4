//! Receiver DSP chain.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{frequency_shift, rrc_response};
use crate::error::{invalid, Error, Result};
use crate::ess::entropy_bits;
use crate::fft;
use crate::metrics::apply_dispersion;
use crate::signal::{dispersion_phase, DualPolSymbolBlock, SampledWaveform};

/// Upper bound reported by [`snr_elec`] for (near) error-free blocks.
pub const SNR_CAP_DB: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqualizerKind {
    Identity,
    Ls2x2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RxChainConfig {
    pub cpr_window: usize,
    pub cpr_on: bool,
    pub equalizer: EqualizerKind,
}

impl Default for RxChainConfig {
    fn default() -> Self {
        Self {
            cpr_window: 64,
            cpr_on: true,
            equalizer: EqualizerKind::Ls2x2,
        }
    }
}

impl RxChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cpr_window == 0 {
            return Err(Error::InvalidConfig("CPR window must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RxResult {
    pub snr_elec_db: f64,
    pub snr_stderr_db: f64,
    pub gmi_bits_per_4d: f64,
    pub gmi_stderr: f64,
    pub equalized: DualPolSymbolBlock,
}

/// Shifts the band at `offset_ghz` to baseband, applies the RRC matched
/// filter and samples once per symbol with known timing.
pub fn extract_and_match(w: &SampledWaveform, offset_ghz: f64, baud_gbaud: f64, rolloff: f64) -> Result<DualPolSymbolBlock> {
    let fs = w.sample_rate;
    let rs = baud_gbaud * 1e9;
    let ratio = fs / rs;
    let sps = ratio.round() as usize;
    if sps == 0 || (ratio - sps as f64).abs() > 1e-9 * ratio {
        return Err(invalid(format!("sample rate {fs} Hz is not an integer multiple of {rs} Bd")));
    }
    let edge = (offset_ghz * 1e9 - w.center_freq_offset).abs() + (1.0 + rolloff) * rs / 2.0;
    if edge > fs / 2.0 {
        return Err(Error::Aliasing {
            edge_hz: edge,
            nyquist_hz: fs / 2.0,
        });
    }
    let mut shifted = w.clone();
    frequency_shift(&mut shifted, w.center_freq_offset - offset_ghz * 1e9);
    let filt = |pol: &mut Vec<Complex64>| {
        fft::filter_in_place(pol, fs, |f| Complex64::new(rrc_response(f, rs, rolloff), 0.0));
        pol.iter().step_by(sps).map(|x| x * sps as f64).collect::<Vec<_>>()
    };
    let p1 = filt(&mut shifted.pol1);
    let p2 = filt(&mut shifted.pol2);
    DualPolSymbolBlock::new(p1, p2)
}

/// Chromatic dispersion compensation of a waveform for a link of
/// `length_km`.
pub fn cdc_waveform(w: &SampledWaveform, dispersion: f64, lambda_nm: f64, length_km: f64) -> SampledWaveform {
    if length_km == 0.0 || dispersion == 0.0 {
        return w.clone();
    }
    let mut out = w.clone();
    let resp = |f: f64| Complex64::from_polar(1.0, dispersion_phase(dispersion, lambda_nm, f, -length_km));
    fft::filter_in_place(&mut out.pol1, w.sample_rate, resp);
    fft::filter_in_place(&mut out.pol2, w.sample_rate, resp);
    out
}

/// Chromatic dispersion compensation at one sample per symbol.
pub fn cdc_block(block: &DualPolSymbolBlock, dispersion: f64, lambda_nm: f64, length_km: f64, baud_gbaud: f64) -> DualPolSymbolBlock {
    apply_dispersion(block, dispersion, lambda_nm, -length_km, baud_gbaud)
}

type Mat2 = [[Complex64; 2]; 2];

/// Least-squares single-tap 2×2 matrix `H` minimizing `Σ‖x_k − H·y_k‖²`.
pub fn genie_matrix(rx: &DualPolSymbolBlock, tx: &DualPolSymbolBlock) -> Result<Mat2> {
    if rx.len() != tx.len() {
        return Err(Error::LengthMismatch {
            expected: tx.len(),
            got: rx.len(),
        });
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut ryy = [[zero; 2]; 2];
    let mut rxy = [[zero; 2]; 2];
    for k in 0..rx.len() {
        let y = [rx.pol1[k], rx.pol2[k]];
        let x = [tx.pol1[k], tx.pol2[k]];
        for i in 0..2 {
            for j in 0..2 {
                ryy[i][j] += y[i] * y[j].conj();
                rxy[i][j] += x[i] * y[j].conj();
            }
        }
    }
    let det = ryy[0][0] * ryy[1][1] - ryy[0][1] * ryy[1][0];
    let scale = (ryy[0][0].re + ryy[1][1].re).powi(2);
    if !(det.norm() > 1e-12 * scale) {
        return Err(Error::DegenerateBlock);
    }
    let inv = [[ryy[1][1] / det, -ryy[0][1] / det], [-ryy[1][0] / det, ryy[0][0] / det]];
    let mut h = [[zero; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            h[i][j] = rxy[i][0] * inv[0][j] + rxy[i][1] * inv[1][j];
        }
    }
    Ok(h)
}

/// Genie-aided single-tap MIMO equalization using the transmitted symbols.
pub fn genie_equalize(rx: &DualPolSymbolBlock, tx: &DualPolSymbolBlock) -> Result<DualPolSymbolBlock> {
    let h = genie_matrix(rx, tx)?;
    let (p1, p2) = rx
        .pol1
        .iter()
        .zip(&rx.pol2)
        .map(|(&a, &b)| (h[0][0] * a + h[0][1] * b, h[1][0] * a + h[1][1] * b))
        .unzip();
    DualPolSymbolBlock::new(p1, p2)
}

/// Fully data-aided phase recovery: each symbol is derotated by the phase of
/// `Σ y_m·x_m*` over a centered window of `window` symbols (shrinking at the
/// block edges), summed over both polarizations.
pub fn cpr_data_aided(rx: &DualPolSymbolBlock, tx: &DualPolSymbolBlock, window: usize) -> Result<DualPolSymbolBlock> {
    if window == 0 {
        return Err(invalid("CPR window must be >= 1"));
    }
    if rx.len() != tx.len() {
        return Err(Error::LengthMismatch {
            expected: tx.len(),
            got: rx.len(),
        });
    }
    let n = rx.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(Complex64::new(0.0, 0.0));
    for k in 0..n {
        let c = rx.pol1[k] * tx.pol1[k].conj() + rx.pol2[k] * tx.pol2[k].conj();
        let last = *prefix.last().expect("nonempty");
        prefix.push(last + c);
    }
    let before = window / 2;
    let mut out = rx.clone();
    for k in 0..n {
        let lo = k.saturating_sub(before);
        let hi = (k + window - before).min(n);
        let corr = prefix[hi] - prefix[lo];
        if corr.norm() > 0.0 {
            let rot = (corr / corr.norm()).conj();
            out.pol1[k] *= rot;
            out.pol2[k] *= rot;
        }
    }
    Ok(out)
}

fn check_pair(rx: &DualPolSymbolBlock, tx: &DualPolSymbolBlock) -> Result<()> {
    if rx.len() != tx.len() {
        return Err(Error::LengthMismatch {
            expected: tx.len(),
            got: rx.len(),
        });
    }
    Ok(())
}

/// Electrical SNR in dB after scaling `rx` by the MMSE scalar
/// `⟨y,x⟩/⟨y,y⟩`, together with its Monte-Carlo standard error.
pub fn snr_elec_with_error(rx: &DualPolSymbolBlock, tx: &DualPolSymbolBlock) -> Result<(f64, f64)> {
    check_pair(rx, tx)?;
    let ys = rx.pol1.iter().chain(&rx.pol2);
    let xs = tx.pol1.iter().chain(&tx.pol2);
    let (mut yx, mut yy, mut xx) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
    for (y, x) in ys.clone().zip(xs.clone()) {
        yx += y.conj() * x;
        yy += y.norm_sqr();
        xx += x.norm_sqr();
    }
    if xx == 0.0 {
        return Err(invalid("zero reference power"));
    }
    let a = if yy > 0.0 { yx / yy } else { Complex64::new(0.0, 0.0) };
    // per-4D-symbol error energies
    let errs: Vec<f64> = (0..rx.len())
        .map(|k| (tx.pol1[k] - a * rx.pol1[k]).norm_sqr() + (tx.pol2[k] - a * rx.pol2[k]).norm_sqr())
        .collect();
    let n = errs.len() as f64;
    let err: f64 = errs.iter().sum();
    let snr_db = if err > 0.0 { (10.0 * (xx / err).log10()).min(SNR_CAP_DB) } else { SNR_CAP_DB };
    let mean = err / n;
    let stderr = if mean > 0.0 && errs.len() > 1 {
        let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
        10.0 / std::f64::consts::LN_10 * (var / n).sqrt() / mean
    } else {
        0.0
    };
    Ok((snr_db, stderr))
}

pub fn snr_elec(rx: &DualPolSymbolBlock, tx: &DualPolSymbolBlock) -> Result<f64> {
    snr_elec_with_error(rx, tx).map(|(s, _)| s)
}

/// Prior and labeling of one real PAM dimension.
///
/// Points are the signed amplitudes in ascending order. The label of a point
/// is `(sign, gray(amplitude index))` with sign bit 0 for positive values,
/// so the full 2D label is 3 bits per quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct PamPrior {
    points: Vec<f64>,
    log_probs: Vec<f64>,
    probs: Vec<f64>,
    labels: Vec<u32>,
    bits: usize,
}

impl PamPrior {
    /// Builds the signed prior from amplitude probabilities (aligned with
    /// `amplitudes`, signs equiprobable). The amplitude count must be a power
    /// of two.
    pub fn from_amplitudes(amplitudes: &[u32], amplitude_probs: &[f64]) -> Result<Self> {
        if amplitudes.len() != amplitude_probs.len() || amplitudes.is_empty() {
            return Err(invalid("amplitude/probability length mismatch"));
        }
        if !amplitudes.len().is_power_of_two() {
            return Err(invalid("labeling needs a power-of-two amplitude count"));
        }
        let total: f64 = amplitude_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 || amplitude_probs.iter().any(|&p| p < 0.0) {
            return Err(invalid("amplitude probabilities must sum to 1"));
        }
        let amp_bits = amplitudes.len().trailing_zeros() as usize;
        let mut entries: Vec<(f64, f64, u32)> = Vec::new();
        for (i, (&a, &p)) in amplitudes.iter().zip(amplitude_probs).enumerate() {
            let gray = (i ^ (i >> 1)) as u32;
            entries.push((f64::from(a), p / 2.0, gray));
            entries.push((-f64::from(a), p / 2.0, (1 << amp_bits) | gray));
        }
        entries.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
        Ok(Self {
            points: entries.iter().map(|e| e.0).collect(),
            log_probs: entries.iter().map(|e| if e.1 > 0.0 { e.1.ln() } else { f64::NEG_INFINITY }).collect(),
            probs: entries.iter().map(|e| e.1).collect(),
            labels: entries.iter().map(|e| e.2).collect(),
            bits: amp_bits + 1,
        })
    }

    /// Uniform prior over `2m`-PAM.
    pub fn uniform(levels: u32) -> Self {
        let amps: Vec<u32> = (0..levels).map(|i| 2 * i + 1).collect();
        let p = vec![1.0 / levels as f64; levels as usize];
        Self::from_amplitudes(&amps, &p).expect("valid uniform prior")
    }

    /// Estimates the prior from the symbols actually transmitted.
    pub fn empirical(amplitudes: &[u32], tx: &DualPolSymbolBlock) -> Result<Self> {
        let mut counts = vec![0u64; amplitudes.len()];
        for v in tx.pol1.iter().chain(&tx.pol2).flat_map(|x| [x.re, x.im]) {
            let a = v.abs().round() as u32;
            let i = amplitudes.iter().position(|&b| b == a).ok_or(Error::NotAConstellationPoint(v))?;
            counts[i] += 1;
        }
        let total: u64 = counts.iter().sum();
        let p: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Self::from_amplitudes(amplitudes, &p)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    /// Entropy of one real dimension, bits.
    pub fn entropy(&self) -> f64 {
        entropy_bits(&self.probs)
    }

    fn index_of(&self, v: f64) -> Result<usize> {
        self.points
            .iter()
            .position(|&p| (p - v).abs() < 1e-9)
            .ok_or(Error::NotAConstellationPoint(v))
    }

    /// `Σ_i log2( Σ_x q(y|x)P(x) / Σ_{x: b_i(x) = b_i} q(y|x)P(x) )` for one
    /// observation `y` of transmitted point `tx_index` under a real Gaussian
    /// metric of variance `var`.
    pub fn bit_metric_loss(&self, y: f64, tx_index: usize, var: f64) -> f64 {
        let logw: Vec<f64> = self
            .points
            .iter()
            .zip(&self.log_probs)
            .map(|(&x, &lp)| lp - (y - x) * (y - x) / (2.0 * var))
            .collect();
        let lse = |mask: &dyn Fn(usize) -> bool| {
            let m = logw
                .iter()
                .enumerate()
                .filter(|(i, _)| mask(*i))
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                return m;
            }
            m + logw
                .iter()
                .enumerate()
                .filter(|(i, _)| mask(*i))
                .map(|(_, &v)| (v - m).exp())
                .sum::<f64>()
                .ln()
        };
        let all = lse(&|_| true);
        let label = self.labels[tx_index];
        let mut loss = 0.0;
        for bit in 0..self.bits {
            let b = (label >> bit) & 1;
            let same = lse(&|i| (self.labels[i] >> bit) & 1 == b);
            loss += (all - same) / std::f64::consts::LN_2;
        }
        loss
    }
}

/// Unbiased (zero-forcing) scaling of one polarization onto the reference
/// and the resulting complex noise variance.
fn scaled_pol(y: &[Complex64], x: &[Complex64]) -> Result<(Vec<Complex64>, f64)> {
    let xx: f64 = x.iter().map(|v| v.norm_sqr()).sum();
    if xx == 0.0 {
        return Err(invalid("zero reference power"));
    }
    let xy: Complex64 = x.iter().zip(y).map(|(a, b)| a.conj() * b).sum();
    if xy.norm() == 0.0 {
        return Err(Error::NonPositiveVariance);
    }
    let h = xy / xx;
    let ys: Vec<Complex64> = y.iter().map(|v| v / h).collect();
    let n = x.len() as f64;
    let var = ys.iter().zip(x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / n;
    // Noise floor matching the SNR cap, so error-free blocks stay finite.
    let floor = xx / n * 10f64.powf(-SNR_CAP_DB / 10.0);
    let var = var.max(floor);
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::NonPositiveVariance);
    }
    Ok((ys, var))
}

/// GMI in bits per 4D symbol (sum over both polarizations, each clamped at
/// zero) and its standard error.
pub fn gmi_bmd_with_error(rx: &DualPolSymbolBlock, tx: &DualPolSymbolBlock, prior: &PamPrior) -> Result<(f64, f64)> {
    check_pair(rx, tx)?;
    let h2d = 2.0 * prior.entropy();
    let mut total = 0.0;
    let mut per_symbol = vec![0.0; rx.len()];
    for (y, x) in [(&rx.pol1, &tx.pol1), (&rx.pol2, &tx.pol2)] {
        let (ys, var) = scaled_pol(y, x)?;
        let real_var = var / 2.0;
        let mut sum = 0.0;
        for (k, (yk, xk)) in ys.iter().zip(x.iter()).enumerate() {
            let l = prior.bit_metric_loss(yk.re, prior.index_of(xk.re)?, real_var) + prior.bit_metric_loss(yk.im, prior.index_of(xk.im)?, real_var);
            per_symbol[k] += h2d - l;
            sum += l;
        }
        total += (h2d - sum / x.len() as f64).max(0.0);
    }
    let n = per_symbol.len() as f64;
    let mean = per_symbol.iter().sum::<f64>() / n;
    let stderr = if per_symbol.len() > 1 {
        (per_symbol.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok((total, stderr))
}

/// Generalized mutual information of bit-metric decoding, bits per 4D
/// symbol. The 2D prior is the product of two copies of `prior`.
pub fn gmi_bmd(rx: &DualPolSymbolBlock, tx: &DualPolSymbolBlock, prior: &PamPrior) -> Result<f64> {
    gmi_bmd_with_error(rx, tx, prior).map(|(g, _)| g)
}

/// Equalizer followed by phase recovery, as configured.
pub fn equalize_and_recover(rx: &DualPolSymbolBlock, tx: &DualPolSymbolBlock, cfg: &RxChainConfig) -> Result<DualPolSymbolBlock> {
    let eq = match cfg.equalizer {
        EqualizerKind::Identity => rx.clone(),
        EqualizerKind::Ls2x2 => genie_equalize(rx, tx)?,
    };
    if cfg.cpr_on {
        cpr_data_aided(&eq, tx, cfg.cpr_window)
    } else {
        Ok(eq)
    }
}

/// Equalize, phase-correct and score one received symbol block.
pub fn evaluate(rx: &DualPolSymbolBlock, tx: &DualPolSymbolBlock, prior: &PamPrior, cfg: &RxChainConfig) -> Result<RxResult> {
    let eq = equalize_and_recover(rx, tx, cfg)?;
    let (snr_elec_db, snr_stderr_db) = snr_elec_with_error(&eq, tx)?;
    let (gmi_bits_per_4d, gmi_stderr) = gmi_bmd_with_error(&eq, tx, prior)?;
    Ok(RxResult {
        snr_elec_db,
        snr_stderr_db,
        gmi_bits_per_4d,
        gmi_stderr,
        equalized: eq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::rrc_shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn qam_block(len: usize, seed: u64) -> DualPolSymbolBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pick = || (2 * rng.random_range(0..8) - 7) as f64;
        let pol1 = (0..len).map(|_| Complex64::new(pick(), pick())).collect();
        let pol2 = (0..len).map(|_| Complex64::new(pick(), pick())).collect();
        DualPolSymbolBlock::new(pol1, pol2).unwrap()
    }

    fn add_noise(x: &DualPolSymbolBlock, var: f64, seed: u64) -> DualPolSymbolBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (var / 2.0).sqrt();
        let mut n = || {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(a * s, b * s)
        };
        DualPolSymbolBlock::new(x.pol1.iter().map(|v| v + n()).collect(), x.pol2.iter().map(|v| v + n()).collect()).unwrap()
    }

    fn max_err(a: &DualPolSymbolBlock, b: &DualPolSymbolBlock) -> f64 {
        a.pol1.iter().chain(&a.pol2).zip(b.pol1.iter().chain(&b.pol2)).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn back_to_back_extraction() {
        let tx = qam_block(128, 1);
        let w = rrc_shape(&tx, 0.1, 4, 50e9).unwrap();
        let rx = extract_and_match(&w, 0.0, 50.0, 0.1).unwrap();
        assert!(max_err(&rx, &tx) < 1e-9 * 7.0);
        assert!(matches!(extract_and_match(&w, 90.0, 50.0, 0.1), Err(Error::Aliasing { .. })));
    }

    #[test]
    fn cdc_inverts() {
        let tx = qam_block(64, 2);
        let w = rrc_shape(&tx, 0.1, 2, 30e9).unwrap();
        assert_eq!(cdc_waveform(&w, 17.0, 1550.0, 0.0), w);
        let there = cdc_waveform(&w, 17.0, 1550.0, 500.0);
        let back = cdc_waveform(&there, 17.0, 1550.0, -500.0);
        let err = back.pol1.iter().zip(&w.pol1).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12 * 7.0);
        let b = cdc_block(&cdc_block(&tx, 17.0, 1550.0, 300.0, 30.0), 17.0, 1550.0, -300.0, 30.0);
        assert!(max_err(&b, &tx) < 1e-12 * 10.0);
    }

    #[test]
    fn genie_cases() {
        let tx = qam_block(200, 3);
        let h = genie_matrix(&tx, &tx).unwrap();
        assert!((h[0][0] - 1.0).norm() < 1e-12 && h[0][1].norm() < 1e-12 && h[1][0].norm() < 1e-12 && (h[1][1] - 1.0).norm() < 1e-12);

        let half = tx.scaled(0.5);
        assert!(max_err(&genie_equalize(&half, &tx).unwrap(), &tx) < 1e-12 * 10.0);

        let (c, s) = (0.6f64, 0.8f64);
        let ph = Complex64::from_polar(1.0, 0.3);
        let rot = DualPolSymbolBlock::new(
            tx.pol1.iter().zip(&tx.pol2).map(|(a, b)| a * c * ph - b * s).collect(),
            tx.pol1.iter().zip(&tx.pol2).map(|(a, b)| a * s + b * c * ph.conj()).collect(),
        )
        .unwrap();
        assert!(max_err(&genie_equalize(&rot, &tx).unwrap(), &tx) < 1e-10);

        let zero = tx.scaled(0.0);
        assert_eq!(genie_equalize(&zero, &tx), Err(Error::DegenerateBlock));
    }

    #[test]
    fn cpr_constant_phase_and_identity() {
        let tx = qam_block(300, 4);
        let rot = Complex64::from_polar(1.0, 0.7);
        let rx = DualPolSymbolBlock::new(tx.pol1.iter().map(|v| v * rot).collect(), tx.pol2.iter().map(|v| v * rot).collect()).unwrap();
        let out = cpr_data_aided(&rx, &tx, 64).unwrap();
        for (a, b) in out.pol1.iter().zip(&tx.pol1) {
            assert!((a.arg() - b.arg()).abs() < 1e-10 || (a.arg() - b.arg()).abs() > 2.0 * std::f64::consts::PI - 1e-10);
        }
        assert!(max_err(&cpr_data_aided(&tx, &tx, 64).unwrap(), &tx) < 1e-12 * 10.0);
        assert!(max_err(&cpr_data_aided(&rx, &tx, 1).unwrap(), &tx) < 1e-10);
    }

    #[test]
    fn cpr_tracks_slow_phase() {
        let n = 20_000;
        let tx = qam_block(n, 5);
        let phase = |k: usize| 0.5 * (2.0 * std::f64::consts::PI * k as f64 / 5000.0).sin();
        let rx = DualPolSymbolBlock::new(
            tx.pol1.iter().enumerate().map(|(k, v)| v * Complex64::from_polar(1.0, phase(k))).collect(),
            tx.pol2.iter().enumerate().map(|(k, v)| v * Complex64::from_polar(1.0, phase(k))).collect(),
        )
        .unwrap();
        let rx = add_noise(&rx, 0.05, 6);
        let residual = |b: &DualPolSymbolBlock| {
            let v: Vec<f64> = b.pol1.iter().zip(&tx.pol1).map(|(y, x)| (y * x.conj()).arg()).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        let before = residual(&rx);
        let after = residual(&cpr_data_aided(&rx, &tx, 64).unwrap());
        assert!(before > 10.0 * after, "{before} {after}");
    }

    #[test]
    fn snr_cases() {
        let tx = qam_block(1000, 7);
        assert!(snr_elec(&tx, &tx).unwrap() >= SNR_CAP_DB);
        assert!(snr_elec(&tx.scaled(2.0), &tx).unwrap() >= SNR_CAP_DB);
        assert!(snr_elec(&tx, &tx.scaled(0.0)).is_err());

        let tx = qam_block(100_000, 8);
        let p = tx.total_energy() / tx.len() as f64 / 2.0;
        let rx = add_noise(&tx, 0.01 * p, 9);
        let s = snr_elec(&rx, &tx).unwrap();
        assert!((s - 20.0).abs() < 0.1, "{s}");
    }

    #[test]
    fn snr_is_scale_invariant() {
        let tx = qam_block(2000, 10);
        let rx = add_noise(&tx, 1.0, 11);
        let a = snr_elec(&rx, &tx).unwrap();
        let scaled = DualPolSymbolBlock::new(
            rx.pol1.iter().map(|v| v * Complex64::new(-0.3, 1.7)).collect(),
            rx.pol2.iter().map(|v| v * Complex64::new(-0.3, 1.7)).collect(),
        )
        .unwrap();
        assert!((snr_elec(&scaled, &tx).unwrap() - a).abs() < 1e-9);
    }

    #[test]
    fn gray_labels_are_adjacent() {
        let p = PamPrior::uniform(4);
        assert_eq!(p.points(), &[-7.0, -5.0, -3.0, -1.0, 1.0, 3.0, 5.0, 7.0]);
        for w in p.labels().windows(2) {
            assert_eq!((w[0] ^ w[1]).count_ones(), 1);
        }
        assert_eq!(p.bits(), 3);
        assert!((p.entropy() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gmi_noiseless_and_noisy_limits() {
        let tx = qam_block(5000, 12);
        let prior = PamPrior::uniform(4);
        let g = gmi_bmd(&tx, &tx, &prior).unwrap();
        assert!((g - 12.0).abs() < 0.01, "{g}");
        let rx = add_noise(&tx, 42.0 * 100.0, 13);
        let g = gmi_bmd(&rx, &tx, &prior).unwrap();
        assert!(g < 0.1, "{g}");
    }

    #[test]
    fn prior_validation() {
        assert!(PamPrior::from_amplitudes(&[1, 3, 5], &[0.4, 0.3, 0.3]).is_err());
        assert!(PamPrior::from_amplitudes(&[1, 3], &[0.4, 0.4]).is_err());
        let shaped = PamPrior::from_amplitudes(&[1, 3, 5, 7], &[0.4, 0.3, 0.2, 0.1]).unwrap();
        assert!((shaped.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
