//! Transmit waveform construction and fiber propagation.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fft;
use crate::signal::{alpha_per_km, dispersion_phase, DualPolSymbolBlock, SampledWaveform, PLANCK, SPEED_OF_LIGHT_KM_PER_S};

/// Manakov averaging factor of the Kerr term for randomly varying
/// birefringence.
pub const MANAKOV_FACTOR: f64 = 8.0 / 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberParams {
    /// dB/km
    pub alpha_db: f64,
    /// ps/(nm·km)
    pub dispersion: f64,
    /// 1/(W·km)
    pub gamma: f64,
    /// ps/√km; 0 disables PMD.
    #[serde(default)]
    pub pmd: f64,
    /// km
    pub length: f64,
    /// nm
    pub lambda_nm: f64,
}

impl FiberParams {
    /// Standard single-mode fiber at 1550 nm.
    pub fn ssmf(length: f64) -> Self {
        Self {
            alpha_db: 0.2,
            dispersion: 17.0,
            gamma: 1.3,
            pmd: 0.0,
            length,
            lambda_nm: 1550.0,
        }
    }

    pub fn span_loss_db(&self) -> f64 {
        self.alpha_db * self.length
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) {
            return Err(invalid("fiber length must be positive"));
        }
        if !(self.alpha_db >= 0.0) {
            return Err(invalid("attenuation must be non-negative"));
        }
        if !(self.pmd >= 0.0) {
            return Err(invalid("PMD coefficient must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdfaParams {
    pub gain_db: f64,
    pub noise_figure_db: f64,
    pub ase_on: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub fiber: FiberParams,
    pub edfa: EdfaParams,
}

/// Sequence of fiber spans, each followed by an amplifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPlan {
    pub spans: Vec<Span>,
}

impl LinkPlan {
    /// `n_spans` identical spans, each amplifier exactly restoring the span
    /// loss.
    pub fn transparent(n_spans: usize, fiber: FiberParams, noise_figure_db: f64, ase_on: bool) -> Self {
        let edfa = EdfaParams {
            gain_db: fiber.span_loss_db(),
            noise_figure_db,
            ase_on,
        };
        Self {
            spans: vec![Span { fiber, edfa }; n_spans],
        }
    }

    pub fn total_length(&self) -> f64 {
        self.spans.iter().map(|s| s.fiber.length).sum()
    }

    /// Copy of the link with ASE switched off and the Kerr coefficient
    /// replaced by `gamma`.
    pub fn with_overrides(&self, ase_on: bool, gamma: Option<f64>) -> Self {
        let mut out = self.clone();
        for s in &mut out.spans {
            s.edfa.ase_on = ase_on;
            if let Some(g) = gamma {
                s.fiber.gamma = g;
            }
        }
        out
    }
}

/// Frequency layout of the simulated optical band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPlan {
    pub n_wdm: usize,
    /// GHz
    pub wdm_spacing: f64,
    pub n_subcarriers: usize,
    /// GBaud
    pub per_subcarrier_baud: f64,
    pub rolloff: f64,
    /// Samples per subcarrier symbol on the simulation grid.
    pub samples_per_symbol: usize,
}

impl GridPlan {
    /// GHz; subcarriers are packed at `R_s·(1 + rolloff)`.
    pub fn subcarrier_spacing(&self) -> f64 {
        self.per_subcarrier_baud * (1.0 + self.rolloff)
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.samples_per_symbol as f64 * self.per_subcarrier_baud * 1e9
    }

    /// Aggregate symbol rate of one wavelength channel, GBaud.
    pub fn channel_baud(&self) -> f64 {
        self.per_subcarrier_baud * self.n_subcarriers as f64
    }

    fn centered(i: usize, count: usize, spacing: f64) -> f64 {
        (i as f64 - (count as f64 - 1.0) / 2.0) * spacing
    }

    /// Offset of wavelength channel `c` from the grid center, GHz.
    pub fn channel_offset(&self, c: usize) -> f64 {
        Self::centered(c, self.n_wdm, self.wdm_spacing)
    }

    /// Offset of subcarrier `s` from its channel center, GHz.
    pub fn subcarrier_offset(&self, s: usize) -> f64 {
        Self::centered(s, self.n_subcarriers, self.subcarrier_spacing())
    }

    pub fn central_channel(&self) -> usize {
        self.n_wdm / 2
    }

    /// Width of the occupied spectrum including roll-off, GHz.
    pub fn occupied_bandwidth(&self) -> f64 {
        (self.n_wdm.saturating_sub(1)) as f64 * self.wdm_spacing + self.n_subcarriers as f64 * self.subcarrier_spacing()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_wdm == 0 || self.n_subcarriers == 0 {
            return Err(Error::InvalidConfig("grid needs at least one channel and subcarrier".into()));
        }
        if !(0.0..1.0).contains(&self.rolloff) {
            return Err(Error::InvalidConfig(format!("roll-off {} outside [0, 1)", self.rolloff)));
        }
        if self.samples_per_symbol < 2 {
            return Err(Error::InvalidConfig("samples per symbol must be >= 2".into()));
        }
        if !(self.per_subcarrier_baud > 0.0) {
            return Err(Error::InvalidConfig("symbol rate must be positive".into()));
        }
        if self.n_subcarriers > 1 && self.n_wdm > 1 && self.wdm_spacing < self.n_subcarriers as f64 * self.subcarrier_spacing() {
            return Err(Error::InvalidConfig("subcarriers overlap the neighbouring WDM channel".into()));
        }
        let fs_ghz = self.sample_rate_hz() * 1e-9;
        let half = (1.0 + self.rolloff) * self.per_subcarrier_baud / 2.0;
        let edge = self.channel_offset(self.n_wdm - 1).abs() + self.subcarrier_offset(self.n_subcarriers - 1).abs() + half;
        if edge > fs_ghz / 2.0 {
            return Err(Error::Aliasing {
                edge_hz: edge * 1e9,
                nyquist_hz: fs_ghz * 1e9 / 2.0,
            });
        }
        Ok(())
    }
}

/// Root-raised-cosine amplitude response with unit passband gain.
pub fn rrc_response(f_hz: f64, symbol_rate_hz: f64, rolloff: f64) -> f64 {
    let f = f_hz.abs();
    let half = symbol_rate_hz / 2.0;
    let lo = (1.0 - rolloff) * half;
    let hi = (1.0 + rolloff) * half;
    if rolloff == 0.0 {
        let rel = (f - half) / half;
        return if rel.abs() < 1e-12 {
            std::f64::consts::FRAC_1_SQRT_2
        } else if f < half {
            1.0
        } else {
            0.0
        };
    }
    if f <= lo {
        1.0
    } else if f <= hi {
        (0.5 * (1.0 + (std::f64::consts::PI / (rolloff * symbol_rate_hz) * (f - lo)).cos())).sqrt()
    } else {
        0.0
    }
}

/// Upsamples a symbol block by `sps` (zero stuffing) and applies a circular
/// frequency-domain RRC filter.
pub fn rrc_shape(block: &DualPolSymbolBlock, rolloff: f64, sps: usize, symbol_rate_hz: f64) -> Result<SampledWaveform> {
    if sps < 2 {
        return Err(invalid("samples per symbol must be >= 2"));
    }
    if !(0.0..1.0).contains(&rolloff) {
        return Err(invalid(format!("roll-off {rolloff} outside [0, 1)")));
    }
    let fs = sps as f64 * symbol_rate_hz;
    let shape = |pol: &[Complex64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); pol.len() * sps];
        for (k, &x) in pol.iter().enumerate() {
            buf[k * sps] = x;
        }
        fft::filter_in_place(&mut buf, fs, |f| Complex64::new(rrc_response(f, symbol_rate_hz, rolloff), 0.0));
        buf
    };
    Ok(SampledWaveform {
        pol1: shape(&block.pol1),
        pol2: shape(&block.pol2),
        sample_rate: fs,
        center_freq_offset: 0.0,
        samples_per_symbol: sps,
    })
}

/// Multiplies `w` by `exp(j2π·k·n/N)` where `k` is the DFT bin nearest to
/// `offset_hz`, so the shifted buffer stays periodic.
pub(crate) fn frequency_shift(w: &mut SampledWaveform, offset_hz: f64) {
    let n = w.len();
    if offset_hz == 0.0 || n == 0 {
        return;
    }
    let bins = (offset_hz * n as f64 / w.sample_rate).round() as i64;
    let len = n as i64;
    for (i, (a, b)) in w.pol1.iter_mut().zip(w.pol2.iter_mut()).enumerate() {
        let turn = (i as i64 * bins).rem_euclid(len) as f64 / n as f64;
        let rot = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * turn);
        *a *= rot;
        *b *= rot;
    }
    w.center_freq_offset += bins as f64 * w.sample_rate / n as f64;
}

/// Sums frequency-shifted copies of waveforms sharing one sample grid.
pub fn frequency_mux(waveforms: &[SampledWaveform], offsets_ghz: &[f64], rolloff: f64) -> Result<SampledWaveform> {
    let first = waveforms.first().ok_or_else(|| invalid("nothing to multiplex"))?;
    if offsets_ghz.len() != waveforms.len() {
        return Err(Error::LengthMismatch {
            expected: waveforms.len(),
            got: offsets_ghz.len(),
        });
    }
    let n = first.len();
    let fs = first.sample_rate;
    let mut out = SampledWaveform {
        pol1: vec![Complex64::new(0.0, 0.0); n],
        pol2: vec![Complex64::new(0.0, 0.0); n],
        sample_rate: fs,
        center_freq_offset: 0.0,
        samples_per_symbol: first.samples_per_symbol,
    };
    for (w, &off) in waveforms.iter().zip(offsets_ghz) {
        if w.len() != n || w.sample_rate != fs {
            return Err(invalid("multiplexed waveforms must share length and sample rate"));
        }
        let offset_hz = off * 1e9;
        let edge = offset_hz.abs() + (1.0 + rolloff) * w.symbol_rate() / 2.0;
        if edge > fs / 2.0 {
            return Err(Error::Aliasing {
                edge_hz: edge,
                nyquist_hz: fs / 2.0,
            });
        }
        let mut shifted = w.clone();
        frequency_shift(&mut shifted, offset_hz);
        for (o, s) in out.pol1.iter_mut().zip(&shifted.pol1) {
            *o += s;
        }
        for (o, s) in out.pol2.iter_mut().zip(&shifted.pol2) {
            *o += s;
        }
    }
    Ok(out)
}

/// Haar-random 2×2 unitary as rows `[[a, b], [-b*, a*]]` times a global phase.
fn random_unitary<R: Rng>(rng: &mut R) -> [[Complex64; 2]; 2] {
    let mut g = || -> f64 { StandardNormal.sample(rng) };
    let (q0, q1, q2, q3) = (g(), g(), g(), g());
    let norm = (q0 * q0 + q1 * q1 + q2 * q2 + q3 * q3).sqrt();
    let a = Complex64::new(q0, q1) / norm;
    let b = Complex64::new(q2, q3) / norm;
    [[a, b], [-b.conj(), a.conj()]]
}

/// Symmetric split-step integration of the Manakov equation over one fiber.
///
/// Linear half steps (attenuation and dispersion, frequency domain) surround
/// a Kerr phase rotation `γ·(8/9)·(|A1|² + |A2|²)·δ` shared by both
/// polarizations, where `δ = 2·sinh(αh/2)/α` integrates the power decay over
/// the step relative to its midpoint. With `pmd > 0`, every step also applies
/// a random waveplate and a differential group delay so that the mean DGD
/// equals `pmd·√length`.
pub fn ssfm_propagate(w: &SampledWaveform, fiber: &FiberParams, step_km: f64, seed: u64) -> Result<SampledWaveform> {
    fiber.validate()?;
    if !(step_km > 0.0) {
        return Err(invalid("step size must be positive"));
    }
    let n = w.len();
    if n == 0 {
        return Ok(w.clone());
    }
    let n_steps = (fiber.length / step_km).ceil().max(1.0) as usize;
    let h = fiber.length / n_steps as f64;
    let alpha = alpha_per_km(fiber.alpha_db);
    let freqs = fft::fftfreq(n, w.sample_rate);
    let half: Vec<Complex64> = freqs
        .iter()
        .map(|&f| Complex64::from_polar((-alpha / 2.0 * h / 2.0).exp(), dispersion_phase(fiber.dispersion, fiber.lambda_nm, f, h / 2.0)))
        .collect();
    let full: Vec<Complex64> = half.iter().map(|x| x * x).collect();
    let delta = if alpha == 0.0 { h } else { 2.0 * (alpha * h / 2.0).sinh() / alpha };
    // γ is per W; samples are √mW.
    let kerr = fiber.gamma * MANAKOV_FACTOR * 1e-3 * delta;

    let pmd_on = fiber.pmd > 0.0;
    // Mean DGD of N concatenated sections of DGD τ is τ·√(8N/(3π)).
    let tau_ps = fiber.pmd * fiber.length.sqrt() * (3.0 * std::f64::consts::PI / (8.0 * n_steps as f64)).sqrt();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(0x55f3);

    let fwd = fft::forward_plan(n);
    let inv = fft::inverse_plan(n);
    let mut a1 = w.pol1.clone();
    let mut a2 = w.pol2.clone();
    let inv_n = 1.0 / n as f64;

    let linear = |a1: &mut [Complex64], a2: &mut [Complex64], resp: &[Complex64], rng: &mut ChaCha20Rng, pmd: bool| {
        fwd.process(a1);
        fwd.process(a2);
        for k in 0..n {
            a1[k] *= resp[k] * inv_n;
            a2[k] *= resp[k] * inv_n;
        }
        if pmd {
            let u = random_unitary(rng);
            for k in 0..n {
                let (x, y) = (a1[k], a2[k]);
                let phase = std::f64::consts::PI * freqs[k] * 1e-12 * tau_ps;
                a1[k] = (u[0][0] * x + u[0][1] * y) * Complex64::from_polar(1.0, -phase);
                a2[k] = (u[1][0] * x + u[1][1] * y) * Complex64::from_polar(1.0, phase);
            }
        }
        inv.process(a1);
        inv.process(a2);
    };

    linear(&mut a1, &mut a2, &half, &mut rng, false);
    for step in 0..n_steps {
        for (x, y) in a1.iter_mut().zip(a2.iter_mut()) {
            let phi = kerr * (x.norm_sqr() + y.norm_sqr());
            let rot = Complex64::from_polar(1.0, phi);
            *x *= rot;
            *y *= rot;
        }
        let last = step + 1 == n_steps;
        linear(&mut a1, &mut a2, if last { &half } else { &full }, &mut rng, pmd_on);
    }

    Ok(SampledWaveform {
        pol1: a1,
        pol2: a2,
        ..w.clone()
    })
}

/// Power spectral density of ASE per polarization, W/Hz.
pub fn ase_psd(gain_db: f64, noise_figure_db: f64, lambda_nm: f64) -> f64 {
    let g = 10f64.powf(gain_db / 10.0);
    let n_sp = 10f64.powf(noise_figure_db / 10.0) / 2.0;
    let nu = SPEED_OF_LIGHT_KM_PER_S * 1e3 / (lambda_nm * 1e-9);
    (g - 1.0) * n_sp * PLANCK * nu
}

/// Amplifies by `gain_db` and, when `ase_on`, adds white circular Gaussian
/// noise over the full simulation bandwidth on each polarization.
pub fn edfa(w: &SampledWaveform, gain_db: f64, noise_figure_db: f64, ase_on: bool, lambda_nm: f64, seed: u64) -> Result<SampledWaveform> {
    if !(gain_db >= 0.0) {
        return Err(invalid("EDFA gain must be non-negative"));
    }
    let mut out = w.clone();
    if gain_db != 0.0 {
        out.scale(10f64.powf(gain_db / 20.0));
    }
    if ase_on {
        // W → mW
        let var = ase_psd(gain_db, noise_figure_db, lambda_nm) * w.sample_rate * 1e3;
        if var > 0.0 {
            let sigma = (var / 2.0).sqrt();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(0xa5e);
            for x in out.pol1.iter_mut().chain(out.pol2.iter_mut()) {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                *x += Complex64::new(re * sigma, im * sigma);
            }
        }
    }
    Ok(out)
}

/// Derives an independent per-stage seed from a master seed.
pub fn substream_seed(master: u64, stage: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    rng.set_stream(stage.wrapping_add(1));
    rng.random()
}

/// Propagates through every span and amplifier of `link`.
pub fn propagate_link(w: &SampledWaveform, link: &LinkPlan, step_km: f64, seed: u64) -> Result<SampledWaveform> {
    let mut cur = w.clone();
    for (i, span) in link.spans.iter().enumerate() {
        cur = ssfm_propagate(&cur, &span.fiber, step_km, substream_seed(seed, 2 * i as u64))?;
        cur = edfa(
            &cur,
            span.edfa.gain_db,
            span.edfa.noise_figure_db,
            span.edfa.ase_on,
            span.fiber.lambda_nm,
            substream_seed(seed, 2 * i as u64 + 1),
        )?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::normalize_power;

    fn random_symbols(len: usize, seed: u64) -> DualPolSymbolBlock {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut pick = || [-3.0, -1.0, 1.0, 3.0][rng.random_range(0..4)];
        let pol1 = (0..len).map(|_| Complex64::new(pick(), pick())).collect();
        let pol2 = (0..len).map(|_| Complex64::new(pick(), pick())).collect();
        DualPolSymbolBlock::new(pol1, pol2).unwrap()
    }

    fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn rrc_impulse_peaks_at_center() {
        let mut pol1 = vec![Complex64::new(0.0, 0.0); 32];
        pol1[16] = Complex64::new(1.0, 0.0);
        let b = DualPolSymbolBlock::new(pol1, vec![Complex64::new(0.0, 0.0); 32]).unwrap();
        let w = rrc_shape(&b, 0.1, 4, 50e9).unwrap();
        let peak = w.pol1.iter().enumerate().max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap()).unwrap().0;
        assert_eq!(peak, 64);
    }

    #[test]
    fn rrc_cascade_is_nyquist() {
        let b = random_symbols(64, 1);
        for rolloff in [0.0, 0.1, 0.5] {
            let w = rrc_shape(&b, rolloff, 4, 10e9).unwrap();
            let mut p = w.pol1.clone();
            fft::filter_in_place(&mut p, w.sample_rate, |f| Complex64::new(rrc_response(f, 10e9, rolloff), 0.0));
            let rec: Vec<_> = p.iter().step_by(4).map(|x| x * 4.0).collect();
            assert!(rel_err(&rec, &b.pol1) < 1e-10, "rolloff {rolloff}");
        }
    }

    #[test]
    fn rrc_zero_rolloff_is_brickwall() {
        let b = random_symbols(32, 2);
        let w = rrc_shape(&b, 0.0, 4, 1.0).unwrap();
        let mut spec = w.pol1.clone();
        fft::fft(&mut spec);
        for (k, x) in spec.iter().enumerate() {
            if fft::bin_frequency(k, spec.len(), 4.0).abs() > 0.5 + 1e-12 {
                assert!(x.norm() < 1e-9);
            }
        }
    }

    #[test]
    fn off_grid_shift_is_a_bin_rotation() {
        let b = random_symbols(32, 12);
        let w = rrc_shape(&b, 0.1, 4, 10e9).unwrap();
        let n = w.len();
        let bin = w.sample_rate / n as f64;
        let mut s = w.clone();
        frequency_shift(&mut s, 7.3 * bin);
        assert!((s.center_freq_offset - 7.0 * bin).abs() < 1e-6);
        let mut a = w.pol1.clone();
        let mut c = s.pol1.clone();
        fft::fft(&mut a);
        fft::fft(&mut c);
        for k in 0..n {
            assert!((c[(k + 7) % n] - a[k]).norm() < 1e-9);
        }
    }

    #[test]
    fn mux_identity_power_and_alias() {
        let b = random_symbols(64, 3);
        let w = rrc_shape(&b, 0.1, 8, 10e9).unwrap();
        let same = frequency_mux(std::slice::from_ref(&w), &[0.0], 0.1).unwrap();
        assert_eq!(same.pol1, w.pol1);

        let w1 = normalize_power(&w, 1.0).unwrap();
        let w2 = normalize_power(&rrc_shape(&random_symbols(64, 4), 0.1, 8, 10e9).unwrap(), 1.0).unwrap();
        // 80 GHz grid, 512 samples: 15 GHz is exactly 96 bins
        let m = frequency_mux(&[w1, w2], &[-15.0, 15.0], 0.1).unwrap();
        assert!((m.mean_power() - 2.0).abs() < 1e-6 * 2.0, "{}", m.mean_power());

        assert!(matches!(frequency_mux(std::slice::from_ref(&w), &[38.0], 0.1), Err(Error::Aliasing { .. })));
    }

    #[test]
    fn linear_ssfm_matches_allpass_filter() {
        let b = random_symbols(256, 5);
        let w = normalize_power(&rrc_shape(&b, 0.1, 4, 32e9).unwrap(), 1.0).unwrap();
        let fiber = FiberParams {
            alpha_db: 0.0,
            gamma: 0.0,
            ..FiberParams::ssmf(80.0)
        };
        let out = ssfm_propagate(&w, &fiber, 1.0, 0).unwrap();
        let mut expect = w.pol1.clone();
        fft::filter_in_place(&mut expect, w.sample_rate, |f| Complex64::from_polar(1.0, dispersion_phase(17.0, 1550.0, f, 80.0)));
        assert!(rel_err(&out.pol1, &expect) < 1e-10);
    }

    #[test]
    fn pure_spm_phase() {
        let p_mw: f64 = 5.0;
        let n = 64;
        let w = SampledWaveform {
            pol1: vec![Complex64::new(p_mw.sqrt(), 0.0); n],
            pol2: vec![Complex64::new(0.0, 0.0); n],
            sample_rate: 1e11,
            center_freq_offset: 0.0,
            samples_per_symbol: 2,
        };
        let fiber = FiberParams {
            alpha_db: 0.0,
            dispersion: 0.0,
            ..FiberParams::ssmf(100.0)
        };
        let out = ssfm_propagate(&w, &fiber, 0.7, 0).unwrap();
        let expected = 1.3 * (8.0 / 9.0) * p_mw * 1e-3 * 100.0;
        for x in &out.pol1 {
            assert!((x.arg() - expected).abs() < 1e-9, "{} vs {}", x.arg(), expected);
        }
    }

    #[test]
    fn attenuation_bookkeeping() {
        let b = random_symbols(64, 6);
        let w = normalize_power(&rrc_shape(&b, 0.1, 4, 32e9).unwrap(), 2.0).unwrap();
        let fiber = FiberParams {
            gamma: 0.0,
            ..FiberParams::ssmf(80.0)
        };
        let out = ssfm_propagate(&w, &fiber, 0.5, 0).unwrap();
        let ratio = out.mean_power() / w.mean_power();
        assert!((ratio / 10f64.powf(-1.6) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lossless_nonlinear_conserves_energy() {
        let b = random_symbols(128, 7);
        let w = normalize_power(&rrc_shape(&b, 0.1, 4, 32e9).unwrap(), 20.0).unwrap();
        let fiber = FiberParams {
            alpha_db: 0.0,
            ..FiberParams::ssmf(50.0)
        };
        let out = ssfm_propagate(&w, &fiber, 0.5, 0).unwrap();
        assert!((out.mean_power() / w.mean_power() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn step_halving_converges() {
        let b = random_symbols(128, 8);
        let w = normalize_power(&rrc_shape(&b, 0.1, 4, 32e9).unwrap(), 10.0).unwrap();
        let fiber = FiberParams::ssmf(40.0);
        let reference = ssfm_propagate(&w, &fiber, 0.01, 0).unwrap();
        let mse = |step: f64| {
            let o = ssfm_propagate(&w, &fiber, step, 0).unwrap();
            rel_err(&o.pol1, &reference.pol1).powi(2)
        };
        let coarse = mse(0.8);
        let fine = mse(0.4);
        assert!(coarse / fine >= 3.0, "{coarse} / {fine}");
    }

    #[test]
    fn pmd_keeps_energy_and_is_deterministic() {
        let b = random_symbols(128, 9);
        let w = normalize_power(&rrc_shape(&b, 0.1, 4, 32e9).unwrap(), 1.0).unwrap();
        let fiber = FiberParams {
            alpha_db: 0.0,
            pmd: 0.04,
            ..FiberParams::ssmf(80.0)
        };
        let a = ssfm_propagate(&w, &fiber, 1.0, 11).unwrap();
        let c = ssfm_propagate(&w, &fiber, 1.0, 11).unwrap();
        assert_eq!(a, c);
        assert!((a.mean_power() / w.mean_power() - 1.0).abs() < 1e-9);
        let other = ssfm_propagate(&w, &fiber, 1.0, 12).unwrap();
        assert_ne!(a.pol1, other.pol1);
    }

    #[test]
    fn edfa_gain_only() {
        let b = random_symbols(32, 10);
        let w = rrc_shape(&b, 0.1, 2, 10e9).unwrap();
        assert_eq!(edfa(&w, 0.0, 5.0, false, 1550.0, 0).unwrap(), w);
        let g = edfa(&w, 16.0, 5.0, false, 1550.0, 0).unwrap();
        assert!((g.mean_power() / w.mean_power() / 10f64.powf(1.6) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn edfa_noise_power_matches_psd() {
        let n = 1_000_000;
        let fs = 13.75e9;
        let w = SampledWaveform {
            pol1: vec![Complex64::new(0.0, 0.0); n],
            pol2: vec![Complex64::new(0.0, 0.0); n],
            sample_rate: fs,
            center_freq_offset: 0.0,
            samples_per_symbol: 1,
        };
        let out = edfa(&w, 16.0, 5.0, true, 1550.0, 3).unwrap();
        let h = 6.626_070_15e-34;
        let nu = 299_792_458.0 / 1550e-9;
        let expected_mw = (10f64.powf(1.6) - 1.0) * (10f64.powf(0.5) / 2.0) * h * nu * fs * 1e3;
        for pol in [&out.pol1, &out.pol2] {
            let p = pol.iter().map(|x| x.norm_sqr()).sum::<f64>() / n as f64;
            assert!((p / expected_mw - 1.0).abs() < 0.02, "{p} vs {expected_mw}");
        }
    }

    #[test]
    fn grid_validation() {
        let g = GridPlan {
            n_wdm: 5,
            wdm_spacing: 55.0,
            n_subcarriers: 1,
            per_subcarrier_baud: 50.0,
            rolloff: 0.1,
            samples_per_symbol: 8,
        };
        assert!(g.validate().is_ok());
        assert_eq!(g.channel_offset(0), -110.0);
        assert!(GridPlan { samples_per_symbol: 4, ..g.clone() }.validate().is_err());
        let dmb = GridPlan {
            n_wdm: 1,
            wdm_spacing: 0.0,
            n_subcarriers: 8,
            per_subcarrier_baud: 13.75,
            rolloff: 0.1,
            samples_per_symbol: 10,
        };
        assert!((dmb.subcarrier_spacing() - 15.125).abs() < 1e-12);
        assert!(dmb.validate().is_ok());
    }
}
