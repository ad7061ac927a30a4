//! Energy dispersion index (EDI) and its dispersion-aware average (D-EDI).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fft;
use crate::signal::{alpha_per_km, beta2_from_D, dispersion_phase, DualPolSymbolBlock};
use num_complex::Complex64;

/// Even EDI window length `w ≥ 2`; a window spans `w + 1` symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct EdiWindow(usize);

impl EdiWindow {
    pub fn new(w: usize) -> Result<Self> {
        if w < 2 || !w.is_multiple_of(2) {
            return Err(invalid(format!("EDI window must be even and >= 2, got {w}")));
        }
        Ok(Self(w))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for EdiWindow {
    type Error = Error;
    fn try_from(w: usize) -> Result<Self> {
        Self::new(w)
    }
}

impl From<EdiWindow> for usize {
    fn from(w: EdiWindow) -> usize {
        w.0
    }
}

/// Points along an ideal lossless dispersive fiber at which the EDI is
/// evaluated: `z = N · step_km` for every `N` in `span_indices`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionSchedule {
    /// ps/(nm·km)
    pub dispersion: f64,
    pub lambda_nm: f64,
    pub step_km: f64,
    pub symbol_rate_gbaud: f64,
    span_indices: Vec<u32>,
}

impl DispersionSchedule {
    /// Indices are sorted; duplicates and empty sets are rejected.
    pub fn new(dispersion: f64, lambda_nm: f64, step_km: f64, symbol_rate_gbaud: f64, mut span_indices: Vec<u32>) -> Result<Self> {
        if span_indices.is_empty() {
            return Err(invalid("dispersion schedule needs at least one index"));
        }
        span_indices.sort_unstable();
        if span_indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("dispersion schedule indices must be distinct"));
        }
        if !(symbol_rate_gbaud > 0.0) {
            return Err(invalid("symbol rate must be positive"));
        }
        Ok(Self {
            dispersion,
            lambda_nm,
            step_km,
            symbol_rate_gbaud,
            span_indices,
        })
    }

    /// `{0, 1, ..., m_D}`.
    pub fn contiguous(dispersion: f64, lambda_nm: f64, step_km: f64, symbol_rate_gbaud: f64, m_d: u32) -> Result<Self> {
        Self::new(dispersion, lambda_nm, step_km, symbol_rate_gbaud, (0..=m_d).collect())
    }

    pub fn span_indices(&self) -> &[u32] {
        &self.span_indices
    }

    pub fn distances_km(&self) -> impl Iterator<Item = f64> + '_ {
        self.span_indices.iter().map(|&n| f64::from(n) * self.step_km)
    }
}

/// Span subsets used when only `N_D` EDI evaluations are affordable on a
/// 30-span link.
pub fn reduced_span_indices(n_d: u32) -> Option<Vec<u32>> {
    let range = |start: u32, step: u32, end: u32| (start..=end).step_by(step as usize);
    let set: Vec<u32> = match n_d {
        3 => vec![0, 1, 29],
        5 => [0, 1].into_iter().chain(range(9, 10, 29)).collect(),
        8 => [0, 1].into_iter().chain(range(4, 5, 29)).collect(),
        // 12 indices: the documented 2:3:29 stride yields ten points.
        11 => [0, 1].into_iter().chain(range(2, 3, 29)).collect(),
        16 => [0].into_iter().chain(range(1, 2, 29)).collect(),
        30 => (0..30).collect(),
        _ => return None,
    };
    Some(set)
}

/// Sums of `w + 1` consecutive 4D energies centered on each symbol that has
/// a full window; length `L_s − w`.
pub fn windowed_energies(x: &DualPolSymbolBlock, w: EdiWindow) -> Result<Vec<f64>> {
    let w = w.get();
    let n = x.len();
    if n < w + 2 {
        return Err(Error::BlockTooShort { len: n, needed: w + 2 });
    }
    let energies = x.symbol_energies();
    Ok(energies.windows(w + 1).map(|win| win.iter().sum()).collect())
}

/// `Var[G^w] / E[G^w]` with the population variance.
pub fn edi(x: &DualPolSymbolBlock, w: EdiWindow) -> Result<f64> {
    let g = windowed_energies(x, w)?;
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    if !(mean > 0.0) {
        return Err(Error::ZeroMeanEnergy);
    }
    let var = g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var / mean)
}

/// Applies the all-pass chromatic-dispersion filter of a `z_km` fiber to
/// both polarizations at one sample per symbol (circular, FFT length `L_s`).
pub fn apply_dispersion(x: &DualPolSymbolBlock, dispersion: f64, lambda_nm: f64, z_km: f64, symbol_rate_gbaud: f64) -> DualPolSymbolBlock {
    if z_km == 0.0 || dispersion == 0.0 {
        return x.clone();
    }
    let fs = symbol_rate_gbaud * 1e9;
    let response = |f: f64| Complex64::from_polar(1.0, dispersion_phase(dispersion, lambda_nm, f, z_km));
    let mut out = x.clone();
    fft::filter_in_place(&mut out.pol1, fs, response);
    fft::filter_in_place(&mut out.pol2, fs, response);
    out
}

/// Mean EDI over the dispersed copies of `x` listed by `schedule`.
pub fn d_edi(x: &DualPolSymbolBlock, w: EdiWindow, schedule: &DispersionSchedule) -> Result<f64> {
    let mut sum = 0.0;
    for z in schedule.distances_km() {
        let dispersed = apply_dispersion(x, schedule.dispersion, schedule.lambda_nm, z, schedule.symbol_rate_gbaud);
        sum += edi(&dispersed, w)?;
    }
    Ok(sum / schedule.span_indices.len() as f64)
}

/// `(1 − e^(−αL))/α` in km, with `α` from dB/km.
pub fn effective_length(alpha_db_per_km: f64, length_km: f64) -> f64 {
    let a = alpha_per_km(alpha_db_per_km);
    if a == 0.0 {
        return length_km;
    }
    -(-a * length_km).exp_m1() / a
}

/// Single-span D-EDI: the mean of the EDI at the transmitter and after an
/// ideal dispersive fiber of one effective length.
pub fn d_edi_single_span(
    x: &DualPolSymbolBlock,
    w: EdiWindow,
    dispersion: f64,
    lambda_nm: f64,
    alpha_db_per_km: f64,
    length_km: f64,
    symbol_rate_gbaud: f64,
) -> Result<f64> {
    if !(alpha_db_per_km > 0.0) {
        return Err(invalid("attenuation must be positive"));
    }
    let schedule = single_span_schedule(dispersion, lambda_nm, alpha_db_per_km, length_km, symbol_rate_gbaud)?;
    d_edi(x, w, &schedule)
}

/// The `{0, L_eff}` schedule used by [`d_edi_single_span`].
pub fn single_span_schedule(dispersion: f64, lambda_nm: f64, alpha_db_per_km: f64, length_km: f64, symbol_rate_gbaud: f64) -> Result<DispersionSchedule> {
    DispersionSchedule::new(
        dispersion,
        lambda_nm,
        effective_length(alpha_db_per_km, length_km),
        symbol_rate_gbaud,
        vec![0, 1],
    )
}

/// Two-sided channel memory `2M = 2·round(π·|β2|·B·R_s·L)` in symbols, with
/// `B` in GHz, `R_s` in GBaud and `L` in km.
pub fn channel_memory(dispersion: f64, lambda_nm: f64, spacing_ghz: f64, symbol_rate_gbaud: f64, length_km: f64) -> u64 {
    let beta2 = beta2_from_D(dispersion, lambda_nm).abs();
    // ps²/km · (1/ps) · (1/ps) · km
    let m = std::f64::consts::PI * beta2 * (spacing_ghz * 1e-3) * (symbol_rate_gbaud * 1e-3) * length_km;
    2 * m.round() as u64
}
