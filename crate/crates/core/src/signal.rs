//! Shared signal containers, unit conventions and power normalization.
//!
//! Unit conventions used across the crate:
//!
//! | quantity            | unit          |
//! |---------------------|---------------|
//! | length              | km            |
//! | dispersion `D`      | ps/(nm·km)    |
//! | GVD `β2`            | ps²/km        |
//! | attenuation         | dB/km         |
//! | wavelength          | nm            |
//! | symbol / grid rates | GBaud / GHz at interfaces, Hz inside waveforms |
//! | power               | dBm at interfaces, mW inside waveforms |

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One complex baseband sample.
pub type ComplexSample = Complex64;

/// Speed of light, km/s. Numerically equal to the speed of light in nm/ps.
pub const SPEED_OF_LIGHT_KM_PER_S: f64 = 299_792.458;

/// Planck constant, J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;

/// dB/km to the power attenuation coefficient in 1/km.
pub fn alpha_per_km(alpha_db_per_km: f64) -> f64 {
    alpha_db_per_km * std::f64::consts::LN_10 / 10.0
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Group-velocity dispersion β2 in ps²/km from `D` in ps/(nm·km) and the
/// wavelength in nm: `β2 = −D·λ²/(2πc)`.
#[allow(non_snake_case)]
pub fn beta2_from_D(D: f64, lambda_nm: f64) -> f64 {
    -(D * lambda_nm * lambda_nm) / (2.0 * std::f64::consts::PI * SPEED_OF_LIGHT_KM_PER_S)
}

/// Spectral phase `D·λ²·π·f²·z/c` of a dispersive fiber of length `z_km`
/// at baseband frequency `freq_hz`.
pub fn dispersion_phase(d_ps_nm_km: f64, lambda_nm: f64, freq_hz: f64, z_km: f64) -> f64 {
    let f_thz = freq_hz * 1e-12;
    d_ps_nm_km * lambda_nm * lambda_nm * std::f64::consts::PI * f_thz * f_thz * z_km
        / SPEED_OF_LIGHT_KM_PER_S
}

/// A `2 × L_s` block of dual-polarization symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPolSymbolBlock {
    pub pol1: Vec<ComplexSample>,
    pub pol2: Vec<ComplexSample>,
}

impl DualPolSymbolBlock {
    pub fn new(pol1: Vec<ComplexSample>, pol2: Vec<ComplexSample>) -> Result<Self> {
        if pol1.len() != pol2.len() {
            return Err(Error::LengthMismatch {
                expected: pol1.len(),
                got: pol2.len(),
            });
        }
        if pol1.is_empty() {
            return Err(Error::BlockTooShort { len: 0, needed: 1 });
        }
        Ok(Self { pol1, pol2 })
    }

    /// Number of 4D symbols `L_s`.
    pub fn len(&self) -> usize {
        self.pol1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pol1.is_empty()
    }

    /// 4D energy `|pol1_k|² + |pol2_k|²` of symbol `k`.
    pub fn symbol_energy(&self, k: usize) -> f64 {
        self.pol1[k].norm_sqr() + self.pol2[k].norm_sqr()
    }

    pub fn symbol_energies(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.symbol_energy(k)).collect()
    }

    pub fn total_energy(&self) -> f64 {
        self.symbol_energies().iter().sum()
    }

    /// Appends another block along the time axis.
    pub fn extend(&mut self, other: &DualPolSymbolBlock) {
        self.pol1.extend_from_slice(&other.pol1);
        self.pol2.extend_from_slice(&other.pol2);
    }

    /// Concatenates blocks head to tail.
    pub fn concat<'a>(blocks: impl IntoIterator<Item = &'a DualPolSymbolBlock>) -> Self {
        let mut out = DualPolSymbolBlock {
            pol1: Vec::new(),
            pol2: Vec::new(),
        };
        for b in blocks {
            out.extend(b);
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            pol1: self.pol1.iter().map(|x| x * factor).collect(),
            pol2: self.pol2.iter().map(|x| x * factor).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pol1
            .iter()
            .chain(&self.pol2)
            .all(|x| x.re.is_finite() && x.im.is_finite())
    }
}

/// Multi-sample-per-symbol dual-polarization baseband waveform.
///
/// Sample values are field amplitudes in √mW, so `|pol1|² + |pol2|²` is the
/// instantaneous power in mW.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledWaveform {
    pub pol1: Vec<ComplexSample>,
    pub pol2: Vec<ComplexSample>,
    /// Hz.
    pub sample_rate: f64,
    /// Hz, relative to the reference wavelength.
    pub center_freq_offset: f64,
    pub samples_per_symbol: usize,
}

impl SampledWaveform {
    pub fn len(&self) -> usize {
        self.pol1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pol1.is_empty()
    }

    pub fn symbol_rate(&self) -> f64 {
        self.sample_rate / self.samples_per_symbol as f64
    }

    /// Mean power per sample summed over both polarizations, mW.
    pub fn mean_power(&self) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        let sum: f64 = self
            .pol1
            .iter()
            .chain(&self.pol2)
            .map(|x| x.norm_sqr())
            .sum();
        sum / n as f64
    }

    pub fn scale(&mut self, factor: f64) {
        self.pol1
            .iter_mut()
            .chain(self.pol2.iter_mut())
            .for_each(|x| *x *= factor);
    }
}

/// Rescales `w` by one positive real factor so its mean power equals
/// `target_mw`.
pub fn normalize_power(w: &SampledWaveform, target_mw: f64) -> Result<SampledWaveform> {
    if w.is_empty() {
        return Err(Error::InvalidParameter("empty waveform".into()));
    }
    if !(target_mw > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target power must be positive, got {target_mw}"
        )));
    }
    let p = w.mean_power();
    if p == 0.0 {
        return Err(Error::ZeroPower);
    }
    let mut out = w.clone();
    let ratio = target_mw / p;
    if ratio != 1.0 {
        out.scale(ratio.sqrt());
    }
    Ok(out)
}
