#![allow(dead_code)]

use dss_core::experiment::{DmSpec, EvaluationSpec, ExperimentConfig, LinkSpec, Scenario, ScheduleSpec, SelectorSpec};
use dss_core::channel::{FiberParams, GridPlan};
use dss_core::metrics::EdiWindow;
use dss_core::rx::RxChainConfig;
use dss_core::DualPolSymbolBlock;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Every length-`l` sequence over `alphabet` with energy at most `e_max`, in
/// lexicographic order of alphabet positions.
pub fn brute_force_codebook(l: usize, alphabet: &[u32], e_max: u64) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut idx = vec![0usize; l];
    loop {
        let seq: Vec<u32> = idx.iter().map(|&i| alphabet[i]).collect();
        if seq.iter().map(|&a| u64::from(a * a)).sum::<u64>() <= e_max {
            out.push(seq);
        }
        let mut pos = l;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < alphabet.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Expected per-dimension GMI of uniform `2m`-PAM with Gray labels in real
/// Gaussian noise of variance `s`, by trapezoidal integration over the
/// noise density. Labels are (sign, gray(amplitude index)).
pub fn pam_bmd_gmi_quadrature(levels: u32, s: f64) -> f64 {
    let amps: Vec<f64> = (0..levels).map(|i| f64::from(2 * i + 1)).collect();
    let amp_bits = levels.trailing_zeros();
    let mut pts = Vec::new();
    for (i, &a) in amps.iter().enumerate() {
        let g = (i ^ (i >> 1)) as u32;
        pts.push((a, g));
        pts.push((-a, (1 << amp_bits) | g));
    }
    let m = pts.len() as f64;
    let bits = amp_bits + 1;
    let sigma = s.sqrt();
    let n_grid = 4001;
    let span = 12.0 * sigma;
    let dz = 2.0 * span / (n_grid - 1) as f64;
    let mut expected_loss = 0.0;
    for &(x, label) in &pts {
        let mut acc = 0.0;
        for g in 0..n_grid {
            let z = -span + g as f64 * dz;
            let w = if g == 0 || g == n_grid - 1 { 0.5 } else { 1.0 };
            let pdf = (-z * z / (2.0 * s)).exp() / (2.0 * std::f64::consts::PI * s).sqrt();
            let y = x + z;
            let q = |p: f64| (-(y - p) * (y - p) / (2.0 * s)).exp();
            let all: f64 = pts.iter().map(|&(p, _)| q(p)).sum();
            let mut loss = 0.0;
            for b in 0..bits {
                let bit = (label >> b) & 1;
                let same: f64 = pts.iter().filter(|(_, l)| (l >> b) & 1 == bit).map(|&(p, _)| q(p)).sum();
                loss += (all / same).log2();
            }
            acc += w * pdf * loss * dz;
        }
        expected_loss += acc / m;
    }
    f64::from(bits) - expected_loss
}

pub fn qam_block(len: usize, levels: u32, seed: u64) -> DualPolSymbolBlock {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = || (2 * rng.random_range(0..2 * levels) as i64 - (2 * levels as i64 - 1)) as f64;
    let pol1 = (0..len).map(|_| Complex64::new(pick(), pick())).collect();
    let pol2 = (0..len).map(|_| Complex64::new(pick(), pick())).collect();
    DualPolSymbolBlock::new(pol1, pol2).unwrap()
}

/// Adds circular Gaussian noise of total complex variance `var` per
/// polarization sample.
pub fn add_awgn(x: &DualPolSymbolBlock, var: f64, seed: u64) -> DualPolSymbolBlock {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = (var / 2.0).sqrt();
    let mut n = || {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        Complex64::new(a * s, b * s)
    };
    DualPolSymbolBlock::new(x.pol1.iter().map(|v| v + n()).collect(), x.pol2.iter().map(|v| v + n()).collect()).unwrap()
}

/// Small single-span configuration that simulates in well under a second.
pub fn tiny_single_span() -> ExperimentConfig {
    ExperimentConfig {
        scenario: Scenario::SingleSpan,
        grid: GridPlan {
            n_wdm: 1,
            wdm_spacing: 55.0,
            n_subcarriers: 1,
            per_subcarrier_baud: 50.0,
            rolloff: 0.1,
            samples_per_symbol: 2,
        },
        link: LinkSpec::Uniform {
            n_spans: 1,
            fiber: FiberParams::ssmf(100.0),
            noise_figure_db: 5.0,
            ase_on: true,
        },
        dm: DmSpec {
            l: 16,
            n: 2,
            nu: 2,
            alphabet: vec![1, 3, 5, 7],
            amplitude_bits: 1.5,
            e_max: None,
        },
        selector: SelectorSpec::DEdi {
            w: EdiWindow::new(2).unwrap(),
            schedule: ScheduleSpec::EffectiveLength,
        },
        subsample_size: None,
        launch_power_dbm: 6.0,
        sweep: None,
        n_blocks: None,
        min_symbols: 512,
        repetitions: 1,
        seed: 11,
        step_km: 2.0,
        rx: RxChainConfig::default(),
        evaluation: EvaluationSpec::default(),
        sign_info_fraction: 5.0 / 6.0,
    }
}

/// Small multi-span configuration with a coarse step.
pub fn tiny_multi_span() -> ExperimentConfig {
    let mut c = tiny_single_span();
    c.scenario = Scenario::MultiSpan;
    c.grid.per_subcarrier_baud = 13.75;
    c.link = LinkSpec::Uniform {
        n_spans: 30,
        fiber: FiberParams::ssmf(80.0),
        noise_figure_db: 5.0,
        ase_on: true,
    };
    c.dm.l = 16;
    c.dm.n = 4;
    c.dm.nu = 1;
    c.selector = SelectorSpec::DEdi {
        w: EdiWindow::new(2).unwrap(),
        schedule: ScheduleSpec::Contiguous { m_d: 29 },
    };
    c.launch_power_dbm = -3.0;
    c.step_km = 10.0;
    c
}
