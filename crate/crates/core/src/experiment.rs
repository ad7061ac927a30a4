//! Configuration-driven experiment runner and CSV output.
//!
//! One experiment is a list of sweep points. Each point runs `repetitions`
//! independent realizations of the pipeline
//! frame → candidates → select → map → shape → mux → propagate → rx → metrics
//! and yields one [`ResultRow`] per realization.
//!
//! Payload bits, parity stubs and noise depend only on the master seed and
//! the repetition index, so different sweep points see common random numbers.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{frequency_mux, propagate_link, rrc_shape, substream_seed, FiberParams, GridPlan, LinkPlan, Span};
use crate::error::{Error, Result};
use crate::ess::{empirical_amplitude_distribution, EnergyTrellis, PamAlphabet};
use crate::metrics::{d_edi, edi, reduced_span_indices, single_span_schedule, DispersionSchedule, EdiWindow};
use crate::pas::{rate_loss, sign_bit_source, sign_info_len, DmChainConfig, DEFAULT_SIGN_INFO_FRACTION};
use crate::rx::{cdc_waveform, equalize_and_recover, extract_and_match, gmi_bmd_with_error, snr_elec_with_error, PamPrior, RxChainConfig};
use crate::select::{enumerate_candidates, n_s_108, select_min, NliOracleConfig, SelectorKind};
use crate::signal::{dbm_to_mw, normalize_power, DualPolSymbolBlock};

fn config_err(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SingleSpan,
    MultiSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinkSpec {
    /// Identical spans with loss-compensating amplifiers.
    Uniform {
        n_spans: usize,
        fiber: FiberParams,
        noise_figure_db: f64,
        ase_on: bool,
    },
    Spans {
        spans: Vec<Span>,
    },
}

impl LinkSpec {
    pub fn resolve(&self) -> LinkPlan {
        match self {
            LinkSpec::Uniform {
                n_spans,
                fiber,
                noise_figure_db,
                ase_on,
            } => LinkPlan::transparent(*n_spans, *fiber, *noise_figure_db, *ase_on),
            LinkSpec::Spans { spans } => LinkPlan { spans: spans.clone() },
        }
    }
}

fn default_alphabet() -> Vec<u32> {
    vec![1, 3, 5, 7]
}

fn default_amplitude_bits() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmSpec {
    /// Amplitudes per matcher.
    pub l: usize,
    /// Matchers per selection block.
    pub n: usize,
    /// Flipping bits per matcher.
    pub nu: u32,
    #[serde(default = "default_alphabet")]
    pub alphabet: Vec<u32>,
    /// Net payload bits per amplitude; the matcher input is
    /// `round(amplitude_bits·l) + ν` bits.
    #[serde(default = "default_amplitude_bits")]
    pub amplitude_bits: f64,
    /// Energy bound; when absent, the smallest bound reaching the input
    /// length is used.
    #[serde(default)]
    pub e_max: Option<u64>,
}

impl DmSpec {
    pub fn target_bits(&self) -> u64 {
        (self.amplitude_bits * self.l as f64).round() as u64 + u64::from(self.nu)
    }

    /// 4D symbols per selection block.
    pub fn sequence_length(&self) -> usize {
        self.l * self.n / 4
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// Launch point plus one effective length of the first span.
    EffectiveLength,
    /// Inputs of spans `0..=m_d`.
    Contiguous { m_d: u32 },
    /// Reduced span subset with `n_d` evaluations.
    Reduced { n_d: u32 },
    Explicit { indices: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SelectorSpec {
    Edi {
        w: EdiWindow,
    },
    DEdi {
        w: EdiWindow,
        schedule: ScheduleSpec,
    },
    /// Split-step oracle on each candidate, launched at the point's power
    /// per subcarrier over the configured link without ASE.
    SsfmNli {
        step_km: f64,
        samples_per_symbol: usize,
    },
}

impl SelectorSpec {
    fn name(&self) -> &'static str {
        match self {
            SelectorSpec::Edi { .. } => "edi",
            SelectorSpec::DEdi { .. } => "d_edi",
            SelectorSpec::SsfmNli { .. } => "ssfm_nli",
        }
    }

    fn window(&self) -> Option<usize> {
        match self {
            SelectorSpec::Edi { w } | SelectorSpec::DEdi { w, .. } => Some(w.get()),
            SelectorSpec::SsfmNli { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    PowerDbm,
    W,
    Nu,
    N,
    MD,
    ND,
    BlockLength,
    SequenceLength,
    SubsampleSize,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::PowerDbm => "power_dbm",
            SweepVar::W => "w",
            SweepVar::Nu => "nu",
            SweepVar::N => "n",
            SweepVar::MD => "m_d",
            SweepVar::ND => "n_d",
            SweepVar::BlockLength => "block_length",
            SweepVar::SequenceLength => "sequence_length",
            SweepVar::SubsampleSize => "subsample_size",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| config_err(format!("unknown sweep variable '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVar,
    pub values: Vec<f64>,
}

fn default_edi_w() -> usize {
    40
}

fn default_d_edi_w() -> usize {
    2
}

/// Metrics reported for the transmitted sequences, independent of the
/// selector in use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSpec {
    /// EDI window; reduced to the largest valid window for short blocks.
    #[serde(default = "default_edi_w")]
    pub edi_w: usize,
    /// D-EDI window, evaluated over the whole link.
    #[serde(default = "default_d_edi_w")]
    pub d_edi_w: usize,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self {
            edi_w: default_edi_w(),
            d_edi_w: default_d_edi_w(),
        }
    }
}

fn one() -> usize {
    1
}

fn default_min_symbols() -> usize {
    1 << 14
}

fn default_sign_fraction() -> f64 {
    DEFAULT_SIGN_INFO_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub grid: GridPlan,
    pub link: LinkSpec,
    pub dm: DmSpec,
    pub selector: SelectorSpec,
    #[serde(default)]
    pub subsample_size: Option<usize>,
    /// Per wavelength channel, split evenly across subcarriers.
    pub launch_power_dbm: f64,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    /// Selection blocks per realization; when absent, enough blocks for
    /// `min_symbols` 4D symbols per subcarrier.
    #[serde(default)]
    pub n_blocks: Option<usize>,
    #[serde(default = "default_min_symbols")]
    pub min_symbols: usize,
    #[serde(default = "one")]
    pub repetitions: usize,
    pub seed: u64,
    /// Split-step size of the link simulation, km.
    pub step_km: f64,
    #[serde(default)]
    pub rx: RxChainConfig,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    /// Share of sign bits carrying payload; the rest are parity stubs.
    #[serde(default = "default_sign_fraction")]
    pub sign_info_fraction: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn blocks_per_realization(&self) -> usize {
        self.n_blocks.unwrap_or_else(|| self.min_symbols.div_ceil(self.dm.sequence_length().max(1)))
    }

    /// Copy with the sweep variable set to `value`.
    pub fn with_sweep_value(&self, var: SweepVar, value: f64) -> Result<Self> {
        let mut c = self.clone();
        let int = || -> Result<usize> {
            if value.fract() != 0.0 || value < 0.0 || !value.is_finite() {
                return Err(config_err(format!("{} needs a non-negative integer, got {value}", var.name())));
            }
            Ok(value as usize)
        };
        match var {
            SweepVar::PowerDbm => c.launch_power_dbm = value,
            SweepVar::W => {
                let w = EdiWindow::new(int()?)?;
                match &mut c.selector {
                    SelectorSpec::Edi { w: cur } | SelectorSpec::DEdi { w: cur, .. } => *cur = w,
                    SelectorSpec::SsfmNli { .. } => return Err(config_err("the SSFM selector has no window")),
                }
            }
            SweepVar::Nu => {
                c.dm.nu = int()? as u32;
                c.dm.e_max = None;
            }
            SweepVar::N => {
                c.dm.n = int()?;
                c.dm.e_max = None;
            }
            SweepVar::BlockLength => {
                c.dm.l = int()?;
                c.dm.e_max = None;
            }
            SweepVar::SequenceLength => {
                let s = int()?;
                if c.dm.l == 0 || (4 * s) % c.dm.l != 0 {
                    return Err(config_err(format!("sequence length {s} is not a whole number of matchers of {}", c.dm.l)));
                }
                c.dm.n = 4 * s / c.dm.l;
                c.dm.e_max = None;
            }
            SweepVar::MD | SweepVar::ND => {
                let v = int()? as u32;
                let spec = if var == SweepVar::MD { ScheduleSpec::Contiguous { m_d: v } } else { ScheduleSpec::Reduced { n_d: v } };
                match &mut c.selector {
                    SelectorSpec::DEdi { schedule, .. } => *schedule = spec,
                    _ => return Err(config_err(format!("{} applies to the D-EDI selector only", var.name()))),
                }
            }
            SweepVar::SubsampleSize => c.subsample_size = Some(int()?),
        }
        c.sweep = None;
        Ok(c)
    }

    /// The single-point configurations of the sweep, in order.
    pub fn points(&self) -> Result<Vec<(Option<f64>, ExperimentConfig)>> {
        match &self.sweep {
            None => {
                let mut c = self.clone();
                c.sweep = None;
                Ok(vec![(None, c)])
            }
            Some(s) => {
                if s.values.is_empty() {
                    return Err(config_err("sweep has no values"));
                }
                s.values.iter().map(|&v| Ok((Some(v), self.with_sweep_value(s.variable, v)?))).collect()
            }
        }
    }

    /// Copy with every matcher energy bound filled in.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        if c.dm.e_max.is_none() {
            let alphabet = PamAlphabet::new(c.dm.alphabet.clone())?;
            c.dm.e_max = Some(EnergyTrellis::smallest_e_max(c.dm.l, &alphabet, c.dm.target_bits())?);
        }
        Ok(c)
    }

    /// Checks every sweep point without simulating.
    pub fn validate(&self) -> Result<()> {
        prepare(self, false).map(|_| ())
    }
}

/// One output row per (sweep point, repetition).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub point: usize,
    pub repetition: usize,
    pub sweep_variable: Option<&'static str>,
    pub sweep_value: Option<f64>,
    pub scenario: Scenario,
    pub launch_power_dbm: f64,
    pub l: usize,
    pub n: usize,
    pub nu: u32,
    pub e_max: u64,
    pub k: u64,
    pub selector: &'static str,
    pub w: Option<usize>,
    pub schedule: Option<String>,
    pub subsample_size: Option<usize>,
    /// 0 when no selection takes place.
    pub candidates_per_block: u64,
    pub log2_ns108: Option<f64>,
    pub n_symbols: usize,
    pub step_km: f64,
    pub snr_elec_db: f64,
    pub snr_stderr_db: f64,
    pub gmi_bits_per_4d: f64,
    pub gmi_stderr: f64,
    /// Of the matcher without selection.
    pub rate_loss_bits_per_4d: f64,
    /// GMI minus the rate loss of the amplitudes actually sent.
    pub air_bits_per_4d: f64,
    pub mean_metric_of_winner: f64,
    pub eval_edi_w: usize,
    pub eval_edi: f64,
    pub eval_d_edi: f64,
    pub wall_time_s: f64,
}

struct Point {
    index: usize,
    value: Option<f64>,
    cfg: ExperimentConfig,
    chain: DmChainConfig,
    link: LinkPlan,
    selector: SelectorKind,
    eval_edi_w: EdiWindow,
    eval_d_edi: (EdiWindow, DispersionSchedule),
    rate_loss_4d: f64,
}

fn first_fiber(link: &LinkPlan) -> Result<&FiberParams> {
    link.spans.first().map(|s| &s.fiber).ok_or_else(|| config_err("link has no spans"))
}

fn schedule_for(spec: &ScheduleSpec, link: &LinkPlan, baud: f64) -> Result<DispersionSchedule> {
    let f = first_fiber(link)?;
    let n_spans = link.spans.len() as u32;
    let indices = match spec {
        ScheduleSpec::EffectiveLength => return single_span_schedule(f.dispersion, f.lambda_nm, f.alpha_db, f.length, baud),
        ScheduleSpec::Contiguous { m_d } => (0..=*m_d).collect(),
        ScheduleSpec::Reduced { n_d } => reduced_span_indices(*n_d).ok_or_else(|| config_err(format!("no reduced schedule for N_D = {n_d}")))?,
        ScheduleSpec::Explicit { indices } => indices.clone(),
    };
    if let Some(&bad) = indices.iter().find(|&&i| i >= n_spans) {
        return Err(config_err(format!("schedule index {bad} beyond the {n_spans}-span link")));
    }
    DispersionSchedule::new(f.dispersion, f.lambda_nm, f.length, baud, indices)
}

/// Schedule covering the whole link: one effective length for a single
/// span, every span input otherwise.
fn full_schedule(link: &LinkPlan, baud: f64) -> Result<DispersionSchedule> {
    let spec = if link.spans.len() == 1 {
        ScheduleSpec::EffectiveLength
    } else {
        ScheduleSpec::Contiguous {
            m_d: link.spans.len() as u32 - 1,
        }
    };
    schedule_for(&spec, link, baud)
}

fn largest_window(limit: usize, len: usize) -> Result<EdiWindow> {
    let cap = len.saturating_sub(2);
    let w = limit.min(cap) & !1;
    EdiWindow::new(w).map_err(|_| config_err(format!("blocks of {len} symbols are too short for any EDI window")))
}

type TrellisCache = HashMap<(usize, Vec<u32>, u64), (Arc<EnergyTrellis>, HashMap<u32, f64>)>;

fn prepare_point(index: usize, value: Option<f64>, cfg: ExperimentConfig, cache: &mut TrellisCache, with_rate_loss: bool) -> Result<Point> {
    let cfg = cfg.resolved()?;
    cfg.grid.validate()?;
    cfg.rx.validate()?;
    if !(cfg.step_km > 0.0) {
        return Err(config_err("step_km must be positive"));
    }
    if cfg.repetitions == 0 || cfg.blocks_per_realization() == 0 {
        return Err(config_err("need at least one repetition and one block"));
    }
    if !(0.0..=1.0).contains(&cfg.sign_info_fraction) {
        return Err(config_err("sign_info_fraction must lie in [0, 1]"));
    }
    if !cfg.launch_power_dbm.is_finite() {
        return Err(config_err("launch power must be finite"));
    }
    let link = cfg.link.resolve();
    if link.spans.is_empty() {
        return Err(config_err("link has no spans"));
    }
    for s in &link.spans {
        s.fiber.validate()?;
    }
    let f0 = first_fiber(&link)?;
    if link.spans.iter().any(|s| s.fiber.dispersion != f0.dispersion || s.fiber.lambda_nm != f0.lambda_nm) {
        return Err(config_err("dispersion compensation needs identical dispersion on every span"));
    }
    match (cfg.scenario, link.spans.len()) {
        (Scenario::SingleSpan, 1) | (Scenario::MultiSpan, 2..) => {}
        (s, n) => return Err(config_err(format!("scenario {s:?} does not match a {n}-span link"))),
    }

    let e_max = cfg.dm.e_max.expect("resolved");
    let key = (cfg.dm.l, cfg.dm.alphabet.clone(), e_max);
    if !cache.contains_key(&key) {
        let alphabet = PamAlphabet::new(cfg.dm.alphabet.clone())?;
        if !alphabet.len().is_power_of_two() {
            return Err(config_err("the bit labeling needs a power-of-two alphabet"));
        }
        let trellis = Arc::new(EnergyTrellis::build(cfg.dm.l, alphabet, e_max)?);
        cache.insert(key.clone(), (trellis, HashMap::new()));
    }
    let (trellis, losses) = cache.get_mut(&key).expect("inserted");
    let chain = DmChainConfig::new(cfg.dm.n, cfg.dm.nu, trellis.clone())?;
    if chain.info_bits_per_dm() as u64 + u64::from(cfg.dm.nu) != trellis.bits() || trellis.bits() < cfg.dm.target_bits() {
        return Err(config_err(format!(
            "E_max = {e_max} gives {} input bits, the rate needs {}",
            trellis.bits(),
            cfg.dm.target_bits()
        )));
    }
    let rl = match losses.get(&cfg.dm.nu) {
        Some(&v) => v,
        None if !with_rate_loss => f64::NAN,
        None => {
            let v = rate_loss(trellis, cfg.dm.nu)?;
            losses.insert(cfg.dm.nu, v);
            v
        }
    };
    if let Some(s) = cfg.subsample_size {
        if s == 0 || s as u64 > chain.candidate_count() {
            return Err(config_err(format!("subsample size {s} outside [1, {}]", chain.candidate_count())));
        }
    }

    let len = chain.symbols_per_block();
    let baud = cfg.grid.per_subcarrier_baud;
    let selector = match &cfg.selector {
        SelectorSpec::Edi { w } => SelectorKind::Edi { w: *w },
        SelectorSpec::DEdi { w, schedule } => SelectorKind::DEdi {
            w: *w,
            schedule: schedule_for(schedule, &link, baud)?,
        },
        SelectorSpec::SsfmNli { step_km, samples_per_symbol } => {
            if !(*step_km > 0.0) || *samples_per_symbol < 2 {
                return Err(config_err("SSFM selector needs a positive step and at least 2 samples per symbol"));
            }
            SelectorKind::SsfmNli {
                oracle: NliOracleConfig {
                    link: link.with_overrides(false, None),
                    launch_power_dbm: cfg.launch_power_dbm - 10.0 * (cfg.grid.n_subcarriers as f64).log10(),
                    reference_energy: mean_symbol_energy(&chain.trellis),
                    symbol_rate_gbaud: baud,
                    rolloff: cfg.grid.rolloff,
                    samples_per_symbol: *samples_per_symbol,
                    step_km: *step_km,
                    seed: substream_seed(cfg.seed, 3),
                },
            }
        }
    };
    if let Some(w) = cfg.selector.window() {
        if w + 2 > len {
            return Err(config_err(format!("window {w} needs blocks longer than {len} symbols")));
        }
    }
    let eval_edi_w = largest_window(cfg.evaluation.edi_w, len)?;
    let eval_d_edi = (
        EdiWindow::new(cfg.evaluation.d_edi_w).map_err(|e| config_err(e.to_string()))?,
        full_schedule(&link, baud)?,
    );
    if cfg.evaluation.d_edi_w + 2 > len {
        return Err(config_err("evaluation D-EDI window too long for the block"));
    }
    Ok(Point {
        index,
        value,
        cfg,
        chain,
        link,
        selector,
        eval_edi_w,
        eval_d_edi,
        rate_loss_4d: 4.0 * rl,
    })
}

/// Mean 4D energy of matcher output without selection.
fn mean_symbol_energy(trellis: &EnergyTrellis) -> f64 {
    let p = empirical_amplitude_distribution(trellis, 1 << 14, 0);
    4.0 * trellis.alphabet().energies().iter().zip(&p).map(|(&e, q)| e as f64 * q).sum::<f64>()
}

fn prepare(cfg: &ExperimentConfig, with_rate_loss: bool) -> Result<Vec<Point>> {
    let mut cache = TrellisCache::new();
    cfg.points()?
        .into_iter()
        .enumerate()
        .map(|(i, (v, c))| prepare_point(i, v, c, &mut cache, with_rate_loss))
        .collect()
}

/// Transmitted symbols of one subcarrier and statistics of its selection.
struct Stream {
    block: DualPolSymbolBlock,
    metric_sum: f64,
    edi_sum: f64,
    d_edi_sum: f64,
    blocks: usize,
}

fn random_bits(rng: &mut ChaCha20Rng, len: usize) -> Vec<u8> {
    (0..len).map(|_| u8::from(rng.random::<bool>())).collect()
}

fn flip_bits(flips: &[u64], nu: u32) -> impl Iterator<Item = u8> + '_ {
    flips.iter().flat_map(move |&f| (0..nu).rev().map(move |b| ((f >> b) & 1) as u8))
}

fn transmit_stream(p: &Point, rep_seed: u64, stream: u64) -> Result<Stream> {
    let chain = &p.chain;
    let stream_seed = substream_seed(rep_seed, 100 + stream);
    let mut rng = ChaCha20Rng::seed_from_u64(stream_seed);
    let parity_seed = substream_seed(rep_seed, 7);
    let n_signs = chain.amplitudes_per_block();
    let s_len = sign_info_len(n_signs, p.cfg.sign_info_fraction);
    let selecting = chain.nu > 0;
    let mut prev: Vec<u8> = Vec::new();
    let mut out: Option<DualPolSymbolBlock> = None;
    let (mut metric_sum, mut edi_sum, mut d_edi_sum) = (0.0, 0.0, 0.0);
    let n_blocks = p.cfg.blocks_per_realization();
    for b in 0..n_blocks {
        let info: Vec<Vec<u8>> = (0..chain.n).map(|_| random_bits(&mut rng, chain.info_bits_per_dm())).collect();
        let s_bits = random_bits(&mut rng, s_len);
        let signs = sign_bit_source(&prev, &s_bits, n_signs, parity_seed)?;
        let subsample = p.cfg.subsample_size.map(|s| (s, substream_seed(stream_seed, b as u64)));
        let set = enumerate_candidates(&info, chain, &signs, if selecting { subsample } else { None })?;
        let (winner, metric) = if selecting {
            let (w, m) = select_min(&set, &p.selector)?;
            (w, m[w])
        } else {
            (0, p.selector.metric(&set.candidates[0].block)?)
        };
        let chosen = &set.candidates[winner];
        metric_sum += metric;
        edi_sum += edi(&chosen.block, p.eval_edi_w)?;
        d_edi_sum += d_edi(&chosen.block, p.eval_d_edi.0, &p.eval_d_edi.1)?;
        prev = info.iter().flatten().copied().chain(flip_bits(&chosen.flip_values, chain.nu)).chain(signs.iter().copied()).collect();
        match &mut out {
            Some(o) => o.extend(&chosen.block),
            None => out = Some(chosen.block.clone()),
        }
    }
    Ok(Stream {
        block: out.expect("at least one block"),
        metric_sum,
        edi_sum,
        d_edi_sum,
        blocks: n_blocks,
    })
}

fn simulate(p: &Point, repetition: usize) -> Result<ResultRow> {
    let start = Instant::now();
    let cfg = &p.cfg;
    let grid = &cfg.grid;
    let rep_seed = substream_seed(cfg.seed, repetition as u64);
    let n_streams = grid.n_wdm * grid.n_subcarriers;
    let streams = (0..n_streams)
        .into_par_iter()
        .map(|i| transmit_stream(p, rep_seed, i as u64))
        .collect::<Result<Vec<_>>>()?;

    let baud_hz = grid.per_subcarrier_baud * 1e9;
    let p_sub = dbm_to_mw(cfg.launch_power_dbm) / grid.n_subcarriers as f64;
    let mut offsets = Vec::with_capacity(n_streams);
    let waves = streams
        .par_iter()
        .map(|s| {
            let w = rrc_shape(&s.block, grid.rolloff, grid.samples_per_symbol, baud_hz)?;
            normalize_power(&w, p_sub)
        })
        .collect::<Result<Vec<_>>>()?;
    for c in 0..grid.n_wdm {
        for s in 0..grid.n_subcarriers {
            offsets.push(grid.channel_offset(c) + grid.subcarrier_offset(s));
        }
    }
    let tx_wave = frequency_mux(&waves, &offsets, grid.rolloff)?;
    drop(waves);
    let rx_wave = propagate_link(&tx_wave, &p.link, cfg.step_km, substream_seed(rep_seed, 1))?;
    drop(tx_wave);
    let f0 = first_fiber(&p.link)?;
    let rx_wave = cdc_waveform(&rx_wave, f0.dispersion, f0.lambda_nm, p.link.total_length());

    let central = grid.central_channel();
    let measured: Vec<usize> = (0..grid.n_subcarriers).map(|s| central * grid.n_subcarriers + s).collect();
    let recovered = measured
        .par_iter()
        .map(|&i| {
            let rx = extract_and_match(&rx_wave, offsets[i], grid.per_subcarrier_baud, grid.rolloff)?;
            equalize_and_recover(&rx, &streams[i].block, &cfg.rx)
        })
        .collect::<Result<Vec<_>>>()?;
    let rx = DualPolSymbolBlock::concat(&recovered);
    let tx = DualPolSymbolBlock::concat(measured.iter().map(|&i| &streams[i].block));

    let (snr, snr_err) = snr_elec_with_error(&rx, &tx)?;
    let prior = PamPrior::empirical(&cfg.dm.alphabet, &tx)?;
    let (gmi, gmi_err) = gmi_bmd_with_error(&rx, &tx, &prior)?;
    let k = p.chain.trellis.bits();
    let net_amp = (k - u64::from(cfg.dm.nu)) as f64 / cfg.dm.l as f64;
    let air = gmi - 4.0 * (prior.entropy() - 1.0 - net_amp);

    let blocks: usize = measured.iter().map(|&i| streams[i].blocks).sum();
    let mean = |f: fn(&Stream) -> f64| measured.iter().map(|&i| f(&streams[i])).sum::<f64>() / blocks as f64;
    let schedule = match &p.selector {
        SelectorKind::DEdi { schedule, .. } => Some(
            schedule
                .span_indices()
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        ),
        _ => None,
    };
    let n = cfg.dm.n as u32;
    Ok(ResultRow {
        point: p.index,
        repetition,
        sweep_variable: None,
        sweep_value: p.value,
        scenario: cfg.scenario,
        launch_power_dbm: cfg.launch_power_dbm,
        l: cfg.dm.l,
        n: cfg.dm.n,
        nu: cfg.dm.nu,
        e_max: cfg.dm.e_max.expect("resolved"),
        k,
        selector: cfg.selector.name(),
        w: cfg.selector.window(),
        schedule,
        subsample_size: cfg.subsample_size,
        candidates_per_block: if cfg.dm.nu == 0 {
            0
        } else {
            cfg.subsample_size.map_or(p.chain.candidate_count(), |s| s as u64)
        },
        log2_ns108: n_s_108(n, cfg.dm.nu).ok().map(|v| (v as f64).log2()),
        n_symbols: tx.len(),
        step_km: cfg.step_km,
        snr_elec_db: snr,
        snr_stderr_db: snr_err,
        gmi_bits_per_4d: gmi,
        gmi_stderr: gmi_err,
        rate_loss_bits_per_4d: p.rate_loss_4d,
        air_bits_per_4d: air,
        mean_metric_of_winner: mean(|s| s.metric_sum),
        eval_edi_w: p.eval_edi_w.get(),
        eval_edi: mean(|s| s.edi_sum),
        eval_d_edi: mean(|s| s.d_edi_sum),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs every sweep point and repetition; rows are ordered by point, then
/// repetition. The whole configuration is checked before any simulation.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    prepare(cfg, false)?;
    let points = prepare(cfg, true)?;
    let name = cfg.sweep.as_ref().map(|s| s.variable.name());
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..cfg.repetitions).map(move |r| (p, r))).collect();
    jobs.into_par_iter()
        .map(|(p, r)| {
            let mut row = simulate(&points[p], r)?;
            row.sweep_variable = name;
            Ok(row)
        })
        .collect()
}

/// Formats `x` with 9 significant digits, in plain notation where
/// reasonable.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // rounding may carry into a new leading digit
        let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
        if s == "-0" {
            "0".into()
        } else {
            s
        }
    } else {
        format!("{x:.8e}")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CsvOptions {
    /// Include the `wall_time_s` column. Off by default because timings
    /// differ between otherwise identical runs.
    pub timing: bool,
}

const COLUMNS: [&str; 30] = [
    "point",
    "repetition",
    "sweep_variable",
    "sweep_value",
    "scenario",
    "launch_power_dbm",
    "l",
    "n",
    "nu",
    "e_max",
    "k",
    "selector",
    "w",
    "schedule",
    "subsample_size",
    "candidates_per_block",
    "log2_ns108",
    "n_symbols",
    "step_km",
    "snr_elec_db",
    "snr_stderr_db",
    "gmi_bits_per_4d",
    "gmi_stderr",
    "rate_loss_bits_per_4d",
    "air_bits_per_4d",
    "mean_metric_of_winner",
    "eval_edi_w",
    "eval_edi",
    "eval_d_edi",
    "wall_time_s",
];

impl ResultRow {
    pub fn columns(opts: CsvOptions) -> &'static [&'static str] {
        if opts.timing {
            &COLUMNS
        } else {
            &COLUMNS[..COLUMNS.len() - 1]
        }
    }

    pub fn record(&self, opts: CsvOptions) -> Vec<String> {
        let f = |x: f64| format_sig9(x);
        let opt_f = |x: Option<f64>| x.map(format_sig9).unwrap_or_default();
        let opt_u = |x: Option<usize>| x.map(|v| v.to_string()).unwrap_or_default();
        let scenario = match self.scenario {
            Scenario::SingleSpan => "single_span",
            Scenario::MultiSpan => "multi_span",
        };
        let mut r = vec![
            self.point.to_string(),
            self.repetition.to_string(),
            self.sweep_variable.unwrap_or_default().to_string(),
            opt_f(self.sweep_value),
            scenario.to_string(),
            f(self.launch_power_dbm),
            self.l.to_string(),
            self.n.to_string(),
            self.nu.to_string(),
            self.e_max.to_string(),
            self.k.to_string(),
            self.selector.to_string(),
            opt_u(self.w),
            self.schedule.clone().unwrap_or_default(),
            opt_u(self.subsample_size),
            self.candidates_per_block.to_string(),
            opt_f(self.log2_ns108),
            self.n_symbols.to_string(),
            f(self.step_km),
            f(self.snr_elec_db),
            f(self.snr_stderr_db),
            f(self.gmi_bits_per_4d),
            f(self.gmi_stderr),
            f(self.rate_loss_bits_per_4d),
            f(self.air_bits_per_4d),
            f(self.mean_metric_of_winner),
            self.eval_edi_w.to_string(),
            f(self.eval_edi),
            f(self.eval_d_edi),
        ];
        if opts.timing {
            r.push(f(self.wall_time_s));
        }
        r
    }

    fn numeric_fields_finite(&self) -> bool {
        [
            self.launch_power_dbm,
            self.step_km,
            self.snr_elec_db,
            self.snr_stderr_db,
            self.gmi_bits_per_4d,
            self.gmi_stderr,
            self.rate_loss_bits_per_4d,
            self.air_bits_per_4d,
            self.mean_metric_of_winner,
            self.eval_edi,
            self.eval_d_edi,
        ]
        .iter()
        .chain(self.sweep_value.iter())
        .chain(self.log2_ns108.iter())
        .all(|v| v.is_finite())
    }
}

/// Writes `# config: <json>` followed by the CSV header and rows.
pub fn write_csv<W: Write>(rows: &[ResultRow], config: &ExperimentConfig, mut out: W, opts: CsvOptions) -> Result<()> {
    if rows.is_empty() {
        return Err(config_err("no rows to write"));
    }
    if let Some(r) = rows.iter().find(|r| !r.numeric_fields_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite value in row {} / {}", r.point, r.repetition)));
    }
    let echo = config.resolved()?.to_json();
    writeln!(out, "# config: {echo}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ResultRow::columns(opts))?;
    for r in rows {
        w.write_record(r.record(opts))?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[ResultRow], config: &ExperimentConfig, path: &Path, opts: CsvOptions) -> Result<()> {
    if rows.is_empty() {
        return Err(config_err("no rows to write"));
    }
    let file = std::fs::File::create(path)?;
    write_csv(rows, config, std::io::BufWriter::new(file), opts)
}

/// Named starting configurations at desk scale.
pub mod presets {
    use super::*;

    pub const NAMES: [&str; 2] = ["single-span-205", "multi-span-dmb"];

    /// 205 km single span, 5 WDM channels of 50 GBaud on a 55 GHz grid,
    /// D-SS with one matcher and 4 flipping bits.
    pub fn single_span_205() -> ExperimentConfig {
        let mut fiber = FiberParams::ssmf(205.0);
        fiber.pmd = 0.04;
        ExperimentConfig {
            scenario: Scenario::SingleSpan,
            grid: GridPlan {
                n_wdm: 5,
                wdm_spacing: 55.0,
                n_subcarriers: 1,
                per_subcarrier_baud: 50.0,
                rolloff: 0.1,
                samples_per_symbol: 6,
            },
            link: LinkSpec::Uniform {
                n_spans: 1,
                fiber,
                noise_figure_db: 5.0,
                ase_on: true,
            },
            dm: DmSpec {
                l: 108,
                n: 1,
                nu: 4,
                alphabet: default_alphabet(),
                amplitude_bits: default_amplitude_bits(),
                e_max: None,
            },
            selector: SelectorSpec::DEdi {
                w: EdiWindow::new(2).expect("valid"),
                schedule: ScheduleSpec::EffectiveLength,
            },
            subsample_size: None,
            launch_power_dbm: 9.0,
            sweep: None,
            n_blocks: None,
            min_symbols: default_min_symbols(),
            repetitions: 1,
            seed: 1,
            step_km: 0.1,
            rx: RxChainConfig::default(),
            evaluation: EvaluationSpec::default(),
            sign_info_fraction: DEFAULT_SIGN_INFO_FRACTION,
        }
    }

    /// 30×80 km, one wavelength of 8 digital subcarriers at 13.75 GBaud,
    /// D-SS with four matchers and one flipping bit each.
    pub fn multi_span_dmb() -> ExperimentConfig {
        let mut fiber = FiberParams::ssmf(80.0);
        fiber.pmd = 0.04;
        ExperimentConfig {
            scenario: Scenario::MultiSpan,
            grid: GridPlan {
                n_wdm: 1,
                wdm_spacing: 121.0,
                n_subcarriers: 8,
                per_subcarrier_baud: 13.75,
                rolloff: 0.1,
                samples_per_symbol: 9,
            },
            link: LinkSpec::Uniform {
                n_spans: 30,
                fiber,
                noise_figure_db: 5.0,
                ase_on: true,
            },
            dm: DmSpec {
                l: 108,
                n: 4,
                nu: 1,
                alphabet: default_alphabet(),
                amplitude_bits: default_amplitude_bits(),
                e_max: None,
            },
            selector: SelectorSpec::DEdi {
                w: EdiWindow::new(2).expect("valid"),
                schedule: ScheduleSpec::Contiguous { m_d: 29 },
            },
            subsample_size: None,
            launch_power_dbm: 4.5,
            sweep: None,
            n_blocks: None,
            min_symbols: default_min_symbols(),
            repetitions: 1,
            seed: 1,
            step_km: 0.25,
            rx: RxChainConfig::default(),
            evaluation: EvaluationSpec::default(),
            sign_info_fraction: DEFAULT_SIGN_INFO_FRACTION,
        }
    }

    pub fn by_name(name: &str) -> Option<ExperimentConfig> {
        match name {
            "single-span-205" => Some(single_span_205()),
            "multi-span-dmb" => Some(multi_span_dmb()),
            _ => None,
        }
    }
}
