//! Slot-level simulation of power talk under random load changes.
//!
//! The load is piecewise constant and changes only at slot boundaries. A
//! detection space is usable while the load stays at the value it was
//! trained on; the slot carrying a change and everything after it until the
//! next completed training is lost. Erased slots draw nothing from the
//! generator, so long erased stretches are skipped in one step and a run
//! with a trace sink consumes exactly the same random numbers as one without.

use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coding::{build_codebook, codeword_length, UdCodebook};
use crate::detection::{build_detection_space, Detector, SpaceSource};
use crate::grid::{bus_voltage, observe_point, GridConfig, LoadProcess, Symbol};
use crate::protocol::{closed_form_rate, optimal_b, ChangeDetector, ProtocolConfig, ProtocolVariant, TrainingPlan};
use crate::signaling::{design_fixed_rd_constellation, Constellation};
use crate::{Error, Mode, Result};

/// Per-unit transmitted bits and decoded symbols of one trace row.
type SlotColumns = (Vec<Option<bool>>, Vec<Option<u32>>);

/// What happens to data slots sent after the load has changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossModel {
    /// They are lost outright.
    #[default]
    Erasure,
    /// They are still demodulated against the outdated detection space; the
    /// resulting decisions are tallied separately from delivered bits.
    StaleSpace,
}

/// Where receivers get their detection spaces from after a training phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingSource {
    /// Mean of `M` noisy observations per point.
    #[default]
    Learned,
    /// Exact points.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimOptions {
    pub loss_model: LossModel,
    pub training: TrainingSource,
    /// Load at slot 0; drawn from the load distribution when `None`.
    pub initial_load: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Training,
    Blank,
    Data,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Training => "training",
            Phase::Blank => "blank",
            Phase::Data => "data",
        }
    }
}

/// One simulated slot.
///
/// In TDMA slots `bits[j]` is the active unit's bit and `decisions[k]` is
/// receiver `k`'s estimate of it. In full-duplex slots `bits[u]` is the
/// channel symbol of unit `u` and `decisions[k]` the weight estimate at `k`.
/// Both are empty outside demodulated data slots.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotTrace {
    pub slot: u64,
    pub phase: Phase,
    pub r: f64,
    pub changed: bool,
    pub lost: bool,
    pub bits: Vec<Option<bool>>,
    pub decisions: Vec<Option<u32>>,
}

pub trait TraceSink {
    fn record(&mut self, row: &SlotTrace) -> std::io::Result<()>;
}

/// Collects rows in memory.
#[derive(Debug, Default)]
pub struct VecTrace(pub Vec<SlotTrace>);

impl TraceSink for VecTrace {
    fn record(&mut self, row: &SlotTrace) -> std::io::Result<()> {
        self.0.push(row.clone());
        Ok(())
    }
}

/// CSV rows: `slot,phase,r,changed,lost,bit_0..bit_{K-1},dec_0..dec_{K-1}`.
pub struct CsvTrace<W: Write> {
    out: std::io::BufWriter<W>,
    units: usize,
}

impl<W: Write> CsvTrace<W> {
    pub fn new(inner: W, units: usize) -> std::io::Result<Self> {
        let mut out = std::io::BufWriter::new(inner);
        let mut header = String::from("slot,phase,r,changed,lost");
        for u in 0..units {
            header.push_str(&format!(",bit_{u}"));
        }
        for u in 0..units {
            header.push_str(&format!(",dec_{u}"));
        }
        writeln!(out, "{header}")?;
        Ok(Self { out, units })
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        self.out.into_inner().map_err(|e| e.into_error())
    }
}

impl<W: Write> TraceSink for CsvTrace<W> {
    fn record(&mut self, row: &SlotTrace) -> std::io::Result<()> {
        write!(
            self.out,
            "{},{},{},{},{}",
            row.slot,
            row.phase.as_str(),
            row.r,
            u8::from(row.changed),
            u8::from(row.lost)
        )?;
        for u in 0..self.units {
            match row.bits.get(u).copied().flatten() {
                Some(b) => write!(self.out, ",{}", u8::from(b))?,
                None => write!(self.out, ",")?,
            }
        }
        for u in 0..self.units {
            match row.decisions.get(u).copied().flatten() {
                Some(d) => write!(self.out, ",{d}")?,
                None => write!(self.out, ",")?,
            }
        }
        writeln!(self.out)
    }
}

/// Outcome of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub mode: Mode,
    pub units: usize,
    pub protocol: &'static str,
    pub b: Option<u64>,
    pub l_bs: Option<usize>,
    pub lambda: f64,
    pub p: f64,
    pub m: usize,
    pub training_length: usize,
    pub n_slots: u64,
    /// Information bits delivered by each unit to all others.
    pub delivered_bits: Vec<u64>,
    pub delivered_bits_total: u64,
    pub eta: f64,
    pub mu: f64,
    pub eta_closed_form: f64,
    pub training_slots: u64,
    pub blank_slots: u64,
    pub data_delivered_slots: u64,
    pub data_lost_slots: u64,
    pub load_changes: u64,
    pub trainings_completed: u64,
    /// Demodulation decisions in delivered data slots and how many were wrong.
    pub symbol_decisions: u64,
    pub symbol_errors: u64,
    /// Full-duplex blocks decoded by receivers, wrongly decoded bits and
    /// blocks whose weights had no preimage.
    pub decoded_blocks: u64,
    pub bit_errors: u64,
    pub decode_failures: u64,
    /// Decisions taken against an outdated space (stale-space loss model only).
    pub stale_decisions: u64,
    pub stale_errors: u64,
    /// Steady states checked against the operating limits, and failures.
    pub audited_states: u64,
    pub constraint_violations: u64,
}

impl SimReport {
    /// Training, blank, delivered and lost slots add up to the run length.
    pub fn slots_accounted(&self) -> bool {
        self.training_slots + self.blank_slots + self.data_delivered_slots + self.data_lost_slots == self.n_slots
    }
}

/// Geometric gap on `1, 2, ...` with success probability `p`.
fn geometric_gap<R: RngCore + ?Sized>(p: f64, rng: &mut R) -> Option<u64> {
    if p <= 0.0 {
        return None;
    }
    if p >= 1.0 {
        return Some(1);
    }
    let u: f64 = 1.0 - rng.random::<f64>();
    let g = (u.ln() / (-p).ln_1p()).ceil();
    if !g.is_finite() || g >= 1e18 {
        None
    } else {
        Some((g as u64).max(1))
    }
}

/// Checks every steady state a load epoch can produce against the operating
/// limits: the nominal point plus each TDMA `(transmitter, bit)` or each
/// full-duplex count of ones. Equivalent to running
/// [`ConstraintSet::admits`](crate::signaling::ConstraintSet::admits) over
/// [`reachable_inputs`](crate::signaling::reachable_inputs), without allocating.
struct Auditor {
    mode: Mode,
    nominal: Vec<Symbol>,
    g_sum: f64,
    t_sum: f64,
    x: [Symbol; 2],
    v_min: f64,
    v_max: f64,
    i_max: Vec<f64>,
    i_max_min: f64,
}

const AUDIT_TOL: f64 = 1e-9;

impl Auditor {
    fn new(grid: &GridConfig, c: &Constellation, mode: Mode) -> Self {
        Self {
            mode,
            nominal: grid.nominal.clone(),
            g_sum: grid.nominal.iter().map(|s| 1.0 / s.r_d).sum(),
            t_sum: grid.nominal.iter().map(|s| s.v / s.r_d).sum(),
            x: [c.x0, c.x1],
            v_min: grid.v_min,
            v_max: grid.v_max,
            i_max: grid.i_max.clone(),
            i_max_min: grid.i_max.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    fn voltage_ok(&self, v: f64) -> bool {
        v >= self.v_min - AUDIT_TOL && v <= self.v_max + AUDIT_TOL
    }

    fn current_ok(s: Symbol, v: f64, i_max: f64) -> bool {
        let i = (s.v - v) / s.r_d;
        i >= -AUDIT_TOL && i <= i_max + AUDIT_TOL
    }

    /// Returns `(states checked, states violating a limit)` at load `r`.
    fn check(&self, r: f64) -> (u64, u64) {
        let mut states = 0u64;
        let mut bad = 0u64;
        let nominal_state = |g_drop: f64, t_drop: f64, extra: Option<(usize, Symbol)>| {
            let (g, t) = match extra {
                Some((_, s)) => (self.g_sum - g_drop + 1.0 / s.r_d, self.t_sum - t_drop + s.v / s.r_d),
                None => (self.g_sum, self.t_sum),
            };
            let v = t / (1.0 / r + g);
            self.voltage_ok(v)
                && self.nominal.iter().enumerate().all(|(k, &n)| match extra {
                    Some((j, s)) if j == k => Self::current_ok(s, v, self.i_max[k]),
                    _ => Self::current_ok(n, v, self.i_max[k]),
                })
        };
        states += 1;
        bad += u64::from(!nominal_state(0.0, 0.0, None));
        match self.mode {
            Mode::Tdma => {
                for (j, n) in self.nominal.iter().enumerate() {
                    for s in self.x {
                        states += 1;
                        bad += u64::from(!nominal_state(1.0 / n.r_d, n.v / n.r_d, Some((j, s))));
                    }
                }
            }
            Mode::FullDuplex => {
                let units = self.nominal.len();
                let [x0, x1] = self.x;
                for ones in 0..=units {
                    let (w1, w0) = (ones as f64, (units - ones) as f64);
                    let g = w1 / x1.r_d + w0 / x0.r_d;
                    let t = w1 * x1.v / x1.r_d + w0 * x0.v / x0.r_d;
                    let v = t / (1.0 / r + g);
                    // a shared symbol may sit on any unit, so the tightest rating applies
                    let ok = self.voltage_ok(v)
                        && (ones == 0 || Self::current_ok(x1, v, self.i_max_min))
                        && (ones == units || Self::current_ok(x0, v, self.i_max_min));
                    states += 1;
                    bad += u64::from(!ok);
                }
            }
        }
        (states, bad)
    }
}

struct LoadTimeline {
    process: LoadProcess,
    r: f64,
    next_change: u64,
    epoch: u64,
    changes: u64,
}

impl LoadTimeline {
    fn new<R: RngCore + ?Sized>(process: LoadProcess, initial: Option<f64>, rng: &mut R) -> Self {
        let r = initial.unwrap_or_else(|| process.draw_load(rng));
        let next_change = process.slots_until_change(rng).map_or(u64::MAX, |g| g - 1);
        Self {
            process,
            r,
            next_change,
            epoch: 0,
            changes: 0,
        }
    }

    fn consume<R: RngCore + ?Sized>(&mut self, rng: &mut R) {
        self.r = self.process.draw_load(rng);
        self.epoch += 1;
        self.changes += 1;
        self.next_change = match self.process.slots_until_change(rng) {
            Some(g) => self.next_change.saturating_add(g),
            None => u64::MAX,
        };
    }
}

/// Full-duplex block in progress.
struct Block {
    pos: usize,
    bits: Vec<bool>,
    weights: Vec<Vec<usize>>,
}

struct Engine<'a, R: RngCore> {
    grid: &'a GridConfig,
    c: &'a Constellation,
    mode: Mode,
    units: usize,
    n_slots: u64,
    options: SimOptions,
    rng: &'a mut R,
    trace: Option<&'a mut dyn TraceSink>,
    load: LoadTimeline,
    plan: TrainingPlan,
    codebook: Option<UdCodebook>,
    detectors: Vec<Detector>,
    trained_epoch: Option<u64>,
    vcache: Vec<f64>,
    cache_epoch: u64,
    auditor: Auditor,
    block: Block,
    report: SimReport,
}

impl<'a, R: RngCore> Engine<'a, R> {
    fn emit(&mut self, row: SlotTrace) -> Result<()> {
        if let Some(t) = self.trace.as_mut() {
            t.record(&row)?;
        }
        Ok(())
    }

    fn tracing(&self) -> bool {
        self.trace.is_some()
    }

    fn audit_epoch(&mut self) {
        let (states, violations) = self.auditor.check(self.load.r);
        self.report.audited_states += states;
        self.report.constraint_violations += violations;
    }

    fn consume_change(&mut self) {
        self.load.consume(self.rng);
        self.audit_epoch();
    }

    /// If slot `s` carries a change, apply it. Returns whether it did.
    fn enter_slot(&mut self, s: u64) -> bool {
        if self.load.next_change == s {
            self.consume_change();
            true
        } else {
            false
        }
    }

    fn tally(&mut self, phase: Phase, count: u64) {
        match phase {
            Phase::Training => self.report.training_slots += count,
            Phase::Blank => self.report.blank_slots += count,
            Phase::Data => self.report.data_lost_slots += count,
        }
    }

    /// Slots `[a, b)` in which nothing is demodulated; data slots count as lost.
    fn pass_range(&mut self, a: u64, b: u64, phase: Phase) -> Result<()> {
        let b = b.min(self.n_slots);
        if a >= b {
            return Ok(());
        }
        self.tally(phase, b - a);
        if !self.tracing() {
            while self.load.next_change < b {
                self.consume_change();
            }
            return Ok(());
        }
        for s in a..b {
            let changed = self.enter_slot(s);
            let row = SlotTrace {
                slot: s,
                phase,
                r: self.load.r,
                changed,
                lost: phase == Phase::Data,
                bits: Vec::new(),
                decisions: Vec::new(),
            };
            self.emit(row)?;
        }
        Ok(())
    }

    fn train(&mut self) -> Result<()> {
        let r = self.load.r;
        let mut detectors = Vec::with_capacity(self.units);
        for k in 0..self.units {
            let space = match self.options.training {
                TrainingSource::Oracle => {
                    build_detection_space(self.grid, self.c, self.mode, k, r, SpaceSource::Oracle)?
                }
                TrainingSource::Learned => build_detection_space(
                    self.grid,
                    self.c,
                    self.mode,
                    k,
                    r,
                    SpaceSource::Learned {
                        m: self.plan.m,
                        rng: &mut *self.rng,
                    },
                )?,
            };
            detectors.push(Detector::new(&space, self.c.p_b)?);
        }
        self.detectors = detectors;
        self.trained_epoch = Some(self.load.epoch);
        self.report.trainings_completed += 1;
        Ok(())
    }

    fn valid(&self) -> bool {
        self.trained_epoch == Some(self.load.epoch)
    }

    /// Bus voltage for cache slot `key`, computed from `inputs` on a miss.
    fn cached_voltage(&mut self, key: usize, inputs: impl FnOnce() -> Vec<Symbol>) -> f64 {
        if self.cache_epoch != self.load.epoch {
            self.vcache.iter_mut().for_each(|v| *v = f64::NAN);
            self.cache_epoch = self.load.epoch;
        }
        let v = self.vcache[key];
        if !v.is_nan() {
            return v;
        }
        let v = bus_voltage(&inputs(), self.load.r);
        self.vcache[key] = v;
        v
    }

    /// Demodulate one TDMA slot with transmitter `j`. Returns decisions
    /// (`None` at the transmitter) and the error count.
    fn tdma_slot(&mut self, j: usize, bit: bool) -> (Vec<Option<u32>>, u64) {
        let (grid, c) = (self.grid, self.c);
        let v = self.cached_voltage(2 * j + usize::from(bit), || {
            let mut x = grid.nominal.clone();
            x[j] = c.symbol(bit);
            x
        });
        let mut decisions = vec![None; self.units];
        let mut errors = 0;
        for (k, slot) in decisions.iter_mut().enumerate() {
            if k == j {
                continue;
            }
            let nom = grid.nominal[k];
            let y = observe_point(v, (nom.v - v) / nom.r_d, grid.sigma_v, grid.sigma_i, self.rng);
            let d = self.detectors[k].tdma(j, &y).unwrap_or(false);
            errors += u64::from(d != bit);
            *slot = Some(u32::from(d));
        }
        (decisions, errors)
    }

    /// Demodulate one full-duplex slot with the given channel symbols.
    fn fd_slot(&mut self, symbols: &[bool]) -> (Vec<Option<u32>>, u64) {
        let c = self.c;
        let total = symbols.iter().filter(|&&s| s).count();
        let units = self.units;
        let v = self.cached_voltage(total, || {
            let mut x = vec![c.x0; units];
            x.iter_mut().take(total).for_each(|s| *s = c.x1);
            x
        });
        let mut decisions = vec![None; units];
        let mut errors = 0;
        for (k, slot) in decisions.iter_mut().enumerate() {
            let own = c.symbol(symbols[k]);
            let y = observe_point(v, (own.v - v) / own.r_d, self.grid.sigma_v, self.grid.sigma_i, self.rng);
            let w = self.detectors[k].fd(symbols[k], &y, c.p_b).unwrap_or(0);
            let truth = total - usize::from(symbols[k]);
            errors += u64::from(w != truth);
            *slot = Some(w as u32);
        }
        (decisions, errors)
    }

    fn data_row(
        &mut self,
        s: u64,
        changed: bool,
        lost: bool,
        bits: Vec<Option<bool>>,
        decisions: Vec<Option<u32>>,
    ) -> Result<()> {
        if self.tracing() {
            let row = SlotTrace {
                slot: s,
                phase: Phase::Data,
                r: self.load.r,
                changed,
                lost,
                bits,
                decisions,
            };
            self.emit(row)?;
        }
        Ok(())
    }

    /// Data slot `s` of TDMA transmitter `j`. Returns whether it was delivered.
    fn tdma_data_slot(&mut self, s: u64, j: usize) -> Result<bool> {
        let changed = self.enter_slot(s);
        if self.valid() {
            let bit = self.rng.random_bool(self.c.p_b);
            let (dec, err) = self.tdma_slot(j, bit);
            self.report.symbol_decisions += self.units as u64 - 1;
            self.report.symbol_errors += err;
            self.report.data_delivered_slots += 1;
            self.report.delivered_bits[j] += 1;
            let mut bits = vec![None; self.units];
            bits[j] = Some(bit);
            self.data_row(s, changed, false, bits, dec)?;
            Ok(true)
        } else {
            self.report.data_lost_slots += 1;
            let (bits, dec) = self.stale_tdma(j)?;
            self.data_row(s, changed, true, bits, dec)?;
            Ok(false)
        }
    }

    fn stale_tdma(&mut self, j: usize) -> Result<SlotColumns> {
        if self.options.loss_model != LossModel::StaleSpace || self.detectors.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        let bit = self.rng.random_bool(self.c.p_b);
        let (dec, err) = self.tdma_slot(j, bit);
        self.report.stale_decisions += self.units as u64 - 1;
        self.report.stale_errors += err;
        let mut bits = vec![None; self.units];
        bits[j] = Some(bit);
        Ok((bits, dec))
    }

    fn new_block(&mut self) {
        let p_b = self.c.p_b;
        let bits: Vec<bool> = (0..self.units).map(|_| self.rng.random_bool(p_b)).collect();
        self.block.bits = bits;
        self.block.pos = 0;
        self.block.weights.iter_mut().for_each(|w| w.clear());
    }

    /// Pending block slots become lost.
    fn abandon_block(&mut self) {
        self.report.data_lost_slots += self.block.pos as u64;
        self.block.pos = 0;
        self.block.bits.clear();
    }

    /// Data slot `s` of a full-duplex block. Returns whether the slot was
    /// received; a completed block is decoded and delivered.
    fn fd_data_slot(&mut self, s: u64) -> Result<bool> {
        let changed = self.enter_slot(s);
        if !self.valid() {
            self.report.data_lost_slots += 1;
            let (bits, dec) = self.stale_fd(s)?;
            self.data_row(s, changed, true, bits, dec)?;
            return Ok(false);
        }
        if self.block.bits.is_empty() {
            self.new_block();
        }
        let cb = self.codebook.as_ref().expect("full-duplex runs carry a codebook");
        let pos = self.block.pos;
        let symbols: Vec<bool> = (0..self.units).map(|u| cb.symbol(u, self.block.bits[u], pos)).collect();
        let (dec, err) = self.fd_slot(&symbols);
        self.report.symbol_decisions += self.units as u64;
        self.report.symbol_errors += err;
        for (k, d) in dec.iter().enumerate() {
            self.block.weights[k].push(d.unwrap_or(0) as usize);
        }
        self.block.pos += 1;
        self.data_row(s, changed, false, symbols.into_iter().map(Some).collect(), dec)?;
        let n = self.codebook.as_ref().map_or(1, UdCodebook::len);
        if self.block.pos == n {
            self.complete_block();
        }
        Ok(true)
    }

    fn complete_block(&mut self) {
        let cb = self.codebook.as_ref().expect("full-duplex runs carry a codebook");
        let n = cb.len() as u64;
        for k in 0..self.units {
            match cb.receiver_decode(k, self.block.bits[k], &self.block.weights[k]) {
                Ok(others) => {
                    let truth = self
                        .block
                        .bits
                        .iter()
                        .enumerate()
                        .filter(|&(u, _)| u != k)
                        .map(|(_, &b)| b);
                    self.report.bit_errors += others.iter().zip(truth).filter(|(a, b)| *a != b).count() as u64;
                }
                Err(_) => {
                    self.report.decode_failures += 1;
                    self.report.bit_errors += self.units as u64 - 1;
                }
            }
            self.report.decoded_blocks += 1;
        }
        self.report.data_delivered_slots += n;
        self.report.delivered_bits.iter_mut().for_each(|b| *b += 1);
        self.block.pos = 0;
        self.block.bits.clear();
    }

    fn stale_fd(&mut self, s: u64) -> Result<SlotColumns> {
        if self.options.loss_model != LossModel::StaleSpace || self.detectors.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        let cb = self.codebook.as_ref().expect("full-duplex runs carry a codebook");
        let pos = (s as usize) % cb.len();
        let p_b = self.c.p_b;
        let bits: Vec<bool> = (0..self.units).map(|_| self.rng.random_bool(p_b)).collect();
        let cb = self.codebook.as_ref().expect("checked above");
        let symbols: Vec<bool> = (0..self.units).map(|u| cb.symbol(u, bits[u], pos)).collect();
        let (dec, err) = self.fd_slot(&symbols);
        self.report.stale_decisions += self.units as u64;
        self.report.stale_errors += err;
        Ok((symbols.into_iter().map(Some).collect(), dec))
    }

    /// Data slots `[a, b)` of a periodic cycle.
    fn periodic_data(&mut self, a: u64, b: u64) -> Result<()> {
        let end = b.min(self.n_slots);
        let fast = self.options.loss_model == LossModel::Erasure;
        match self.mode {
            Mode::Tdma => {
                for s in a..end {
                    if fast && (self.load.next_change == s || !self.valid()) {
                        return self.pass_range(s, end, Phase::Data);
                    }
                    let j = ((s - a) % self.units as u64) as usize;
                    self.tdma_data_slot(s, j)?;
                }
            }
            Mode::FullDuplex => {
                self.block.pos = 0;
                self.block.bits.clear();
                for s in a..end {
                    if fast && (self.load.next_change == s || !self.valid()) {
                        self.abandon_block();
                        return self.pass_range(s, end, Phase::Data);
                    }
                    if !self.fd_data_slot(s)? {
                        self.abandon_block();
                    }
                }
                self.abandon_block();
            }
        }
        Ok(())
    }

    fn run_periodic(&mut self, b: u64) -> Result<()> {
        let l = self.plan.l as u64;
        let data_len = match self.mode {
            Mode::Tdma => self.units as u64 * b,
            Mode::FullDuplex => self.codebook.as_ref().map_or(1, UdCodebook::len) as u64 * b,
        };
        let mut t = 0u64;
        while t < self.n_slots {
            let train_end = t + l;
            let clean = self.load.next_change >= train_end;
            self.pass_range(t, train_end, Phase::Training)?;
            if clean && train_end <= self.n_slots {
                self.train()?;
            }
            self.periodic_data(train_end, train_end + data_len)?;
            t = train_end + data_len;
        }
        Ok(())
    }

    /// Blank and training slots `[a, b)` of a retraining attempt that began at `start`.
    fn retrain_range(&mut self, start: u64, a: u64, b: u64) -> Result<()> {
        let blank_end = start + self.plan.l_bs as u64;
        self.pass_range(a, b.min(blank_end), Phase::Blank)?;
        self.pass_range(a.max(blank_end), b, Phase::Training)
    }

    fn run_tracker(&mut self, l_bs: usize, detector: ChangeDetector) -> Result<()> {
        let n_re = (l_bs + self.plan.l) as u64;
        let mut t = 0u64;
        let mut retrain = true;
        let mut next_j = 0usize;
        if self.mode == Mode::FullDuplex {
            self.block.bits.clear();
            self.block.pos = 0;
        }
        while t < self.n_slots {
            if retrain {
                let end = t + n_re;
                let x = self.load.next_change;
                if x < end {
                    self.retrain_range(t, t, x + 1)?;
                    t = x + 1;
                    continue;
                }
                self.retrain_range(t, t, end)?;
                if end <= self.n_slots {
                    self.train()?;
                }
                retrain = false;
                t = end;
                continue;
            }
            let false_alarm = geometric_gap(detector.false_alarm, self.rng).map_or(u64::MAX, |g| t + g - 1);
            let mut s = t;
            loop {
                if s >= self.n_slots {
                    t = s;
                    break;
                }
                let change = self.load.next_change == s;
                let stale = !change && !self.valid();
                if change || s == false_alarm {
                    // the event slot itself is lost; a detected event forces retraining
                    let detected = if change {
                        detector.miss == 0.0 || !self.rng.random_bool(detector.miss.min(1.0))
                    } else {
                        true
                    };
                    if change {
                        match self.mode {
                            Mode::Tdma => {
                                self.tdma_data_slot(s, next_j)?;
                            }
                            Mode::FullDuplex => {
                                self.fd_data_slot(s)?;
                            }
                        }
                    } else {
                        self.pass_range(s, s + 1, Phase::Data)?;
                    }
                    t = s + 1;
                    retrain = detected;
                    break;
                }
                if stale && self.options.loss_model == LossModel::Erasure {
                    // undetected change: erased until the next change or false alarm
                    let stop = self.load.next_change.min(false_alarm).min(self.n_slots);
                    self.pass_range(s, stop, Phase::Data)?;
                    s = stop;
                    continue;
                }
                match self.mode {
                    Mode::Tdma => {
                        if self.tdma_data_slot(s, next_j)? {
                            next_j = (next_j + 1) % self.units;
                        }
                    }
                    Mode::FullDuplex => {
                        self.fd_data_slot(s)?;
                    }
                }
                s += 1;
            }
        }
        if self.mode == Mode::FullDuplex {
            self.abandon_block();
        }
        Ok(())
    }
}

/// Simulate `n_slots` slots of power talk.
#[allow(clippy::too_many_arguments)]
pub fn run_simulation<'a, R: RngCore>(
    grid: &'a GridConfig,
    c: &'a Constellation,
    mode: Mode,
    protocol: &ProtocolConfig,
    n_slots: u64,
    options: &SimOptions,
    rng: &'a mut R,
    trace: Option<&'a mut dyn TraceSink>,
) -> Result<SimReport> {
    grid.validate()?;
    protocol.validate()?;
    if n_slots == 0 {
        return Err(Error::invalid("n_slots must be at least 1"));
    }
    let units = grid.units();
    let codebook = match mode {
        Mode::FullDuplex => Some(build_codebook(units)?),
        Mode::Tdma => None,
    };
    let plan = protocol.plan(mode, units)?;
    let process = grid.load_process(protocol.lambda)?;
    if let Some(r) = options.initial_load {
        if !(grid.r_min..=grid.r_max).contains(&r) {
            return Err(Error::invalid(format!("initial load {r} outside [R_min, R_max]")));
        }
    }
    let closed = closed_form_rate(mode, units, protocol)?;
    let (protocol_name, b, l_bs) = match protocol.variant {
        ProtocolVariant::Periodic { b } => ("periodic", Some(b), None),
        ProtocolVariant::Tracker { l_bs, .. } => ("tracker", None, Some(l_bs)),
    };
    let report = SimReport {
        mode,
        units,
        protocol: protocol_name,
        b,
        l_bs,
        lambda: protocol.lambda,
        p: protocol.p(),
        m: protocol.m,
        training_length: plan.l,
        n_slots,
        delivered_bits: vec![0; units],
        delivered_bits_total: 0,
        eta: 0.0,
        mu: 0.0,
        eta_closed_form: closed.eta,
        training_slots: 0,
        blank_slots: 0,
        data_delivered_slots: 0,
        data_lost_slots: 0,
        load_changes: 0,
        trainings_completed: 0,
        symbol_decisions: 0,
        symbol_errors: 0,
        decoded_blocks: 0,
        bit_errors: 0,
        decode_failures: 0,
        stale_decisions: 0,
        stale_errors: 0,
        audited_states: 0,
        constraint_violations: 0,
    };
    let load = LoadTimeline::new(process, options.initial_load, rng);
    let cache_len = match mode {
        Mode::Tdma => 2 * units,
        Mode::FullDuplex => units + 1,
    };
    let mut engine = Engine {
        grid,
        c,
        mode,
        units,
        n_slots,
        options: *options,
        rng,
        trace,
        load,
        plan,
        codebook,
        detectors: Vec::new(),
        trained_epoch: None,
        vcache: vec![f64::NAN; cache_len],
        cache_epoch: 0,
        auditor: Auditor::new(grid, c, mode),
        block: Block {
            pos: 0,
            bits: Vec::new(),
            weights: vec![Vec::new(); units],
        },
        report,
    };
    engine.audit_epoch();
    match protocol.variant {
        ProtocolVariant::Periodic { b } => engine.run_periodic(b)?,
        ProtocolVariant::Tracker { l_bs, detector } => engine.run_tracker(l_bs, detector)?,
    }
    let mut report = engine.report;
    report.load_changes = engine.load.changes;
    report.delivered_bits_total = report.delivered_bits.iter().sum();
    report.eta = report.delivered_bits_total as f64 / units as f64 / n_slots as f64;
    report.mu = crate::protocol::reception_rate(report.eta, units);
    debug_assert!(report.slots_accounted(), "{report:?}");
    Ok(report)
}

/// Protocol of a verification cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellProtocol {
    /// Periodic training with the rate-maximizing `B`.
    PeriodicOptimal,
    Periodic {
        b: u64,
    },
    Tracker {
        l_bs: usize,
    },
}

/// One point of a closed-form versus simulation comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerificationCell {
    pub mode: Mode,
    pub units: usize,
    pub lambda: f64,
    pub protocol: CellProtocol,
    /// `M` used by the simulator.
    pub m: usize,
    /// `M` plugged into the closed form; differs from `m` only in negative controls.
    pub formula_m: usize,
}

impl VerificationCell {
    pub fn new(mode: Mode, units: usize, lambda: f64, protocol: CellProtocol, m: usize) -> Self {
        Self {
            mode,
            units,
            lambda,
            protocol,
            m,
            formula_m: m,
        }
    }
}

/// Shared settings of a verification sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationSettings {
    /// Grid template; the unit count is taken from each cell.
    pub grid: GridConfig,
    pub gamma: f64,
    pub anchor_v0: f64,
    pub p_b: f64,
    pub n_slots: u64,
    pub min_replications: usize,
    pub max_replications: usize,
    /// Replications are added until the standard error of the mean rate
    /// falls below this fraction of the mean.
    pub target_rel_se: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub options: SimOptions,
}

impl Default for VerificationSettings {
    fn default() -> Self {
        Self {
            grid: GridConfig::table1(2),
            gamma: 0.1,
            anchor_v0: 400.0,
            p_b: 0.5,
            n_slots: 1_000_000,
            min_replications: 4,
            max_replications: 20_000,
            target_rel_se: 0.005,
            tolerance: 0.02,
            seed: 1,
            options: SimOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub cell: VerificationCell,
    pub b: Option<u64>,
    pub eta_simulated: f64,
    pub standard_error: f64,
    pub eta_closed_form: f64,
    pub relative_error: f64,
    pub replications: usize,
    pub pass: bool,
    pub constraint_violations: u64,
    pub simulated_slots: u64,
}

fn cell_protocol(cell: &VerificationCell, m: usize) -> Result<ProtocolConfig> {
    let p = crate::protocol::change_probability(cell.lambda);
    Ok(match cell.protocol {
        CellProtocol::PeriodicOptimal => {
            let (b, _) = optimal_b(cell.mode, cell.units, cell.formula_m, p)?;
            ProtocolConfig::periodic(b, cell.lambda, m)
        }
        CellProtocol::Periodic { b } => ProtocolConfig::periodic(b, cell.lambda, m),
        CellProtocol::Tracker { l_bs } => ProtocolConfig::tracker(l_bs, cell.lambda, m),
    })
}

/// Seed of replication `rep` of cell `cell`.
fn replication_seed(base: u64, cell: usize, rep: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (cell as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (rep as u64).wrapping_mul(0x94D0_49BB_1331_11EB)
}

/// Simulate every cell and compare its mean rate with the closed form.
pub fn verify_against_closed_forms(
    cells: &[VerificationCell],
    settings: &VerificationSettings,
) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::with_capacity(cells.len());
    for (ci, cell) in cells.iter().enumerate() {
        if cell.mode == Mode::FullDuplex {
            codeword_length(cell.units)?;
        }
        let grid = settings.grid.with_units(cell.units);
        let c = design_fixed_rd_constellation(settings.gamma, cell.mode, &grid, settings.anchor_v0, settings.p_b)?;
        let sim_protocol = cell_protocol(cell, cell.m)?;
        let formula_protocol = cell_protocol(cell, cell.formula_m)?;
        let closed = closed_form_rate(cell.mode, cell.units, &formula_protocol)?.eta;
        let b = match sim_protocol.variant {
            ProtocolVariant::Periodic { b } => Some(b),
            ProtocolVariant::Tracker { .. } => None,
        };
        let run = |rep: usize| -> Result<(f64, u64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(settings.seed, ci, rep));
            let r = run_simulation(
                &grid,
                &c,
                cell.mode,
                &sim_protocol,
                settings.n_slots,
                &settings.options,
                &mut rng,
                None,
            )?;
            Ok((r.eta, r.constraint_violations))
        };
        let mut etas: Vec<f64> = Vec::new();
        let mut violations = 0;
        let mut batch = settings.min_replications.max(2);
        loop {
            let start = etas.len();
            let results: Vec<Result<(f64, u64)>> = (start..start + batch).into_par_iter().map(run).collect();
            for r in results {
                let (e, v) = r?;
                etas.push(e);
                violations += v;
            }
            let (mean, se) = mean_and_se(&etas);
            let precise = mean > 0.0 && se <= settings.target_rel_se * mean;
            if precise || etas.len() >= settings.max_replications {
                break;
            }
            // aim for the target using the current variance estimate
            let needed = if mean > 0.0 {
                let sd = se * (etas.len() as f64).sqrt();
                ((sd / (settings.target_rel_se * mean)).powi(2).ceil() as usize).saturating_sub(etas.len())
            } else {
                etas.len()
            };
            batch = needed
                .clamp(1, settings.max_replications - etas.len())
                .max(etas.len() / 4)
                .min(settings.max_replications - etas.len());
        }
        let (mean, se) = mean_and_se(&etas);
        let rel = if closed > 0.0 {
            (mean - closed).abs() / closed
        } else {
            mean.abs()
        };
        rows.push(ComparisonRow {
            cell: *cell,
            b,
            eta_simulated: mean,
            standard_error: se,
            eta_closed_form: closed,
            relative_error: rel,
            replications: etas.len(),
            pass: rel <= settings.tolerance,
            constraint_violations: violations,
            simulated_slots: settings.n_slots * etas.len() as u64,
        });
    }
    Ok(rows)
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
