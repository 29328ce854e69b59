//! Flat key-value run configuration.
//!
//! A run starts from a named preset and optionally overlays a TOML file
//! whose keys are all top level:
//!
//! | key | meaning | default (`table1`) |
//! |-----|---------|--------------------|
//! | `K` | number of units | 2 |
//! | `V_min`, `V_max` | bus voltage limits, V | 390, 400 |
//! | `I_max` | current rating, A; scalar or one per unit | 5 |
//! | `R_min`, `R_max` | load range, Ω | 50, 250 |
//! | `v_n`, `r_d_n` | nominal droop parameters; scalar or per unit | 400, 2 |
//! | `sigma_v`, `sigma_i` | observation noise standard deviations | 0.001 |
//! | `T_s`, `f_o` | slot duration (s) and sampling frequency (Hz) | 0.01, 10000 |
//! | `mode` | `tdma` or `fd` | `tdma` |
//! | `gamma` | power-deviation budget | 0.1 |
//! | `anchor_v0` | voltage of the bit-0 symbol | 400 |
//! | `p_b` | probability of bit 1 | 0.5 |
//! | `protocol` | `periodic` or `tracker` | `tracker` |
//! | `B` | data bits per unit between periodic trainings; 0 picks the optimum | 0 |
//! | `L_BS` | blank slots before retraining | 1 |
//! | `lambda` | load change rate per slot | 0.001 |
//! | `M` | observations per detection-space point | 1 |
//! | `simultaneous_training` | shortened training schedule | false |
//! | `miss`, `false_alarm` | change-detector imperfections | 0 |
//! | `loss_model` | `erasure` or `stale_space` | `erasure` |
//! | `training` | `learned` or `oracle` | `learned` |
//! | `n_slots` | simulated slots | 1000000 |
//! | `seed` | generator seed | 1 |
//! | `r` | loads for `steady-state` (list) | 50..=250 step 10 |
//! | `K_values`, `lambda_values`, `gamma_values` | sweep axes for figures | per figure |
//! | `B_max` | largest `B` in the rate-versus-`B` figure | 2000 |
//! | `grid_points` | points per axis of the signaling-space figure | 81 |
//!
//! Unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;

use crate::grid::{GridConfig, Symbol};
use crate::protocol::{optimal_b, ChangeDetector, ProtocolConfig, ProtocolVariant};
use crate::simulator::{LossModel, SimOptions, TrainingSource};
use crate::{Error, Mode, Result};

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

impl ScalarOrList {
    fn expand(&self, key: &str, units: usize) -> Result<Vec<f64>> {
        match self {
            ScalarOrList::Scalar(x) => Ok(vec![*x; units]),
            ScalarOrList::List(v) if v.len() == units => Ok(v.clone()),
            ScalarOrList::List(v) => Err(Error::Config(format!(
                "`{key}` lists {} values but K = {units}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Periodic,
    Tracker,
}

/// Keys as they appear in a file. Every field is optional and overlays the preset.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct RawConfig {
    pub K: Option<usize>,
    pub V_min: Option<f64>,
    pub V_max: Option<f64>,
    pub I_max: Option<ScalarOrList>,
    pub R_min: Option<f64>,
    pub R_max: Option<f64>,
    pub v_n: Option<ScalarOrList>,
    pub r_d_n: Option<ScalarOrList>,
    pub sigma_v: Option<f64>,
    pub sigma_i: Option<f64>,
    pub T_s: Option<f64>,
    pub f_o: Option<f64>,
    pub mode: Option<Mode>,
    pub gamma: Option<f64>,
    pub anchor_v0: Option<f64>,
    pub p_b: Option<f64>,
    pub protocol: Option<ProtocolKind>,
    pub B: Option<u64>,
    pub L_BS: Option<usize>,
    pub lambda: Option<f64>,
    pub M: Option<usize>,
    pub simultaneous_training: Option<bool>,
    pub miss: Option<f64>,
    pub false_alarm: Option<f64>,
    pub loss_model: Option<LossModel>,
    pub training: Option<TrainingSource>,
    pub n_slots: Option<u64>,
    pub seed: Option<u64>,
    pub r: Option<Vec<f64>>,
    pub K_values: Option<Vec<usize>>,
    pub lambda_values: Option<Vec<f64>>,
    pub gamma_values: Option<Vec<f64>>,
    pub B_max: Option<u64>,
    pub grid_points: Option<usize>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    /// Keys set here replace those of `base`.
    pub fn overlay(self, base: RawConfig) -> RawConfig {
        macro_rules! pick {
            ($($f:ident),*) => { RawConfig { $($f: self.$f.or(base.$f)),* } };
        }
        pick!(
            K,
            V_min,
            V_max,
            I_max,
            R_min,
            R_max,
            v_n,
            r_d_n,
            sigma_v,
            sigma_i,
            T_s,
            f_o,
            mode,
            gamma,
            anchor_v0,
            p_b,
            protocol,
            B,
            L_BS,
            lambda,
            M,
            simultaneous_training,
            miss,
            false_alarm,
            loss_model,
            training,
            n_slots,
            seed,
            r,
            K_values,
            lambda_values,
            gamma_values,
            B_max,
            grid_points
        )
    }
}

/// Named parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Nominal system parameters.
    Table1,
    /// Detection-space geometry: budget 0.2 around a 399 V anchor.
    Fig7,
    /// Detection reliability: 1 ms slots, budget 0.05, 400 V anchor.
    Fig8,
    /// Protocol evaluation: budget 0.1, equiprobable bits.
    Sec7,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Table1, Preset::Fig7, Preset::Fig8, Preset::Sec7];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Table1 => "table1",
            Preset::Fig7 => "fig7",
            Preset::Fig8 => "fig8",
            Preset::Sec7 => "sec7",
        }
    }

    pub fn raw(self) -> RawConfig {
        let base = RawConfig {
            K: Some(2),
            V_min: Some(390.0),
            V_max: Some(400.0),
            I_max: Some(ScalarOrList::Scalar(5.0)),
            R_min: Some(50.0),
            R_max: Some(250.0),
            v_n: Some(ScalarOrList::Scalar(400.0)),
            r_d_n: Some(ScalarOrList::Scalar(2.0)),
            sigma_v: Some(0.001),
            sigma_i: Some(0.001),
            T_s: Some(0.01),
            f_o: Some(10_000.0),
            mode: Some(Mode::Tdma),
            gamma: Some(0.1),
            anchor_v0: Some(400.0),
            p_b: Some(0.5),
            protocol: Some(ProtocolKind::Tracker),
            B: Some(0),
            L_BS: Some(1),
            lambda: Some(1e-3),
            M: Some(1),
            simultaneous_training: Some(false),
            miss: Some(0.0),
            false_alarm: Some(0.0),
            loss_model: Some(LossModel::Erasure),
            training: Some(TrainingSource::Learned),
            n_slots: Some(1_000_000),
            seed: Some(1),
            ..RawConfig::default()
        };
        match self {
            Preset::Table1 => base,
            Preset::Fig7 => RawConfig {
                gamma: Some(0.2),
                anchor_v0: Some(399.0),
                ..base
            },
            Preset::Fig8 => RawConfig {
                gamma: Some(0.05),
                T_s: Some(0.001),
                ..base
            },
            Preset::Sec7 => RawConfig {
                gamma: Some(0.1),
                p_b: Some(0.5),
                T_s: Some(0.001),
                ..base
            },
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}` (known: table1, fig7, fig8, sec7)")))
    }
}

/// Sweep axes used by figure generators; `None` selects each figure's own default.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sweeps {
    pub loads: Vec<f64>,
    pub k_values: Option<Vec<usize>>,
    pub lambda_values: Option<Vec<f64>>,
    pub gamma_values: Option<Vec<f64>>,
    pub b_max: u64,
    pub grid_points: usize,
}

/// A validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub mode: Mode,
    pub gamma: f64,
    pub anchor_v0: f64,
    pub p_b: f64,
    pub protocol: ProtocolConfig,
    /// `B` as configured; 0 means "use the rate-maximizing value".
    pub requested_b: u64,
    pub options: SimOptions,
    pub n_slots: u64,
    pub seed: u64,
    pub sweeps: Sweeps,
}

fn need<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing key `{key}`")))
}

fn check(ok: bool, key: &str, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("`{key}` {msg}")))
    }
}

impl RunConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self> {
        let units = need(raw.K, "K")?;
        check(units >= 1, "K", "must be at least 1")?;
        let v_n = need(raw.v_n.as_ref(), "v_n")?.expand("v_n", units)?;
        let r_d_n = need(raw.r_d_n.as_ref(), "r_d_n")?.expand("r_d_n", units)?;
        let nominal = v_n
            .iter()
            .zip(&r_d_n)
            .map(|(&v, &r)| Symbol::new(v, r).map_err(|e| Error::Config(format!("`v_n`/`r_d_n`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let grid = GridConfig {
            nominal,
            v_min: need(raw.V_min, "V_min")?,
            v_max: need(raw.V_max, "V_max")?,
            i_max: need(raw.I_max.as_ref(), "I_max")?.expand("I_max", units)?,
            r_min: need(raw.R_min, "R_min")?,
            r_max: need(raw.R_max, "R_max")?,
            sigma_v: need(raw.sigma_v, "sigma_v")?,
            sigma_i: need(raw.sigma_i, "sigma_i")?,
            slot_duration: need(raw.T_s, "T_s")?,
            sampling_frequency: need(raw.f_o, "f_o")?,
        };
        grid.validate().map_err(|e| Error::Config(e.to_string()))?;

        let gamma = need(raw.gamma, "gamma")?;
        check(gamma > 0.0 && gamma.is_finite(), "gamma", "must be positive")?;
        let anchor_v0 = need(raw.anchor_v0, "anchor_v0")?;
        check(
            anchor_v0.is_finite() && anchor_v0 > 0.0,
            "anchor_v0",
            "must be a positive voltage",
        )?;
        let p_b = need(raw.p_b, "p_b")?;
        check(p_b > 0.0 && p_b < 1.0, "p_b", "must lie strictly between 0 and 1")?;
        let lambda = need(raw.lambda, "lambda")?;
        check(lambda >= 0.0 && lambda.is_finite(), "lambda", "must be non-negative")?;
        let m = need(raw.M, "M")?;
        check(m >= 1, "M", "must be at least 1")?;
        let miss = need(raw.miss, "miss")?;
        check((0.0..=1.0).contains(&miss), "miss", "must be a probability")?;
        let false_alarm = need(raw.false_alarm, "false_alarm")?;
        check(
            (0.0..=1.0).contains(&false_alarm),
            "false_alarm",
            "must be a probability",
        )?;
        let n_slots = need(raw.n_slots, "n_slots")?;
        check(n_slots >= 1, "n_slots", "must be at least 1")?;
        let mode = need(raw.mode, "mode")?;
        let requested_b = need(raw.B, "B")?;
        let l_bs = need(raw.L_BS, "L_BS")?;
        let simultaneous_training = need(raw.simultaneous_training, "simultaneous_training")?;

        let variant = match need(raw.protocol, "protocol")? {
            ProtocolKind::Periodic => ProtocolVariant::Periodic { b: requested_b.max(1) },
            ProtocolKind::Tracker => ProtocolVariant::Tracker {
                l_bs,
                detector: ChangeDetector { miss, false_alarm },
            },
        };
        let mut protocol = ProtocolConfig {
            variant,
            lambda,
            m,
            simultaneous_training,
        };
        if let ProtocolVariant::Periodic { b } = &mut protocol.variant {
            if requested_b == 0 {
                let p = crate::protocol::change_probability(lambda);
                *b = if p > 0.0 {
                    optimal_b(mode, units, m, p)
                        .map_err(|e| Error::Config(format!("`B`: {e}")))?
                        .0
                } else {
                    return Err(Error::Config(
                        "`B` = 0 asks for the optimum, which does not exist at lambda = 0".into(),
                    ));
                };
            }
        }
        protocol.validate().map_err(|e| Error::Config(e.to_string()))?;

        let loads = match raw.r {
            Some(r) => r,
            None => (0..=20)
                .map(|i| grid.r_min + (grid.r_max - grid.r_min) * i as f64 / 20.0)
                .collect(),
        };
        check(!loads.is_empty(), "r", "must list at least one load")?;
        check(
            loads.iter().all(|&r| r > 0.0 && r.is_finite()),
            "r",
            "loads must be positive",
        )?;
        if let Some(k) = &raw.K_values {
            check(
                !k.is_empty() && k.iter().all(|&k| k >= 1),
                "K_values",
                "must be a non-empty list of positive integers",
            )?;
        }
        if let Some(l) = &raw.lambda_values {
            check(
                !l.is_empty() && l.iter().all(|&l| l > 0.0 && l.is_finite()),
                "lambda_values",
                "must be positive",
            )?;
        }
        if let Some(g) = &raw.gamma_values {
            check(
                !g.is_empty() && g.iter().all(|&g| g > 0.0 && g.is_finite()),
                "gamma_values",
                "must be positive",
            )?;
        }
        let b_max = raw.B_max.unwrap_or(2000);
        check(b_max >= 1, "B_max", "must be at least 1")?;
        let grid_points = raw.grid_points.unwrap_or(81);
        check(grid_points >= 2, "grid_points", "must be at least 2")?;

        Ok(Self {
            grid,
            mode,
            gamma,
            anchor_v0,
            p_b,
            protocol,
            requested_b,
            options: SimOptions {
                loss_model: need(raw.loss_model, "loss_model")?,
                training: need(raw.training, "training")?,
                initial_load: None,
            },
            n_slots,
            seed: need(raw.seed, "seed")?,
            sweeps: Sweeps {
                loads,
                k_values: raw.K_values,
                lambda_values: raw.lambda_values,
                gamma_values: raw.gamma_values,
                b_max,
                grid_points,
            },
        })
    }

    pub fn preset(preset: Preset) -> Result<Self> {
        Self::from_raw(preset.raw())
    }

    /// Preset (default `table1`) overlaid with the keys of `text`.
    pub fn from_toml(preset: Option<Preset>, text: &str) -> Result<Self> {
        let base = preset.unwrap_or(Preset::Table1).raw();
        Self::from_raw(RawConfig::parse(text)?.overlay(base))
    }

    pub fn load(preset: Option<Preset>, path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_toml(preset, &text)
            }
            None => Self::preset(preset.unwrap_or(Preset::Table1)),
        }
    }
}
