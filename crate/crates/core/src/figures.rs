//! Data tables behind the evaluation plots, one generator per figure.
//!
//! Every table renders to CSV with a leading `#` comment naming the figure
//! and its fixed parameters, followed by a header row.
//!
//! | id | columns |
//! |----|---------|
//! | `fig6` | `mode,K,v0,v1,delta,feasible` |
//! | `fig7` | `mode,K,r,kind,label,v,i,slope,intercept` |
//! | `fig8` | `mode,gamma,K,v1,p_d` |
//! | `fig11` | `mode,K,lambda,B,eta` |
//! | `fig12` | `mode,K,lambda,B_opt,eta` |
//! | `fig13` | `mode,K,lambda,eta` |
//! | `fig14` | `panel,mode,K,lambda,B,eta` |
//! | `fig15` | `panel,mode,K,lambda,B,mu` |

use rayon::prelude::*;

use crate::coding::MAX_FD_UNITS;
use crate::config::RunConfig;
use crate::detection::{analytic_error_probability, build_detection_space, PointLabel, SpaceSource};
use crate::grid::Symbol;
use crate::protocol::{change_probability, eta_periodic, eta_tracker, optimal_b, reception_rate};
use crate::signaling::{average_deviation, constellation_feasible, design_fixed_rd_constellation, Constellation};
use crate::{Error, Mode, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureId {
    Fig6,
    Fig7,
    Fig8,
    Fig11,
    Fig12,
    Fig13,
    Fig14,
    Fig15,
}

impl FigureId {
    pub const ALL: [FigureId; 8] = [
        FigureId::Fig6,
        FigureId::Fig7,
        FigureId::Fig8,
        FigureId::Fig11,
        FigureId::Fig12,
        FigureId::Fig13,
        FigureId::Fig14,
        FigureId::Fig15,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FigureId::Fig6 => "fig6",
            FigureId::Fig7 => "fig7",
            FigureId::Fig8 => "fig8",
            FigureId::Fig11 => "fig11",
            FigureId::Fig12 => "fig12",
            FigureId::Fig13 => "fig13",
            FigureId::Fig14 => "fig14",
            FigureId::Fig15 => "fig15",
        }
    }
}

impl std::str::FromStr for FigureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FigureId::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown figure `{s}` (known: fig6 fig7 fig8 fig11 fig12 fig13 fig14 fig15)"
                ))
            })
    }
}

/// A CSV table with a descriptive comment line.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub comment: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(comment: impl Into<String>, header: &[&'static str]) -> Self {
        Self {
            comment: comment.into(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# {}\n{}\n", self.comment, self.header.join(","));
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Index of column `name`.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| *h == name)
    }

    /// Column `name` parsed as numbers; unparsable cells become NaN.
    pub fn numeric(&self, name: &str) -> Vec<f64> {
        let Some(c) = self.column(name) else { return Vec::new() };
        self.rows.iter().map(|r| r[c].parse().unwrap_or(f64::NAN)).collect()
    }
}

pub fn generate(id: FigureId, cfg: &RunConfig) -> Result<Table> {
    match id {
        FigureId::Fig6 => fig6(cfg),
        FigureId::Fig7 => fig7(cfg),
        FigureId::Fig8 => fig8(cfg),
        FigureId::Fig11 => fig11(cfg),
        FigureId::Fig12 => fig12(cfg),
        FigureId::Fig13 => fig13(cfg),
        FigureId::Fig14 => rate_versus_k(cfg, false),
        FigureId::Fig15 => rate_versus_k(cfg, true),
    }
}

fn ks(cfg: &RunConfig, default: &[usize]) -> Vec<usize> {
    cfg.sweeps.k_values.clone().unwrap_or_else(|| default.to_vec())
}

fn lambdas(cfg: &RunConfig, default: &[f64]) -> Vec<f64> {
    cfg.sweeps.lambda_values.clone().unwrap_or_else(|| default.to_vec())
}

/// Full-duplex coding exists only up to this many units.
fn mode_supports(mode: Mode, k: usize) -> bool {
    mode == Mode::Tdma || k <= MAX_FD_UNITS
}

/// Signaling space and average deviation over a `(v0, v1)` grid, nominal `r_d`.
pub fn fig6(cfg: &RunConfig) -> Result<Table> {
    let mut t = Table::new(
        "Figure 6: signaling space and average power deviation, fixed r_d constellation, equiprobable bits",
        &["mode", "K", "v0", "v1", "delta", "feasible"],
    );
    let n = cfg.sweeps.grid_points;
    let lo = cfg.grid.v_min - 10.0;
    let hi = cfg.grid.v_max + 5.0;
    let axis: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let r_d = cfg.grid.nominal[0].r_d;
    for mode in Mode::ALL {
        for k in ks(cfg, &[2, 3, 4]) {
            let grid = cfg.grid.with_units(k);
            let cells: Vec<(f64, f64)> = axis.iter().flat_map(|&a| axis.iter().map(move |&b| (a, b))).collect();
            let rows = cells
                .par_iter()
                .map(|&(v0, v1)| -> Result<Vec<String>> {
                    let c = Constellation::new(Symbol::new(v0, r_d)?, Symbol::new(v1, r_d)?, cfg.p_b)?;
                    let delta = average_deviation(&c, mode, &grid)?.delta;
                    let feasible = constellation_feasible(&c, mode, &grid);
                    Ok(vec![
                        mode.to_string(),
                        k.to_string(),
                        format!("{v0:.4}"),
                        format!("{v1:.4}"),
                        format!("{delta:.6e}"),
                        u8::from(feasible).to_string(),
                    ])
                })
                .collect::<Result<Vec<_>>>()?;
            t.rows.extend(rows);
        }
    }
    Ok(t)
}

/// Detection spaces of unit 0 with their MAP boundaries.
pub fn fig7(cfg: &RunConfig) -> Result<Table> {
    let mut t = Table::new(
        format!(
            "Figure 7: detection space of unit 0, fixed r_d constellation, gamma = {}, v0 = {} V",
            cfg.gamma, cfg.anchor_v0
        ),
        &["mode", "K", "r", "kind", "label", "v", "i", "slope", "intercept"],
    );
    let panels: Vec<(usize, f64)> = match &cfg.sweeps.k_values {
        Some(k) => k
            .iter()
            .flat_map(|&k| cfg.sweeps.loads.iter().map(move |&r| (k, r)))
            .collect(),
        None => vec![(2, 100.0), (2, 60.0), (4, 100.0)],
    };
    for mode in Mode::ALL {
        for &(k, r) in &panels {
            let grid = cfg.grid.with_units(k);
            let c = match design_fixed_rd_constellation(cfg.gamma, mode, &grid, cfg.anchor_v0, cfg.p_b) {
                Ok(c) => c,
                Err(Error::BudgetUnreachable { .. }) => {
                    t.rows.push(vec![
                        mode.to_string(),
                        k.to_string(),
                        r.to_string(),
                        "unreachable".into(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                    ]);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let space = build_detection_space(&grid, &c, mode, 0, r, SpaceSource::Oracle)?;
            let row = |kind: &str, label: String, v: String, i: String, slope: String, icpt: String| {
                vec![
                    mode.to_string(),
                    k.to_string(),
                    r.to_string(),
                    kind.into(),
                    label,
                    v,
                    i,
                    slope,
                    icpt,
                ]
            };
            for p in &space.points {
                let label = match p.label {
                    PointLabel::Tdma { transmitter, bit } => format!("u{transmitter}b{}", u8::from(bit)),
                    PointLabel::Fd { own_bit, weight } => format!("own{}w{weight}", u8::from(own_bit)),
                };
                t.rows.push(row(
                    "point",
                    label,
                    format!("{:.6}", p.v_star),
                    format!("{:.6}", p.i_k),
                    String::new(),
                    String::new(),
                ));
            }
            let boundaries = match mode {
                Mode::Tdma => (1..k)
                    .map(|j| Ok((format!("u{j}"), space.tdma_boundary(j, cfg.p_b)?)))
                    .collect::<Result<Vec<_>>>()?,
                Mode::FullDuplex => {
                    let mut out = Vec::new();
                    for own in [false, true] {
                        for (w, b) in space.fd_boundaries(own, cfg.p_b)?.into_iter().enumerate() {
                            out.push((format!("own{}w{w}|w{}", u8::from(own), w + 1), b));
                        }
                    }
                    out
                }
            };
            for (label, b) in boundaries {
                t.rows.push(row(
                    "boundary",
                    label,
                    String::new(),
                    String::new(),
                    format!("{:.6e}", b.slope()),
                    format!("{:.6}", b.intercept()),
                ));
            }
        }
    }
    Ok(t)
}

/// Analytic probability of correct detection against the number of units.
pub fn fig8(cfg: &RunConfig) -> Result<Table> {
    let mut t = Table::new(
        format!(
            "Figure 8: probability of correct detection, fixed r_d constellation, v0 = {} V, v1 solving delta = gamma, sigma_v = {}, sigma_i = {}",
            cfg.anchor_v0, cfg.grid.sigma_v, cfg.grid.sigma_i
        ),
        &["mode", "gamma", "K", "v1", "p_d"],
    );
    let gammas = cfg.sweeps.gamma_values.clone().unwrap_or_else(|| vec![cfg.gamma]);
    let k_axis = ks(cfg, &(2..=30).collect::<Vec<_>>());
    let mut jobs: Vec<(Mode, f64, usize)> = Vec::new();
    for mode in Mode::ALL {
        for &g in &gammas {
            jobs.extend(k_axis.iter().map(|&k| (mode, g, k)));
        }
    }
    let rows = jobs
        .par_iter()
        .map(|&(mode, gamma, k)| -> Result<Vec<String>> {
            let grid = cfg.grid.with_units(k);
            let head = vec![mode.to_string(), gamma.to_string(), k.to_string()];
            let tail = match design_fixed_rd_constellation(gamma, mode, &grid, cfg.anchor_v0, cfg.p_b) {
                Ok(c) => {
                    let p_d = analytic_error_probability(&grid, &c, mode)?.p_d;
                    vec![format!("{:.6}", c.x1.v), format!("{p_d:.12}")]
                }
                Err(Error::BudgetUnreachable { .. }) => vec![String::new(), String::new()],
                Err(e) => return Err(e),
            };
            Ok([head, tail].concat())
        })
        .collect::<Result<Vec<_>>>()?;
    t.rows = rows;
    Ok(t)
}

/// Periodic-training rate against `B`.
pub fn fig11(cfg: &RunConfig) -> Result<Table> {
    let m = cfg.protocol.m;
    let mut t = Table::new(
        format!("Figure 11: eta against B with periodic training, M = {m}"),
        &["mode", "K", "lambda", "B", "eta"],
    );
    for mode in Mode::ALL {
        for k in ks(cfg, &[10, 15]).into_iter().filter(|&k| mode_supports(mode, k)) {
            for lambda in lambdas(cfg, &[1e-4, 1e-3, 1e-2]) {
                let p = change_probability(lambda);
                for b in 1..=cfg.sweeps.b_max {
                    let eta = eta_periodic(mode, k, m, b, p)?;
                    t.rows.push(vec![
                        mode.to_string(),
                        k.to_string(),
                        lambda.to_string(),
                        b.to_string(),
                        format!("{eta:.9e}"),
                    ]);
                }
            }
        }
    }
    Ok(t)
}

const LAMBDA_GRID: [f64; 5] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];

/// Rate-maximizing `B` against `K` and `lambda`.
pub fn fig12(cfg: &RunConfig) -> Result<Table> {
    let m = cfg.protocol.m;
    let mut t = Table::new(
        format!("Figure 12: optimal B for periodic training, M = {m}"),
        &["mode", "K", "lambda", "B_opt", "eta"],
    );
    for mode in Mode::ALL {
        for k in ks(cfg, &(2..=18).collect::<Vec<_>>())
            .into_iter()
            .filter(|&k| mode_supports(mode, k))
        {
            for lambda in lambdas(cfg, &LAMBDA_GRID) {
                let (b, eta) = optimal_b(mode, k, m, change_probability(lambda))?;
                t.rows.push(vec![
                    mode.to_string(),
                    k.to_string(),
                    lambda.to_string(),
                    b.to_string(),
                    format!("{eta:.9e}"),
                ]);
            }
        }
    }
    Ok(t)
}

/// Tracker rate against the change intensity.
pub fn fig13(cfg: &RunConfig) -> Result<Table> {
    let (m, l_bs) = tracker_params(cfg);
    let mut t = Table::new(
        format!("Figure 13: eta against lambda with the load change tracker, M = {m}, L_BS = {l_bs}"),
        &["mode", "K", "lambda", "eta"],
    );
    let default: Vec<f64> = (0..=40).map(|i| 10f64.powf(-6.0 + i as f64 * 0.125)).collect();
    for mode in Mode::ALL {
        for k in ks(cfg, &[10, 15]).into_iter().filter(|&k| mode_supports(mode, k)) {
            for lambda in lambdas(cfg, &default) {
                let eta = eta_tracker(mode, k, m, l_bs, change_probability(lambda))?;
                t.rows.push(vec![
                    mode.to_string(),
                    k.to_string(),
                    format!("{lambda:e}"),
                    format!("{eta:.9e}"),
                ]);
            }
        }
    }
    Ok(t)
}

fn tracker_params(cfg: &RunConfig) -> (usize, usize) {
    let l_bs = match cfg.protocol.variant {
        crate::protocol::ProtocolVariant::Tracker { l_bs, .. } => l_bs,
        crate::protocol::ProtocolVariant::Periodic { .. } => 1,
    };
    (cfg.protocol.m, l_bs)
}

/// `eta` (or `mu`) against `K` for both protocols.
fn rate_versus_k(cfg: &RunConfig, reception: bool) -> Result<Table> {
    let (m, l_bs) = tracker_params(cfg);
    let (title, col) = if reception {
        ("Figure 15: net reception rate per unit against K", "mu")
    } else {
        ("Figure 14: net transmission rate per unit against K", "eta")
    };
    let mut t = Table::new(
        format!("{title}, periodic training at B_opt and load change tracker, M = {m}, L_BS = {l_bs}"),
        &["panel", "mode", "K", "lambda", "B", col],
    );
    for lambda in lambdas(cfg, &[1e-3]) {
        let p = change_probability(lambda);
        for panel in ["periodic", "tracker"] {
            for mode in Mode::ALL {
                for k in ks(cfg, &(2..=18).collect::<Vec<_>>())
                    .into_iter()
                    .filter(|&k| mode_supports(mode, k))
                {
                    let (b, eta) = if panel == "periodic" {
                        let (b, eta) = optimal_b(mode, k, m, p)?;
                        (b.to_string(), eta)
                    } else {
                        (String::new(), eta_tracker(mode, k, m, l_bs, p)?)
                    };
                    let value = if reception { reception_rate(eta, k) } else { eta };
                    t.rows.push(vec![
                        panel.into(),
                        mode.to_string(),
                        k.to_string(),
                        lambda.to_string(),
                        b,
                        format!("{value:.9e}"),
                    ]);
                }
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;

    #[test]
    fn ids_round_trip() {
        for id in FigureId::ALL {
            assert_eq!(id.name().parse::<FigureId>().unwrap(), id);
        }
        assert!("fig9".parse::<FigureId>().is_err());
    }

    #[test]
    fn csv_has_comment_and_header() {
        let cfg = RunConfig::preset(Preset::Sec7).unwrap();
        let csv = fig13(&cfg).unwrap().to_csv();
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("# Figure 13"));
        assert_eq!(lines.next().unwrap(), "mode,K,lambda,eta");
    }

    #[test]
    fn fig7_tdma_k2_has_two_points_one_boundary() {
        let cfg = RunConfig::preset(Preset::Fig7).unwrap();
        let t = fig7(&cfg).unwrap();
        let rows: Vec<_> = t
            .rows
            .iter()
            .filter(|r| r[0] == "tdma" && r[1] == "2" && r[2] == "100")
            .collect();
        assert_eq!(rows.iter().filter(|r| r[3] == "point").count(), 2);
        assert_eq!(rows.iter().filter(|r| r[3] == "boundary").count(), 1);
    }
}
