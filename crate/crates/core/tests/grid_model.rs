mod common;

use common::{kcl_bus, nodal_solve};
use powertalk::grid::{observe, sample_load_slots, solve_steady_state, steady_state, GridConfig, LoadProcess, Symbol};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn unit() -> impl Strategy<Value = (f64, f64)> {
    (360.0..440.0f64, 0.05..20.0f64)
}

proptest! {
    #[test]
    fn matches_nodal_analysis(units in prop::collection::vec(unit(), 1..=16), r in 1.0..5000.0f64) {
        let inputs: Vec<Symbol> = units.iter().map(|&(v, rd)| Symbol::new(v, rd).unwrap()).collect();
        let ss = steady_state(&inputs, r).unwrap();
        let oracle = nodal_solve(&units, &vec![0.0; units.len()], r);
        prop_assert!((ss.v_star - oracle.bus).abs() <= 1e-9 * oracle.bus.abs());
        for (a, b) in ss.currents.iter().zip(&oracle.currents) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn kirchhoff_balance_holds(units in prop::collection::vec(unit(), 1..=16), r in 1.0..5000.0f64) {
        let inputs: Vec<Symbol> = units.iter().map(|&(v, rd)| Symbol::new(v, rd).unwrap()).collect();
        let ss = steady_state(&inputs, r).unwrap();
        let supplied: f64 = ss.currents.iter().sum();
        prop_assert!((supplied - ss.v_star / r).abs() <= 1e-9 * (ss.v_star / r).max(1.0));
        for (u, s) in inputs.iter().enumerate() {
            prop_assert!((ss.v_star - (s.v - s.r_d * ss.currents[u])).abs() <= 1e-9 * s.v);
            prop_assert!((ss.powers[u] - ss.v_star * ss.currents[u]).abs() <= 1e-9 * ss.powers[u].abs().max(1.0));
        }
    }

    #[test]
    fn bus_voltage_rises_with_load_resistance(units in prop::collection::vec(unit(), 1..=8), r in 1.0..1000.0f64, dr in 0.01..100.0f64) {
        let inputs: Vec<Symbol> = units.iter().map(|&(v, rd)| Symbol::new(v, rd).unwrap()).collect();
        prop_assert!(steady_state(&inputs, r + dr).unwrap().v_star > steady_state(&inputs, r).unwrap().v_star);
    }
}

#[test]
fn tiny_feeder_resistance_converges_to_ideal_bus() {
    let units = [(401.0, 2.0), (398.5, 1.5), (400.2, 3.0)];
    let ideal = kcl_bus(&units, 120.0);
    let gap = |f: f64| (nodal_solve(&units, &[f; 3], 120.0).bus - ideal).abs();
    assert!(gap(1e-2) < 1e-1);
    assert!(gap(1e-4) < 1e-3);
    assert!(gap(1e-4) < gap(1e-3) && gap(1e-3) < gap(1e-2));
}

#[test]
fn nominal_pair_at_100_ohm() {
    let grid = GridConfig::table1(2);
    let ss = solve_steady_state(&grid, &grid.nominal, 100.0).unwrap();
    let v = 400.0 / 1.01;
    assert!((ss.v_star - v).abs() < 1e-12);
    assert!((ss.currents[0] - (400.0 - v) / 2.0).abs() < 1e-12);
}

#[test]
fn size_mismatch_is_rejected() {
    let grid = GridConfig::table1(3);
    assert!(solve_steady_state(&grid, &grid.nominal[..2], 100.0).is_err());
    assert!(solve_steady_state(&grid, &grid.nominal, 0.0).is_err());
    assert!(Symbol::new(400.0, 0.0).is_err());
}

#[test]
fn observation_noise_has_configured_spread() {
    let grid = GridConfig::table1(2).with_noise(0.01, 0.002);
    let ss = solve_steady_state(&grid, &grid.nominal, 80.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 200_000;
    let (mut sv, mut sv2, mut si2) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let y = observe(&ss, 1, &grid, &mut rng);
        let dv = y.v_tilde - ss.v_star;
        sv += dv;
        sv2 += dv * dv;
        si2 += (y.i_tilde - ss.currents[1]).powi(2);
    }
    let n = n as f64;
    assert!((sv / n).abs() < 4.0 * 0.01 / n.sqrt());
    assert!(((sv2 / n).sqrt() / 0.01 - 1.0).abs() < 0.01);
    assert!(((si2 / n).sqrt() / 0.002 - 1.0).abs() < 0.01);
}

#[test]
fn load_changes_follow_the_change_probability() {
    let process = LoadProcess::new(50.0, 250.0, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 2_000_000u64;
    let changes = sample_load_slots(&process, n, &mut rng);
    let p = process.change_probability();
    let expected = p * n as f64;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    assert!((changes.len() as f64 - expected).abs() < 4.0 * sd);
    assert!(changes.windows(2).all(|w| w[0].slot < w[1].slot));
    assert!(changes.iter().all(|c| c.slot < n && (50.0..=250.0).contains(&c.r)));
    let mean_r = changes.iter().map(|c| c.r).sum::<f64>() / changes.len() as f64;
    assert!((mean_r - 150.0).abs() < 2.0);
    assert!(sample_load_slots(&LoadProcess::new(50.0, 250.0, 0.0).unwrap(), n, &mut rng).is_empty());
}
