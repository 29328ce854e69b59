mod common;

use std::collections::HashMap;

use common::{dense_deviation, kcl_bus};
use powertalk::grid::{GridConfig, Symbol};
use powertalk::signaling::{
    average_deviation, constellation_feasible, design_fixed_rd_constellation, fd_pair_feasible,
    relative_power_deviation, sweep_violations, tdma_symbol_feasible, Constellation, DESIGN_TOLERANCE,
};
use powertalk::{Error, Mode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sym(v: f64, r_d: f64) -> Symbol {
    Symbol::new(v, r_d).unwrap()
}

fn pairs(inputs: &[Symbol]) -> Vec<(f64, f64)> {
    inputs.iter().map(|s| (s.v, s.r_d)).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn deviation_matches_dense_load_grid() {
    let grid = GridConfig::table1(2);
    let inputs = [sym(401.0, 2.0), sym(400.0, 2.0)];
    let got = relative_power_deviation(&inputs, &grid).unwrap();
    let oracle = dense_deviation(&pairs(&inputs), &pairs(&grid.nominal), 50.0, 250.0, 100_001);
    for (g, o) in got.iter().zip(&oracle) {
        assert!(rel(*g, *o) < 1e-6, "{g} vs {o}");
    }
}

#[test]
fn deviation_of_mixed_inputs_matches_dense_grid() {
    let grid = GridConfig::table1(4);
    let inputs = [sym(398.0, 1.5), sym(401.2, 2.0), sym(400.0, 2.0), sym(399.5, 3.0)];
    let got = relative_power_deviation(&inputs, &grid).unwrap();
    let oracle = dense_deviation(&pairs(&inputs), &pairs(&grid.nominal), 50.0, 250.0, 100_001);
    for (g, o) in got.iter().zip(&oracle) {
        assert!(rel(*g, *o) < 1e-6, "{g} vs {o}");
    }
}

#[test]
fn nominal_inputs_have_zero_deviation_and_swap_symmetry() {
    let grid = GridConfig::table1(3);
    assert!(relative_power_deviation(&grid.nominal, &grid)
        .unwrap()
        .iter()
        .all(|&d| d == 0.0));
    let a = relative_power_deviation(&[sym(401.0, 2.0), sym(400.0, 2.0), sym(400.0, 2.0)], &grid).unwrap();
    let b = relative_power_deviation(&[sym(400.0, 2.0), sym(401.0, 2.0), sym(400.0, 2.0)], &grid).unwrap();
    assert!((a[0] - b[1]).abs() < 1e-15 && (a[1] - b[0]).abs() < 1e-15 && (a[2] - b[2]).abs() < 1e-15);
}

#[test]
fn tdma_average_matches_enumeration_with_oracle() {
    let grid = GridConfig::table1(3);
    let c = Constellation::new(sym(399.5, 2.0), sym(400.8, 2.0), 0.3).unwrap();
    let rep = average_deviation(&c, Mode::Tdma, &grid).unwrap();
    let nominal = pairs(&grid.nominal);
    let mut expect = [0.0; 3];
    for j in 0..3 {
        for (bit, w) in [(false, 0.7), (true, 0.3)] {
            let mut x = nominal.clone();
            x[j] = (c.symbol(bit).v, 2.0);
            for (e, d) in expect
                .iter_mut()
                .zip(dense_deviation(&x, &nominal, 50.0, 250.0, 20_001))
            {
                *e += w / 3.0 * d;
            }
        }
    }
    for (g, e) in rep.delta_k.iter().zip(&expect) {
        assert!(rel(*g, *e) < 1e-6);
    }
    assert!((rep.delta - expect.iter().sum::<f64>() / 3.0).abs() < 1e-9);
}

#[test]
fn fd_average_agrees_with_monte_carlo_over_bit_vectors() {
    let k = 4;
    let grid = GridConfig::table1(k);
    let c = Constellation::new(sym(399.0, 2.0), sym(400.6, 2.0), 0.5).unwrap();
    let rep = average_deviation(&c, Mode::FullDuplex, &grid).unwrap();
    let nominal = pairs(&grid.nominal);
    let mut cache: HashMap<u32, f64> = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let mask: u32 = (0..k).map(|u| u32::from(rng.random_bool(c.p_b)) << u).sum();
        let d = *cache.entry(mask).or_insert_with(|| {
            let x: Vec<(f64, f64)> = (0..k).map(|u| (c.symbol(mask >> u & 1 == 1).v, 2.0)).collect();
            dense_deviation(&x, &nominal, 50.0, 250.0, 20_001).iter().sum::<f64>() / k as f64
        });
        s += d;
        s2 += d * d;
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!(
        (rep.delta - mean).abs() < 3.0 * se + 1e-9,
        "{} vs {mean} (se {se})",
        rep.delta
    );
}

#[test]
fn fd_symmetric_pair_gives_equal_unit_deviations() {
    let grid = GridConfig::table1(2);
    let c = Constellation::new(sym(399.0, 2.0), sym(401.0, 2.0), 0.5).unwrap();
    let rep = average_deviation(&c, Mode::FullDuplex, &grid).unwrap();
    assert!((rep.delta_k[0] - rep.delta_k[1]).abs() < 1e-15);
    let flat = Constellation::new(grid.nominal[0], grid.nominal[0], 0.5).unwrap();
    assert_eq!(average_deviation(&flat, Mode::FullDuplex, &grid).unwrap().delta, 0.0);
}

#[test]
fn tdma_deviation_never_exceeds_fd() {
    for k in 2..=4 {
        let grid = GridConfig::table1(k);
        for (v0, v1) in [(399.0, 401.0), (400.0, 400.5), (398.5, 400.0), (399.5, 401.5)] {
            let c = Constellation::new(sym(v0, 2.0), sym(v1, 2.0), 0.5).unwrap();
            let t = average_deviation(&c, Mode::Tdma, &grid).unwrap().delta;
            let f = average_deviation(&c, Mode::FullDuplex, &grid).unwrap().delta;
            assert!(t <= f, "K={k} ({v0},{v1}): {t} > {f}");
        }
    }
}

#[test]
fn tdma_feasibility_examples() {
    let grid = GridConfig::table1(2);
    assert!(tdma_symbol_feasible(sym(400.0, 2.0), &grid));
    assert!(!tdma_symbol_feasible(sym(500.0, 2.0), &grid));
    // below this voltage the unit would absorb current at R_max
    let floor = 400.0 / 2.0 / (1.0 / 250.0 + 1.0 / 2.0);
    assert!(!tdma_symbol_feasible(sym(floor - 0.01, 2.0), &grid));
}

#[test]
fn fd_bus_band_for_two_units() {
    let grid = GridConfig::table1(2);
    let (lo, hi): (f64, f64) = (2.0 * 390.0 / 100.0 + 390.0, 2.0 * 400.0 / 500.0 + 400.0);
    assert!((lo - 397.8).abs() < 1e-12 && (hi - 401.6).abs() < 1e-12);
    assert!(fd_pair_feasible(sym(399.0, 2.0), sym(401.0, 2.0), &grid));
    assert!(fd_pair_feasible(grid.nominal[0], grid.nominal[0], &grid));
    assert!(!fd_pair_feasible(sym(397.0, 2.0), sym(400.0, 2.0), &grid));
    assert!(!fd_pair_feasible(sym(399.0, 2.0), sym(402.0, 2.0), &grid));
}

#[test]
fn fd_current_rating_bounds_pairs() {
    // a 0.2 A rating makes the pair overload at R_min
    let mut grid = GridConfig::table1(2);
    grid.i_max = vec![0.2; 2];
    assert!(!fd_pair_feasible(sym(399.0, 2.0), sym(401.0, 2.0), &grid));
}

/// Feasibility never gains points when limits tighten.
#[test]
fn feasibility_is_monotone_in_limits() {
    let base = GridConfig::table1(3);
    let mut tight = base.clone();
    tight.v_min = 392.0;
    tight.v_max = 399.0;
    tight.i_max = vec![4.0; 3];
    for a in 0..60 {
        for b in 0..60 {
            let (v0, v1) = (395.0 + 0.1 * a as f64, 395.0 + 0.12 * b as f64);
            let c = Constellation::new(sym(v0, 2.0), sym(v1, 2.0), 0.5).unwrap();
            for mode in Mode::ALL {
                if constellation_feasible(&c, mode, &tight) {
                    assert!(constellation_feasible(&c, mode, &base));
                }
            }
        }
    }
}

/// Feasible `v1 > v0` for fixed anchors `v0` inside the two-unit bus band.
#[test]
fn fd_region_shrinks_with_unit_count() {
    let region = |k: usize| -> Vec<bool> {
        let grid = GridConfig::table1(k);
        [397.8, 398.5, 399.0, 399.5, 400.0, 400.5]
            .into_iter()
            .flat_map(|v0| (1..=800).map(move |b| (v0, v0 + 0.005 * b as f64)))
            .map(|(v0, v1)| fd_pair_feasible(sym(v0, 2.0), sym(v1, 2.0), &grid))
            .collect()
    };
    let (r2, r3, r4) = (region(2), region(3), region(4));
    let count = |r: &[bool]| r.iter().filter(|&&x| x).count();
    assert!(r3.iter().zip(&r2).all(|(&a, &b)| !a || b));
    assert!(r4.iter().zip(&r3).all(|(&a, &b)| !a || b));
    assert!(count(&r4) < count(&r3) && count(&r3) < count(&r2));
    assert!(count(&r4) > 0);
}

#[test]
fn designed_constellation_hits_budget_against_oracle() {
    let grid = GridConfig::table1(2);
    let c = design_fixed_rd_constellation(0.05, Mode::Tdma, &grid, 400.0, 0.5).unwrap();
    assert_eq!(c.x0, sym(400.0, 2.0));
    assert!(c.x1.v > 400.0 && c.x1.r_d == 2.0);
    assert!((average_deviation(&c, Mode::Tdma, &grid).unwrap().delta - 0.05).abs() <= DESIGN_TOLERANCE);
    let nominal = pairs(&grid.nominal);
    let oracle: f64 = (0..2)
        .map(|j| {
            let mut x = nominal.clone();
            x[j] = (c.x1.v, 2.0);
            0.5 * dense_deviation(&x, &nominal, 50.0, 250.0, 100_001).iter().sum::<f64>() / 2.0 / 2.0
        })
        .sum();
    assert!((oracle - 0.05).abs() < 1e-5, "{oracle}");
}

#[test]
fn small_budget_pulls_symbol_to_nominal() {
    let grid = GridConfig::table1(3);
    let mut last = f64::INFINITY;
    for gamma in [1e-2, 1e-3, 1e-4, 1e-5] {
        let c = design_fixed_rd_constellation(gamma, Mode::Tdma, &grid, 400.0, 0.5).unwrap();
        let gap = c.x1.v - 400.0;
        assert!(gap > 0.0 && gap < last);
        last = gap;
    }
    assert!(last < 0.01);
}

#[test]
fn oversized_budget_is_unreachable() {
    let grid = GridConfig::table1(2);
    assert!(matches!(
        design_fixed_rd_constellation(0.2, Mode::FullDuplex, &grid, 400.0, 0.5),
        Err(Error::BudgetUnreachable { .. })
    ));
    assert!(matches!(
        design_fixed_rd_constellation(5.0, Mode::Tdma, &grid, 400.0, 0.5),
        Err(Error::BudgetUnreachable { .. })
    ));
}

#[test]
fn designed_constellations_respect_limits_on_dense_sweep() {
    for k in [2, 3, 6] {
        let grid = GridConfig::table1(k);
        for mode in Mode::ALL {
            for gamma in [0.01, 0.05, 0.1] {
                if let Ok(c) = design_fixed_rd_constellation(gamma, mode, &grid, 400.0, 0.5) {
                    assert_eq!(sweep_violations(&c, mode, &grid, 5001, 1e-9), 0);
                    // independent check at both load ends with every ones-count
                    for r in [50.0, 250.0] {
                        for ones in 0..=k {
                            let x: Vec<(f64, f64)> = (0..k).map(|u| (c.symbol(u < ones).v, 2.0)).collect();
                            if mode == Mode::Tdma && ones > 1 {
                                continue;
                            }
                            let v = kcl_bus(&x, r);
                            assert!((390.0 - 1e-9..=400.0 + 1e-9).contains(&v));
                        }
                    }
                }
            }
        }
    }
}
