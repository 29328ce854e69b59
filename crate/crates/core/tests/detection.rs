mod common;

use common::{argmax, fd_log_posteriors, kcl_bus, margin, monte_carlo_error_rate};
use powertalk::detection::{
    analytic_error_probability, build_detection_space, fd_band_decision, map_decision_fd, map_decision_tdma,
    training_length, PointLabel, SpaceSource,
};
use powertalk::grid::{steady_state, GridConfig, Observation, Symbol};
use powertalk::signaling::{design_fixed_rd_constellation, Constellation};
use powertalk::Mode;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pair(v0: f64, v1: f64, p_b: f64) -> Constellation {
    Constellation::new(Symbol::new(v0, 2.0).unwrap(), Symbol::new(v1, 2.0).unwrap(), p_b).unwrap()
}

fn obs(v: f64, i: f64) -> Observation {
    Observation { v_tilde: v, i_tilde: i }
}

#[test]
fn tdma_oracle_space_matches_steady_state() {
    let grid = GridConfig::table1(2);
    let c = pair(400.0, 400.6, 0.5);
    let space = build_detection_space(&grid, &c, Mode::Tdma, 1, 100.0, SpaceSource::Oracle).unwrap();
    assert_eq!(space.points.len(), 2);
    for (p, bit) in space.points.iter().zip([false, true]) {
        let ss = steady_state(&[c.symbol(bit), grid.nominal[1]], 100.0).unwrap();
        assert_eq!(p.label, PointLabel::Tdma { transmitter: 0, bit });
        assert!((p.v_star - ss.v_star).abs() < 1e-12 && (p.i_k - ss.currents[1]).abs() < 1e-12);
        // the receiver's outputs lie on its own droop line
        assert!((p.v_star - (400.0 - 2.0 * p.i_k)).abs() < 1e-9);
    }
    // bit 1 raises the bus and lowers the receiver's current
    assert!(space.points[1].i_k < space.points[0].i_k);
}

#[test]
fn fd_points_depend_only_on_weight() {
    let c = pair(399.0, 401.0, 0.5);
    let space = build_detection_space(
        &GridConfig::table1(3),
        &c,
        Mode::FullDuplex,
        0,
        120.0,
        SpaceSource::Oracle,
    )
    .unwrap();
    assert_eq!(space.points.len(), 6);
    let a = kcl_bus(&[(399.0, 2.0), (399.0, 2.0), (401.0, 2.0)], 120.0);
    let b = kcl_bus(&[(399.0, 2.0), (401.0, 2.0), (399.0, 2.0)], 120.0);
    assert!((a - b).abs() < 1e-12);
    let w1 = space.fd_points(false).unwrap()[1];
    assert!((w1.v_star - a).abs() < 1e-12);
    // higher weight means less power from the receiver
    for own in [false, true] {
        let pts = space.fd_points(own).unwrap();
        assert!(pts.windows(2).all(|w| w[0].v_star * w[0].i_k > w[1].v_star * w[1].i_k));
        let total: f64 = pts.iter().map(|p| p.prior).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn noiseless_learned_space_equals_oracle() {
    let grid = GridConfig::table1(3).with_noise(0.0, 0.0);
    let c = pair(399.0, 400.8, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for mode in Mode::ALL {
        let oracle = build_detection_space(&grid, &c, mode, 2, 90.0, SpaceSource::Oracle).unwrap();
        let learned =
            build_detection_space(&grid, &c, mode, 2, 90.0, SpaceSource::Learned { m: 1, rng: &mut rng }).unwrap();
        assert_eq!(learned.training_slots, Some(training_length(mode, 3, 1)));
        for (a, b) in oracle.points.iter().zip(&learned.points) {
            assert!((a.v_star - b.v_star).abs() < 1e-12 && (a.i_k - b.i_k).abs() < 1e-12);
        }
    }
    assert_eq!(training_length(Mode::Tdma, 3, 2), 12);
    assert_eq!(training_length(Mode::FullDuplex, 3, 2), 36);
}

#[test]
fn learned_space_converges_with_m() {
    let grid = GridConfig::table1(2).with_noise(0.01, 0.01);
    let c = pair(400.0, 400.6, 0.5);
    let oracle = build_detection_space(&grid, &c, Mode::Tdma, 0, 150.0, SpaceSource::Oracle).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let err = |m: usize, rng: &mut ChaCha8Rng| {
        let s = build_detection_space(&grid, &c, Mode::Tdma, 0, 150.0, SpaceSource::Learned { m, rng }).unwrap();
        (s.points[0].v_star - oracle.points[0].v_star).abs()
    };
    let mean = |m: usize, rng: &mut ChaCha8Rng| (0..400).map(|_| err(m, rng)).sum::<f64>() / 400.0;
    let (e1, e100) = (mean(1, &mut rng), mean(100, &mut rng));
    assert!(e100 < e1 / 5.0, "{e1} {e100}");
}

#[test]
fn tdma_map_examples() {
    let grid = GridConfig::table1(2);
    let c = pair(400.0, 400.6, 0.5);
    let space = build_detection_space(&grid, &c, Mode::Tdma, 1, 100.0, SpaceSource::Oracle).unwrap();
    let (p0, p1) = (space.points[0], space.points[1]);
    assert!(map_decision_tdma(&space, 0, &obs(p1.v_star, p1.i_k), 0.5).unwrap());
    assert!(!map_decision_tdma(&space, 0, &obs(p0.v_star, p0.i_k), 0.5).unwrap());
    let mid = obs(0.5 * (p0.v_star + p1.v_star), 0.5 * (p0.i_k + p1.i_k));
    assert!(map_decision_tdma(&space, 0, &mid, 0.5).unwrap());
    let b = space.tdma_boundary(0, 0.5).unwrap();
    assert!(b.statistic(mid.v_tilde, mid.i_tilde).abs() < 1e-12 * (b.c_v.abs() + b.c_i.abs()));
    // symmetric pair: equal conditional error statistics
    let (m1, s1) = b.statistic_moments(p1.v_star, p1.i_k, 0.001, 0.001);
    let (m0, s0) = b.statistic_moments(p0.v_star, p0.i_k, 0.001, 0.001);
    assert!((m1 + m0).abs() < 1e-12 * m1.abs() && s1 == s0);
    assert!(map_decision_tdma(&space, 1, &mid, 0.5).is_err());
}

#[test]
fn fd_point_decisions_recover_weight() {
    for p_b in [0.2, 0.5, 0.8] {
        let c = pair(399.0, 401.0, p_b);
        let space = build_detection_space(
            &GridConfig::table1(5),
            &c,
            Mode::FullDuplex,
            3,
            70.0,
            SpaceSource::Oracle,
        )
        .unwrap();
        for own in [false, true] {
            for (w, p) in space.fd_points(own).unwrap().iter().enumerate() {
                assert_eq!(map_decision_fd(&space, &obs(p.v_star, p.i_k), own, p_b).unwrap(), w);
            }
        }
    }
}

#[test]
fn fd_prior_shift_favours_top_weight() {
    let grid = GridConfig::table1(3).with_noise(0.01, 0.01);
    let c = pair(399.0, 401.0, 0.5);
    let space = build_detection_space(&grid, &c, Mode::FullDuplex, 0, 100.0, SpaceSource::Oracle).unwrap();
    let pts = space.fd_points(false).unwrap();
    let mid = obs(0.5 * (pts[1].v_star + pts[2].v_star), 0.5 * (pts[1].i_k + pts[2].i_k));
    assert_eq!(map_decision_fd(&space, &mid, false, 0.5).unwrap(), 1);
    assert_eq!(map_decision_fd(&space, &mid, false, 0.95).unwrap(), 2);
}

#[test]
fn fd_bands_partition_the_plane() {
    for k in 2..=6 {
        let grid = GridConfig::table1(k).with_noise(0.002, 0.001);
        for p_b in [0.5, 0.8] {
            let c = pair(399.0, 400.9, p_b);
            let space = build_detection_space(&grid, &c, Mode::FullDuplex, 0, 180.0, SpaceSource::Oracle).unwrap();
            for own in [false, true] {
                let bounds = space.fd_boundaries(own, p_b).unwrap();
                let pts: Vec<(f64, f64)> = space
                    .fd_points(own)
                    .unwrap()
                    .iter()
                    .map(|p| (p.v_star, p.i_k))
                    .collect();
                let (v0, i0) = pts[0];
                let (v1, i1) = pts[pts.len() - 1];
                for a in 0..150 {
                    for b in 0..150 {
                        let v = v0 + (v1 - v0) * (a as f64 / 75.0 - 0.5);
                        let i = i0 + (i1 - i0) * (b as f64 / 75.0 - 0.5) + 0.01 * (b as f64 - 75.0) / 75.0;
                        let post = fd_log_posteriors(&pts, (v, i), p_b, grid.sigma_v, grid.sigma_i);
                        if margin(&post) < 1e-6 {
                            continue;
                        }
                        assert_eq!(fd_band_decision(&bounds, &obs(v, i)), Some(argmax(&post)));
                    }
                }
            }
        }
    }
}

#[test]
fn analytic_error_matches_monte_carlo() {
    let mut cases = 0;
    for (sv, gammas) in [(0.001, [0.05, 0.1, 0.2]), (0.01, [0.05, 0.1, 0.2])] {
        for gamma in gammas {
            for mode in Mode::ALL {
                for k in 2..=6 {
                    let grid = GridConfig::table1(k).with_noise(sv, sv);
                    let Ok(c) = design_fixed_rd_constellation(gamma, mode, &grid, 400.0, 0.5) else {
                        continue;
                    };
                    let p = 1.0 - analytic_error_probability(&grid, &c, mode).unwrap().p_d;
                    let n = 100_000;
                    let p_hat = monte_carlo_error_rate(&grid, &c, mode, n, 1000 + k as u64);
                    let se = (p * (1.0 - p) / n as f64).sqrt();
                    assert!(
                        (p_hat - p).abs() <= 3.0 * se + 1.0 / n as f64,
                        "{mode} K={k} gamma={gamma} sigma={sv}: analytic {p:.4e} vs MC {p_hat:.4e}"
                    );
                    cases += 1;
                }
            }
        }
    }
    assert!(cases >= 30);
}

#[test]
fn error_probability_falls_with_budget_and_noise() {
    for mode in Mode::ALL {
        let grid = GridConfig::table1(3).with_noise(0.01, 0.01);
        let pe: Vec<f64> = [0.01, 0.02, 0.05]
            .iter()
            .map(|&g| {
                let c = design_fixed_rd_constellation(g, mode, &grid, 400.0, 0.5).unwrap();
                1.0 - analytic_error_probability(&grid, &c, mode).unwrap().p_d
            })
            .collect();
        assert!(pe.windows(2).all(|w| w[1] <= w[0]), "{mode}: {pe:?}");
        let c = design_fixed_rd_constellation(0.01, mode, &grid, 400.0, 0.5).unwrap();
        let quiet = GridConfig::table1(3).with_noise(1e-7, 1e-7);
        assert!(1.0 - analytic_error_probability(&quiet, &c, mode).unwrap().p_d < 1e-12);
    }
}
