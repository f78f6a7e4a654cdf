use causalrank::datagen::{
    build_personalized_propensity, filter_log, generate_synthetic_base, personalized_mean, synthetic_weekly_log,
    tune_prior_weight, SyntheticBaseConfig, TargetMean,
};
use causalrank::domain::LogRecord;
use causalrank::InteractionLog;
use ndarray::Array2;

/// Dense `(user, item, week)` cube of `(y, z)` flags.
fn dense(log: &InteractionLog) -> Vec<Vec<Vec<(bool, bool)>>> {
    let mut cube = vec![vec![vec![(false, false); log.n_weeks()]; log.n_items()]; log.n_users()];
    for r in log.records() {
        cube[r.user][r.item][r.week] = (r.y, r.z);
    }
    cube
}

/// Brier score of prior weight `w`, recomputed from scratch over the dense cube.
fn brier(log: &InteractionLog, w: f64) -> f64 {
    let cube = dense(log);
    let (n_u, n_i, last) = (log.n_users(), log.n_items(), log.n_weeks() - 1);
    let visited = |u: usize, t: usize| (0..n_i).any(|i| cube[u][i][t].0);
    let mut a_t = vec![vec![0.0; n_i]; n_u];
    let mut b_t = vec![vec![0.0; n_i]; n_u];
    let mut a_c = vec![vec![0.0; n_i]; n_u];
    let mut b_c = vec![vec![0.0; n_i]; n_u];
    for u in 0..n_u {
        for i in 0..n_i {
            for t in 0..last {
                let (y, z) = cube[u][i][t];
                let v = visited(u, t) as u8 as f64;
                if z {
                    a_t[u][i] += y as u8 as f64;
                    b_t[u][i] += v;
                } else {
                    a_c[u][i] += y as u8 as f64;
                    b_c[u][i] += v;
                }
            }
        }
    }
    let item_mean = |t: &Vec<Vec<f64>>, i: usize| (0..n_u).map(|u| t[u][i]).sum::<f64>() / n_u as f64;
    let rate = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>, u: usize, i: usize| {
        let den = b[u][i] + w * item_mean(b, i);
        if den <= 0.0 {
            0.0
        } else {
            ((a[u][i] + w * item_mean(a, i)) / den).min(1.0)
        }
    };
    let (mut sq, mut n) = (0.0, 0.0);
    for u in (0..n_u).filter(|&u| visited(u, last)) {
        for i in 0..n_i {
            let (y, z) = cube[u][i][last];
            let pred = if z { rate(&a_t, &b_t, u, i) } else { rate(&a_c, &b_c, u, i) };
            sq += (pred - y as u8 as f64).powi(2);
            n += 1.0;
        }
    }
    sq / n
}

#[test]
fn prior_weight_matches_exhaustive_brier_grid() {
    let base = generate_synthetic_base(&SyntheticBaseConfig { n_users: 25, n_items: 12, seed: 3, ..Default::default() })
        .unwrap();
    let log = synthetic_weekly_log(&base, 8, 4).unwrap();
    let grid: Vec<f64> = (0..=20).map(|k| k as f64 * 0.25).collect();
    let (best, scores) = tune_prior_weight(&log, &grid).unwrap();
    let oracle: Vec<f64> = grid.iter().map(|&w| brier(&log, w)).collect();
    for (a, b) in scores.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    let min = oracle.iter().copied().fold(f64::INFINITY, f64::min);
    let first = grid[oracle.iter().position(|&s| s == min).unwrap()];
    assert_eq!(best, first);
}

#[test]
fn filtering_is_idempotent() {
    let base = generate_synthetic_base(&SyntheticBaseConfig { n_users: 40, n_items: 15, seed: 8, ..Default::default() })
        .unwrap();
    let log = synthetic_weekly_log(&base, 30, 1).unwrap();
    let once = filter_log(&log, 3).unwrap();
    let twice = filter_log(&once, 3).unwrap();
    assert_eq!(once.records(), twice.records());
    assert_eq!((once.n_users(), once.n_items()), (twice.n_users(), twice.n_items()));
}

#[test]
fn filter_drops_sparse_users_and_unrecommended_items() {
    let mut records = Vec::new();
    for week in 0..12 {
        records.push(LogRecord { user: 0, item: 0, week, y: true, z: week % 2 == 0 });
        records.push(LogRecord { user: 0, item: 1, week, y: true, z: false });
    }
    for week in 0..3 {
        records.push(LogRecord { user: 1, item: 0, week, y: true, z: true });
    }
    let log = InteractionLog::new(2, 2, 12, records).unwrap();
    let kept = filter_log(&log, 10).unwrap();
    assert_eq!((kept.n_users(), kept.n_items()), (1, 1));
    assert_eq!(kept.user_ids, vec!["0"]);
    assert_eq!(kept.item_ids, vec!["0"]);
}

#[test]
fn personalized_propensity_decreases_with_preference_rank() {
    let base = generate_synthetic_base(&SyntheticBaseConfig { n_users: 30, n_items: 20, seed: 2, ..Default::default() })
        .unwrap();
    for beta in [0.5, 1.0, 2.0] {
        let pm = build_personalized_propensity(&base.mu_t, &base.mu_c, &base.propensity, beta, TargetMean::Value(0.1))
            .unwrap();
        assert!((pm.mean() - 0.1).abs() < 1e-5);
        let observed: Array2<f64> = &base.propensity.p * &base.mu_t + &(1.0 - &base.propensity.p) * &base.mu_c;
        for u in 0..30 {
            let mut items: Vec<usize> = (0..20).collect();
            items.sort_by(|&a, &b| observed[[u, b]].total_cmp(&observed[[u, a]]).then(a.cmp(&b)));
            for w in items.windows(2) {
                assert!(pm.p[[u, w[0]]] >= pm.p[[u, w[1]]]);
            }
        }
    }
}

#[test]
fn personalized_mean_solves_two_item_example() {
    assert!((personalized_mean(1.0, 2.0, 2) - 0.625).abs() < 1e-15);
}
