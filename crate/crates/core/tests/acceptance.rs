//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use causalrank::exp::{compare_bundle, mean_std, Grids, ReportRow};
use causalrank::metrics::{
    bias_cips, delta_estimated, delta_true, estimator_mae, hoeffding_bound, lambda_table, metric_average,
    metric_estimate,
};
use causalrank::models::MFModel;
use causalrank::train::{ips_weight, loss_gradient, popularity_ranker, weighted_loss, LossKind, TripletSample, WeightedTriplet};
use causalrank::{
    CappingParams, Estimator, ExperimentPlan, Method, MetricKind, ObservedRecord, ObservedReplicate,
    PotentialOutcome, RankedList, TrainConfig, TruthReplicate,
};
use common::{delta_oracle, desk_bundle, enumerate_expectation, heavy_skew_bundle, random_pairs, random_ranks, records_for, rng, Pair};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

const SEEDS: u64 = 10;

fn outcomes(pairs: &[Pair]) -> Vec<PotentialOutcome> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.y_t || p.y_c)
        .map(|(i, p)| PotentialOutcome { item: i as u32, y_t: p.y_t, y_c: p.y_c })
        .collect()
}

fn kinds(n_items: usize, k: usize) -> [MetricKind; 3] {
    [MetricKind::Car, MetricKind::CpAt(k.min(n_items)), MetricKind::Cdcg]
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(3..=12);
        let pairs = random_pairs(&mut r, n, 0.05, 0.95);
        let truth = outcomes(&pairs);
        let k = r.random_range(1..=n);
        for _ in 0..3 {
            let ranks = random_ranks(&mut r, n);
            for kind in kinds(n, k) {
                let target = delta_oracle(&ranks, &pairs, kind);
                let library = delta_true(&ranks, &truth, kind)?;
                worst = worst.max((library - target).abs());
                let expected = enumerate_expectation(&pairs, |pattern| {
                    delta_estimated(&ranks, &records_for(&pairs, pattern, 0), kind, CappingParams::NONE).ok()
                });
                worst = worst.max((expected - target).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst < 1e-12 && secs < 10.0,
        format!("max |E[IPS] - Delta_u| = {worst:.2e} over 100 fixtures x 3 rankings x 3 metrics in {secs:.2}s"),
    ))
}

fn criterion_2() -> Outcome {
    let pairs: Vec<Pair> = (0..8)
        .map(|i| Pair { p: if i < 4 { 0.9 } else { 0.1 }, y_t: i < 4, y_c: i % 2 == 1 })
        .collect();
    let p: Vec<f64> = pairs.iter().map(|x| x.p).collect();
    let y: Vec<f64> = pairs.iter().map(|x| x.y_t as u8 as f64).collect();
    let corr = pearson(&p, &y);
    let ranks: Vec<u32> = (1..=8).collect();
    let rl = RankedList::from_orders(8, vec![(0..8).collect()])?;
    let mut lines = Vec::new();
    let mut ok = corr > 0.0;
    for kind in kinds(8, 3) {
        let target = delta_oracle(&ranks, &pairs, kind);
        let naive = enumerate_expectation(&pairs, |pattern| {
            let obs = ObservedReplicate::new(1, 8, records_for(&pairs, pattern, 0)).ok()?;
            metric_estimate(&rl, &obs, kind, Estimator::Naive).ok()
        });
        let ips = enumerate_expectation(&pairs, |pattern| {
            delta_estimated(&ranks, &records_for(&pairs, pattern, 0), kind, CappingParams::NONE).ok()
        });
        ok &= (naive - target).abs() > 0.05 && (ips - target).abs() < 1e-12;
        lines.push(format!("{kind}: |naive-D|={:.3} |ips-D|={:.1e}", (naive - target).abs(), (ips - target).abs()));
    }
    Ok((ok, format!("corr(P,Y^T)={corr:.2}; {}", lines.join("; "))))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn criterion_3() -> Outcome {
    const DRAWS: usize = 100_000;
    let (n_users, n_items) = (3, 5);
    let mut r = rng(3);
    let mut worst_z: f64 = 0.0;
    for fixture in 0..20 {
        let chi = r.random_range(0.1..0.3);
        let capping = CappingParams::symmetric(chi)?;
        let users: Vec<Vec<Pair>> = loop {
            let users: Vec<Vec<Pair>> = (0..n_users).map(|_| random_pairs(&mut r, n_items, 0.01, 0.99)).collect();
            let flat = users.iter().flatten();
            let below = flat.clone().any(|x| x.p < chi && x.y_t);
            let above = flat.clone().any(|x| x.p > chi);
            if below && above {
                break users;
            }
        };
        let kind = kinds(n_items, 2)[fixture % 3];
        let orders: Vec<Vec<u32>> = (0..n_users).map(|_| ranks_to_order(&random_ranks(&mut r, n_items))).collect();
        let rl = RankedList::from_orders(n_items, orders)?;
        let truth = TruthReplicate::from_rows(n_items, users.iter().map(|u| outcomes(u)).collect())?;
        let p = Array2::from_shape_fn((n_users, n_items), |(u, i)| users[u][i].p);
        let closed = bias_cips(&truth, &rl, &p, capping, kind)?;
        let exact = metric_average(&rl, &truth, kind)?;

        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut buf = Vec::with_capacity(n_items);
        for _ in 0..DRAWS {
            let mut est = 0.0;
            for (u, pairs) in users.iter().enumerate() {
                buf.clear();
                for (i, x) in pairs.iter().enumerate() {
                    let z = r.random_bool(x.p);
                    let y = if z { x.y_t } else { x.y_c };
                    if y {
                        buf.push(ObservedRecord { user: u as u32, item: i as u32, y, z, p: x.p });
                    }
                }
                est += delta_estimated(rl.ranks(u), &buf, kind, capping)?;
            }
            let shortfall = exact - est / n_users as f64;
            sum += shortfall;
            sum_sq += shortfall * shortfall;
        }
        let mean = sum / DRAWS as f64;
        let se = ((sum_sq / DRAWS as f64 - mean * mean) / (DRAWS as f64 - 1.0)).sqrt();
        worst_z = worst_z.max((mean - closed).abs() / se);
    }
    Ok((
        worst_z <= 3.0,
        format!("max |MC mean of (R - R_hat) - bias_cips| = {worst_z:.2} standard errors over 20 fixtures"),
    ))
}

fn ranks_to_order(ranks: &[u32]) -> Vec<u32> {
    let mut order = vec![0u32; ranks.len()];
    for (item, &rank) in ranks.iter().enumerate() {
        order[rank as usize - 1] = item as u32;
    }
    order
}

fn criterion_4() -> Outcome {
    const RESAMPLES: usize = 10_000;
    let (n_users, n_items) = (10, 10);
    let mut r = rng(4);
    let users: Vec<Vec<Pair>> = (0..n_users).map(|_| random_pairs(&mut r, n_items, 0.05, 0.95)).collect();
    let orders: Vec<Vec<u32>> = (0..n_users).map(|_| ranks_to_order(&random_ranks(&mut r, n_items))).collect();
    let rl = RankedList::from_orders(n_items, orders)?;
    let truth = TruthReplicate::from_rows(n_items, users.iter().map(|u| outcomes(u)).collect())?;
    let p = Array2::from_shape_fn((n_users, n_items), |(u, i)| users[u][i].p);
    let mut ok = true;
    let mut lines = Vec::new();
    for kind in kinds(n_items, 3) {
        let bound = hoeffding_bound(&lambda_table(&rl, kind)?, &p, CappingParams::NONE, 0.05)?;
        let exact = metric_average(&rl, &truth, kind)?;
        let mut exceed = 0;
        for _ in 0..RESAMPLES {
            let mut est = 0.0;
            for (u, pairs) in users.iter().enumerate() {
                let pattern = pairs
                    .iter()
                    .enumerate()
                    .fold(0u64, |acc, (i, x)| acc | (r.random_bool(x.p) as u64) << i);
                est += delta_estimated(rl.ranks(u), &records_for(pairs, pattern, u as u32), kind, CappingParams::NONE)?;
            }
            if (est / n_users as f64 - exact).abs() > bound {
                exceed += 1;
            }
        }
        let rate = exceed as f64 / RESAMPLES as f64;
        ok &= rate <= 0.05;
        lines.push(format!("{kind}: {rate:.4}"));
    }
    Ok((ok, format!("exceedance rate of the zeta=0.05 bound: {}", lines.join(", "))))
}

fn criterion_5() -> Outcome {
    const H: f64 = 1e-5;
    let mut r = rng(5);
    let normal = Normal::new(0.0, 0.3)?;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (n_users, n_items, dim) = (3, 4, r.random_range(2..=6));
        let model = MFModel::new(
            Array2::from_shape_fn((n_users, dim), |_| normal.sample(&mut r)),
            Array2::from_shape_fn((n_items, dim), |_| normal.sample(&mut r)),
        )?;
        let pos_item = r.random_range(0..n_items);
        let neg_item = (pos_item + r.random_range(1..n_items)) % n_items;
        let sample = TripletSample {
            user: r.random_range(0..n_users),
            pos_item,
            neg_item,
            treated: r.random_bool(0.5),
            propensity: r.random_range(0.01..0.99),
        };
        let capping = CappingParams::symmetric(if r.random_bool(0.3) { 0.0 } else { r.random_range(0.01..0.3) })?;
        let omega = r.random_range(0.5..3.0);
        for loss in [LossKind::Ub, LossKind::Ap] {
            let cfg = TrainConfig { omega, capping, loss, ..Default::default() };
            let triplet = WeightedTriplet { sample, weight: ips_weight(&sample, capping) };
            let (gu, gi, gj) = loss_gradient(&triplet, &model, &cfg)?;
            let analytic: Vec<f64> = gu.into_iter().chain(gi).chain(gj).collect();
            let mut numeric = Vec::with_capacity(analytic.len());
            for (block, row) in [(0, sample.user), (1, pos_item), (1, neg_item)] {
                for d in 0..dim {
                    let at = |delta: f64| -> Result<f64, causalrank::Error> {
                        let mut m = model.clone();
                        let table = if block == 0 { &mut m.user_factors } else { &mut m.item_factors };
                        table[[row, d]] += delta;
                        weighted_loss(&triplet, &m, &cfg)
                    };
                    numeric.push((at(H)? - at(-H)?) / (2.0 * H));
                }
            }
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
            let scale = norm(&analytic).max(norm(&numeric));
            if scale > 0.0 {
                worst = worst.max(norm(&diff) / scale);
            }
        }
    }
    Ok((worst < 1e-4, format!("max relative gradient error {worst:.2e} over 100 configurations x 2 losses")))
}

fn desk_plan(seed: u64, chi_grid: Vec<f64>, metrics: Vec<MetricKind>) -> ExperimentPlan {
    ExperimentPlan {
        methods: vec![Method::Dlce, Method::Blce],
        metrics,
        grids: Grids { gamma: vec![0.1, 0.01, 0.001], chi: chi_grid },
        train: TrainConfig { eta: 0.05, epochs: 30, dim: 20, seed, ..Default::default() },
        ..Default::default()
    }
}

fn row<'a>(rows: &'a [ReportRow], method: Method, kind: MetricKind) -> &'a ReportRow {
    rows.iter()
        .find(|r| r.method == method && r.metric == kind && !r.negated)
        .expect("report row")
}

struct DeskRun {
    dlce: Vec<[f64; 2]>,
    blce: Vec<[f64; 2]>,
    blce_rows: Vec<ReportRow>,
}

fn desk_runs(beta: f64, xi: f64, chi_grid: &[f64]) -> Result<DeskRun, Box<dyn std::error::Error>> {
    let metrics = [MetricKind::Cdcg, MetricKind::Car];
    let mut run = DeskRun { dlce: Vec::new(), blce: Vec::new(), blce_rows: Vec::new() };
    for seed in 0..SEEDS {
        let bundle = desk_bundle(seed, beta, xi);
        let rows = compare_bundle(&bundle, &desk_plan(seed, chi_grid.to_vec(), metrics.to_vec()))?;
        run.dlce.push(metrics.map(|k| row(&rows, Method::Dlce, k).mean));
        run.blce.push(metrics.map(|k| row(&rows, Method::Blce, k).mean));
        run.blce_rows.extend(rows.into_iter().filter(|r| r.method == Method::Blce));
    }
    Ok(run)
}

fn wins(run: &DeskRun, m: usize) -> usize {
    run.dlce.iter().zip(&run.blce).filter(|(d, b)| d[m] > b[m]).count()
}

fn criterion_6(skewed: &DeskRun, elapsed: f64) -> Outcome {
    let start = Instant::now();
    let uniform = desk_runs(0.0, 0.0, &[0.1, 0.03, 0.01])?;
    let secs = elapsed + start.elapsed().as_secs_f64();
    let (cdcg_wins, car_wins) = (wins(skewed, 0), wins(skewed, 1));
    let mut ok = cdcg_wins >= 8 && car_wins >= 8 && secs < 300.0;
    let mut lines = Vec::new();
    for (m, name) in ["CDCG", "CAR"].iter().enumerate() {
        let d: Vec<f64> = uniform.dlce.iter().map(|v| v[m]).collect();
        let b: Vec<f64> = uniform.blce.iter().map(|v| v[m]).collect();
        let ((md, sd), (mb, sb)) = (mean_std(&d), mean_std(&b));
        let pooled = ((sd * sd + sb * sb) / 2.0).sqrt();
        ok &= (md - mb).abs() < 2.0 * pooled;
        lines.push(format!("{name} |diff|={:.4} vs 2sd={:.4}", (md - mb).abs(), 2.0 * pooled));
    }
    Ok((
        ok,
        format!(
            "beta=2: DLCE wins CDCG {cdcg_wins}/10, CAR {car_wins}/10; uniform: {}; {secs:.0}s",
            lines.join(", ")
        ),
    ))
}

fn criterion_7() -> Outcome {
    const CHI: [f64; 5] = [0.001, 0.01, 0.03, 0.1, 0.3];
    const MAE_CHI: [f64; 5] = [0.0, 0.01, 0.03, 0.1, 0.3];
    const DATASETS: u64 = 5;
    let mut cdcg = [0.0; 5];
    let mut mae = [0.0; 5];
    let mut min_p: f64 = 1.0;
    for seed in 0..DATASETS {
        let bundle = heavy_skew_bundle(seed);
        min_p = min_p.min(bundle.propensity.p.iter().copied().fold(1.0, f64::min));
        for (slot, chi) in cdcg.iter_mut().zip(CHI) {
            let plan = ExperimentPlan {
                methods: vec![Method::Dlce],
                metrics: vec![MetricKind::Cdcg],
                grids: Grids { gamma: vec![0.1, 0.01, 0.001], chi: vec![chi] },
                train: TrainConfig { eta: 0.05, epochs: 30, dim: 20, seed, ..Default::default() },
                ..Default::default()
            };
            *slot += compare_bundle(&bundle, &plan)?[0].mean / DATASETS as f64;
        }
        let pop = popularity_ranker(bundle.train_observed(), bundle.n_users(), bundle.n_items())?;
        for (slot, chi) in mae.iter_mut().zip(MAE_CHI) {
            let est = Estimator::Ips(CappingParams::symmetric(chi)?);
            let r = estimator_mae(&pop, bundle.test_observed(), bundle.test_truth(), MetricKind::Car, est, None)?;
            *slot += r.mae / DATASETS as f64;
        }
    }
    let cdcg_ok = cdcg[1..].iter().any(|&v| v > cdcg[0]);
    let mae_ok = mae[1..].iter().any(|&v| v < mae[0]);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("/");
    Ok((
        cdcg_ok && mae_ok,
        format!(
            "min P={min_p:.2e}, mean over {DATASETS} datasets; DLCE CDCG at chi 0.001/0.01/0.03/0.1/0.3 = {}; \
             Pop CAR MAE at chi 0/0.01/0.03/0.1/0.3 = {}",
            fmt(&cdcg),
            fmt(&mae)
        ),
    ))
}

fn criterion_8(exact: &DeskRun) -> Outcome {
    let missp = desk_runs(2.0, 0.5, &[0.3, 0.1, 0.03])?;
    let cdcg_wins = wins(&missp, 0);
    let identical = missp.blce_rows == exact.blce_rows;
    Ok((
        cdcg_wins >= 8 && identical,
        format!("xi=0.5: DLCE wins CDCG {cdcg_wins}/10; BLCE identical across xi: {identical}"),
    ))
}

const PIPELINE_CONFIG: &str = r#"
[synthetic]
n_users = 60
n_items = 20

[gen]
n_train = 3
n_test = 3
seed = 9

[plan]
dataset = "bundle"
output = "run"
metrics = ["CP@5", "CDCG", "CAR"]

[plan.grids]
gamma = [0.01, 0.001]
chi = [0.1, 0.01]

[plan.train]
epochs = 5
dim = 8
seed = 9
"#;

fn pipeline(dir: &Path, workers: &str) -> Result<(), Box<dyn std::error::Error>> {
    std::fs::write(dir.join("config.toml"), PIPELINE_CONFIG)?;
    for args in [&["gen", "--out", "bundle"][..], &["compare"][..]] {
        let status = Command::new(env!("CARGO_BIN_EXE_causalrank"))
            .current_dir(dir)
            .env("CAUSALRANK_WORKERS", workers)
            .arg("--config")
            .arg("config.toml")
            .args(args)
            .output()?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned().into());
        }
    }
    Ok(())
}

fn criterion_9() -> Outcome {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    pipeline(a.path(), "1")?;
    pipeline(b.path(), "4")?;
    let mut same = Vec::new();
    for file in ["run/report.csv", "run/report.json", "run/meta.json"] {
        let (x, y) = (std::fs::read(a.path().join(file))?, std::fs::read(b.path().join(file))?);
        same.push((file, !x.is_empty() && x == y));
    }
    Ok((
        same.iter().all(|(_, s)| *s),
        format!(
            "gen+compare twice (1 and 4 workers): {}",
            same.iter().map(|(f, s)| format!("{f} {}", if *s { "identical" } else { "DIFFERS" })).collect::<Vec<_>>().join(", ")
        ),
    ))
}

fn report(n: usize, outcome: Outcome) -> bool {
    let (ok, detail) = match outcome {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    println!("{} criterion {n}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn main() {
    let mut all = true;
    all &= report(1, criterion_1());
    all &= report(2, criterion_2());
    all &= report(3, criterion_3());
    all &= report(4, criterion_4());
    all &= report(5, criterion_5());
    let start = Instant::now();
    match desk_runs(2.0, 0.0, &[0.3, 0.1, 0.03]) {
        Ok(skewed) => {
            all &= report(6, criterion_6(&skewed, start.elapsed().as_secs_f64()));
            all &= report(7, criterion_7());
            all &= report(8, criterion_8(&skewed));
        }
        Err(e) => {
            for n in 6..=8 {
                all &= report(n, Err(e.to_string().into()));
            }
        }
    }
    all &= report(9, criterion_9());
    if !all {
        std::process::exit(1);
    }
}

