// Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
// if any fails. Pass criterion numbers as arguments to run a subset:
//   cargo test --release --test acceptance -- 1 3 5

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use fedsim::aggregate::{
    aggregate_fedavg, aggregate_fedmedian, fedopt_step, AggregatorState, ClientUpdate,
    ServerConfig, Strategy,
};
use fedsim::expcli::commands::{cmd_gen, cmd_grid, cmd_sweep, parse_variants, train, Context};
use fedsim::expcli::store::{load_clients, load_independent};
use fedsim::expcli::ExperimentConfig;
use fedsim::grid::Mask;
use fedsim::metrics::{
    auc, average_precision, evaluate_detection, evaluate_segmentation, hd95, picai_score,
    RankedCandidate,
};
use fedsim::model::{
    init_weights, loss_and_gradient, FeatureStack, LossKind, MlpLayout, ModelWeights,
};
use fedsim::orchestrate::{TrainedModel, Variant};
use fedsim::paramcore::{LayoutId, ParamVector};
use fedsim::seeding::rng_from_seed;
use fedsim::stats::{bootstrap_mean_ci, exact_permutation_p, permutation_test, PairedSamples};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = std::result::Result<String, String>;

const L: LayoutId = LayoutId(7);

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn ferr(e: fedsim::Error) -> String {
    e.to_string()
}

fn update(id: &str, values: Vec<f64>, n: usize) -> ClientUpdate {
    ClientUpdate {
        client_id: id.into(),
        params: ParamVector::new(L, values).unwrap(),
        sample_count: n,
    }
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

// -------------------------------------------------------------------------
// 1. aggregators

fn aggregators() -> Check {
    let mut rng = rng_from_seed(11);
    for k in [2usize, 4, 8] {
        for _ in 0..50 {
            // dyadic values keep every partial sum exact
            let clients: Vec<Vec<f64>> = (0..k)
                .map(|_| {
                    (0..16)
                        .map(|_| rng.gen_range(-512i32..512) as f64 / 64.0)
                        .collect()
                })
                .collect();
            let ups: Vec<_> = clients
                .iter()
                .enumerate()
                .map(|(i, v)| update(&format!("c{i}"), v.clone(), 10))
                .collect();
            let out = aggregate_fedavg(&ups).map_err(ferr)?;
            for (j, got) in out.values().iter().enumerate() {
                let mean = clients.iter().map(|v| v[j]).sum::<f64>() / k as f64;
                ensure(*got == mean, format!("K={k} coord {j}: {got} != {mean}"))?;
            }
        }
    }
    let out = aggregate_fedavg(&[
        update("a", vec![0.0, 0.0], 1),
        update("b", vec![4.0, 8.0], 3),
    ])
    .map_err(ferr)?;
    ensure(
        out.values() == [3.0, 6.0],
        format!("weighted example gave {:?}", out.values()),
    )?;

    let (trials, dim) = (1000, 10);
    let (mut median_ok, mut avg_violations) = (0, 0);
    for _ in 0..trials {
        let honest: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let byzantine: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                        s * rng.gen_range(50.0..1000.0)
                    })
                    .collect()
            })
            .collect();
        let ups: Vec<_> = honest
            .iter()
            .chain(&byzantine)
            .enumerate()
            .map(|(i, v)| update(&format!("c{i}"), v.clone(), 1 + i))
            .collect();
        let within = |p: &ParamVector| {
            (0..dim).all(|j| {
                let lo = honest.iter().map(|h| h[j]).fold(f64::INFINITY, f64::min);
                let hi = honest
                    .iter()
                    .map(|h| h[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                (lo..=hi).contains(&p.values()[j])
            })
        };
        if within(&aggregate_fedmedian(&ups).map_err(ferr)?) {
            median_ok += 1;
        }
        if !within(&aggregate_fedavg(&ups).map_err(ferr)?) {
            avg_violations += 1;
        }
    }
    ensure(
        median_ok == trials,
        format!(
            "fedmedian left honest range in {} trials",
            trials - median_ok
        ),
    )?;
    ensure(
        avg_violations * 100 >= trials * 99,
        format!("fedavg violated only {avg_violations}/{trials}"),
    )?;
    Ok(format!(
        "fedavg mean exact, [3,6] exact, median bounded {median_ok}/{trials}, fedavg violated {avg_violations}/{trials}"
    ))
}

// -------------------------------------------------------------------------
// 2. adaptive server optimizers

fn zeroed(strategy: Strategy, like: &ParamVector) -> AggregatorState {
    let mut s = AggregatorState::new(ServerConfig::defaults_for(strategy), like);
    s.v = ParamVector::zeros(like.layout(), like.len());
    s
}

fn fedopt() -> Check {
    let prev = ParamVector::zeros(L, 1);
    let mut s = zeroed(Strategy::FedAdagrad, &prev);
    s.config.eta = 0.1;
    s.config.beta1 = 0.0;
    s.config.tau = 1e-3;
    let (next, global) = fedopt_step(&s, &prev, &[update("a", vec![0.5], 1)]).map_err(ferr)?;
    let expected = 0.1 * 0.5 / (0.5 + 1e-3);
    let got = global.values()[0];
    ensure(
        (got - expected).abs() <= 1e-12,
        format!("hand example {got} vs {expected}"),
    )?;
    ensure(
        next.v.values() == [0.25],
        format!("v = {:?}", next.v.values()),
    )?;

    let mut rng = rng_from_seed(5);
    let dim = 8;
    let mut global =
        ParamVector::new(L, (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let mut state = AggregatorState::new(ServerConfig::defaults_for(Strategy::FedAdagrad), &global);
    for round in 0..100 {
        let ups: Vec<_> = (0..4)
            .map(|k| {
                let v = global
                    .values()
                    .iter()
                    .map(|g| g + rng.gen_range(-0.5..0.5))
                    .collect();
                update(&format!("c{k}"), v, rng.gen_range(1..50))
            })
            .collect();
        let (next, g) = fedopt_step(&state, &global, &ups).map_err(ferr)?;
        for (a, b) in state.v.values().iter().zip(next.v.values()) {
            ensure(b >= a, format!("round {round}: v decreased {a} -> {b}"))?;
        }
        state = next;
        global = g;
    }

    for strategy in [Strategy::FedAdagrad, Strategy::FedAdam, Strategy::FedYogi] {
        let prev = ParamVector::new(L, vec![0.25, -1.5, 3.0, 0.0]).unwrap();
        let mut s = zeroed(strategy, &prev);
        s.m = ParamVector::zeros(L, 4);
        let ups = [
            update("a", prev.values().to_vec(), 3),
            update("b", prev.values().to_vec(), 8),
        ];
        let (next, g) = fedopt_step(&s, &prev, &ups).map_err(ferr)?;
        ensure(g == prev, format!("{strategy}: global moved"))?;
        ensure(
            next.m == s.m && next.v == s.v,
            format!("{strategy}: moments moved"),
        )?;
    }
    Ok(format!(
        "hand example {got:.5} (|err| {:.1e}), v monotone 100 rounds, zero delta fixed",
        (got - expected).abs()
    ))
}

// -------------------------------------------------------------------------
// 3. metric oracles

fn edge_points(m: &Mask, spacing: (f64, f64)) -> Vec<(f64, f64)> {
    let (h, w) = m.shape();
    let inside = |r: isize, c: isize| {
        r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && *m.get(r as usize, c as usize)
    };
    let mut pts = Vec::new();
    for r in 0..h as isize {
        for c in 0..w as isize {
            if inside(r, c)
                && [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|(dr, dc)| !inside(r + dr, c + dc))
            {
                pts.push((r as f64 * spacing.0, c as f64 * spacing.1));
            }
        }
    }
    pts
}

fn q95(mut d: Vec<f64>) -> f64 {
    d.sort_by(f64::total_cmp);
    let pos = 0.95 * (d.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    d[lo] + (d[hi] - d[lo]) * (pos - lo as f64)
}

fn hd95_brute(a: &Mask, b: &Mask, spacing: (f64, f64)) -> f64 {
    let (pa, pb) = (edge_points(a, spacing), edge_points(b, spacing));
    let directed = |x: &[(f64, f64)], y: &[(f64, f64)]| {
        q95(x
            .iter()
            .map(|p| {
                y.iter()
                    .map(|q| (p.0 - q.0).hypot(p.1 - q.1))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect())
    };
    directed(&pa, &pb).max(directed(&pb, &pa))
}

fn auc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Decimal rounding with ties (to within 1e-9) sent to the even digit.
fn round_half_even(x: f64, places: i32) -> String {
    let scaled = x * 10f64.powi(places);
    let floor = scaled.floor();
    let frac = scaled - floor;
    let digits = if (frac - 0.5).abs() < 1e-9 {
        if floor % 2.0 == 0.0 {
            floor
        } else {
            floor + 1.0
        }
    } else {
        scaled.round()
    };
    format!("{:.*}", places as usize, digits / 10f64.powi(places))
}

fn metric_oracles() -> Check {
    let mut rng = rng_from_seed(3);
    let mut worst_hd = 0.0f64;
    let mut pairs = 0;
    while pairs < 200 {
        let spacing = (rng.gen_range(0.3..2.0), rng.gen_range(0.3..2.0));
        let density_a = rng.gen_range(0.05..0.7);
        let density_b = rng.gen_range(0.05..0.7);
        let a = Mask::from_fn(16, 16, |_, _| rng.gen_bool(density_a));
        let b = Mask::from_fn(16, 16, |_, _| rng.gen_bool(density_b));
        if a.count() == 0 || b.count() == 0 {
            continue;
        }
        let got = hd95(&a, &b, spacing).map_err(ferr)?;
        let want = hd95_brute(&a, &b, spacing);
        worst_hd = worst_hd.max((got - want).abs());
        pairs += 1;
    }
    ensure(worst_hd <= 1e-9, format!("hd95 off by {worst_hd:e}"))?;

    let mut worst_auc = 0.0f64;
    let mut sets = 0;
    while sets < 200 {
        let n = rng.gen_range(2..120);
        // coarse scores force ties
        let levels = rng.gen_range(2..40);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(0..levels) as f64 / levels as f64)
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        let got = auc(&scores, &labels).map_err(ferr)?;
        worst_auc = worst_auc.max((got - auc_pairs(&scores, &labels)).abs());
        sets += 1;
    }
    ensure(worst_auc <= 1e-12, format!("auc off by {worst_auc:e}"))?;

    let rc = |id: &str, c: f64, tp: bool| RankedCandidate {
        case_id: id.into(),
        confidence: c,
        area: 10,
        true_positive: tp,
    };
    let staircase = [rc("a", 0.9, true), rc("b", 0.8, false), rc("c", 0.7, true)];
    let ap = average_precision(&staircase, 2).map_err(ferr)?;
    ensure(
        (ap - 0.8333).abs() <= 1e-4 && (ap - 5.0 / 6.0).abs() <= 1e-9,
        format!("staircase ap {ap}"),
    )?;
    let picai = picai_score(0.89, 0.56).map_err(ferr)?;
    ensure((picai - 0.725).abs() <= 1e-12, format!("picai {picai}"))?;
    let reported = round_half_even(picai, 2);
    ensure(reported == "0.72", format!("picai reports as {reported}"))?;
    Ok(format!(
        "hd95 max err {worst_hd:.1e} (200 pairs), auc max err {worst_auc:.1e} (200 sets), ap {ap:.4}, picai {picai:.3} -> {reported}"
    ))
}

// -------------------------------------------------------------------------
// 4. gradient check

fn gradient_check() -> Check {
    let (rows, cols, nf) = (8, 8, 7);
    let layout = MlpLayout::new(nf, 16);
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = rng_from_seed(1000 + seed);
        let features = FeatureStack {
            rows,
            cols,
            n_features: nf,
            data: (0..rows * cols * nf)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect(),
        };
        let target = Mask::from_fn(rows, cols, |_, _| rng.gen_bool(0.35));
        let loss = if seed % 2 == 0 {
            LossKind::Bce
        } else {
            LossKind::BceSoftDice
        };
        let w = init_weights(layout, seed);
        let (_, grad) = loss_and_gradient(&w, &features, &target, loss).map_err(ferr)?;
        let flat = w.flatten();
        let eval = |v: Vec<f64>| -> f64 {
            let p = ParamVector::new(flat.layout(), v).unwrap();
            let wp = ModelWeights::unflatten(layout, &p).unwrap();
            loss_and_gradient(&wp, &features, &target, loss).unwrap().0
        };
        let eps = 1e-5;
        for _ in 0..50 {
            let i = rng.gen_range(0..flat.len());
            let (mut plus, mut minus) = (flat.values().to_vec(), flat.values().to_vec());
            plus[i] += eps;
            minus[i] -= eps;
            let numeric = (eval(plus) - eval(minus)) / (2.0 * eps);
            let analytic = grad.values()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    ensure(worst <= 1e-4, format!("max relative error {worst:e}"))?;
    Ok(format!(
        "max relative error {worst:.2e} over 500 coordinates"
    ))
}

// -------------------------------------------------------------------------
// 5. statistics calibration

fn paired(a: Vec<f64>, b: Vec<f64>) -> PairedSamples {
    PairedSamples {
        unit_ids: (0..a.len()).map(|i| format!("u{i:03}")).collect(),
        metric_a: a,
        metric_b: b,
    }
}

fn stats_calibration() -> Check {
    let mut rng = rng_from_seed(21);
    let mut worst = 0.0f64;
    for (t, n) in [4usize, 6, 8, 10, 12].into_iter().enumerate() {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..0.9)).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|x| x - 0.03 + rng.gen_range(-0.06..0.06))
            .collect();
        let s = paired(a, b);
        let mc = permutation_test(&s, 1_000_000, t as u64).map_err(ferr)?;
        let exact = exact_permutation_p(&s).map_err(ferr)?;
        worst = worst.max((mc - exact).abs());
    }
    ensure(
        worst <= 0.01,
        format!("monte carlo vs exact |dp| = {worst}"),
    )?;

    let reps = 1000;
    let mut rejections = 0;
    for r in 0..reps {
        let a: Vec<f64> = (0..30).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..30).map(|_| StandardNormal.sample(&mut rng)).collect();
        if permutation_test(&paired(a, b), 2000, 50_000 + r).map_err(ferr)? < 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / reps as f64;
    ensure(
        (0.03..=0.07).contains(&rate),
        format!("null rejection rate {rate}"),
    )?;

    let values: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
    let ci = bootstrap_mean_ci(&values, 100_000, 0.95, 9).map_err(ferr)?;
    let m = values.iter().sum::<f64>() / 200.0;
    let sd = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 199.0).sqrt();
    let normal = 2.0 * 1.959964 * sd / 200f64.sqrt();
    let ratio = (ci.hi - ci.lo) / normal;
    ensure(
        (ratio - 1.0).abs() <= 0.15,
        format!("bootstrap/normal width ratio {ratio}"),
    )?;
    Ok(format!(
        "max |dp| {worst:.4} (n<=12), null rejection {rate:.3}, ci width ratio {ratio:.3}"
    ))
}

// -------------------------------------------------------------------------
// 6-8. directional checks on the shipped configs

fn context(file: &str, seed: u64, root: &Path) -> std::result::Result<Context, String> {
    let mut cfg = ExperimentConfig::load(&config(file)).map_err(ferr)?;
    cfg.master_seed = seed;
    cfg.k_folds = 1;
    let ctx = Context::new(cfg, root);
    cmd_gen(&ctx).map_err(ferr)?;
    Ok(ctx)
}

fn train_named(
    ctx: &Context,
    spec: &str,
) -> std::result::Result<Vec<(String, TrainedModel)>, String> {
    let clients = load_clients(&ctx.exp_dir).map_err(ferr)?;
    parse_variants(ctx, spec)
        .map_err(ferr)?
        .into_iter()
        .map(|(name, v): (String, Variant)| Ok((name, train(ctx, &v, &clients).map_err(ferr)?.0)))
        .collect()
}

fn federation_beats_isolation() -> Check {
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for seed in 1..=3 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let ctx = context("segmentation.json", seed, tmp.path())?;
        let sizes: Vec<usize> = ctx.cfg.clients.iter().map(|c| c.n_cases).collect();
        ensure(
            sizes.iter().all(|n| (60..=200).contains(n)),
            format!("client sizes {sizes:?}"),
        )?;
        let test = load_independent(&ctx.exp_dir).map_err(ferr)?;
        let mut dice = BTreeMap::new();
        for (name, model) in train_named(&ctx, "all")? {
            let d = evaluate_segmentation(&model, &test, ctx.cfg.seg_threshold)
                .map_err(ferr)?
                .mean_dice;
            dice.insert(name, d);
        }
        let locals: Vec<f64> = dice
            .iter()
            .filter(|(k, _)| k.starts_with("local-"))
            .map(|(_, v)| *v)
            .collect();
        let local_mean = locals.iter().sum::<f64>() / locals.len() as f64;
        let (fl, cl) = (dice["fl-baseline"], dice["central"]);
        lines.push(format!(
            "seed {seed}: fl {fl:.4} locals {local_mean:.4} (+{:.4}) cl {cl:.4} (|d| {:.4})",
            fl - local_mean,
            (fl - cl).abs()
        ));
        if fl - local_mean < 0.03 || (fl - cl).abs() > 0.03 {
            failures.push(seed);
        }
    }
    let text = lines.join("; ");
    ensure(
        failures.is_empty(),
        format!("seeds {failures:?} failed: {text}"),
    )?;
    Ok(text)
}

fn low_epoch_trend() -> Check {
    let mut lines = Vec::new();
    let mut wins = 0;
    for seed in 1..=3 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let ctx = context("segmentation.json", seed, tmp.path())?;
        ensure(ctx.cfg.grid.budget == 120, "grid budget is not 120")?;
        let report = cmd_grid(&ctx).map_err(ferr)?;
        let metric = |e: usize| {
            report
                .rows
                .iter()
                .find(|r| r.local_epochs == e)
                .map(|r| r.metric)
        };
        let (e1, e12) = (
            metric(1).ok_or("no E=1 row")?,
            metric(12).ok_or("no E=12 row")?,
        );
        let row_text: Vec<String> = report
            .rows
            .iter()
            .map(|r| format!("E{}={:.4}", r.local_epochs, r.metric))
            .collect();
        lines.push(format!("seed {seed}: {}", row_text.join(" ")));
        if e1 >= e12 {
            wins += 1;
        }
    }
    let text = lines.join("; ");
    ensure(wins >= 2, format!("E=1 >= E=12 in {wins}/3 seeds: {text}"))?;
    Ok(format!("E=1 >= E=12 in {wins}/3 seeds; {text}"))
}

fn detection_ordering() -> Check {
    let mut lines = Vec::new();
    let mut wins = 0;
    for seed in 1..=3 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let ctx = context("detection.json", seed, tmp.path())?;
        let test = load_independent(&ctx.exp_dir).map_err(ferr)?;
        let mut scores = BTreeMap::new();
        for spec in ["local:*", "federated"] {
            for (name, model) in train_named(&ctx, spec)? {
                let r = evaluate_detection(&model, &test, &ctx.cfg.lesion).map_err(ferr)?;
                scores.insert(name, r.picai_score);
            }
        }
        let locals: Vec<f64> = scores
            .iter()
            .filter(|(k, _)| k.starts_with("local-"))
            .map(|(_, v)| *v)
            .collect();
        let local_mean = locals.iter().sum::<f64>() / locals.len() as f64;
        let fl = scores["fl-baseline"];
        lines.push(format!("seed {seed}: fl {fl:.4} locals {local_mean:.4}"));
        if fl >= local_mean + 0.02 {
            wins += 1;
        }

        if seed == 1 {
            let report = cmd_sweep(&ctx).map_err(ferr)?;
            let mut seen: Vec<Strategy> = report.rows.iter().map(|r| r.strategy).collect();
            seen.sort_by_key(|s| s.name());
            let mut all = Strategy::ALL.to_vec();
            all.sort_by_key(|s| s.name());
            ensure(seen == all, format!("sweep covered {seen:?}"))?;
            let best = report
                .rows
                .iter()
                .map(|r| r.metric)
                .fold(f64::NEG_INFINITY, f64::max);
            let first_best = report
                .rows
                .iter()
                .find(|r| r.metric == best)
                .unwrap()
                .strategy;
            ensure(
                report.best.server.strategy == first_best,
                "selection is not the argmax",
            )?;
            for f in [
                "sweep.csv",
                "report.json",
                "selected_plan.json",
                "manifest.json",
            ] {
                ensure(
                    ctx.exp_dir.join("sweep").join(f).is_file(),
                    format!("sweep/{f} missing"),
                )?;
            }
            lines.push(format!("sweep selected {first_best} ({best:.4})"));
        }
    }
    let text = lines.join("; ");
    ensure(
        wins >= 2,
        format!("fl >= locals + 0.02 in {wins}/3 seeds: {text}"),
    )?;
    Ok(format!("fl >= locals + 0.02 in {wins}/3 seeds; {text}"))
}

// -------------------------------------------------------------------------
// 9. determinism across executions and thread counts

fn fedsim_cli(
    args: &[&str],
    cfg: &Path,
    out: &Path,
    jobs: &str,
) -> std::result::Result<(), String> {
    let output = Command::new(env!("CARGO_BIN_EXE_fedsim"))
        .args(["--config"])
        .arg(cfg)
        .args(["--out"])
        .arg(out)
        .args(["--jobs", jobs])
        .args(args)
        .env_remove("FEDSIM_OUT")
        .output()
        .map_err(|e| e.to_string())?;
    if output.status.success() {
        Ok(())
    } else {
        Err(format!(
            "fedsim {args:?} --jobs {jobs} exited {:?}: {}",
            output.status.code(),
            String::from_utf8_lossy(&output.stderr)
        ))
    }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "manifest.json") {
                files.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    files
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::load(&config("segmentation.json")).map_err(ferr)?;
    cfg.k_folds = 1;
    cfg.stats.b = 1000;
    cfg.stats.iterations = 1000;
    let cfg_path = tmp.path().join("config.json");
    cfg.save(&cfg_path).map_err(ferr)?;

    let mut trees = Vec::new();
    for jobs in ["1", "2"] {
        let out = tmp.path().join(format!("jobs-{jobs}"));
        for args in [
            &["gen"][..],
            &["run", "all"],
            &["eval"],
            &["compare"],
            &["verify"],
        ] {
            fedsim_cli(args, &cfg_path, &out, jobs)?;
        }
        trees.push(tree(&out.join(&cfg.experiment)));
    }
    let (a, b) = (&trees[0], &trees[1]);
    ensure(a.keys().eq(b.keys()), "runs wrote different file sets")?;
    let differing: Vec<_> = a
        .iter()
        .filter(|(k, v)| b[*k] != **v)
        .map(|(k, _)| k.display().to_string())
        .collect();
    ensure(differing.is_empty(), format!("files differ: {differing:?}"))?;
    let count = |suffix: &str| {
        a.keys()
            .filter(|k| k.to_string_lossy().ends_with(suffix))
            .count()
    };
    let (models, evals, tables) = (
        count(".fspv"),
        a.keys().filter(|k| k.starts_with("eval")).count(),
        count(".csv"),
    );
    ensure(
        models >= 6 && tables > 0,
        format!("only {models} models and {tables} tables written"),
    )?;
    Ok(format!(
        "{} files identical for --jobs 1 and 2 ({models} fspv, {evals} eval files, {tables} csv)",
        a.len()
    ))
}

// -------------------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "aggregator oracles",
            limit: Duration::from_secs(10),
            run: aggregators,
        },
        Criterion {
            id: 2,
            name: "fedopt correctness",
            limit: Duration::from_secs(10),
            run: fedopt,
        },
        Criterion {
            id: 3,
            name: "metric oracles",
            limit: Duration::from_secs(30),
            run: metric_oracles,
        },
        Criterion {
            id: 4,
            name: "gradient check",
            limit: Duration::from_secs(10),
            run: gradient_check,
        },
        Criterion {
            id: 5,
            name: "statistics calibration",
            limit: Duration::from_secs(300),
            run: stats_calibration,
        },
        Criterion {
            id: 6,
            name: "federation beats isolation",
            limit: Duration::from_secs(1800),
            run: federation_beats_isolation,
        },
        Criterion {
            id: 7,
            name: "low-E/high-R trend",
            limit: Duration::from_secs(2700),
            run: low_epoch_trend,
        },
        Criterion {
            id: 8,
            name: "detection ordering and sweep",
            limit: Duration::from_secs(3600),
            run: detection_ordering,
        },
        Criterion {
            id: 9,
            name: "determinism",
            limit: Duration::from_secs(600),
            run: determinism,
        },
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for c in criteria
        .iter()
        .filter(|c| selected.is_empty() || selected.contains(&c.id))
    {
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(d) if elapsed < c.limit => (true, d),
            Ok(d) => (false, format!("{d}; exceeded {:?}", c.limit)),
            Err(e) => (false, e),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {} {}: {} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
