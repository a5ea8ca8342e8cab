//! Acceptance suite. Every test prints one `PASS` or `FAIL` line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use panda_core::embedstore::{ProviderConfig, SyntheticProvider};
use panda_core::evaluator::{average_accuracy, average_forgetting, AccuracyMatrix};
use panda_core::manifest::{synthetic_records, Manifest};
use panda_core::patcher::{
    balance_task, build_mask, compose_sample, saturating_add, BalanceConfig, BalanceInputs, BalanceStatus,
    ComposeMode, PatchGrid, SyntheticImages,
};
use panda_core::run::{RunConfig, Session};
use panda_core::smoother::{beta_distribution_change, beta_performance, beta_task_progress};
use panda_core::streamgen::{
    build_long_tail_counts, build_plan, shuffle_class_order, split_tasks, summarize_distribution, LabeledItem,
    LongTailConfig, TaskData, TaskOverride,
};
use panda_core::tensor::ImageTensor;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng;

/// Tail-accuracy margin of augmentation over the baseline, measured once on
/// the ten-seed synthetic run below.
const FROZEN_TAIL_MARGIN: f64 = 0.10964453;

fn verdict(name: &str, ok: bool, detail: impl AsRef<str>) {
    println!("{} {name}: {}", if ok { "PASS" } else { "FAIL" }, detail.as_ref());
    assert!(ok, "{name}: {}", detail.as_ref());
}

fn synthetic_manifest(classes: usize, per_class: usize) -> Manifest {
    Manifest::parse(&Manifest::to_text(&synthetic_records(classes, per_class))).unwrap()
}

#[test]
fn distribution_construction() {
    let started = Instant::now();
    let cfg = LongTailConfig::new(100, 500, 0.01);
    let counts = build_long_tail_counts(&cfg).unwrap();
    let tasks = split_tasks(&shuffle_class_order(&counts, cfg.seed), 10).unwrap();
    let elapsed = started.elapsed();
    let ratio = f64::from(counts[99]) / f64::from(counts[0]);
    let mut shuffled: Vec<u32> = tasks.iter().flat_map(|t| t.per_class_counts.clone()).collect();
    shuffled.sort_unstable_by(|a, b| b.cmp(a));

    let mut runner = TestRunner::new(Config {
        failure_persistence: None,
        ..Config::with_cases(500)
    });
    let sweep = runner.run(&(2usize..=300, 3u32..=5000, 0.0001f64..=1.0), |(c, n_max, rho)| {
        let counts = build_long_tail_counts(&LongTailConfig::new(c, n_max, rho)).unwrap();
        prop_assert_eq!(counts.len(), c);
        prop_assert!(counts.iter().all(|&n| n >= 3));
        prop_assert!(counts.windows(2).all(|w| w[0] >= w[1]));
        Ok(())
    });

    verdict(
        "distribution construction",
        counts[0] == 500
            && counts[99] == 5
            && (0.009..=0.011).contains(&ratio)
            && shuffled == counts
            && sweep.is_ok()
            && elapsed < Duration::from_secs(1),
        format!(
            "counts[0]={} counts[99]={} ratio={ratio} sweep={} in {elapsed:?}",
            counts[0],
            counts[99],
            if sweep.is_ok() { "500/500" } else { "failed" }
        ),
    );
}

#[test]
fn dual_level_locality() {
    let manifest = synthetic_manifest(100, 1);
    let cfg = LongTailConfig::new(100, 500, 0.01);
    let single = build_plan(&cfg, &manifest, 10, &[]).unwrap();
    let dual = build_plan(&cfg, &manifest, 10, &[TaskOverride { task: 3, rho_star: 0.05 }]).unwrap();
    let summary = |p: &panda_core::streamgen::StreamPlan, i: usize| {
        serde_json::to_string(&summarize_distribution(&p.tasks[i]).unwrap()).unwrap()
    };
    let differing: Vec<usize> = (0..10).filter(|&i| summary(&single, i) != summary(&dual, i)).map(|i| i + 1).collect();
    let same_classes = single.tasks.iter().zip(&dual.tasks).all(|(a, b)| a.class_ids == b.class_ids);
    verdict(
        "dual-level locality",
        differing == vec![3] && same_classes,
        format!("tasks with a changed summary: {differing:?}"),
    );
}

fn small_config(rho: f64, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::from_toml(&format!(
        r#"
output_dir = "unused"
seed = {seed}
[stream]
num_classes = 20
n_max = 40
rho = {rho}
num_tasks = 4
[provider]
kind = "synthetic"
dimension = 32
sigma = 0.5
background_scale = 8.0
[images]
resolution = 32
"#
    ))
    .unwrap();
    cfg.patcher.persist_images = false;
    cfg
}

#[test]
fn balanced_stream_is_noop() {
    let mut session = Session::from_config(small_config(1.0, 1993)).unwrap();
    let baseline = session.run_baseline().unwrap();
    let panda = session.run_panda(None).unwrap();
    let synthesized = panda.report.synthesized();
    let untouched = panda
        .logs
        .iter()
        .all(|l| l.records.is_empty() && l.footer.outcome == BalanceStatus::AlreadyBalanced);
    verdict(
        "balanced no-op",
        synthesized == 0 && untouched && baseline.results == panda.report.results,
        format!(
            "{synthesized} synthesized, final accuracy {} vs {}",
            baseline.results.final_accuracy(),
            panda.report.results.final_accuracy()
        ),
    );
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

#[test]
fn beta_schedules() {
    let performance: &[(&[f64], f64, f64)] = &[
        (&[0.80, 0.70], 0.7, 0.55),
        (&[0.70, 0.75], 0.85, 0.90),
        (&[0.70], 0.7, 0.70),
        (&[0.70, 0.71], 0.7, 0.70),
        (&[], 0.7, 0.7),
        (&[], 0.3, 0.3),
        (&[0.9], 0.95, 0.95),
        (&[0.80, 0.70], 0.6, 0.5),
        (&[0.80, 0.70], 0.65, 0.5),
        (&[0.80, 0.70], 0.9, 0.75),
        (&[0.80, 0.70], 0.2, 0.5),
        (&[0.80, 0.74], 0.7, 0.55),
        (&[0.80, 0.76], 0.7, 0.7),
        (&[0.50, 0.60], 0.7, 0.8),
        (&[0.50, 0.60], 0.8, 0.9),
        (&[0.50, 0.60], 0.95, 0.9),
        (&[0.50, 0.51], 0.7, 0.7),
        (&[0.50, 0.53], 0.7, 0.8),
        (&[0.2, 0.9, 0.3], 0.7, 0.55),
        (&[0.9, 0.2, 0.3], 0.7, 0.8),
        (&[0.6, 0.6], 0.7, 0.7),
        (&[0.60, 0.54], 0.7, 0.55),
    ];
    let task_progress: &[(Option<i64>, f64, f64)] = &[
        (None, 0.7, 0.7),
        (None, 0.2, 0.2),
        (Some(-1), 0.7, 0.7),
        (Some(-5), 0.6, 0.6),
        (Some(0), 0.7, 0.7),
        (Some(10), 0.7, 0.95),
        (Some(5), 0.6, 0.75),
        (Some(1), 0.5, 0.53),
        (Some(2), 0.5, 0.56),
        (Some(3), 0.7, 0.79),
        (Some(4), 0.7, 0.82),
        (Some(6), 0.7, 0.88),
        (Some(7), 0.7, 0.91),
        (Some(8), 0.7, 0.94),
        (Some(9), 0.7, 0.95),
        (Some(20), 0.7, 0.95),
        (Some(20), 0.5, 0.8),
        (Some(10), 0.6, 0.9),
        (Some(10), 0.1, 0.4),
        (Some(5), 0.9, 0.95),
        (Some(0), 0.95, 0.95),
        (Some(100), 0.0, 0.3),
    ];
    let distribution: &[(&[f64], f64, f64)] = &[
        (&[], 0.7, 0.7),
        (&[], 0.4, 0.4),
        (&[0.3, 0.6], 0.6, 0.5),
        (&[0.1], 0.85, 0.9),
        (&[0.6], 0.8, 0.6),
        (&[0.6], 0.9, 0.7),
        (&[0.6], 0.3, 0.5),
        (&[0.51], 0.7, 0.5),
        (&[0.5], 0.7, 0.6),
        (&[0.5], 0.9, 0.8),
        (&[0.3], 0.8, 0.7),
        (&[0.3], 0.65, 0.6),
        (&[0.3], 0.4, 0.6),
        (&[0.21], 0.7, 0.6),
        (&[0.2], 0.7, 0.8),
        (&[0.0], 0.7, 0.8),
        (&[0.0], 0.8, 0.9),
        (&[0.0], 0.95, 0.9),
        (&[0.9, 0.1], 0.7, 0.8),
        (&[0.1, 0.9], 0.7, 0.5),
        (&[0.15], 0.5, 0.6),
        (&[1.5], 0.6, 0.5),
    ];

    let mut failures = Vec::new();
    for (h, base, want) in performance {
        let got = beta_performance(h, *base);
        if !close(got, *want) {
            failures.push(format!("performance {h:?} {base} -> {got}, want {want}"));
        }
    }
    for (t, base, want) in task_progress {
        let got = beta_task_progress(*t, *base);
        if !close(got, *want) {
            failures.push(format!("task_progress {t:?} {base} -> {got}, want {want}"));
        }
    }
    for (c, base, want) in distribution {
        let got = beta_distribution_change(c, *base);
        if !close(got, *want) {
            failures.push(format!("distribution_change {c:?} {base} -> {got}, want {want}"));
        }
    }
    verdict(
        "beta schedule tables",
        failures.is_empty(),
        format!(
            "{}/{}/{} cases; mismatches: {failures:?}",
            performance.len(),
            task_progress.len(),
            distribution.len()
        ),
    );
}

/// Pixel-by-pixel composition from the patch index sets alone.
fn brute_force(head: &ImageTensor, tail: &ImageTensor, tail_idx: &[usize], grid: &PatchGrid) -> Vec<u8> {
    let px = grid.resolution / grid.side;
    let mut out = Vec::with_capacity(head.pixels.len());
    for y in 0..head.height {
        for x in 0..head.width {
            let patch = (y / px) * grid.side + x / px;
            let src = if tail_idx.contains(&patch) { tail } else { head };
            let o = (y * head.width + x) * 3;
            out.extend_from_slice(&src.pixels[o..o + 3]);
        }
    }
    out
}

fn random_image<R: Rng>(rng: &mut R, size: usize) -> ImageTensor {
    let pixels = (0..size * size * 3).map(|_| rng.gen()).collect();
    ImageTensor::new(size, size, pixels, "x", 0).unwrap()
}

fn pick<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(rng);
    all.truncate(rng.gen_range(1..=n));
    all
}

#[test]
fn mask_composition_oracle() {
    let mut rng = panda_core::seed::rng(0x6d61_736b);
    let mut checked = 0;
    let mut failures = Vec::new();
    for (size, sides) in [(32usize, &[1usize, 2, 4, 8, 16][..]), (224, &[1, 2, 4, 7, 8, 14, 16][..])] {
        for n in 0..1000 {
            let side = *sides.choose(&mut rng).unwrap();
            let grid = PatchGrid::new(size, side).unwrap();
            let head = random_image(&mut rng, size);
            let tail = random_image(&mut rng, size);
            let head_idx = pick(&mut rng, grid.len());
            let tail_idx = pick(&mut rng, grid.len());
            let composed = compose_sample(&head, &tail, &head_idx, &tail_idx, ComposeMode::Aligned, &grid).unwrap();
            if composed.image.pixels != brute_force(&head, &tail, &tail_idx, &grid) {
                failures.push(format!("aligned {size}px #{n}"));
            }
            let mask = build_mask(&tail_idx, &grid).unwrap();
            let rebuilt = saturating_add(
                &mask.complement().apply(&head).unwrap(),
                &mask.apply(&head).unwrap(),
            )
            .unwrap();
            if rebuilt.pixels != head.pixels {
                failures.push(format!("complement {size}px #{n}"));
            }
            checked += 1;
        }
    }
    verdict(
        "mask and composition oracle",
        failures.is_empty() && checked == 2000,
        format!("{checked} instances, {} mismatches {:?}", failures.len(), failures.iter().take(5).collect::<Vec<_>>()),
    );
}

fn gap_task(gap: usize) -> TaskData {
    // Two head classes of 10 + gap, four tail classes of 10.
    let sizes = [10 + gap, 10, 10 + gap, 10, 10, 10];
    let train = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| {
            (0..n).map(move |i| LabeledItem {
                item_id: format!("c{c}/{i}.png"),
                label_id: c as u32,
            })
        })
        .collect();
    TaskData {
        task_index: 1,
        class_ids: (0..sizes.len()).collect(),
        train,
        test: Vec::new(),
    }
}

#[test]
fn balancing_loop() {
    let provider = SyntheticProvider::new(11, 64, 0.3, 0.5, 1.0);
    let grid = PatchGrid::new(32, 4).unwrap();
    let images = SyntheticImages::new(provider.clone(), grid, 12);
    let labels: Vec<String> = (0..6).map(|c| format!("class{c}")).collect();
    let cfg = BalanceConfig::default();
    let tail_classes = 4;

    for g in [5usize, 20, 50] {
        let task = gap_task(g);
        let inputs = BalanceInputs {
            provider: &provider,
            images: &images,
            labels: &labels,
            grid,
            config: &cfg,
            targets: None,
            seed: 1993,
        };
        let started = Instant::now();
        let first = balance_task(&task, &inputs, &mut |_| Ok(())).unwrap();
        let elapsed = started.elapsed();
        let second = balance_task(&task, &inputs, &mut |_| Ok(())).unwrap();
        let gaps = first.log.gap_sequence();
        let footer = &first.log.footer;
        let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
        let identical = first.log.to_jsonl() == second.log.to_jsonl();
        verdict(
            &format!("balancing loop G={g}"),
            (footer.initial_gap - g as f64).abs() < 1e-12
                && decreasing
                && footer.outcome == BalanceStatus::Balanced
                && footer.final_gap.abs() <= 1.0
                && footer.iterations <= g * tail_classes
                && identical
                && elapsed < Duration::from_secs(10),
            format!(
                "{} syntheses in {} iterations (bound {}), final gap {:.4}, identical logs {identical}, {elapsed:?}",
                footer.syntheses,
                footer.iterations,
                g * tail_classes,
                footer.final_gap
            ),
        );
    }
}

#[test]
fn metric_fixtures() {
    let m = |rows: Vec<Vec<f64>>| AccuracyMatrix::from_rows(rows).unwrap();
    let no_drop = m(vec![vec![0.9], vec![0.9, 0.8]]);
    let single_drop = m(vec![vec![0.9], vec![0.7, 0.6]]);
    let three = m(vec![vec![0.9], vec![0.8, 0.9], vec![0.7, 0.7, 0.9]]);
    let checks = [
        ("A_1 no-drop", average_accuracy(&no_drop, 1).unwrap(), 0.9),
        ("A_2 no-drop", average_accuracy(&no_drop, 2).unwrap(), 0.85),
        ("F_2 no-drop", average_forgetting(&no_drop, 2).unwrap(), 0.0),
        ("A_2 single-drop", average_accuracy(&single_drop, 2).unwrap(), 0.65),
        ("F_2 single-drop", average_forgetting(&single_drop, 2).unwrap(), 0.2),
        ("A_1 three", average_accuracy(&three, 1).unwrap(), 0.9),
        ("A_2 three", average_accuracy(&three, 2).unwrap(), 0.85),
        ("A_3 three", average_accuracy(&three, 3).unwrap(), 2.3 / 3.0),
        ("F_2 three", average_forgetting(&three, 2).unwrap(), 0.1),
        ("F_3 three", average_forgetting(&three, 3).unwrap(), 0.2),
    ];
    let wrong: Vec<_> = checks.iter().filter(|(_, got, want)| (got - want).abs() > 1e-12).collect();

    let mut rng = panda_core::seed::rng(0x666f_7267);
    let mut negative = 0;
    for _ in 0..1000 {
        let t = rng.gen_range(2..=12);
        let rows: Vec<Vec<f64>> = (1..=t).map(|i| (0..i).map(|_| rng.gen_range(0.0..=1.0)).collect()).collect();
        let matrix = m(rows);
        for k in 2..=t {
            if average_forgetting(&matrix, k).unwrap() < 0.0 {
                negative += 1;
            }
        }
    }
    verdict(
        "metric fixtures",
        wrong.is_empty() && negative == 0,
        format!("{} fixture values, mismatches {wrong:?}; negative forgetting on {negative} random matrices", checks.len()),
    );
}

#[test]
fn end_to_end_direction() {
    let base = r#"
output_dir = "unused"
[stream]
num_classes = 100
n_max = 500
rho = 0.01
num_tasks = 10
[images]
resolution = 32
"#;
    let started = Instant::now();
    let seeds: Vec<u64> = (1993..=2002).collect();
    let mut sums = BTreeMap::<&str, f64>::new();
    let mut head_not_below_tail = true;
    for &seed in &seeds {
        let mut cfg = RunConfig::from_toml(base).unwrap();
        cfg.seed = seed;
        cfg.provider = ProviderConfig::Synthetic {
            dimension: 64,
            sigma: 0.3,
            foreground_fraction: 0.5,
            background_scale: 5.0,
        };
        cfg.patcher.persist_images = false;
        let mut session = Session::from_config(cfg).unwrap();
        let baseline = session.run_baseline().unwrap().results;
        let panda = session.run_panda(None).unwrap().report.results;
        let tail_b = baseline.breakdown.tail.accuracy().unwrap();
        head_not_below_tail &= tail_b <= baseline.breakdown.head.accuracy().unwrap();
        *sums.entry("tail_baseline").or_default() += tail_b;
        *sums.entry("tail_panda").or_default() += panda.breakdown.tail.accuracy().unwrap();
        *sums.entry("forget_baseline").or_default() += baseline.final_average_forgetting.unwrap();
        *sums.entry("forget_panda").or_default() += panda.final_average_forgetting.unwrap();
    }
    let elapsed = started.elapsed();
    let n = seeds.len() as f64;
    let mean = |k: &str| sums[k] / n;
    let margin = mean("tail_panda") - mean("tail_baseline");
    let d_forget = mean("forget_panda") - mean("forget_baseline");
    verdict(
        "end-to-end direction",
        margin >= 0.8 * FROZEN_TAIL_MARGIN
            && d_forget <= 0.01
            && head_not_below_tail
            && elapsed < Duration::from_secs(300),
        format!(
            "tail {:.4} -> {:.4} (margin {margin:+.4}, floor {:.4}), forgetting {:+.4}, {elapsed:?}",
            mean("tail_baseline"),
            mean("tail_panda"),
            0.8 * FROZEN_TAIL_MARGIN,
            d_forget
        ),
    );
}

fn run_cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_panda"))
        .args(args)
        .current_dir(dir)
        .env("PANDA_SEED", "1993")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "panda {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn full_pipeline(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    run_cli(dir, &["stream", "build", "--config", "run.toml", "--out", "out"]);
    run_cli(dir, &["augment", "--config", "run.toml", "--plan", "out/plan.json"]);
    run_cli(
        dir,
        &["eval", "--config", "run.toml", "--plan", "out/plan.json", "--augmented", "out/augment"],
    );
    run_cli(dir, &["report", "out/report_baseline.json", "out/report_panda.json"]);
    let mut files = BTreeMap::new();
    for name in [
        "plan.json",
        "report_baseline.json",
        "report_panda.json",
        "matrix_baseline.csv",
        "matrix_panda.csv",
        "comparison.csv",
        "average_accuracy.csv",
        "augment/summary.json",
    ] {
        files.insert(name.to_string(), fs::read(dir.join("out").join(name)).unwrap());
    }
    files
}

#[test]
fn pipeline_determinism() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        r#"
output_dir = "out"
[stream]
num_classes = 20
n_max = 60
rho = 0.05
num_tasks = 4
[provider]
kind = "synthetic"
dimension = 64
background_scale = 5.0
[images]
resolution = 32
"#,
    )
    .unwrap();
    let first = full_pipeline(dir.path());
    let second = full_pipeline(dir.path());
    let differing: Vec<&String> = first.keys().filter(|k| first[*k] != second[*k]).collect();
    let report = String::from_utf8(first["report_panda.json"].clone()).unwrap();
    verdict(
        "pipeline determinism",
        differing.is_empty() && report.contains("\"seed\": 1993"),
        format!("{} artifacts compared, differing: {differing:?}", first.len()),
    );
}
