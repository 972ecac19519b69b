//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dfdg_core::autodiff::{grad_check_inputs, ops, Tensor};
use dfdg_core::data::{
    class_balanced_batches, generate_spurious_gaussian, leave_one_domain_out, SpuriousGaussianParams,
    TrainView,
};
use dfdg_core::eval::lodo_experiment;
use dfdg_core::losses::{alignment_loss, cross_entropy, total_loss, SoftLabelBatch};
use dfdg_core::masking::{mask_below_percentile, masked_positions, percentile};
use dfdg_core::models::{build_cnn1d, build_mlp, Layer};
use dfdg_core::saliency::{smoothgrad, vanilla_saliency, SaliencyKind, SaliencyMap, SmoothGradConfig};
use dfdg_core::trainer::{lr_schedule, train, TrainHistory};
use dfdg_core::{Model, StrategyMode, TrainConfig};

type LossFn<'a> = dyn Fn(&[Tensor]) -> dfdg_core::Result<Tensor> + 'a;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Smallest |pre-activation| entering any ReLU, to keep finite differences
/// away from the kink.
fn min_relu_input(model: &Model, x: &Tensor) -> f64 {
    let n = x.shape()[0];
    let params = model.params();
    let mut h = x.clone();
    let mut closest = f64::INFINITY;
    for layer in model.layers() {
        h = match *layer {
            Layer::Flatten => ops::reshape(&h, &[n, model.input_width()]).unwrap(),
            Layer::Affine { weight, bias } => {
                ops::affine(&h, &params[weight].tensor, &params[bias].tensor).unwrap()
            }
            Layer::Conv1d { weight, bias } => {
                ops::conv1d(&h, &params[weight].tensor, &params[bias].tensor).unwrap()
            }
            Layer::GlobalAvgPool => ops::global_avg_pool(&h).unwrap(),
            Layer::Relu => {
                closest = h.values().iter().fold(closest, |m, v| m.min(v.abs()));
                ops::relu(&h)
            }
        };
    }
    closest
}

fn random_model(rng: &mut ChaCha8Rng, classes: usize) -> (Model, Vec<usize>) {
    let seed = rng.random();
    if rng.random_bool(0.75) {
        let d = rng.random_range(2..=5);
        let mut sizes = vec![d];
        for _ in 0..rng.random_range(0..=2) {
            sizes.push(rng.random_range(2..=5));
        }
        (build_mlp(&sizes, classes, seed).unwrap(), vec![d])
    } else {
        let len = rng.random_range(3..=6);
        let c = rng.random_range(1..=2);
        let model = build_cnn1d(&[c, rng.random_range(2..=3)], 3, len, classes, seed).unwrap();
        (model, vec![c, len])
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut accepted = 0;
    let mut rejected = 0;
    while accepted < 100 {
        let classes = rng.random_range(2..=4);
        let (model, shape) = random_model(&mut rng, classes);
        let n = rng.random_range(2..=5);
        let width: usize = shape.iter().product();
        let mut full = vec![n];
        full.extend(&shape);
        let x = Tensor::new((0..n * width).map(|_| rng.random_range(-1.0..1.0)).collect(), &full).unwrap();
        if min_relu_input(&model, &x) < 1e-3 {
            rejected += 1;
            continue;
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let alpha: f64 = rng.random_range(0.05..2.0);
        let mut inputs = model.param_tensors();
        inputs.push(x);
        let k = inputs.len() - 1;
        let logits_of = |ts: &[Tensor]| {
            let mut m = model.clone();
            m.set_params(ts[..k].to_vec())?;
            m.forward(&ts[k])
        };
        let checks: [&LossFn; 3] = [
            &|ts| cross_entropy(&logits_of(ts)?, &labels),
            &|ts| alignment_loss(&SoftLabelBatch::from_logits(&logits_of(ts)?, &labels)?),
            &|ts| total_loss(&logits_of(ts)?, &labels, alpha),
        ];
        for f in checks {
            let report = grad_check_inputs(f, &inputs, 1e-5).unwrap();
            worst = worst.max(report.max_rel_error);
        }
        accepted += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 60.0,
        format!(
            "100 configs ({rejected} redrawn near a ReLU kink), max rel error {worst:.3e}, {secs:.1}s"
        ),
    )
}

fn alignment_analytics() -> Outcome {
    let soft = |rows: &[Vec<f64>], labels: &[usize]| {
        let s = SoftLabelBatch::new(Tensor::from_rows(rows).unwrap(), labels.to_vec()).unwrap();
        alignment_loss(&s).unwrap().item().unwrap()
    };
    let singletons = soft(
        &[vec![0.2, 0.3, 0.5], vec![0.9, 0.05, 0.05], vec![0.4, 0.4, 0.2]],
        &[0, 1, 2],
    );
    let identical = soft(
        &[vec![0.1, 0.6, 0.3], vec![0.1, 0.6, 0.3], vec![0.1, 0.6, 0.3], vec![0.7, 0.2, 0.1]],
        &[1, 1, 1, 0],
    );
    let hand = soft(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 0]);
    // Two opposite one-hot rows: centroid (0.5, 0.5), each squared distance
    // 0.25 + 0.25, averaged over the two members.
    let expected = (0.25 + 0.25 + 0.25 + 0.25) / 2.0;
    outcome(
        singletons == 0.0 && identical == 0.0 && (hand - expected).abs() <= 1e-12,
        format!("singletons {singletons}, identical {identical}, hand case {hand}"),
    )
}

fn saliency_linear_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (d, c) = (7, 3);
    let mut model = build_mlp(&[d], c, 0).unwrap();
    let w: Vec<f64> = (0..d * c).map(|_| rng.random_range(-2.0..2.0)).collect();
    let b: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
    model
        .set_params(vec![Tensor::new(w.clone(), &[d, c]).unwrap(), Tensor::new(b, &[c]).unwrap()])
        .unwrap();
    let mut checked = 0;
    let mut failures = 0;
    for trial in 0..20 {
        let x = Tensor::new((0..d).map(|_| rng.random_range(-3.0..3.0)).collect(), &[d]).unwrap();
        for class in 0..c {
            let expected: Vec<f64> = (0..d).map(|i| w[i * c + class] * w[i * c + class]).collect();
            let vanilla = vanilla_saliency(&model, &x, class).unwrap();
            let cfg = SmoothGradConfig {
                n: 1 + trial * 3,
                sigma: [0.0, 0.15, 0.5, 2.0][trial % 4],
                seed: rng.random(),
            };
            let smooth = smoothgrad(&model, &x, class, &cfg).unwrap();
            checked += 1;
            if vanilla.scores != expected || smooth.scores != vanilla.scores {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0,
        format!("{checked} (sample, class, n, sigma, seed) cases, {failures} mismatches"),
    )
}

fn masking_invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let trials = 100_000;
    let mut failures = Vec::new();
    for t in 0..trials {
        let d = rng.random_range(1..=24);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let scores: Vec<f64> = match t % 3 {
            0 => (0..d).map(|_| rng.random_range(0.0..1.0)).collect(),
            1 => (0..d).map(|_| rng.random_range(0..4) as f64).collect(),
            _ => vec![0.5; d],
        };
        let constant = t % 3 == 2;
        let sal = SaliencyMap {
            scores: scores.clone(),
            shape: vec![d],
            class_used: 0,
            kind: SaliencyKind::Vanilla,
        };
        let q = if t % 10 == 0 { 0.0 } else { rng.random_range(0.0..=100.0) };
        let out = mask_below_percentile(&x, &sal, q, &mut rng).unwrap();
        let mut a: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = out.iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            failures.push(format!("trial {t}: multiset changed"));
        }
        let threshold = percentile(&scores, q);
        if (0..d).any(|i| scores[i] >= threshold && out[i].to_bits() != x[i].to_bits()) {
            failures.push(format!("trial {t}: kept position altered"));
        }
        if (q == 0.0 || constant) && out != x {
            failures.push(format!("trial {t}: expected identity"));
        }
        let q2 = rng.random_range(q..=100.0);
        let small = masked_positions(&scores, q);
        let large = masked_positions(&scores, q2);
        if !small.iter().all(|p| large.contains(p)) {
            failures.push(format!("trial {t}: masked set shrank from q={q} to q={q2}"));
        }
        if failures.len() > 5 {
            break;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures.is_empty() && secs < 60.0,
        format!("{trials} trials, {secs:.1}s{}", if failures.is_empty() { String::new() } else { format!(", {:?}", failures) }),
    )
}

fn sampler_contract() -> Outcome {
    let (major, minor) = (9900, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..(major + minor) * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut y = vec![0; major];
    y.extend(vec![1; minor]);
    let view = TrainView::new(x, y, vec![2], 2).unwrap();
    let mut worst_ratio = f64::INFINITY;
    let mut bad = 0;
    for batch in class_balanced_batches(&view, 128, 0.5, 0).unwrap().take(1000) {
        let counts = batch.class_counts(2);
        let (lo, hi) = (counts[0].min(counts[1]), counts[0].max(counts[1]));
        worst_ratio = worst_ratio.min(lo as f64 / hi as f64);
        if batch.len() != 128 || (lo as f64) < 0.5 * hi as f64 {
            bad += 1;
        }
    }
    outcome(
        bad == 0,
        format!("1000 batches from a 99:1 pool, {bad} violations, worst minority/majority {worst_ratio:.3}"),
    )
}

fn schedule_exactness() -> Outcome {
    let expected = |i: usize| if i < 1600 { 0.001 } else { 0.0001 };
    let pointwise = (0..2000)
        .all(|i| lr_schedule(0.001, i, 2000, 0.1, 0.8).unwrap().to_bits() == f64::to_bits(expected(i)));
    let ds = generate_spurious_gaussian(&SpuriousGaussianParams {
        n_per_domain_class: 10,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        iterations: 2000,
        batch_size: 8,
        strategy_mode: StrategyMode::CeOnly,
        ..Default::default()
    };
    let (_, history): (_, TrainHistory) = train(&ds.train_view(), &cfg).unwrap();
    let trained = history.len() == 2000
        && history
            .records
            .iter()
            .all(|r| r.lr.to_bits() == f64::to_bits(expected(r.iteration)));
    outcome(
        pointwise && trained,
        format!("schedule function bitwise: {pointwise}, training history bitwise: {trained}"),
    )
}

fn domain_free_structure() -> Outcome {
    // The trainer entry point only accepts the domain-free view.
    let entry: fn(&TrainView, &TrainConfig) -> dfdg_core::Result<(Model, TrainHistory)> = train;
    let ds = generate_spurious_gaussian(&SpuriousGaussianParams {
        n_per_domain_class: 20,
        ..Default::default()
    })
    .unwrap();
    let split = leave_one_domain_out(&ds, "d2").unwrap();
    let debug = format!("{:?}", split.train);
    let cfg = TrainConfig {
        iterations: 5,
        batch_size: 16,
        ..Default::default()
    };
    let ran = entry(&split.train, &cfg).is_ok();
    let untagged = !debug.contains("domain") && !debug.contains("d2") && !debug.contains("d0");
    outcome(
        ran && untagged && split.train.len() == 3 * 3 * 20,
        format!("trained on TrainView of {} rows, view carries no domain data: {untagged}", split.train.len()),
    )
}

struct Benchmark {
    ce_heldin: f64,
    ce: f64,
    alternate: f64,
    align_only: f64,
    mask_only: f64,
    secs: f64,
}

fn run_benchmark() -> Benchmark {
    let start = Instant::now();
    let ds = generate_spurious_gaussian(&SpuriousGaussianParams::default()).unwrap();
    let cfg = TrainConfig {
        iterations: 500,
        ..Default::default()
    };
    let methods = [
        StrategyMode::CeOnly,
        StrategyMode::Alternate,
        StrategyMode::AlignOnly,
        StrategyMode::MaskOnly,
    ];
    let report = lodo_experiment(&ds, &cfg, &methods, &[0, 1, 2]).unwrap();
    print!("{}", report.to_text());
    let mean = |m: StrategyMode| report.footer_for(m.as_str()).unwrap().mean;
    Benchmark {
        ce_heldin: report.footer_for("ce_only").unwrap().heldin_mean,
        ce: mean(StrategyMode::CeOnly),
        alternate: mean(StrategyMode::Alternate),
        align_only: mean(StrategyMode::AlignOnly),
        mask_only: mean(StrategyMode::MaskOnly),
        secs: start.elapsed().as_secs_f64(),
    }
}

fn synthetic_benchmark(b: &Benchmark) -> Outcome {
    let gap = 100.0 * (b.alternate - b.ce);
    let a = b.ce_heldin >= 0.95 && b.ce <= 0.70;
    outcome(
        a && gap >= 5.0 && b.secs < 600.0,
        format!(
            "ce_only held-in {:.2}%, target {:.2}%; alternate target {:.2}% ({gap:+.2} points); {:.0}s",
            100.0 * b.ce_heldin,
            100.0 * b.ce,
            100.0 * b.alternate,
            b.secs
        ),
    )
}

fn ablation_monotonicity(b: &Benchmark) -> Outcome {
    outcome(
        b.align_only >= b.ce && b.mask_only >= b.ce,
        format!(
            "ce_only {:.2}%, align_only {:.2}%, mask_only {:.2}%",
            100.0 * b.ce,
            100.0 * b.align_only,
            100.0 * b.mask_only
        ),
    )
}

fn dfdg(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_dfdg"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap_or_default();
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"iterations": 30, "batch_size": 32, "sg_n": 4}"#,
    )
    .unwrap();
    std::fs::write(
        dir.path().join("grid.json"),
        r#"[{"alpha": 0.0, "m_percent": 0.0, "q_max": 0.0}, {"alpha": 0.1, "m_percent": 50.0, "q_max": 70.0}]"#,
    )
    .unwrap();
    let mut ok = true;
    let mut compared = Vec::new();
    for round in 0..2 {
        let data = p(&format!("data{round}"));
        let run = p(&format!("run{round}"));
        ok &= dfdg(&["generate", "--kind", "spurious-gaussian", "--out", &data, "--seed", "4", "--n-per-domain-class", "40"]);
        ok &= dfdg(&["train", "--data", &data, "--config", &p("cfg.json"), "--out", &run, "--target", "d1"]);
        ok &= dfdg(&[
            "lodo", "--data", &data, "--config", &p("cfg.json"), "--methods", "ce_only,alternate",
            "--seeds", "0,1", "--out", &p(&format!("lodo{round}.json")),
        ]);
        ok &= dfdg(&[
            "ablation", "--data", &data, "--config", &p("cfg.json"), "--grid", &p("grid.json"),
            "--seeds", "0", "--out", &p(&format!("ablation{round}.json")),
        ]);
        let ck = format!("{run}/checkpoint.json");
        ok &= dfdg(&[
            "saliency-export", "--checkpoint", &ck, "--data", &data, "--samples", "5",
            "--out", &p(&format!("sal{round}.csv")),
        ]);
        ok &= dfdg(&["export-features", "--checkpoint", &ck, "--data", &data, "--out", &p(&format!("feat{round}.csv"))]);
    }
    for (a, b) in [
        ("data0/data.csv", "data1/data.csv"),
        ("data0/meta.json", "data1/meta.json"),
        ("run0/checkpoint.json", "run1/checkpoint.json"),
        ("lodo0.json", "lodo1.json"),
        ("ablation0.json", "ablation1.json"),
        ("sal0.csv", "sal1.csv"),
        ("feat0.csv", "feat1.csv"),
    ] {
        let (x, y) = (read(a), read(b));
        ok &= !x.is_empty() && x == y;
        compared.push(Path::new(a).file_name().unwrap().to_string_lossy().into_owned());
    }
    outcome(ok, format!("repeated six commands, byte-compared {}", compared.join(", ")))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |id, name, o: Outcome| {
        println!("criterion {id:>2} {:<28} {}  {}", name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };
    record(1, "gradient correctness", gradient_correctness());
    record(2, "alignment analytics", alignment_analytics());
    record(3, "saliency linear identity", saliency_linear_identity());
    record(4, "masking invariants", masking_invariants());
    record(5, "sampler contract", sampler_contract());
    record(6, "schedule exactness", schedule_exactness());
    record(7, "domain-free structure", domain_free_structure());
    let bench = run_benchmark();
    record(8, "synthetic benchmark", synthetic_benchmark(&bench));
    record(9, "ablation monotonicity", ablation_monotonicity(&bench));
    record(10, "cli determinism", cli_determinism());
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", results.len());
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
