//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Criteria 1-4 train the default network on 100k and 3 x 300k simulated
//! samples, which takes hours on a single core. Set `ACCEPTANCE_QUICK=1` to
//! report them as SKIP and run only the fast checks.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subunit_cnn::analysis::{compute_sta, cosine_similarity, match_filters, FilterReport, MatchOptions};
use subunit_cnn::cnn::{conv2d_valid, forward, grad_check, poisson_objective, Architecture, CnnModel, Regularization, Tensor};
use subunit_cnn::io::write_dataset;
use subunit_cnn::rgc::{label_dataset, make_default_model, LabeledDataset, RgcModel};
use subunit_cnn::stimulus::{generate_dataset, generate_range, sample_frame, StimulusConfig};
use subunit_cnn::training::{evaluate_cc, split_dataset, train, TrainConfig};

const W: usize = 26;
const H: usize = 26;

struct Outcome {
    id: u8,
    passed: Option<bool>,
    detail: String,
}

fn report(id: u8, passed: Option<bool>, detail: String) -> Outcome {
    let tag = match passed {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIP",
    };
    println!("criterion {id}: {tag} - {detail}");
    Outcome { id, passed, detail }
}

// ---------------------------------------------------------------- fast checks

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut all = true;
    let mut archs = Vec::new();
    for trial in 0..3 {
        let f1 = rng.gen_range(3..9);
        let f2 = rng.gen_range(2..6);
        let side = f1 + f2 - 1 + rng.gen_range(0..6);
        let arch = Architecture {
            input_height: side,
            input_width: side,
            conv1_filters: rng.gen_range(1..9),
            conv1_size: f1,
            conv2_filters: rng.gen_range(1..5),
            conv2_size: f2,
        };
        let model = CnnModel::init(arch, 40 + trial).expect("valid architecture");
        match grad_check(&model, 100, 1e-4, trial) {
            Ok(r) => {
                all &= r.passed;
                worst = worst.max(r.max_relative_error);
            }
            Err(_) => all = false,
        }
        archs.push(format!("{side}x{side}/{}x{f1}/{}x{f2}", arch.conv1_filters, arch.conv2_filters));
    }
    report(
        5,
        Some(all),
        format!(
            "grad_check 100 probes at [{}], worst relative error {worst:.2e} (tol 1e-4, {:.1?})",
            archs.join(", "),
            start.elapsed()
        ),
    )
}

fn naive_conv(x: &[f64], c: usize, h: usize, w: usize, f: &[f64], k: usize, fs: usize, b: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h - fs + 1, w - fs + 1);
    let mut out = vec![0.0; k * oh * ow];
    for kk in 0..k {
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = b[kk];
                for cc in 0..c {
                    for i in 0..fs {
                        for j in 0..fs {
                            s += f[((kk * c + cc) * fs + i) * fs + j] * x[(cc * h + y + i) * w + xx + j];
                        }
                    }
                }
                out[(kk * oh + y) * ow + xx] = s;
            }
        }
    }
    out
}

fn forward_oracle() -> Outcome {
    let arch = Architecture {
        input_height: 8,
        input_width: 8,
        conv1_filters: 2,
        conv1_size: 3,
        conv2_filters: 1,
        conv2_size: 3,
    };
    let mut worst: f64 = 0.0;
    for instance in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(instance);
        let mut model = CnnModel::zeros(arch).expect("valid");
        for t in model.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        let frame = sample_frame(instance, 0, 8, 8).expect("frame");
        let x = frame.to_vec();

        let input = Tensor::new(vec![1, 8, 8], x.clone()).expect("shape");
        let conv = conv2d_valid(&input, &model.conv1_weight, model.conv1_bias.data()).expect("conv");
        let want1 = naive_conv(&x, 1, 8, 8, model.conv1_weight.data(), 2, 3, model.conv1_bias.data());
        for (a, b) in conv.data().iter().zip(&want1) {
            worst = worst.max((a - b).abs());
        }

        let act1: Vec<f64> = want1.iter().map(|v| v.max(0.0)).collect();
        let pre2 = naive_conv(&act1, 2, 6, 6, model.conv2_weight.data(), 1, 3, model.conv2_bias.data());
        let z = model.dense_bias.data()[0]
            + pre2.iter().zip(model.dense_weight.data()).map(|(p, w)| p.max(0.0) * w).sum::<f64>();
        let want = (1.0 + z.exp()).ln();
        let (rate, _) = forward(&model, &frame).expect("forward");
        worst = worst.max((rate - want).abs());
    }
    report(
        6,
        Some(worst <= 1e-12),
        format!("max |optimized - naive| over 5 tiny instances = {worst:.2e} (tol 1e-12)"),
    )
}

fn objective_sanity() -> Outcome {
    let model = CnnModel::zeros(Architecture::with_defaults(H, W)).expect("valid");
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for y in [1u8, 2, 5] {
        let r = f64::from(y);
        let up = poisson_objective(r + h, y, &model, &Regularization::NONE, &[]).expect("positive");
        let down = poisson_objective(r - h, y, &model, &Regularization::NONE, &[]).expect("positive");
        worst = worst.max(((up - down) / (2.0 * h)).abs());
    }
    report(
        8,
        Some(worst <= 1e-6),
        format!("max |dL/drate| at rate = y for y in {{1,2,5}}: {worst:.2e} (tol 1e-6)"),
    )
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_subunit-cnn"))
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn determinism(dir: &Path) -> Outcome {
    let run = |tag: &str| -> Result<(Vec<u8>, Vec<u8>), String> {
        let data = dir.join(format!("det_{tag}.rgcd"));
        let ckpt = dir.join(format!("det_{tag}.rgcm"));
        cli(&["gen-data", "--out", p(&data), "--samples", "5000"])?;
        cli(&["train", "--data", p(&data), "--out", p(&ckpt), "--epochs", "3"])?;
        Ok((
            std::fs::read(&data).map_err(|e| e.to_string())?,
            std::fs::read(&ckpt).map_err(|e| e.to_string())?,
        ))
    };
    match (run("a"), run("b")) {
        (Ok(a), Ok(b)) => report(
            7,
            Some(a == b),
            format!(
                "dataset identical: {}, checkpoint identical: {} ({} + {} bytes)",
                a.0 == b.0,
                a.1 == b.1,
                a.0.len(),
                a.1.len()
            ),
        ),
        (Err(e), _) | (_, Err(e)) => report(7, Some(false), e),
    }
}

fn external_data(dir: &Path) -> Outcome {
    let result = (|| -> Result<String, String> {
        let n = 4000;
        let frames = generate_range(555, 0..n, W, H).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(556);
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=5)).collect();
        let data = dir.join("external.rgcd");
        write_dataset(&data, &LabeledDataset::new(frames, labels, None).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let ckpt = dir.join("external.rgcm");
        let out_dir = dir.join("external_report");
        cli(&["train", "--data", p(&data), "--out", p(&ckpt), "--epochs", "2"])?;
        let cc = cli(&["eval", "--data", p(&data), "--model", p(&ckpt)])?;
        cli(&["analyze", "--model", p(&ckpt), "--out-dir", p(&out_dir)])?;
        cli(&[
            "render",
            "--model",
            p(&ckpt),
            "--out-dir",
            p(&out_dir),
            "--sta-frames",
            "5000",
            "--feature-frames",
            "10000",
        ])?;
        let mut missing: Vec<String> = vec!["filter_report.csv".into(), "sta_model.pgm".into()];
        for k in 0..8 {
            missing.push(format!("filter_{k}.pgm"));
            missing.push(format!("feature_{k}.pgm"));
        }
        missing.retain(|f| !out_dir.join(f).exists());
        if !missing.is_empty() {
            return Err(format!("missing artifacts: {missing:?}"));
        }
        if !cc.starts_with("cc=") {
            return Err(format!("unexpected eval output {cc:?}"));
        }
        Ok(format!("labels 0..=5, no rates: eval printed {}, report artifacts complete", cc.trim()))
    })();
    match result {
        Ok(d) => report(9, Some(true), d),
        Err(e) => report(9, Some(false), e),
    }
}

// ---------------------------------------------------------------- training runs

struct RunResult {
    test_cc: f64,
    report: FilterReport,
    sta_cosine: f64,
}

/// Replicate `r` shifts every seed; replicate 0 uses the defaults.
fn pipeline(n_samples: usize, replicate: u64, truth: &RgcModel) -> subunit_cnn::Result<RunResult> {
    let start = Instant::now();
    let frames = generate_dataset(&StimulusConfig {
        width: W,
        height: H,
        n_samples,
        seed: 1 + 10 * replicate,
    })?;
    let data = label_dataset(frames, truth, 3 + 10 * replicate)?;
    let config = TrainConfig {
        seed: 4 + replicate,
        ..TrainConfig::default()
    };
    let model = CnnModel::init(Architecture::with_defaults(H, W), config.seed)?;
    let (best, history) = train(model, &data, &config)?;
    let splits = split_dataset(&data, &config)?;
    let test_cc = evaluate_cc(&best, &splits.test)?;
    let report = match_filters(&best, truth, &MatchOptions::default())?;
    let sta_cnn = compute_sta(&best, 50_000, W, H, 11)?;
    let sta_truth = compute_sta(truth, 50_000, W, H, 11)?;
    let sta_cosine = cosine_similarity(&sta_cnn.values, &sta_truth.values)?;
    eprintln!(
        "  run n={n_samples} replicate={replicate}: {} epochs, test cc {test_cc:.4}, recovered {}, [{:.0?}]",
        history.records.len(),
        report.recovered(0.7),
        start.elapsed()
    );
    Ok(RunResult {
        test_cc,
        report,
        sta_cosine,
    })
}

fn norm_ratio(report: &FilterReport) -> Option<f64> {
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let matched = mean(report.entries.iter().filter(|e| e.subunit.is_some()).map(|e| e.norm).collect())?;
    let unmatched = mean(report.entries.iter().filter(|e| e.subunit.is_none()).map(|e| e.norm).collect())?;
    Some(matched / unmatched)
}

fn training_criteria() -> Vec<Outcome> {
    let truth = match make_default_model(W, H) {
        Ok(t) => t,
        Err(e) => return (1..=4).map(|id| report(id, Some(false), format!("truth model: {e}"))).collect(),
    };
    let small = pipeline(100_000, 0, &truth);
    let large: Vec<_> = (0..3).map(|r| pipeline(300_000, r, &truth)).collect();

    let mut out = Vec::new();
    out.push(match (&small, &large[0]) {
        (Ok(s), Ok(l)) => report(
            1,
            Some(s.test_cc >= 0.60 && l.test_cc >= 0.65),
            format!("test CC {:.4} at 100k (>= 0.60), {:.4} at 300k (>= 0.65)", s.test_cc, l.test_cc),
        ),
        (Err(e), _) | (_, Err(e)) => report(1, Some(false), e.to_string()),
    });

    let counts: Vec<Option<usize>> = large.iter().map(|r| r.as_ref().ok().map(|r| r.report.recovered(0.7))).collect();
    out.push(if counts.iter().all(Option::is_some) {
        let mut c: Vec<usize> = counts.iter().flatten().copied().collect();
        let first = c[0];
        c.sort_unstable();
        let median = c[1];
        report(
            2,
            Some(first >= 3 && median >= 3),
            format!("subunits recovered at NCC >= 0.7: {counts:?} over 3 seeds (default run {first} >= 3, median {median} >= 3)"),
        )
    } else {
        report(2, Some(false), "a 300k training run failed".into())
    });

    out.push(match &large[0] {
        Ok(l) => {
            let norms: Vec<String> = l
                .report
                .entries
                .iter()
                .map(|e| format!("{:.2}{}", e.norm, if e.subunit.is_some() { "*" } else { "" }))
                .collect();
            match norm_ratio(&l.report) {
                Some(r) => report(
                    3,
                    Some(r >= 2.0),
                    format!("matched/unmatched mean norm ratio {r:.3} (>= 2); norms [{}] (* = matched)", norms.join(", ")),
                ),
                None => report(3, Some(false), "no matched or no unmatched filters".into()),
            }
        }
        Err(e) => report(3, Some(false), e.to_string()),
    });

    out.push(match &large[0] {
        Ok(l) => report(
            4,
            Some(l.sta_cosine >= 0.90),
            format!("STA cosine network vs cell {:.4} at 50k frames (>= 0.90)", l.sta_cosine),
        ),
        Err(e) => report(4, Some(false), e.to_string()),
    });
    out
}

fn main() {
    // libtest passes flags like `--nocapture`; nothing here takes arguments.
    let quick = std::env::var_os("ACCEPTANCE_QUICK").is_some_and(|v| v != "0");
    let dir = tempfile::tempdir().expect("temp dir");

    let mut outcomes = vec![
        gradient_correctness(),
        forward_oracle(),
        determinism(dir.path()),
        objective_sanity(),
        external_data(dir.path()),
    ];
    if quick {
        for id in 1..=4 {
            outcomes.push(report(id, None, "skipped (ACCEPTANCE_QUICK set)".into()));
        }
    } else {
        outcomes.extend(training_criteria());
    }

    outcomes.sort_by_key(|o| o.id);
    println!("\nsummary:");
    for o in &outcomes {
        let tag = match o.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!("  {} criterion {}: {}", tag, o.id, o.detail);
    }
    if outcomes.iter().any(|o| o.passed == Some(false)) {
        std::process::exit(1);
    }
}
