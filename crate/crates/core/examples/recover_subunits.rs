//! Full pipeline on simulated data: generate white noise, label it with the
//! five-subunit cell, train the network, then score how well it predicts the
//! cell and whether its filters line up with the hidden subunits.
//!
//! ```bash
//! cargo run --release --example recover_subunits -- 100000 4
//! ```
//! Arguments: number of samples (default 100000) and training seed (default 4).

use std::time::Instant;

use subunit_cnn::analysis::{compute_sta, cosine_similarity, match_filters, MatchOptions};
use subunit_cnn::cnn::{Architecture, CnnModel};
use subunit_cnn::rgc::{label_dataset, make_default_model};
use subunit_cnn::stimulus::{generate_dataset, StimulusConfig};
use subunit_cnn::training::{evaluate_cc, split_dataset, train_with, TrainConfig};

fn main() -> subunit_cnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_samples: usize = args.next().map_or(100_000, |s| s.parse().expect("sample count"));
    let seed: u64 = args.next().map_or(4, |s| s.parse().expect("seed"));
    let (w, h) = (26, 26);

    let truth = make_default_model(w, h)?;
    println!("calibrated gain {:.4}", truth.gain);
    let frames = generate_dataset(&StimulusConfig {
        width: w,
        height: h,
        n_samples,
        seed: 1,
    })?;
    let data = label_dataset(frames, &truth, 3)?;
    let spikes: usize = data.labels().iter().map(|&l| l as usize).sum();
    println!("{n_samples} samples, spike fraction {:.4}", spikes as f64 / n_samples as f64);

    let config = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let model = CnnModel::init(Architecture::with_defaults(h, w), seed)?;
    let start = Instant::now();
    let (best, history) = train_with(model, &data, &config, |rec, m| {
        println!(
            "epoch {:>3}  train {:.5}  val {:.5}  cc {:.4}  norms {:?}  [{:.0?}]",
            rec.epoch,
            rec.train_loss,
            rec.val_loss,
            rec.val_cc,
            m.conv1_filter_norms().iter().map(|n| (n * 100.0).round() / 100.0).collect::<Vec<_>>(),
            start.elapsed()
        );
    })?;
    let best_rec = history.best_record().expect("at least one epoch");
    println!("best epoch {} (val cc {:.4})", best_rec.epoch, best_rec.val_cc);

    let splits = split_dataset(&data, &config)?;
    println!("test cc vs analytic rates: {:.4}", evaluate_cc(&best, &splits.test)?);

    let report = match_filters(&best, &truth, &MatchOptions::default())?;
    for e in &report.entries {
        println!(
            "filter {}  norm {:.3}  effective {}  subunit {:?}  ncc {:?}",
            e.index, e.norm, e.effective, e.subunit, e.ncc
        );
    }
    println!("recovered at ncc >= 0.7: {}", report.recovered(0.7));

    let sta_cnn = compute_sta(&best, 50_000, w, h, 11)?;
    let sta_truth = compute_sta(&truth, 50_000, w, h, 11)?;
    println!(
        "STA cosine (network vs cell): {:.4}",
        cosine_similarity(&sta_cnn.values, &sta_truth.values)?
    );
    Ok(())
}
