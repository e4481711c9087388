//! Train the default network on a small simulated dataset and compare its
//! predictions with the cell's true rates on held-out frames.
//!
//! ```bash
//! cargo run --release --example train_small -- 20000
//! ```

use subunit_cnn::cnn::{Architecture, CnnModel};
use subunit_cnn::rgc::{label_dataset, make_default_model};
use subunit_cnn::stimulus::{generate_dataset, StimulusConfig};
use subunit_cnn::training::{evaluate_cc, split_dataset, train_with, TrainConfig};

fn main() -> subunit_cnn::Result<()> {
    let n_samples: usize = std::env::args().nth(1).map_or(20_000, |s| s.parse().expect("sample count"));
    let cell = make_default_model(26, 26)?;
    let frames = generate_dataset(&StimulusConfig {
        n_samples,
        ..StimulusConfig::default()
    })?;
    let data = label_dataset(frames, &cell, 3)?;

    let config = TrainConfig {
        max_epochs: 15,
        patience: 5,
        ..TrainConfig::default()
    };
    let model = CnnModel::init(Architecture::with_defaults(26, 26), config.seed)?;
    let (best, history) = train_with(model, &data, &config, |r, _| {
        println!("epoch {:>2}  train {:.4}  val {:.4}  val cc {:.3}", r.epoch, r.train_loss, r.val_loss, r.val_cc);
    })?;
    println!("validation cc before training {:.3}", history.initial_val_cc);

    let splits = split_dataset(&data, &config)?;
    println!("held-out cc against true rates: {:.4}", evaluate_cc(&best, &splits.test)?);
    Ok(())
}
