//! Binary white-noise frames: every pixel is an independent fair ±1 draw, and
//! frame `i` of a seed can be regenerated on its own without the others.
//!
//! ```bash
//! cargo run --release --example white_noise
//! ```

use subunit_cnn::stimulus::{generate_dataset, sample_frame, StimulusConfig};

fn main() -> subunit_cnn::Result<()> {
    let config = StimulusConfig {
        width: 16,
        height: 16,
        n_samples: 20_000,
        seed: 7,
    };
    let frames = generate_dataset(&config)?;

    let n_pix = (config.width * config.height) as f64;
    let mean: f64 = frames.iter().flat_map(|f| f.values()).sum::<f64>() / (frames.len() as f64 * n_pix);
    let neighbour: f64 = frames.iter().map(|f| f.get(0, 0) * f.get(0, 1)).sum::<f64>() / frames.len() as f64;
    println!("{} frames of {}x{}", frames.len(), config.width, config.height);
    println!("pixel mean {mean:+.5}, neighbour correlation {neighbour:+.5}");

    // Random access: frame 12345 regenerated alone equals the one in the batch.
    let alone = sample_frame(config.seed, 12_345, config.width, config.height)?;
    println!("frame 12345 reproducible by index: {}", alone == frames[12_345]);

    println!("first frame:");
    for r in 0..config.height {
        let row: String = (0..config.width).map(|c| if frames[0].get(r, c) > 0.0 { '#' } else { '.' }).collect();
        println!("  {row}");
    }
    Ok(())
}
