//! The simulated ganglion cell: five Gaussian subunits, each squared above
//! zero, pooled, passed through a unit-threshold output and turned into
//! Bernoulli spikes. The input gain is calibrated to a 10% spike probability.
//!
//! ```bash
//! cargo run --release --example simulate_cell
//! ```

use subunit_cnn::rgc::{label_dataset, make_default_model, mean_spike_probability, rgc_rate};
use subunit_cnn::stimulus::{generate_range, Frame};

fn main() -> subunit_cnn::Result<()> {
    let (w, h) = (26, 26);
    let cell = make_default_model(w, h)?;
    println!("calibrated gain {:.5}", cell.gain);
    for (i, s) in cell.subunits.iter().enumerate() {
        println!(
            "subunit {i}: {}x{} centred at ({}, {}), pooling weight {}",
            s.size, s.size, s.center_row, s.center_col, cell.pooling_weights[i]
        );
    }

    let probe = generate_range(100, 0..20_000, w, h)?;
    println!("spike probability on fresh frames: {:.4}", mean_spike_probability(&cell, &probe)?);

    // Uniform frames: all-bright drives every subunit, all-dark none.
    let bright = rgc_rate(&Frame::filled(w, h, true)?, &cell)?;
    let dark = rgc_rate(&Frame::filled(w, h, false)?, &cell)?;
    println!("rate on an all-bright frame {bright:.3}, all-dark {dark:.3}");

    let data = label_dataset(probe, &cell, 101)?;
    let spikes = data.labels().iter().filter(|&&l| l > 0).count();
    let rates = data.rates().expect("simulated data carries rates");
    let silent = rates.iter().filter(|&&r| r == 0.0).count();
    println!(
        "{} frames: {spikes} spikes, {silent} frames below the output threshold",
        data.len()
    );
    Ok(())
}
