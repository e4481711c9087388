//! Receptive-field tools on the ground-truth cell: its STA, the average
//! stimulus each subunit responds to, and how those features tile the STA.
//! Images are written as PGM files.
//!
//! ```bash
//! cargo run --release --example receptive_fields -- /tmp/rf-demo
//! ```

use std::path::PathBuf;

use subunit_cnn::analysis::{compute_sta, subunit_feature_average, tiling_coverage};
use subunit_cnn::io::write_pgm;
use subunit_cnn::rgc::make_default_model;

fn main() -> subunit_cnn::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "rf-demo".into()));
    std::fs::create_dir_all(&dir)?;
    let (w, h, n) = (26, 26, 50_000);

    let cell = make_default_model(w, h)?;
    let sta = compute_sta(&cell, n, w, h, 11)?;
    let (pr, pc) = sta.argmax_abs();
    println!("STA peak {:.4} at ({pr}, {pc})", sta.get(pr, pc));
    write_pgm(dir.join("sta.pgm"), &sta)?;

    let features = subunit_feature_average(&cell, w, h, n, 11)?;
    for (k, f) in features.iter().enumerate() {
        let (r, c) = f.map.argmax_abs();
        let s = &cell.subunits[k];
        println!(
            "subunit {k}: feature peak at ({r}, {c}), inside its footprint: {}",
            s.covers(r, c)
        );
        write_pgm(dir.join(format!("feature_{k}.pgm")), &f.map)?;
    }
    println!(
        "fraction of the STA above half maximum covered by the features: {:.3}",
        tiling_coverage(&features, &sta, 6)?
    );
    println!("images in {}", dir.display());
    Ok(())
}
