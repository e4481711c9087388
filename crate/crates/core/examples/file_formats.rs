//! Dataset and checkpoint files: write them, read them back, and show that
//! nothing changed. Also emits a metrics CSV and a filter image.
//!
//! ```bash
//! cargo run --release --example file_formats -- /tmp/subunit-demo
//! ```

use std::path::PathBuf;

use subunit_cnn::analysis::conv1_filter_grid;
use subunit_cnn::cnn::{Architecture, CnnModel};
use subunit_cnn::io::{self, Checkpoint};
use subunit_cnn::rgc::{label_dataset, make_default_model};
use subunit_cnn::stimulus::generate_range;
use subunit_cnn::training::predict_rates;

fn main() -> subunit_cnn::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "subunit-demo".into()));
    std::fs::create_dir_all(&dir)?;

    let cell = make_default_model(26, 26)?;
    let data = label_dataset(generate_range(1, 0..1000, 26, 26)?, &cell, 3)?;
    let data_path = dir.join("demo.rgcd");
    io::write_dataset(&data_path, &data)?;
    let back = io::read_dataset(&data_path)?;
    println!(
        "{}: {} bytes, round trip identical: {}",
        data_path.display(),
        std::fs::metadata(&data_path)?.len(),
        back == data
    );

    let model = CnnModel::init(Architecture::with_defaults(26, 26), 4)?;
    let model_path = dir.join("demo.rgcm");
    io::write_checkpoint(&model_path, &Checkpoint::Cnn(model.clone()))?;
    let reloaded = io::read_cnn(&model_path)?;
    let same = predict_rates(&model, data.frames())? == predict_rates(&reloaded, data.frames())?;
    println!("{}: predictions identical after reload: {same}", model_path.display());

    let truth_path = dir.join("truth.rgcm");
    io::write_checkpoint(&truth_path, &Checkpoint::Truth(cell.clone()))?;
    println!("{}: cell round trip identical: {}", truth_path.display(), io::read_truth(&truth_path)? == cell);

    for r in io::decode_records(&std::fs::read(&model_path)?)? {
        println!("  record {:<14} shape {:?}", r.name, r.dims);
    }

    io::write_pgm(dir.join("filter_0.pgm"), &conv1_filter_grid(&model, 0))?;
    println!("wrote {}", dir.join("filter_0.pgm").display());
    Ok(())
}
