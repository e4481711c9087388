//! Finite-difference check of the hand-written backward pass, at the default
//! architecture and at a small one, plus what a broken gradient looks like.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use subunit_cnn::cnn::{backward, Architecture, CnnModel, Regularization};
use subunit_cnn::cnn::gradcheck::check_against;
use subunit_cnn::stimulus::sample_frame;

fn main() -> subunit_cnn::Result<()> {
    let small = Architecture {
        input_height: 12,
        input_width: 12,
        conv1_filters: 3,
        conv1_size: 5,
        conv2_filters: 2,
        conv2_size: 3,
    };
    for arch in [Architecture::with_defaults(26, 26), small] {
        let model = CnnModel::init(arch, 1)?;
        let report = subunit_cnn::cnn::grad_check(&model, 200, 1e-4, 3)?;
        println!(
            "{}x{} input, {} params: {} probes, {} kinks skipped, max rel err {:.2e} -> {}",
            arch.input_height,
            arch.input_width,
            model.num_params(),
            report.checked,
            report.skipped_kinks,
            report.max_relative_error,
            if report.passed { "ok" } else { "FAILED" }
        );
    }

    // Doubling the analytic gradient must be caught.
    let model = CnnModel::init(small, 1)?;
    let frame = sample_frame(5, 0, 12, 12)?;
    let reg = Regularization::default();
    let mut wrong = backward(&model, &frame, 1, &reg)?;
    wrong.scale(2.0);
    let report = check_against(&model, &frame, 1, &reg, &wrong, 50, 1e-4, 3)?;
    println!(
        "doubled gradient: max rel err {:.2e}, worst at {:?} -> {}",
        report.max_relative_error,
        report.worst,
        if report.passed { "missed!" } else { "rejected" }
    );
    Ok(())
}
