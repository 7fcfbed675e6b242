//! Regenerates the bundled reference checkpoint by calibrating the fusion
//! networks on the bundled archetype-and-anchor set.
//!
//! Run from the repository root:
//!
//! ```bash
//! cargo run -p dpse-core --example gen_reference_checkpoint
//! ```
//!
//! The output is written to `crates/core/assets/reference_checkpoint.json`
//! and committed; tests and the CLI load it rather than re-calibrating.

use dpse_core::constraint::{score_signals, ConstraintConfig};
use dpse_core::fusion::{
    bundled_calibration_set, calibrate, CalibrationOptions, FusionParameters,
};

fn main() {
    let seed = 2024;
    let hidden_width = 16;
    let params = FusionParameters::seeded(hidden_width, seed);
    let cfg = ConstraintConfig::default();
    let set = bundled_calibration_set();
    let opts = CalibrationOptions {
        learning_rate: 0.05,
        momentum: 0.9,
        max_epochs: 60_000,
        tolerance: 2e-5,
    };

    let (fitted, report) = calibrate(&params, &set, &cfg, &opts).expect("calibration runs");
    eprintln!(
        "calibration: mse {:.3e} after {} epochs (converged: {})",
        report.final_mse, report.epochs, report.converged
    );

    for ex in &set {
        let state = score_signals(&ex.signals, &fitted, &cfg).expect("scoring runs");
        eprintln!(
            "  target {:+.2} -> score {:+.4}  signals {:?}",
            ex.target,
            state.final_score,
            ex.signals.to_array()
        );
    }

    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/reference_checkpoint.json");
    fitted.save(&path).expect("checkpoint written");
    eprintln!("wrote {}", path.display());
}
