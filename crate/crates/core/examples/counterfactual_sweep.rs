//! Run the counterfactual sweep and print one line per composition.
//!
//! ```text
//! cargo run --release --example counterfactual_sweep            # default 7 x 25 sweep
//! cargo run --release --example counterfactual_sweep -- smoke   # tiny sweep
//! cargo run --release --example counterfactual_sweep -- cfg.json
//! ```

use std::path::Path;
use std::time::Instant;

use pamem::harness::{run_experiment, ExperimentConfig};

fn main() -> pamem::Result<()> {
    let cfg = match std::env::args().nth(1).as_deref() {
        None => ExperimentConfig::default(),
        Some("smoke") => ExperimentConfig::smoke(),
        Some(path) => ExperimentConfig::from_path(path)?,
    };
    let start = Instant::now();
    let exp = cfg.prepare(Path::new("."))?;
    println!(
        "target: {} prefix + {} suffix tokens, {} base documents, vocabulary {}",
        exp.spec.target.prefix.len(),
        exp.spec.target.suffix.len(),
        exp.spec.base_corpus.len(),
        exp.vocab.len()
    );
    let result = run_experiment(&exp)?;
    println!("{:>12} {:>12} {:>12} {:>14} {:>12}", "composition", "x", "y", "mean P(s|p)", "mean v_hat");
    for (p, b) in result.points.iter().zip(&result.breakdown) {
        println!(
            "{:>12} {:>12.4} {:>12.4} {:>14.6e} {:>12.6e}",
            format!("({},{})", p.composition.0, p.composition.1),
            p.x_counterfactual,
            p.y_pa_log,
            b.mean_p_s_given_p,
            b.mean_v_hat
        );
    }
    println!(
        "spearman {:.3}  pearson {:.3}  audit deviations {}  ({:.1?})",
        result.correlation.spearman,
        result.correlation.pearson,
        result.audit_deviations(),
        start.elapsed()
    );
    Ok(())
}
