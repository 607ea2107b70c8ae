//! Writes a small benchmark dataset and prints a few of its prompts.
//!
//! ```text
//! cargo run --example generate_dataset -- /tmp/violin-small 0.01
//! ```

use std::path::PathBuf;

use violin::dataset::{generate_dataset, read_manifest, GenConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("violin-small"));
    let scale: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let cfg = GenConfig {
        out_dir: out,
        overwrite: true,
        ..GenConfig::default()
    }
    .scaled(scale);
    let summary = generate_dataset(&cfg).expect("generation");
    println!(
        "{} samples {:?} -> {}",
        summary.total,
        summary.counts,
        summary.manifest_path.display()
    );
    let entries = read_manifest(&summary.manifest_path).expect("manifest");
    for v in 1..=6 {
        if let Some(e) = entries.iter().find(|e| e.variation == v) {
            println!("Var-{v} {} [{}] {}", e.id, e.template_id, e.prompt);
        }
    }
}
