//! Scores a simulated model that drifts toward red, then prints the report.

use image::RgbImage;
use violin::dataset::{plan_dataset, render_ground_truth, GenConfig, SampleManifestEntry, TemplatePool};
use violin::harness::{render_markdown, report_rows, run_eval, FailureKind, ProviderConfig, RunLabel};
use violin::EvalConfig;

fn reddish(e: &SampleManifestEntry, _repeat: u32) -> Result<RgbImage, (FailureKind, String)> {
    let mut img =
        render_ground_truth(&e.regions, e.resolution).map_err(|x| (FailureKind::EvaluationFailed, x.to_string()))?;
    for (i, p) in img.pixels_mut().enumerate() {
        p.0[0] = p.0[0].saturating_add(24 + (i % 5) as u8);
    }
    Ok(img)
}

fn main() {
    let cfg = GenConfig {
        resolution: 64,
        ..GenConfig::default()
    }
    .scaled(0.02);
    let manifest = plan_dataset(&cfg, TemplatePool::bundled()).expect("plan");
    let provider = ProviderConfig {
        parallelism: 2,
        ..ProviderConfig::filesystem(".")
    };
    let label = RunLabel {
        model_tag: "reddish".into(),
        manifest: "in-memory".into(),
    };
    let run = run_eval(&manifest, &reddish, &provider, &EvalConfig::default(), &label).expect("run");
    println!("run {} coverage {:.3}", run.run_id, run.coverage);
    print!("{}", render_markdown(&report_rows(&run)));
}
