//! Runs the three probe families against the built-in oracle, then checks a
//! deliberately wrong spatial render.

use image::RgbImage;
use violin::harness::{analyze_split, probe_oracle, probe_suite, ProbeFamily};
use violin::{EvalConfig, NormalizationConstants, Rgb8};

fn main() {
    let eval = EvalConfig::default();
    for family in ProbeFamily::ALL {
        let report = probe_suite(family, &probe_oracle, 256, &eval).expect("probe");
        for r in &report.results {
            let summary = match (&r.solid, &r.split) {
                (Some(s), _) => format!("pre-mean {:.4}", s.pre_mean),
                (_, Some(s)) => format!(
                    "measured {:.4} for {:.4}, flagged {}",
                    s.measured.fraction, s.requested, s.flagged
                ),
                _ => "failed".into(),
            };
            println!("{family:?} {:<10} {summary}", r.key);
        }
    }

    // A model that ignores the requested 31.5/68.5 ratio and draws halves.
    let halves = RgbImage::from_fn(256, 256, |x, _| {
        image::Rgb(if x < 128 { [153, 102, 204] } else { [255, 255, 0] })
    });
    let k = NormalizationConstants::default();
    let r = analyze_split(&halves, 0.315, Rgb8::new(153, 102, 204), Rgb8::new(255, 255, 0), &k).expect("analysis");
    println!(
        "halves render: measured {:.4}, deviation {:.4}, flagged {}",
        r.measured.fraction, r.deviation, r.flagged
    );
}
