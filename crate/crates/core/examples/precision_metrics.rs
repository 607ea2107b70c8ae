//! Six color distances between a sample and a target, raw and normalized.
//!
//! ```text
//! cargo run --example precision_metrics -- '#A0522D' '#8B4513'
//! ```

use violin::precision::{precision_between, HyabForm, METRIC_NAMES};
use violin::{parse_hex, NormalizationConstants};

fn main() {
    let mut args = std::env::args().skip(1);
    let sample = parse_hex(&args.next().unwrap_or_else(|| "#A0522D".into())).expect("sample hex");
    let target = parse_hex(&args.next().unwrap_or_else(|| "#8B4513".into())).expect("target hex");
    for form in [HyabForm::Printed, HyabForm::Literature] {
        let k = NormalizationConstants::for_form(form);
        let r = precision_between(sample, target, &k);
        println!("{sample} vs {target}, {form:?} hyab");
        for ((name, raw), norm) in METRIC_NAMES.iter().zip(r.raw.to_array()).zip(r.normalized.to_array()) {
            println!("  {name:<9} {raw:>10.4}  -> {norm:.4}");
        }
        println!("  pre-mean  {:.4}", r.pre_mean);
    }
}
