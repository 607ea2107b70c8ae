//! Re-derives the normalization divisors from a lattice over the 8-bit cube.
//!
//! ```text
//! cargo run --release --example gamut_maxima -- 17
//! ```

use violin::precision::{gamut_maxima, HyabForm, METRIC_NAMES};

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(17);
    for form in [HyabForm::Printed, HyabForm::Literature] {
        let max = gamut_maxima(steps, form).to_array();
        println!("{form:?} hyab, {steps} steps per channel");
        for (name, v) in METRIC_NAMES.iter().zip(max) {
            println!("  {name:<9} {v:.13}");
        }
    }
}
