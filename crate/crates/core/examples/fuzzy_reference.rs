//! Where colors land when projected onto a fuzzy range.
//!
//! ```text
//! cargo run --example fuzzy_reference -- '#58321D' '#A65E35'
//! ```

use violin::color::{hsl_to_rgb_real, rgb_to_hsl, Hsl};
use violin::parse_hex;
use violin::region::{project_onto_range, range_fixed_point};

fn main() {
    let mut args = std::env::args().skip(1);
    let low = parse_hex(&args.next().unwrap_or_else(|| "#58321D".into())).expect("low hex");
    let high = parse_hex(&args.next().unwrap_or_else(|| "#A65E35".into())).expect("high hex");
    println!("range {low} .. {high}, fixed point {}", range_fixed_point(low, high));

    let mid = rgb_to_hsl(range_fixed_point(low, high));
    let probes = [
        ("low", low.into()),
        ("high", high.into()),
        ("midpoint", hsl_to_rgb_real(mid)),
        ("darker", hsl_to_rgb_real(Hsl { l: mid.l * 0.5, ..mid })),
        ("greener", hsl_to_rgb_real(Hsl { h: mid.h + 90.0, ..mid })),
    ];
    for (name, v) in probes {
        let p = project_onto_range(v, low, high).expect("distinct bounds");
        let [r, g, b] = p.reference.channels();
        println!("{name:<9} t={:.3} reference=({r:.1}, {g:.1}, {b:.1})", p.t);
    }
}
