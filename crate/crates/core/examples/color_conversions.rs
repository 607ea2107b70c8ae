//! Converts a few colors through every space the metrics use.
//!
//! ```text
//! cargo run --example color_conversions -- '#9966CC' '#58321D'
//! ```

use violin::color::{lab_to_lch, rgb_to_hsl, srgb_to_lab, srgb_to_xyz};
use violin::parse_hex;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let inputs = if args.is_empty() {
        vec!["#FF0000".to_string(), "#9966CC".into(), "#808080".into()]
    } else {
        args
    };
    for text in inputs {
        let c = match parse_hex(&text) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("{text}: {e}");
                continue;
            }
        };
        let [x, y, z] = srgb_to_xyz(c);
        let lab = srgb_to_lab(c);
        let lch = lab_to_lch(lab);
        let hsl = rgb_to_hsl(c);
        println!("{c}");
        println!("  rgb  {:?}", c.channels());
        println!("  xyz  {x:.5} {y:.5} {z:.5}");
        println!("  lab  {:.3} {:.3} {:.3}", lab.l, lab.a, lab.b);
        println!("  lch  {:.3} {:.3} {:.2}°", lch.l, lch.c, lch.h);
        println!("  hsl  {:.2}° {:.4} {:.4}", hsl.h, hsl.s, hsl.l);
    }
}
