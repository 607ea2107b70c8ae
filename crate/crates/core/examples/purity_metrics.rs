//! Purity of synthetic images: flat, noisy, split and checkerboard.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use violin::purity::{purity_aggregate, purity_values};
use violin::{PurityConfig, Rect};

fn main() {
    let cfg = PurityConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let images: Vec<(&str, RgbImage)> = vec![
        ("flat", RgbImage::from_pixel(256, 256, image::Rgb([153, 102, 204]))),
        (
            "noise ±16",
            RgbImage::from_fn(256, 256, |_, _| {
                image::Rgb([0; 3].map(|_: u8| 128 + rng.random_range(0..33) - 16))
            }),
        ),
        (
            "half split",
            RgbImage::from_fn(256, 256, |x, _| image::Rgb([if x < 128 { 0 } else { 255 }; 3])),
        ),
        (
            "checkerboard",
            RgbImage::from_fn(256, 256, |x, y| image::Rgb([if (x + y) % 2 == 0 { 0 } else { 255 }; 3])),
        ),
    ];
    println!("{:<13} {:>8} {:>8} {:>8} {:>9}", "image", "sd", "ced", "hf", "pur-mean");
    for (name, img) in images {
        let raw = purity_values(&img, Rect::new(0, 0, 256, 256), &cfg).expect("valid region");
        let r = purity_aggregate(raw, &cfg).expect("valid values");
        println!(
            "{name:<13} {:>8.3} {:>8.4} {:>8.4} {:>9.4}",
            raw.sd, raw.ced, raw.hf, r.pur_mean
        );
    }
}
