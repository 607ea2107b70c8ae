use image::RgbImage;
use proptest::prelude::*;

use violin::color::{hsl_to_rgb, lab_to_lch, lch_to_lab, rgb_to_hsl, srgb_to_lab};
use violin::dataset::{plan_dataset, render_ground_truth, stratified_split, GenConfig, SplitTag, TemplatePool};
use violin::precision::{
    ciede2000, delta_chroma, hue_mae, hyab, hyab_literature, normalize_and_aggregate, rgb_euclidean, rgb_redmean,
    MetricConstant,
};
use violin::purity::{canny_edge_density, high_freq_ratio, purity_aggregate, purity_values};
use violin::region::{evaluate_sample, measure_split_ratio, project_onto_range, tile, Axis, QUANTIZATION_SLACK};
use violin::{
    format_hex, parse_hex, EvalConfig, Lab, NormalizationConstants, PrecisionValues, PurityConfig, PurityValues, Rect,
    RegionSpec, Rgb8, RgbReal,
};

fn rgb8() -> impl Strategy<Value = Rgb8> {
    any::<[u8; 3]>().prop_map(Rgb8::from)
}

fn lab() -> impl Strategy<Value = Lab> {
    (0.0..100.0f64, -128.0..128.0f64, -128.0..128.0f64).prop_map(|(l, a, b)| Lab { l, a, b })
}

fn image(w: u32, h: u32) -> impl Strategy<Value = RgbImage> {
    proptest::collection::vec(any::<u8>(), (w * h * 3) as usize)
        .prop_map(move |px| RgbImage::from_raw(w, h, px).unwrap())
}

fn rect(img: &RgbImage) -> Rect {
    Rect::new(0, 0, img.width(), img.height())
}

proptest! {
    #[test]
    fn hex_round_trip(c in rgb8()) {
        prop_assert_eq!(parse_hex(&format_hex(c)).unwrap(), c);
        prop_assert_eq!(parse_hex(&format_hex(c).to_lowercase()).unwrap(), c);
    }

    #[test]
    fn hex_rejects_other_shapes(s in "#?[0-9a-fA-F]{0,8}") {
        let well_formed = s.len() == 7 && s.starts_with('#');
        prop_assert_eq!(parse_hex(&s).is_ok(), well_formed);
    }

    #[test]
    fn lab_lightness_in_range(c in rgb8()) {
        let v = srgb_to_lab(c);
        prop_assert!((0.0..=100.0 + 1e-9).contains(&v.l), "{:?}", v);
    }

    #[test]
    fn gray_lightness_is_monotone(g in 0u8..255) {
        let a = srgb_to_lab(Rgb8::new(g, g, g)).l;
        let b = srgb_to_lab(Rgb8::new(g + 1, g + 1, g + 1)).l;
        prop_assert!(a < b);
    }

    #[test]
    fn lch_consistency(v in lab()) {
        let p = lab_to_lch(v);
        prop_assert!((p.c - v.a.hypot(v.b)).abs() < 1e-9);
        prop_assert!((0.0..360.0).contains(&p.h));
        let back = lch_to_lab(p);
        prop_assert!((back.a - v.a).abs() < 1e-6 && (back.b - v.b).abs() < 1e-6);
    }

    #[test]
    fn gray_hue_is_zero(g in any::<u8>()) {
        let h = rgb_to_hsl(Rgb8::new(g, g, g));
        prop_assert_eq!((h.h, h.s), (0.0, 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100_000))]

    #[test]
    fn hsl_round_trip(c in rgb8()) {
        prop_assert_eq!(hsl_to_rgb(rgb_to_hsl(c)), c);
    }
}

proptest! {
    #[test]
    fn distances_symmetric_nonnegative_and_zero_on_identity(a in rgb8(), b in rgb8()) {
        let (la, lb) = (srgb_to_lab(a), srgb_to_lab(b));
        let pairs = [
            (rgb_euclidean(a, b), rgb_euclidean(b, a), rgb_euclidean(a, a)),
            (rgb_redmean(a, b), rgb_redmean(b, a), rgb_redmean(a, a)),
            (ciede2000(la, lb), ciede2000(lb, la), ciede2000(la, la)),
            (hue_mae(lab_to_lch(la), lab_to_lch(lb)), hue_mae(lab_to_lch(lb), lab_to_lch(la)), hue_mae(lab_to_lch(la), lab_to_lch(la))),
            (hyab(la, lb), hyab(lb, la), hyab(la, la)),
            (hyab_literature(la, lb), hyab_literature(lb, la), hyab_literature(la, la)),
            (delta_chroma(la, lb), delta_chroma(lb, la), delta_chroma(la, la)),
        ];
        for (i, (ab, ba, aa)) in pairs.into_iter().enumerate() {
            prop_assert!(ab >= 0.0, "metric {}", i);
            prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0), "metric {}: {} vs {}", i, ab, ba);
            prop_assert_eq!(aa, 0.0, "metric {}", i);
        }
    }

    #[test]
    fn hyab_squared_is_chroma_squared_plus_lightness(a in lab(), b in lab()) {
        let lhs = hyab(a, b).powi(2);
        let rhs = delta_chroma(a, b).powi(2) + (a.l - b.l).abs();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1.0));
    }

    #[test]
    fn normalization_is_scale_invariant(
        raw in proptest::array::uniform6(0.0..500.0f64),
        scale in 0.01..100.0f64,
    ) {
        let k = NormalizationConstants::default();
        let mut scaled = k;
        for c in [&mut scaled.rgb_ed, &mut scaled.rgb_rm, &mut scaled.lab_00, &mut scaled.lab_hue, &mut scaled.lab_hyab, &mut scaled.lab_ch] {
            c.max *= scale;
        }
        let a = normalize_and_aggregate(PrecisionValues::from_array(raw), &k).unwrap();
        let b = normalize_and_aggregate(PrecisionValues::from_array(raw.map(|v| v * scale)), &scaled).unwrap();
        for (x, y) in a.normalized.to_array().into_iter().zip(b.normalized.to_array()) {
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn uniform_pre_mean_is_the_arithmetic_mean(raw in proptest::array::uniform6(0.0..500.0f64)) {
        let r = normalize_and_aggregate(PrecisionValues::from_array(raw), &NormalizationConstants::default()).unwrap();
        let mean = r.normalized.to_array().iter().sum::<f64>() / 6.0;
        prop_assert!((r.pre_mean - mean).abs() < 1e-12);
    }

    #[test]
    fn custom_weights_give_the_weighted_sum(raw in proptest::array::uniform6(0.0..1.0f64), w in proptest::array::uniform6(0.0..1.0f64)) {
        let total: f64 = w.iter().sum();
        prop_assume!(total > 1e-3);
        let c = |i: usize| MetricConstant { max: 1.0, weight: w[i] / total };
        let k = NormalizationConstants { rgb_ed: c(0), rgb_rm: c(1), lab_00: c(2), lab_hue: c(3), lab_hyab: c(4), lab_ch: c(5) };
        let r = normalize_and_aggregate(PrecisionValues::from_array(raw), &k).unwrap();
        let want: f64 = (0..6).map(|i| raw[i] * w[i] / total).sum();
        prop_assert!((r.pre_mean - want).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constant_regions_are_perfectly_pure(c in rgb8(), w in 8u32..64, h in 8u32..64) {
        let img = RgbImage::from_pixel(w, h, image::Rgb(c.channels()));
        let v = purity_values(&img, rect(&img), &PurityConfig::default()).unwrap();
        prop_assert_eq!(v, PurityValues::default());
    }

    #[test]
    fn edges_survive_inversion(img in image(24, 24)) {
        let inv = RgbImage::from_fn(24, 24, |x, y| image::Rgb(img.get_pixel(x, y).0.map(|v| 255 - v)));
        let cfg = PurityConfig::default();
        let a = canny_edge_density(&img, rect(&img), &cfg.canny).unwrap();
        let b = canny_edge_density(&inv, rect(&inv), &cfg.canny).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn high_freq_ignores_a_constant_offset(img in image(24, 24), offset in 1u8..64) {
        let dim = RgbImage::from_fn(24, 24, |x, y| image::Rgb(img.get_pixel(x, y).0.map(|v| v / 2)));
        let lit = RgbImage::from_fn(24, 24, |x, y| image::Rgb(dim.get_pixel(x, y).0.map(|v| v + offset)));
        let a = high_freq_ratio(&dim, rect(&dim), 0.25).unwrap();
        let b = high_freq_ratio(&lit, rect(&lit), 0.25).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn uniform_pur_mean_is_the_arithmetic_mean(sd in 0.0..127.5f64, ced in 0.0..1.0f64, hf in 0.0..1.0f64) {
        let cfg = PurityConfig::default();
        let r = purity_aggregate(PurityValues { sd, ced, hf }, &cfg).unwrap();
        let n = r.normalized;
        prop_assert!((r.pur_mean - (n.sd + n.ced + n.hf) / 3.0).abs() < 1e-12);
        prop_assert!((n.sd - sd / cfg.sd_max).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn fuzzy_projection_lands_on_the_segment(low in rgb8(), high in rgb8(), v in rgb8()) {
        prop_assume!(low != high);
        let p = project_onto_range(v.into(), low, high).unwrap();
        prop_assert!((0.0..=1.0).contains(&p.t));
        // The projected point is the segment point at t (hue compared on the circle).
        let mut a = rgb_to_hsl(low);
        let mut b = rgb_to_hsl(high);
        if a.s == 0.0 { a.h = b.h } else if b.s == 0.0 { b.h = a.h }
        let mut dh = (b.h - a.h).rem_euclid(360.0);
        if dh > 180.0 { dh -= 360.0 }
        let want = [(a.h + p.t * dh).rem_euclid(360.0), a.s + p.t * (b.s - a.s), a.l + p.t * (b.l - a.l)];
        let hue_gap = (p.point.h - want[0]).rem_euclid(360.0);
        prop_assert!(hue_gap.min(360.0 - hue_gap) / 360.0 < 1e-9);
        prop_assert!((p.point.s - want[1]).abs() < 1e-9 && (p.point.l - want[2]).abs() < 1e-9);
        // The reference is the sample itself only when it sits within the quantization cell.
        let vr: RgbReal = v.into();
        if p.reference != vr {
            let on_point = violin::color::hsl_to_rgb_real(p.point);
            let endpoint = if p.t == 0.0 { Some(low) } else if p.t == 1.0 { Some(high) } else { None };
            match endpoint {
                Some(e) => prop_assert_eq!(p.reference, e.into()),
                None => prop_assert_eq!(p.reference, on_point),
            }
            let far = (0..3).any(|i| (vr.channels()[i] - p.reference.channels()[i]).abs() > QUANTIZATION_SLACK);
            prop_assert!(far);
        }
    }

    #[test]
    fn split_ratio_ignores_color_order(a in rgb8(), b in rgb8(), boundary in 1u32..63) {
        prop_assume!(a != b);
        let render = |l: Rgb8, r: Rgb8| RgbImage::from_fn(64, 16, |x, _| image::Rgb(if x < boundary { l } else { r }.channels()));
        let m1 = measure_split_ratio(&render(a, b), Axis::Horizontal);
        let m2 = measure_split_ratio(&render(b, a), Axis::Horizontal);
        prop_assert_eq!(m1.boundary, boundary);
        prop_assert_eq!(m1.fraction, m2.fraction);
        let img = render(a, b);
        let transposed = RgbImage::from_fn(16, 64, |x, y| *img.get_pixel(y, x));
        let t1 = measure_split_ratio(&transposed, Axis::Vertical);
        prop_assert_eq!(t1.boundary, boundary);
    }
}

fn small_plan() -> Vec<violin::dataset::SampleManifestEntry> {
    let cfg = GenConfig {
        resolution: 32,
        ..GenConfig::default()
    }
    .scaled(0.003);
    plan_dataset(&cfg, TemplatePool::bundled()).unwrap()
}

#[test]
fn generated_samples_tile_and_render_exactly() {
    let eval = EvalConfig::default();
    for e in small_plan() {
        let rects = tile(&e.regions, e.resolution, e.resolution).unwrap();
        let area: u64 = rects.iter().map(Rect::area).sum();
        assert_eq!(area, u64::from(e.resolution).pow(2), "{}", e.id);
        for (i, a) in rects.iter().enumerate() {
            for b in &rects[i + 1..] {
                assert!(!a.intersects(b), "{}", e.id);
            }
        }
        let gt = render_ground_truth(&e.regions, e.resolution).unwrap();
        // PNG round trip keeps every byte.
        let mut buf = std::io::Cursor::new(Vec::new());
        gt.write_to(&mut buf, image::ImageFormat::Png).unwrap();
        let back = image::load_from_memory(buf.get_ref()).unwrap().to_rgb8();
        assert_eq!(back, gt);
        for (spec, r) in e.regions.iter().zip(&rects) {
            if let violin::ColorTarget::Exact { color } = spec.target {
                assert!(
                    (r.x0..r.x1).all(|x| (r.y0..r.y1).all(|y| gt.get_pixel(x, y).0 == color.channels())),
                    "{}",
                    e.id
                );
            }
        }
        let report = evaluate_sample(&back, &e.regions, &eval).unwrap();
        for region in &report.regions {
            assert_eq!(region.precision.raw.to_array(), [0.0; 6], "{}", e.id);
            assert_eq!(region.purity.raw.ced, 0.0);
            assert_eq!(region.purity.raw.hf, 0.0);
            assert!(region.purity.raw.sd < 1e-9);
        }
        let mean = report.regions.iter().map(|r| r.precision.pre_mean).sum::<f64>() / report.regions.len() as f64;
        assert!((report.pre_mean - mean).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stratified_split_partitions_each_stratum(seed in any::<u64>(), ratio in 0.5..0.95f64) {
        let mut entries = small_plan();
        stratified_split(&mut entries, ratio, seed).unwrap();
        let mut counts = std::collections::BTreeMap::<_, (usize, usize)>::new();
        for e in &entries {
            let c = counts.entry(violin::dataset::stratum_of(e)).or_default();
            match e.split.unwrap() {
                SplitTag::Train => c.0 += 1,
                SplitTag::Test => c.1 += 1,
            }
        }
        for (train, test) in counts.values() {
            let n = (train + test) as f64;
            if n >= 2.0 {
                prop_assert!((*train as f64 - ratio * n).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn split_is_deterministic_per_seed(seed in any::<u64>()) {
        let mut a = small_plan();
        let mut b = small_plan();
        b.reverse();
        stratified_split(&mut a, 0.8, seed).unwrap();
        stratified_split(&mut b, 0.8, seed).unwrap();
        b.reverse();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn single_full_region_spec_matches_its_color() {
    let c = Rgb8::new(12, 200, 99);
    let img = render_ground_truth(&[RegionSpec::full(c)], 16).unwrap();
    assert!(img.pixels().all(|p| p.0 == c.channels()));
}
