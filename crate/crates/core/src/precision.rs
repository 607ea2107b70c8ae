//! Color-precision distances between a region's representative color and
//! its target, plus normalization into `[0, 1]` and the weighted pre-mean.

use std::fmt::Write as _;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::{lab_to_lch, srgb_to_lab, Lab, Lch, Rgb8, RgbReal};
use crate::region::Rect;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("region {0:?} is empty or outside the image")]
    EmptyRegion(Rect),
    #[error("region {rect:?} is smaller than the {min}x{min} minimum")]
    RegionTooSmall { rect: Rect, min: u32 },
    #[error("metric {name} is not finite ({value})")]
    NonFinite { name: &'static str, value: f64 },
    #[error("metric {name} must be non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("invalid constants: {0}")]
    Constants(String),
}

pub const METRIC_NAMES: [&str; 6] = ["rgb-ed", "rgb-rm", "lab-00", "lab-hue", "lab-hyab", "lab-ch"];

/// Which HyAB expression to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HyabForm {
    /// `sqrt(Δa² + Δb² + |ΔL|)`.
    #[default]
    Printed,
    /// `|ΔL| + sqrt(Δa² + Δb²)`.
    Literature,
}

/// One value per precision metric, in table column order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrecisionValues {
    pub rgb_ed: f64,
    pub rgb_rm: f64,
    pub lab_00: f64,
    pub lab_hue: f64,
    pub lab_hyab: f64,
    pub lab_ch: f64,
}

impl PrecisionValues {
    pub fn from_array(v: [f64; 6]) -> Self {
        PrecisionValues {
            rgb_ed: v[0],
            rgb_rm: v[1],
            lab_00: v[2],
            lab_hue: v[3],
            lab_hyab: v[4],
            lab_ch: v[5],
        }
    }

    pub fn to_array(self) -> [f64; 6] {
        [
            self.rgb_ed,
            self.rgb_rm,
            self.lab_00,
            self.lab_hue,
            self.lab_hyab,
            self.lab_ch,
        ]
    }

    /// All six distances between `sample` and `target`.
    pub fn between(sample: RgbReal, target: RgbReal, hyab_form: HyabForm) -> Self {
        let lab_s = srgb_to_lab(sample);
        let lab_t = srgb_to_lab(target);
        PrecisionValues {
            rgb_ed: rgb_euclidean(sample, target),
            rgb_rm: rgb_redmean(sample, target),
            lab_00: ciede2000(lab_s, lab_t),
            lab_hue: hue_mae(lab_to_lch(lab_s), lab_to_lch(lab_t)),
            lab_hyab: match hyab_form {
                HyabForm::Printed => hyab(lab_s, lab_t),
                HyabForm::Literature => hyab_literature(lab_s, lab_t),
            },
            lab_ch: delta_chroma(lab_s, lab_t),
        }
    }
}

pub fn rgb_euclidean(c1: impl Into<RgbReal>, c2: impl Into<RgbReal>) -> f64 {
    let (c1, c2) = (c1.into(), c2.into());
    let (dr, dg, db) = (c1.r - c2.r, c1.g - c2.g, c1.b - c2.b);
    (dr * dr + dg * dg + db * db).sqrt()
}

/// Red and blue channel weights `(c1, c3)` for a mean red level.
pub fn redmean_weights(r_mean: f64) -> (f64, f64) {
    (2.0 + r_mean / 256.0, 2.0 + (255.0 - r_mean) / 256.0)
}

/// Red-mean weighted RGB distance.
pub fn rgb_redmean(c1: impl Into<RgbReal>, c2: impl Into<RgbReal>) -> f64 {
    let (c1, c2) = (c1.into(), c2.into());
    let (w_r, w_b) = redmean_weights((c1.r + c2.r) / 2.0);
    let (dr, dg, db) = (c1.r - c2.r, c1.g - c2.g, c1.b - c2.b);
    (w_r * dr * dr + 4.0 * dg * dg + w_b * db * db).sqrt()
}

// Hue differences within this of 180° count as the short arc. The reference
// data treats exactly-antipodal hues that way; without the slack, rounding
// in atan2 decides the branch.
const ANTIPODAL_SLACK: f64 = 1e-9;

/// CIEDE2000 color difference with `kL = kC = kH = 1`.
pub fn ciede2000(v1: Lab, v2: Lab) -> f64 {
    const POW25_7: f64 = 6_103_515_625.0; // 25^7

    let c1 = v1.a.hypot(v1.b);
    let c2 = v2.a.hypot(v2.b);
    let c_mean7 = ((c1 + c2) / 2.0).powi(7);
    let g = 0.5 * (1.0 - (c_mean7 / (c_mean7 + POW25_7)).sqrt());

    let a1 = (1.0 + g) * v1.a;
    let a2 = (1.0 + g) * v2.a;
    let c1p = a1.hypot(v1.b);
    let c2p = a2.hypot(v2.b);
    let hue = |a: f64, b: f64| {
        if a == 0.0 && b == 0.0 {
            0.0
        } else {
            b.atan2(a).to_degrees().rem_euclid(360.0)
        }
    };
    let h1p = hue(a1, v1.b);
    let h2p = hue(a2, v2.b);

    let dl = v2.l - v1.l;
    let dc = c2p - c1p;
    let chroma_product = c1p * c2p;
    let raw_dh = h2p - h1p;
    let dh = if chroma_product == 0.0 {
        0.0
    } else if raw_dh.abs() <= 180.0 + ANTIPODAL_SLACK {
        raw_dh
    } else if raw_dh > 180.0 {
        raw_dh - 360.0
    } else {
        raw_dh + 360.0
    };
    let d_big_h = 2.0 * chroma_product.sqrt() * (dh.to_radians() / 2.0).sin();

    let l_mean = (v1.l + v2.l) / 2.0;
    let c_mean = (c1p + c2p) / 2.0;
    let h_mean = if chroma_product == 0.0 {
        h1p + h2p
    } else if (h1p - h2p).abs() <= 180.0 + ANTIPODAL_SLACK {
        (h1p + h2p) / 2.0
    } else if h1p + h2p < 360.0 {
        (h1p + h2p + 360.0) / 2.0
    } else {
        (h1p + h2p - 360.0) / 2.0
    };

    let cos_deg = |d: f64| d.to_radians().cos();
    let t = 1.0 - 0.17 * cos_deg(h_mean - 30.0) + 0.24 * cos_deg(2.0 * h_mean) + 0.32 * cos_deg(3.0 * h_mean + 6.0)
        - 0.20 * cos_deg(4.0 * h_mean - 63.0);
    let d_theta = 30.0 * (-((h_mean - 275.0) / 25.0).powi(2)).exp();
    let c_mean_7 = c_mean.powi(7);
    let r_c = 2.0 * (c_mean_7 / (c_mean_7 + POW25_7)).sqrt();
    let l_off = (l_mean - 50.0).powi(2);
    let s_l = 1.0 + 0.015 * l_off / (20.0 + l_off).sqrt();
    let s_c = 1.0 + 0.045 * c_mean;
    let s_h = 1.0 + 0.015 * c_mean * t;
    let r_t = -(2.0 * d_theta).to_radians().sin() * r_c;

    let tl = dl / s_l;
    let tc = dc / s_c;
    let th = d_big_h / s_h;
    (tl * tl + tc * tc + th * th + r_t * tc * th).max(0.0).sqrt()
}

/// Chroma below this on either side makes the hue difference 0.
pub const HUE_CHROMA_GUARD: f64 = 1e-4;

/// Circular hue difference in degrees, `[0, 180]`.
pub fn hue_mae(v1: Lch, v2: Lch) -> f64 {
    if v1.c < HUE_CHROMA_GUARD || v2.c < HUE_CHROMA_GUARD {
        return 0.0;
    }
    let d = (v1.h - v2.h).abs().rem_euclid(360.0);
    d.min(360.0 - d)
}

pub fn delta_chroma(v1: Lab, v2: Lab) -> f64 {
    let (da, db) = (v2.a - v1.a, v2.b - v1.b);
    (da * da + db * db).sqrt()
}

/// HyAB as `sqrt(Δa² + Δb² + |ΔL|)`; lightness enters unsquared under the root.
pub fn hyab(v1: Lab, v2: Lab) -> f64 {
    let (da, db) = (v2.a - v1.a, v2.b - v1.b);
    (da * da + db * db + (v2.l - v1.l).abs()).sqrt()
}

pub fn hyab_literature(v1: Lab, v2: Lab) -> f64 {
    (v2.l - v1.l).abs() + delta_chroma(v1, v2)
}

/// Per-channel mean over the region, kept in real precision.
pub fn representative_color(image: &RgbImage, region: Rect) -> Result<RgbReal, MetricError> {
    if region.is_empty() || region.x1 > image.width() || region.y1 > image.height() {
        return Err(MetricError::EmptyRegion(region));
    }
    let mut sums = [0u64; 3];
    for y in region.y0..region.y1 {
        for x in region.x0..region.x1 {
            let p = image.get_pixel(x, y).0;
            for c in 0..3 {
                sums[c] += u64::from(p[c]);
            }
        }
    }
    let n = region.area() as f64;
    Ok(RgbReal::new(sums[0] as f64 / n, sums[1] as f64 / n, sums[2] as f64 / n))
}

/// Divisor and weight for one metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConstant {
    pub max: f64,
    pub weight: f64,
}

/// Per-metric maxima (normalization divisors) and pre-mean weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConstants {
    pub rgb_ed: MetricConstant,
    pub rgb_rm: MetricConstant,
    pub lab_00: MetricConstant,
    pub lab_hue: MetricConstant,
    pub lab_hyab: MetricConstant,
    pub lab_ch: MetricConstant,
}

/// Largest pairwise distances over a 17-step-per-channel lattice of the
/// 8-bit cube (see `gamut_maxima`), frozen here.
pub const GAMUT_MAX_LAB_00: f64 = 119.457_953_616_425_4;
pub const GAMUT_MAX_LAB_CH: f64 = 252.672_505_373_617_3;
pub const GAMUT_MAX_LAB_HYAB_PRINTED: f64 = 252.782_184_264_146_1;
pub const GAMUT_MAX_LAB_HYAB_LITERATURE: f64 = 308.110_214_945_640_9;

impl NormalizationConstants {
    pub fn for_form(form: HyabForm) -> Self {
        let w = 1.0 / 6.0;
        let k = |max: f64| MetricConstant { max, weight: w };
        NormalizationConstants {
            rgb_ed: k(255.0 * 3f64.sqrt()),
            rgb_rm: k(255.0 * (8.0 + 255.0 / 256.0f64).sqrt()),
            lab_00: k(GAMUT_MAX_LAB_00),
            lab_hue: k(180.0),
            lab_hyab: k(match form {
                HyabForm::Printed => GAMUT_MAX_LAB_HYAB_PRINTED,
                HyabForm::Literature => GAMUT_MAX_LAB_HYAB_LITERATURE,
            }),
            lab_ch: k(GAMUT_MAX_LAB_CH),
        }
    }

    pub fn as_array(&self) -> [MetricConstant; 6] {
        [
            self.rgb_ed,
            self.rgb_rm,
            self.lab_00,
            self.lab_hue,
            self.lab_hyab,
            self.lab_ch,
        ]
    }

    fn slot_mut(&mut self, key: &str) -> Option<&mut MetricConstant> {
        Some(match key {
            "rgb_ed" | "rgb-ed" => &mut self.rgb_ed,
            "rgb_rm" | "rgb-rm" => &mut self.rgb_rm,
            "lab_00" | "lab-00" => &mut self.lab_00,
            "lab_hue" | "lab-hue" => &mut self.lab_hue,
            "lab_hyab" | "lab-hyab" => &mut self.lab_hyab,
            "lab_ch" | "lab-ch" => &mut self.lab_ch,
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        let all = self.as_array();
        for (k, name) in all.iter().zip(METRIC_NAMES) {
            if !(k.max.is_finite() && k.max > 0.0) {
                return Err(MetricError::Constants(format!("{name}: max must be > 0")));
            }
            if !(k.weight.is_finite() && k.weight >= 0.0) {
                return Err(MetricError::Constants(format!("{name}: weight must be >= 0")));
            }
        }
        let sum: f64 = all.iter().map(|k| k.weight).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MetricError::Constants(format!("weights sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// `metric.max = v` / `metric.weight = v` lines; keys not given keep
    /// their default values.
    pub fn from_config_str(text: &str) -> Result<Self, MetricError> {
        let mut k = NormalizationConstants::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| MetricError::Constants(format!("line {}: {msg}", n + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let (metric, field) = key.trim().split_once('.').ok_or_else(|| bad("expected metric.field"))?;
            let value: f64 = value.trim().parse().map_err(|_| bad("value is not a number"))?;
            let slot = k.slot_mut(metric).ok_or_else(|| bad("unknown metric"))?;
            match field {
                "max" => slot.max = value,
                "weight" => slot.weight = value,
                _ => return Err(bad("field must be max or weight")),
            }
        }
        k.validate()?;
        Ok(k)
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for (k, name) in self.as_array().iter().zip(METRIC_NAMES) {
            let key = name.replace('-', "_");
            let _ = writeln!(out, "{key}.max = {}", k.max);
            let _ = writeln!(out, "{key}.weight = {}", k.weight);
        }
        out
    }
}

impl Default for NormalizationConstants {
    fn default() -> Self {
        NormalizationConstants::for_form(HyabForm::Printed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub raw: PrecisionValues,
    pub normalized: PrecisionValues,
    pub pre_mean: f64,
}

/// Normalizes each distance by its maximum (clipped at 1) and takes the
/// weighted sum.
pub fn normalize_and_aggregate(
    raw: PrecisionValues,
    k: &NormalizationConstants,
) -> Result<PrecisionReport, MetricError> {
    let values = raw.to_array();
    let consts = k.as_array();
    let mut normalized = [0.0; 6];
    let mut pre_mean = 0.0;
    for i in 0..6 {
        let v = values[i];
        if !v.is_finite() {
            return Err(MetricError::NonFinite {
                name: METRIC_NAMES[i],
                value: v,
            });
        }
        if v < 0.0 {
            return Err(MetricError::Negative {
                name: METRIC_NAMES[i],
                value: v,
            });
        }
        normalized[i] = (v / consts[i].max).min(1.0);
        pre_mean += consts[i].weight * normalized[i];
    }
    Ok(PrecisionReport {
        raw,
        normalized: PrecisionValues::from_array(normalized),
        pre_mean,
    })
}

/// Largest pairwise distances between the points of a `steps³` lattice
/// spanning the 8-bit cube. Used to derive the frozen `GAMUT_MAX_*` values.
pub fn gamut_maxima(steps: usize, hyab_form: HyabForm) -> PrecisionValues {
    assert!(steps >= 2);
    let axis: Vec<f64> = (0..steps).map(|i| 255.0 * i as f64 / (steps - 1) as f64).collect();
    let mut points = Vec::with_capacity(steps.pow(3));
    for &r in &axis {
        for &g in &axis {
            for &b in &axis {
                let c = RgbReal::new(r, g, b);
                points.push((c, srgb_to_lab(c)));
            }
        }
    }
    let pair_max = |acc: [f64; 6], v: [f64; 6]| {
        let mut out = acc;
        for i in 0..6 {
            out[i] = out[i].max(v[i]);
        }
        out
    };
    let best = points
        .par_iter()
        .enumerate()
        .map(|(i, &(c1, lab1))| {
            points[i + 1..].iter().fold([0.0; 6], |acc, &(c2, lab2)| {
                let h = match hyab_form {
                    HyabForm::Printed => hyab(lab1, lab2),
                    HyabForm::Literature => hyab_literature(lab1, lab2),
                };
                pair_max(
                    acc,
                    [
                        rgb_euclidean(c1, c2),
                        rgb_redmean(c1, c2),
                        ciede2000(lab1, lab2),
                        hue_mae(lab_to_lch(lab1), lab_to_lch(lab2)),
                        h,
                        delta_chroma(lab1, lab2),
                    ],
                )
            })
        })
        .reduce(|| [0.0; 6], pair_max);
    PrecisionValues::from_array(best)
}

/// Convenience for exact 8-bit pairs.
pub fn precision_between(sample: Rgb8, target: Rgb8, k: &NormalizationConstants) -> PrecisionReport {
    let raw = PrecisionValues::between(sample.into(), target.into(), HyabForm::Printed);
    normalize_and_aggregate(raw, k).expect("distances of valid colors are finite")
}
