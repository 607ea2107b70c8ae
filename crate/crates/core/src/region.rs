//! Per-sample evaluation: region geometry, fuzzy-range reference
//! resolution, block-wise metrics and split-ratio measurement.

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::{hsl_to_rgb_real, real_to_hsl, rgb_to_hsl, Hsl, Rgb8, RgbReal};
use crate::precision::{
    normalize_and_aggregate, representative_color, HyabForm, MetricError, NormalizationConstants, PrecisionReport,
    PrecisionValues,
};
use crate::purity::{purity_aggregate, purity_values, PurityConfig, PurityReport};

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Rect {
    pub const fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn is_empty(&self) -> bool {
        self.width() == 0 || self.height() == 0
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    /// Shrinks every side by `margin`, never below a single pixel.
    pub fn eroded(&self, margin: u32) -> Rect {
        let mx = margin.min(self.width().saturating_sub(1) / 2);
        let my = margin.min(self.height().saturating_sub(1) / 2);
        Rect::new(self.x0 + mx, self.y0 + my, self.x1 - mx, self.y1 - my)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HSide {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VSide {
    Top,
    Bottom,
}

/// Where a region sits on the canvas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionGeometry {
    Full,
    /// Left/right split at `left_fraction` of the width.
    HorizontalSplit {
        left_fraction: f64,
        side: HSide,
    },
    /// Top/bottom split at `top_fraction` of the height.
    VerticalSplit {
        top_fraction: f64,
        side: VSide,
    },
    /// 2×2 grid cell: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
    Quadrant {
        index: u8,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColorTarget {
    Exact { color: Rgb8 },
    Range { low: Rgb8, high: Rgb8 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub geometry: RegionGeometry,
    pub target: ColorTarget,
}

impl RegionSpec {
    pub fn full(color: Rgb8) -> Self {
        RegionSpec {
            geometry: RegionGeometry::Full,
            target: ColorTarget::Exact { color },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegionError {
    #[error("image {width}x{height} is smaller than 2x2")]
    TooSmall { width: u32, height: u32 },
    #[error("split fraction {0} must lie in (0, 1)")]
    Fraction(f64),
    #[error("quadrant index {0} out of range 0..3")]
    Quadrant(u8),
    #[error("{0:?} yields an empty rectangle")]
    Empty(RegionGeometry),
    #[error("regions overlap or leave pixels uncovered")]
    Untiled,
    #[error("range endpoints must differ, both are {0}")]
    DegenerateRange(Rgb8),
    #[error("image is {found_w}x{found_h}, expected {expected}x{expected}")]
    Dimensions { found_w: u32, found_h: u32, expected: u32 },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Boundary index `round_half_up(fraction * extent)`.
pub fn split_boundary(fraction: f64, extent: u32) -> u32 {
    (fraction * f64::from(extent) + 0.5).floor() as u32
}

pub fn region_pixels(geometry: &RegionGeometry, width: u32, height: u32) -> Result<Rect, RegionError> {
    if width < 2 || height < 2 {
        return Err(RegionError::TooSmall { width, height });
    }
    let rect = match *geometry {
        RegionGeometry::Full => Rect::new(0, 0, width, height),
        RegionGeometry::HorizontalSplit { left_fraction, side } => {
            if !(left_fraction > 0.0 && left_fraction < 1.0) {
                return Err(RegionError::Fraction(left_fraction));
            }
            let b = split_boundary(left_fraction, width);
            match side {
                HSide::Left => Rect::new(0, 0, b, height),
                HSide::Right => Rect::new(b, 0, width, height),
            }
        }
        RegionGeometry::VerticalSplit { top_fraction, side } => {
            if !(top_fraction > 0.0 && top_fraction < 1.0) {
                return Err(RegionError::Fraction(top_fraction));
            }
            let b = split_boundary(top_fraction, height);
            match side {
                VSide::Top => Rect::new(0, 0, width, b),
                VSide::Bottom => Rect::new(0, b, width, height),
            }
        }
        RegionGeometry::Quadrant { index } => {
            let (mx, my) = (width / 2, height / 2);
            match index {
                0 => Rect::new(0, 0, mx, my),
                1 => Rect::new(mx, 0, width, my),
                2 => Rect::new(0, my, mx, height),
                3 => Rect::new(mx, my, width, height),
                i => return Err(RegionError::Quadrant(i)),
            }
        }
    };
    if rect.is_empty() {
        return Err(RegionError::Empty(*geometry));
    }
    Ok(rect)
}

/// Rectangles of `regions`, checked to cover the canvas exactly once.
pub fn tile(regions: &[RegionSpec], width: u32, height: u32) -> Result<Vec<Rect>, RegionError> {
    let rects = regions
        .iter()
        .map(|r| region_pixels(&r.geometry, width, height))
        .collect::<Result<Vec<_>, _>>()?;
    let total: u64 = rects.iter().map(Rect::area).sum();
    if total != u64::from(width) * u64::from(height) {
        return Err(RegionError::Untiled);
    }
    for (i, a) in rects.iter().enumerate() {
        if rects[i + 1..].iter().any(|b| a.intersects(b)) {
            return Err(RegionError::Untiled);
        }
    }
    Ok(rects)
}

/// Projection of a color onto the HSL segment between two range bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuzzyProjection {
    /// Clamped segment parameter, 0 at `low`, 1 at `high`.
    pub t: f64,
    pub point: Hsl,
    /// Reference color: the projected point, or the sample itself when it
    /// is within half an 8-bit step of it. Endpoints are exact.
    pub reference: RgbReal,
}

// Coordinates used for the projection: hue scaled to turns so all three
// axes share a unit range.
fn hsl_vector(h: f64, s: f64, l: f64) -> [f64; 3] {
    [h / 360.0, s, l]
}

fn signed_hue_delta(from: f64, to: f64) -> f64 {
    let d = (to - from).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Endpoints of the range as HSL vectors, hue unwrapped along the shorter arc.
/// A gray endpoint has no hue of its own and takes the other endpoint's.
fn range_vectors(low: Rgb8, high: Rgb8) -> ([f64; 3], [f64; 3]) {
    let mut lo = rgb_to_hsl(low);
    let mut hi = rgb_to_hsl(high);
    if lo.s == 0.0 {
        lo.h = hi.h;
    } else if hi.s == 0.0 {
        hi.h = lo.h;
    }
    let hi_h = lo.h + signed_hue_delta(lo.h, hi.h);
    (hsl_vector(lo.h, lo.s, lo.l), hsl_vector(hi_h, hi.s, hi.l))
}

pub fn project_onto_range(v: RgbReal, low: Rgb8, high: Rgb8) -> Result<FuzzyProjection, RegionError> {
    if low == high {
        return Err(RegionError::DegenerateRange(low));
    }
    let (p_lo, p_hi) = range_vectors(low, high);
    let vh = real_to_hsl(v);
    // Unwrap from the low hue (exact at that endpoint), then move to the
    // turn nearest the segment midpoint.
    let lo_h = p_lo[0] * 360.0;
    let mid_h = (p_lo[0] + p_hi[0]) * 180.0;
    let mut v_h = lo_h + signed_hue_delta(lo_h, vh.h);
    if v_h - mid_h > 180.0 {
        v_h -= 360.0;
    } else if v_h - mid_h < -180.0 {
        v_h += 360.0;
    }
    let pv = hsl_vector(v_h, vh.s, vh.l);

    let d: Vec<f64> = (0..3).map(|i| p_hi[i] - p_lo[i]).collect();
    // A gray sample has no hue, so only saturation and lightness place it.
    let axes = if vh.s == 0.0 { 1..3 } else { 0..3 };
    let len2: f64 = axes.clone().map(|i| d[i] * d[i]).sum();
    let dot: f64 = axes.map(|i| (pv[i] - p_lo[i]) * d[i]).sum();
    let t = if len2 > 0.0 { (dot / len2).clamp(0.0, 1.0) } else { 0.0 };

    let p: Vec<f64> = (0..3).map(|i| p_lo[i] + t * d[i]).collect();
    let point = Hsl {
        h: (p[0] * 360.0).rem_euclid(360.0),
        s: p[1],
        l: p[2],
    };
    let nearest = if t <= 0.0 {
        low.into()
    } else if t >= 1.0 {
        high.into()
    } else {
        hsl_to_rgb_real(point)
    };
    // 8-bit colors cannot sit exactly on the segment, so a sample inside
    // the quantization cell of its projection counts as on it.
    let on_segment = (0..3).all(|i| (v.channels()[i] - nearest.channels()[i]).abs() <= QUANTIZATION_SLACK);
    let reference = if on_segment { v } else { nearest };
    Ok(FuzzyProjection { t, point, reference })
}

/// Per-channel distance (8-bit units) within which a sample counts as on
/// the range segment.
pub const QUANTIZATION_SLACK: f64 = 0.5;

/// Reference color for a representative color under a fuzzy range target.
pub fn fuzzy_reference(v: RgbReal, low: Rgb8, high: Rgb8) -> Result<RgbReal, RegionError> {
    project_onto_range(v, low, high).map(|p| p.reference)
}

/// HSL midpoint of a range along the shorter hue arc, as a real color.
pub fn range_midpoint(low: Rgb8, high: Rgb8) -> RgbReal {
    let (a, b) = range_vectors(low, high);
    hsl_to_rgb_real(Hsl {
        h: ((a[0] + b[0]) * 180.0).rem_euclid(360.0),
        s: (a[1] + b[1]) / 2.0,
        l: (a[2] + b[2]) / 2.0,
    })
}

/// An 8-bit color near the range midpoint whose own fuzzy reference is
/// itself, so a render of it evaluates to zero distance.
pub fn range_fixed_point(low: Rgb8, high: Rgb8) -> Rgb8 {
    let (a, b) = range_vectors(low, high);
    let at = |t: f64| {
        hsl_to_rgb_real(Hsl {
            h: ((a[0] + t * (b[0] - a[0])) * 360.0).rem_euclid(360.0),
            s: a[1] + t * (b[1] - a[1]),
            l: a[2] + t * (b[2] - a[2]),
        })
        .quantize()
    };
    // Walk outwards from the middle of the segment.
    const STEPS: i32 = 512;
    for k in 0..=STEPS {
        for sign in [1.0, -1.0] {
            let t = 0.5 + sign * f64::from(k) / (2.0 * f64::from(STEPS));
            let c = at(t);
            if fuzzy_reference(c.into(), low, high).ok() == Some(c.into()) {
                return c;
            }
        }
    }
    low
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub normalization: NormalizationConstants,
    pub hyab_form: HyabForm,
    pub purity: PurityConfig,
    /// Pixels trimmed from each side of a region before purity metrics.
    pub erosion: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            normalization: NormalizationConstants::default(),
            hyab_form: HyabForm::Printed,
            purity: PurityConfig::default(),
            erosion: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        self.normalization.validate()?;
        self.purity.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub geometry: RegionGeometry,
    pub rect: Rect,
    pub representative: RgbReal,
    pub reference: RgbReal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuzzy_t: Option<f64>,
    pub precision: PrecisionReport,
    pub purity: PurityReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub regions: Vec<RegionReport>,
    pub pre_mean: f64,
    pub pur_mean: f64,
}

impl SampleReport {
    /// Mean over regions of the normalized precision values.
    pub fn normalized_precision(&self) -> PrecisionValues {
        let n = self.regions.len() as f64;
        let mut acc = [0.0; 6];
        for r in &self.regions {
            for (a, v) in acc.iter_mut().zip(r.precision.normalized.to_array()) {
                *a += v;
            }
        }
        PrecisionValues::from_array(acc.map(|a| a / n))
    }

    pub fn raw_precision(&self) -> PrecisionValues {
        let n = self.regions.len() as f64;
        let mut acc = [0.0; 6];
        for r in &self.regions {
            for (a, v) in acc.iter_mut().zip(r.precision.raw.to_array()) {
                *a += v;
            }
        }
        PrecisionValues::from_array(acc.map(|a| a / n))
    }

    /// Mean over regions of the normalized purity values `[sd, ced, hf]`.
    pub fn normalized_purity(&self) -> [f64; 3] {
        let n = self.regions.len() as f64;
        let mut acc = [0.0; 3];
        for r in &self.regions {
            let p = r.purity.normalized;
            acc[0] += p.sd;
            acc[1] += p.ced;
            acc[2] += p.hf;
        }
        acc.map(|a| a / n)
    }
}

/// Evaluates one image against its region specs, region by region.
pub fn evaluate_sample(
    image: &RgbImage,
    regions: &[RegionSpec],
    cfg: &EvalConfig,
) -> Result<SampleReport, RegionError> {
    let rects = tile(regions, image.width(), image.height())?;
    let mut reports = Vec::with_capacity(regions.len());
    for (spec, rect) in regions.iter().zip(rects) {
        let representative = representative_color(image, rect)?;
        let (reference, fuzzy_t) = match spec.target {
            ColorTarget::Exact { color } => (color.into(), None),
            ColorTarget::Range { low, high } => {
                let p = project_onto_range(representative, low, high)?;
                (p.reference, Some(p.t))
            }
        };
        let raw = PrecisionValues::between(representative, reference, cfg.hyab_form);
        let precision = normalize_and_aggregate(raw, &cfg.normalization)?;
        let purity_raw = purity_values(image, rect.eroded(cfg.erosion), &cfg.purity)?;
        let purity = purity_aggregate(purity_raw, &cfg.purity)?;
        reports.push(RegionReport {
            geometry: spec.geometry,
            rect,
            representative,
            reference,
            fuzzy_t,
            precision,
            purity,
        });
    }
    let n = reports.len() as f64;
    let pre_mean = reports.iter().map(|r| r.precision.pre_mean).sum::<f64>() / n;
    let pur_mean = reports.iter().map(|r| r.purity.pur_mean).sum::<f64>() / n;
    Ok(SampleReport {
        regions: reports,
        pre_mean,
        pur_mean,
    })
}

/// Like [`evaluate_sample`], but first requires a square image of `resolution`.
pub fn evaluate_sample_at(
    image: &RgbImage,
    regions: &[RegionSpec],
    resolution: u32,
    cfg: &EvalConfig,
) -> Result<SampleReport, RegionError> {
    if image.width() != resolution || image.height() != resolution {
        return Err(RegionError::Dimensions {
            found_w: image.width(),
            found_h: image.height(),
            expected: resolution,
        });
    }
    evaluate_sample(image, regions, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Left/right layout; the boundary is a column index.
    Horizontal,
    /// Top/bottom layout; the boundary is a row index.
    Vertical,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMeasurement {
    /// Left (or top) share of the extent.
    pub fraction: f64,
    pub boundary: u32,
    pub degenerate: bool,
}

/// Finds the two-segment boundary along `axis` that minimizes the total
/// within-segment squared deviation of the per-line mean colors.
pub fn measure_split_ratio(image: &RgbImage, axis: Axis) -> SplitMeasurement {
    let (w, h) = image.dimensions();
    let (lines, span) = match axis {
        Axis::Horizontal => (w, h),
        Axis::Vertical => (h, w),
    };
    let profile: Vec<[f64; 3]> = (0..lines)
        .map(|i| {
            let mut acc = [0u64; 3];
            for j in 0..span {
                let (x, y) = match axis {
                    Axis::Horizontal => (i, j),
                    Axis::Vertical => (j, i),
                };
                let p = image.get_pixel(x, y).0;
                for c in 0..3 {
                    acc[c] += u64::from(p[c]);
                }
            }
            acc.map(|s| s as f64 / f64::from(span))
        })
        .collect();

    let fallback = SplitMeasurement {
        fraction: 0.5,
        boundary: lines / 2,
        degenerate: true,
    };
    if lines < 2 || profile.iter().all(|p| *p == profile[0]) {
        return fallback;
    }

    // Prefix sums of values and squares give O(1) segment costs.
    let n = profile.len();
    let mut sum = vec![[0.0f64; 3]; n + 1];
    let mut sq = vec![0.0f64; n + 1];
    for (i, p) in profile.iter().enumerate() {
        for c in 0..3 {
            sum[i + 1][c] = sum[i][c] + p[c];
        }
        sq[i + 1] = sq[i] + p.iter().map(|v| v * v).sum::<f64>();
    }
    let cost = |a: usize, b: usize| {
        let len = (b - a) as f64;
        let s2: f64 = (0..3).map(|c| (sum[b][c] - sum[a][c]).powi(2)).sum();
        (sq[b] - sq[a]) - s2 / len
    };
    let mut best = (f64::INFINITY, 1usize);
    for b in 1..n {
        let c = cost(0, b) + cost(b, n);
        if c < best.0 - 1e-9 {
            best = (c, b);
        }
    }
    SplitMeasurement {
        fraction: best.1 as f64 / n as f64,
        boundary: best.1 as u32,
        degenerate: false,
    }
}
