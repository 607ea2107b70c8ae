//! Reference-free uniformity metrics: channel standard deviation, Canny edge
//! density and the high-frequency share of the 2D spectrum.

use std::collections::VecDeque;

use image::RgbImage;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::precision::MetricError;
use crate::region::Rect;

/// Rec.601 luma weights, in thousandths.
const LUMA_WEIGHTS: [i64; 3] = [299, 587, 114];
const LUMA_SCALE: i64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CannyParams {
    pub sigma: f64,
    /// Odd Gaussian kernel width.
    pub kernel_size: u32,
    /// Hysteresis thresholds on the Sobel gradient magnitude of 8-bit luma.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams {
            sigma: 1.4,
            kernel_size: 5,
            low: 50.0,
            high: 150.0,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<(), MetricError> {
        let bad = |m: &str| Err(MetricError::Constants(format!("canny: {m}")));
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad("sigma must be > 0");
        }
        if self.kernel_size < 3 || self.kernel_size.is_multiple_of(2) {
            return bad("kernel_size must be odd and >= 3");
        }
        if !(self.low >= 0.0 && self.low < self.high) {
            return bad("thresholds need 0 <= low < high");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PurityConfig {
    pub canny: CannyParams,
    /// Normalized radius (1 = spectrum corner) above which energy counts
    /// as high frequency.
    pub hf_cutoff: f64,
    /// Divisor for the standard deviation.
    pub sd_max: f64,
    pub weights: [f64; 3],
}

impl Default for PurityConfig {
    fn default() -> Self {
        PurityConfig {
            canny: CannyParams::default(),
            hf_cutoff: 0.25,
            sd_max: 127.5,
            weights: [1.0 / 3.0; 3],
        }
    }
}

impl PurityConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        self.canny.validate()?;
        if !(self.hf_cutoff > 0.0 && self.hf_cutoff < 1.0) {
            return Err(MetricError::Constants("hf_cutoff must be in (0,1)".into()));
        }
        if !(self.sd_max.is_finite() && self.sd_max > 0.0) {
            return Err(MetricError::Constants("sd_max must be > 0".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(MetricError::Constants("purity weights must be >= 0".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MetricError::Constants(format!("purity weights sum to {sum}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PurityValues {
    pub sd: f64,
    pub ced: f64,
    pub hf: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurityReport {
    pub raw: PurityValues,
    pub normalized: PurityValues,
    pub pur_mean: f64,
}

fn check_region(image: &RgbImage, region: Rect, min: u32) -> Result<(), MetricError> {
    if region.is_empty() || region.x1 > image.width() || region.y1 > image.height() {
        return Err(MetricError::EmptyRegion(region));
    }
    if region.width() < min || region.height() < min {
        return Err(MetricError::RegionTooSmall { rect: region, min });
    }
    Ok(())
}

/// Mean of the three per-channel population standard deviations.
pub fn channel_stddev(image: &RgbImage, region: Rect) -> Result<f64, MetricError> {
    check_region(image, region, 1)?;
    let n = region.area() as f64;
    let mut sums = [0u64; 3];
    for (_, _, p) in region_pixels(image, region) {
        for c in 0..3 {
            sums[c] += u64::from(p[c]);
        }
    }
    let means = sums.map(|s| s as f64 / n);
    let mut sq = [0.0f64; 3];
    for (_, _, p) in region_pixels(image, region) {
        for c in 0..3 {
            let d = f64::from(p[c]) - means[c];
            sq[c] += d * d;
        }
    }
    Ok(sq.iter().map(|s| (s / n).sqrt()).sum::<f64>() / 3.0)
}

fn region_pixels(image: &RgbImage, r: Rect) -> impl Iterator<Item = (u32, u32, [u8; 3])> + '_ {
    (r.y0..r.y1).flat_map(move |y| (r.x0..r.x1).map(move |x| (x, y, image.get_pixel(x, y).0)))
}

/// Luma scaled by 1000, as exact integers, row-major over the region.
fn luma_fixed(image: &RgbImage, region: Rect) -> Vec<i64> {
    region_pixels(image, region)
        .map(|(_, _, p)| {
            LUMA_WEIGHTS[0] * i64::from(p[0]) + LUMA_WEIGHTS[1] * i64::from(p[1]) + LUMA_WEIGHTS[2] * i64::from(p[2])
        })
        .collect()
}

// Mirror without repeating the edge sample: -1 -> 1, n -> n-2.
fn reflect(i: i64, n: i64) -> usize {
    let mut i = i;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Integer Gaussian taps (center 256) for the given sigma and width.
fn gaussian_taps(sigma: f64, size: u32) -> Vec<i64> {
    let radius = (size / 2) as i64;
    (-radius..=radius)
        .map(|i| {
            let g = (-((i * i) as f64) / (2.0 * sigma * sigma)).exp();
            (256.0 * g).round().max(1.0) as i64
        })
        .collect()
}

/// Binary edge map of a luma plane.
///
/// The blur and Sobel stages run in exact integer arithmetic so the result
/// is identical for an image and its luma inverse.
pub fn canny_edges(luma: &[i64], width: usize, height: usize, params: &CannyParams) -> Vec<bool> {
    let (w, h) = (width as i64, height as i64);
    let taps = gaussian_taps(params.sigma, params.kernel_size);
    let radius = (taps.len() / 2) as i64;
    let tap_sum: i64 = taps.iter().sum();

    let mut horiz = vec![0i64; luma.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0;
            for (k, t) in taps.iter().enumerate() {
                let xx = reflect(x + k as i64 - radius, w);
                acc += t * luma[(y * w) as usize + xx];
            }
            horiz[(y * w + x) as usize] = acc;
        }
    }
    let mut blurred = vec![0i64; luma.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0;
            for (k, t) in taps.iter().enumerate() {
                let yy = reflect(y + k as i64 - radius, h);
                acc += t * horiz[yy * width + x as usize];
            }
            blurred[(y * w + x) as usize] = acc;
        }
    }

    let at = |x: i64, y: i64| blurred[reflect(y, h) * width + reflect(x, w)];
    let mut gx = vec![0i64; luma.len()];
    let mut gy = vec![0i64; luma.len()];
    let mut mag = vec![0f64; luma.len()];
    let scale = (LUMA_SCALE * tap_sum * tap_sum) as f64;
    for y in 0..h {
        for x in 0..w {
            let sx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
            let sy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
            let i = (y * w + x) as usize;
            gx[i] = sx;
            gy[i] = sy;
            mag[i] = (sx as f64).hypot(sy as f64) / scale;
        }
    }

    // Non-maximum suppression along the quantized gradient direction.
    let tan_22_5 = std::f64::consts::FRAC_PI_8.tan();
    let tan_67_5 = (3.0 * std::f64::consts::FRAC_PI_8).tan();
    let mag_at = |x: i64, y: i64| mag[reflect(y, h) * width + reflect(x, w)];
    let mut thin = vec![0f64; luma.len()];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let ax = (gx[i] as f64).abs();
            let ay = (gy[i] as f64).abs();
            let (n1, n2) = if ay <= ax * tan_22_5 {
                (mag_at(x - 1, y), mag_at(x + 1, y))
            } else if ay >= ax * tan_67_5 {
                (mag_at(x, y - 1), mag_at(x, y + 1))
            } else if (gx[i] > 0) == (gy[i] > 0) {
                (mag_at(x - 1, y - 1), mag_at(x + 1, y + 1))
            } else {
                (mag_at(x + 1, y - 1), mag_at(x - 1, y + 1))
            };
            if m >= n1 && m >= n2 {
                thin[i] = m;
            }
        }
    }

    // Hysteresis: grow from strong pixels through weak 8-neighbors.
    let mut edges = vec![false; luma.len()];
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= params.high && !edges[i] {
            edges[i] = true;
            queue.push_back(i);
            while let Some(j) = queue.pop_front() {
                let (jx, jy) = ((j % width) as i64, (j / width) as i64);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (jx + dx, jy + dy);
                        if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w || ny >= h {
                            continue;
                        }
                        let k = (ny * w + nx) as usize;
                        if !edges[k] && thin[k] >= params.low {
                            edges[k] = true;
                            queue.push_back(k);
                        }
                    }
                }
            }
        }
    }
    edges
}

/// Fraction of region pixels marked as Canny edges.
pub fn canny_edge_density(image: &RgbImage, region: Rect, params: &CannyParams) -> Result<f64, MetricError> {
    check_region(image, region, 5)?;
    params.validate()?;
    let luma = luma_fixed(image, region);
    if luma.iter().all(|&v| v == luma[0]) {
        return Ok(0.0);
    }
    let edges = canny_edges(&luma, region.width() as usize, region.height() as usize, params);
    Ok(edges.iter().filter(|&&e| e).count() as f64 / edges.len() as f64)
}

/// Share of non-DC spectral energy of the luma plane lying beyond
/// `cutoff` of the half-diagonal radius.
pub fn high_freq_ratio(image: &RgbImage, region: Rect, cutoff: f64) -> Result<f64, MetricError> {
    check_region(image, region, 8)?;
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(MetricError::Constants("hf cutoff must be in (0,1)".into()));
    }
    let fixed = luma_fixed(image, region);
    if fixed.iter().all(|&v| v == fixed[0]) {
        return Ok(0.0);
    }
    let (w, h) = (region.width() as usize, region.height() as usize);
    let luma: Vec<f64> = fixed.iter().map(|&v| v as f64 / LUMA_SCALE as f64).collect();
    let mean = luma.iter().sum::<f64>() / luma.len() as f64;
    let mut data: Vec<Complex<f64>> = luma.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();

    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(w);
    for row in data.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col_fft.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }

    let signed = |k: usize, n: usize| -> f64 {
        let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        k / n as f64
    };
    let half_diagonal = std::f64::consts::FRAC_1_SQRT_2;
    let (mut high, mut total) = (0.0, 0.0);
    for v in 0..h {
        let fv = signed(v, h);
        for u in 0..w {
            if u == 0 && v == 0 {
                continue;
            }
            let fu = signed(u, w);
            let energy = data[v * w + u].norm_sqr();
            total += energy;
            if (fu * fu + fv * fv).sqrt() / half_diagonal > cutoff {
                high += energy;
            }
        }
    }
    if total <= 0.0 {
        return Ok(0.0);
    }
    Ok((high / total).clamp(0.0, 1.0))
}

/// All three raw purity values for one region.
pub fn purity_values(image: &RgbImage, region: Rect, cfg: &PurityConfig) -> Result<PurityValues, MetricError> {
    Ok(PurityValues {
        sd: channel_stddev(image, region)?,
        ced: canny_edge_density(image, region, &cfg.canny)?,
        hf: high_freq_ratio(image, region, cfg.hf_cutoff)?,
    })
}

pub fn purity_aggregate(raw: PurityValues, cfg: &PurityConfig) -> Result<PurityReport, MetricError> {
    for (name, v) in [("sd", raw.sd), ("ced", raw.ced), ("hf", raw.hf)] {
        if !v.is_finite() {
            return Err(MetricError::NonFinite { name, value: v });
        }
        if v < 0.0 {
            return Err(MetricError::Negative { name, value: v });
        }
    }
    for (name, v) in [("ced", raw.ced), ("hf", raw.hf)] {
        if v > 1.0 {
            return Err(MetricError::Constants(format!("{name} is a ratio, got {v}")));
        }
    }
    let normalized = PurityValues {
        sd: (raw.sd / cfg.sd_max).min(1.0),
        ced: raw.ced,
        hf: raw.hf,
    };
    let w = cfg.weights;
    Ok(PurityReport {
        raw,
        normalized,
        pur_mean: w[0] * normalized.sd + w[1] * normalized.ced + w[2] * normalized.hf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full(img: &RgbImage) -> Rect {
        Rect::new(0, 0, img.width(), img.height())
    }

    fn step_image(w: u32, h: u32, k: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, _| if x < k { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) })
    }

    fn noise_image(w: u32, h: u32, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
    }

    #[test]
    fn stddev_examples() {
        let c = RgbImage::from_pixel(16, 16, Rgb([217, 180, 81]));
        assert_eq!(channel_stddev(&c, full(&c)).unwrap(), 0.0);
        let half = step_image(16, 16, 8);
        assert_eq!(channel_stddev(&half, full(&half)).unwrap(), 127.5);
        let one = RgbImage::from_pixel(1, 1, Rgb([1, 200, 3]));
        assert_eq!(channel_stddev(&one, full(&one)).unwrap(), 0.0);
        assert!(channel_stddev(&one, Rect::new(0, 0, 0, 1)).is_err());
    }

    #[test]
    fn canny_constant_is_zero() {
        let c = RgbImage::from_pixel(32, 32, Rgb([10, 200, 30]));
        assert_eq!(canny_edge_density(&c, full(&c), &CannyParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn canny_step_gives_thin_band() {
        let (w, h) = (64u32, 48u32);
        let img = step_image(w, h, 21);
        let d = canny_edge_density(&img, full(&img), &CannyParams::default()).unwrap();
        let per_column = 1.0 / f64::from(w);
        assert!(d >= per_column - 1e-12 && d <= 3.0 * per_column + 1e-12, "{d}");
    }

    #[test]
    fn canny_noise_floor() {
        let img = noise_image(64, 64, 5);
        let d = canny_edge_density(&img, full(&img), &CannyParams::default()).unwrap();
        assert!(d > 0.05, "{d}");
    }

    #[test]
    fn canny_rejects_small_regions_and_bad_params() {
        let img = RgbImage::new(4, 10);
        assert!(matches!(
            canny_edge_density(&img, full(&img), &CannyParams::default()),
            Err(MetricError::RegionTooSmall { .. })
        ));
        let img = RgbImage::new(10, 10);
        let bad = CannyParams {
            low: 200.0,
            ..Default::default()
        };
        assert!(canny_edge_density(&img, full(&img), &bad).is_err());
    }

    #[test]
    fn canny_invariant_under_inversion() {
        let img = noise_image(40, 40, 9);
        let inv = RgbImage::from_fn(40, 40, |x, y| {
            let p = img.get_pixel(x, y).0;
            Rgb([255 - p[0], 255 - p[1], 255 - p[2]])
        });
        let p = CannyParams::default();
        let e1 = canny_edges(&luma_fixed(&img, full(&img)), 40, 40, &p);
        let inv_luma: Vec<i64> = luma_fixed(&inv, full(&inv));
        let e2 = canny_edges(&inv_luma, 40, 40, &p);
        assert_eq!(e1, e2);
    }

    #[test]
    fn hf_examples() {
        let c = RgbImage::from_pixel(32, 32, Rgb([40, 40, 40]));
        assert_eq!(high_freq_ratio(&c, full(&c), 0.25).unwrap(), 0.0);

        let checker = RgbImage::from_fn(32, 32, |x, y| {
            if (x + y) % 2 == 0 {
                Rgb([0, 0, 0])
            } else {
                Rgb([255, 255, 255])
            }
        });
        let hf_checker = high_freq_ratio(&checker, full(&checker), 0.25).unwrap();
        assert!(hf_checker > 0.99, "{hf_checker}");

        let split = step_image(32, 32, 16);
        let hf_split = high_freq_ratio(&split, full(&split), 0.25).unwrap();
        assert!(hf_split < hf_checker);

        assert!(high_freq_ratio(&c, Rect::new(0, 0, 7, 32), 0.25).is_err());
        assert!(high_freq_ratio(&c, full(&c), 1.0).is_err());
    }

    #[test]
    fn hf_invariant_to_brightness_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = RgbImage::from_fn(32, 32, |_, _| {
            Rgb([
                rng.random_range(20..200),
                rng.random_range(20..200),
                rng.random_range(20..200),
            ])
        });
        let shifted = RgbImage::from_fn(32, 32, |x, y| {
            let p = base.get_pixel(x, y).0;
            Rgb([p[0] + 30, p[1] + 30, p[2] + 30])
        });
        let a = high_freq_ratio(&base, full(&base), 0.25).unwrap();
        let b = high_freq_ratio(&shifted, full(&shifted), 0.25).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn aggregate_examples() {
        let cfg = PurityConfig::default();
        let r = purity_aggregate(PurityValues::default(), &cfg).unwrap();
        assert_eq!(r.pur_mean, 0.0);

        let unit = PurityConfig { sd_max: 1.0, ..cfg };
        let sana = PurityValues {
            sd: 0.232,
            ced: 0.028,
            hf: 0.030,
        };
        let r = purity_aggregate(sana, &unit).unwrap();
        assert!((r.pur_mean - 0.0967).abs() < 1e-4);
        assert!((r.pur_mean - 0.097).abs() <= 0.002);
        let gpt = PurityValues {
            sd: 0.013,
            ced: 0.030,
            hf: 0.001,
        };
        let r = purity_aggregate(gpt, &unit).unwrap();
        assert!((r.pur_mean - 0.01467).abs() < 1e-4);
        assert!((r.pur_mean - 0.015).abs() <= 0.002);

        let bad = PurityValues {
            sd: f64::INFINITY,
            ..Default::default()
        };
        assert!(purity_aggregate(bad, &cfg).is_err());
        let bad = PurityValues {
            ced: 1.5,
            ..Default::default()
        };
        assert!(purity_aggregate(bad, &cfg).is_err());
    }
}
