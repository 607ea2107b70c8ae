//! Color values and the conversions between 8-bit sRGB, CIELAB, LCh and HSL.
//!
//! All math runs in `f64`; quantization back to 8 bits only happens where a
//! value has to become a pixel (`hsl_to_rgb`, rendering).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// An 8-bit sRGB color.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rgb8 {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

/// sRGB-encoded color with real-valued channels on the 0..255 scale.
///
/// Mean-pooled region colors live here; they are not re-quantized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgbReal {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

/// Cylindrical CIELAB: lightness, chroma, hue angle in degrees `[0, 360)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lch {
    pub l: f64,
    pub c: f64,
    pub h: f64,
}

/// Hue in degrees `[0, 360)`, saturation and lightness in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hsl {
    pub h: f64,
    pub s: f64,
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HexError {
    #[error("hex color must be 7 characters (\"#RRGGBB\"), got {0}")]
    Length(usize),
    #[error("hex color must start with '#'")]
    MissingHash,
    #[error("invalid hex digit {ch:?} at position {position}")]
    Digit { position: usize, ch: char },
}

impl Rgb8 {
    pub const BLACK: Rgb8 = Rgb8::new(0, 0, 0);
    pub const WHITE: Rgb8 = Rgb8::new(255, 255, 255);

    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Rgb8 { r, g, b }
    }

    pub fn channels(self) -> [u8; 3] {
        [self.r, self.g, self.b]
    }

    pub fn to_real(self) -> RgbReal {
        RgbReal::from(self)
    }
}

impl From<[u8; 3]> for Rgb8 {
    fn from(c: [u8; 3]) -> Self {
        Rgb8::new(c[0], c[1], c[2])
    }
}

impl From<Rgb8> for RgbReal {
    fn from(c: Rgb8) -> Self {
        RgbReal {
            r: f64::from(c.r),
            g: f64::from(c.g),
            b: f64::from(c.b),
        }
    }
}

impl RgbReal {
    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        RgbReal { r, g, b }
    }

    pub fn channels(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    /// Rounds half away from zero and clamps to the 8-bit range.
    pub fn quantize(self) -> Rgb8 {
        let q = |v: f64| v.round().clamp(0.0, 255.0) as u8;
        Rgb8::new(q(self.r), q(self.g), q(self.b))
    }
}

/// Parses `#RRGGBB` (either case).
pub fn parse_hex(text: &str) -> Result<Rgb8, HexError> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() != 7 {
        return Err(HexError::Length(chars.len()));
    }
    if chars[0] != '#' {
        return Err(HexError::MissingHash);
    }
    let mut bytes = [0u8; 3];
    for (i, pair) in chars[1..].chunks(2).enumerate() {
        let mut value = 0u8;
        for (j, &ch) in pair.iter().enumerate() {
            let digit = ch.to_digit(16).ok_or(HexError::Digit {
                position: 1 + 2 * i + j,
                ch,
            })?;
            value = value * 16 + digit as u8;
        }
        bytes[i] = value;
    }
    Ok(Rgb8::from(bytes))
}

/// Formats as uppercase `#RRGGBB`.
pub fn format_hex(c: Rgb8) -> String {
    format!("#{:02X}{:02X}{:02X}", c.r, c.g, c.b)
}

impl fmt::Display for Rgb8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_hex(*self))
    }
}

impl FromStr for Rgb8 {
    type Err = HexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_hex(s)
    }
}

impl Serialize for Rgb8 {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format_hex(*self))
    }
}

impl<'de> Deserialize<'de> for Rgb8 {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_hex(&s).map_err(serde::de::Error::custom)
    }
}

// sRGB primaries (IEC 61966-2-1) to CIE XYZ, derived from the D65
// chromaticities at seven digits.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

// D65 / 2° reference white as the matrix row sums, so equal-channel grays
// land exactly on the neutral axis.
const WHITE_X: f64 = RGB_TO_XYZ[0][0] + RGB_TO_XYZ[0][1] + RGB_TO_XYZ[0][2];
const WHITE_Y: f64 = RGB_TO_XYZ[1][0] + RGB_TO_XYZ[1][1] + RGB_TO_XYZ[1][2];
const WHITE_Z: f64 = RGB_TO_XYZ[2][0] + RGB_TO_XYZ[2][1] + RGB_TO_XYZ[2][2];

const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

fn srgb_decode(v: f64) -> f64 {
    let v = v / 255.0;
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPSILON {
        t.cbrt()
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

/// CIE XYZ (Y normalized to 1 for white) of an sRGB color.
pub fn srgb_to_xyz(c: impl Into<RgbReal>) -> [f64; 3] {
    let c = c.into();
    let lin = [srgb_decode(c.r), srgb_decode(c.g), srgb_decode(c.b)];
    let mut xyz = [0.0; 3];
    for (out, row) in xyz.iter_mut().zip(RGB_TO_XYZ.iter()) {
        *out = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    xyz
}

pub fn srgb_to_lab(c: impl Into<RgbReal>) -> Lab {
    let [x, y, z] = srgb_to_xyz(c);
    let yr = y / WHITE_Y;
    let fx = lab_f(x / WHITE_X);
    let fy = lab_f(yr);
    let fz = lab_f(z / WHITE_Z);
    let l = if yr > LAB_EPSILON {
        116.0 * fy - 16.0
    } else {
        LAB_KAPPA * yr
    };
    Lab {
        l,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// Chroma below this is treated as achromatic and gets hue 0.
pub const ACHROMATIC_CHROMA: f64 = 1e-6;

pub fn lab_to_lch(v: Lab) -> Lch {
    let c = (v.a * v.a + v.b * v.b).sqrt();
    let h = if c < ACHROMATIC_CHROMA {
        0.0
    } else {
        normalize_degrees(v.b.atan2(v.a).to_degrees())
    };
    Lch { l: v.l, c, h }
}

pub fn lch_to_lab(v: Lch) -> Lab {
    let (sin, cos) = v.h.to_radians().sin_cos();
    Lab {
        l: v.l,
        a: v.c * cos,
        b: v.c * sin,
    }
}

/// Maps any angle in degrees into `[0, 360)`.
pub fn normalize_degrees(h: f64) -> f64 {
    let h = h.rem_euclid(360.0);
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

pub fn rgb_to_hsl(c: Rgb8) -> Hsl {
    real_to_hsl(c.into())
}

/// HSL of a real-valued sRGB color (channels on the 0..255 scale).
pub fn real_to_hsl(c: RgbReal) -> Hsl {
    let r = c.r / 255.0;
    let g = c.g / 255.0;
    let b = c.b / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let l = (max + min) / 2.0;
    let d = max - min;
    if d == 0.0 {
        return Hsl { h: 0.0, s: 0.0, l };
    }
    let s = if l > 0.5 {
        d / (2.0 - max - min)
    } else {
        d / (max + min)
    };
    // Hue from the unscaled channels: for 8-bit inputs the quotient is a
    // ratio of small integers, so band edges such as 280° come out exact.
    let span = c.r.max(c.g).max(c.b) - c.r.min(c.g).min(c.b);
    let h = if max == r {
        60.0 * (c.g - c.b) / span
    } else if max == g {
        60.0 * (c.b - c.r) / span + 120.0
    } else {
        60.0 * (c.r - c.g) / span + 240.0
    };
    Hsl {
        h: normalize_degrees(h),
        s,
        l,
    }
}

/// Real-valued inverse of [`real_to_hsl`]; hue is taken modulo 360.
pub fn hsl_to_rgb_real(v: Hsl) -> RgbReal {
    let s = v.s.clamp(0.0, 1.0);
    let l = v.l.clamp(0.0, 1.0);
    let chroma = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = normalize_degrees(v.h) / 60.0;
    let x = chroma * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (chroma, x, 0.0),
        1 => (x, chroma, 0.0),
        2 => (0.0, chroma, x),
        3 => (0.0, x, chroma),
        4 => (x, 0.0, chroma),
        _ => (chroma, 0.0, x),
    };
    let m = l - chroma / 2.0;
    RgbReal::new((r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0)
}

pub fn hsl_to_rgb(v: Hsl) -> Rgb8 {
    hsl_to_rgb_real(v).quantize()
}
