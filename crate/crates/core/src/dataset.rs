//! Benchmark synthesis: prompt templates, ground-truth rendering, manifests
//! and train/test split tagging.
//!
//! Generation happens in two phases. A single-threaded plan draws every
//! color, template and layout from the seed, then images are rendered and
//! written in parallel. The plan alone determines the manifest bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use image::{ImageFormat, Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::color::{format_hex, hsl_to_rgb, rgb_to_hsl, Hsl, Rgb8};
use crate::palette::{sample_color, ColorLevel};
use crate::region::{range_fixed_point, tile, ColorTarget, HSide, RegionError, RegionGeometry, RegionSpec, VSide};

const BUNDLED_TEMPLATES: &str = include_str!("../data/templates.tsv");

/// Template pool size per variation, in variation order.
pub const TEMPLATE_COUNTS: [usize; 6] = [10, 20, 30, 10, 20, 10];

/// Base draws per variation at full scale.
pub const DEFAULT_BASE_COUNT: usize = 3020;

pub const VARIATIONS: [u8; 6] = [1, 2, 3, 4, 5, 6];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Zh,
    Fr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Hex,
    Rgb,
    Hsl,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Zh => "zh",
            Language::Fr => "fr",
        }
    }
}

impl ColorSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            ColorSpace::Hex => "hex",
            ColorSpace::Rgb => "rgb",
            ColorSpace::Hsl => "hsl",
        }
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "en" => Ok(Language::En),
            "zh" => Ok(Language::Zh),
            "fr" => Ok(Language::Fr),
            _ => Err(format!("unknown language {s:?}")),
        }
    }
}

impl FromStr for ColorSpace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hex" => Ok(ColorSpace::Hex),
            "rgb" => Ok(ColorSpace::Rgb),
            "hsl" => Ok(ColorSpace::Hsl),
            _ => Err(format!("unknown color space {s:?}")),
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for ColorSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Renders a color the way prompts spell it.
pub fn format_color(c: Rgb8, space: ColorSpace) -> String {
    match space {
        ColorSpace::Hex => format_hex(c),
        ColorSpace::Rgb => format!("rgb({}, {}, {})", c.r, c.g, c.b),
        ColorSpace::Hsl => {
            let v = rgb_to_hsl(c);
            let h = (v.h.round() as u32) % 360;
            format!(
                "hsl({}, {}%, {}%)",
                h,
                (v.s * 100.0).round() as u32,
                (v.l * 100.0).round() as u32
            )
        }
    }
}

// ---------------------------------------------------------------------------
// Templates

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("line {line}: expected 5 tab-separated fields")]
    Fields { line: usize },
    #[error("line {line}: {message}")]
    Field { line: usize, message: String },
    #[error("line {line}: duplicate template id {id:?}")]
    Duplicate { line: usize, id: String },
    #[error("template {id}: {message}")]
    Placeholders { id: String, message: String },
    #[error("variation {variation} has {found} templates, expected {expected}")]
    PoolSize {
        variation: u8,
        found: usize,
        expected: usize,
    },
    #[error("no template for variation {variation} in {language}/{color_space}")]
    Missing {
        variation: u8,
        language: Language,
        color_space: ColorSpace,
    },
    #[error("template {id} needs a value for {{{name}}}")]
    Unfilled { id: String, name: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub variation: u8,
    pub language: Language,
    pub color_space: ColorSpace,
    pub text: String,
}

/// Placeholders a variation's templates must contain, and those they may.
fn placeholder_arity(variation: u8) -> (&'static [&'static str], &'static [&'static str]) {
    match variation {
        1 | 5 | 6 => (&["color"], &[]),
        2 => (&["color_1", "color_2", "pos_1", "pos_2"], &["split"]),
        3 => (&["color_1", "color_2", "color_3", "color_4"], &[]),
        4 => (&["low", "high"], &[]),
        _ => (&[], &[]),
    }
}

/// Names inside `{...}` in order of appearance.
fn placeholders(text: &str) -> Result<Vec<&str>, String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        let end = after.find('}').ok_or("unclosed '{'")?;
        let name = &after[..end];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(format!("bad placeholder {{{name}}}"));
        }
        out.push(name);
        rest = &after[end + 1..];
    }
    if rest.contains('}') {
        return Err("unmatched '}'".into());
    }
    Ok(out)
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), TemplateError> {
        let err = |message: String| TemplateError::Placeholders {
            id: self.id.clone(),
            message,
        };
        if !(1..=6).contains(&self.variation) {
            return Err(err(format!("variation {} out of range", self.variation)));
        }
        let found: BTreeSet<&str> = placeholders(&self.text).map_err(err)?.into_iter().collect();
        let (required, optional) = placeholder_arity(self.variation);
        for name in required {
            if !found.contains(name) {
                return Err(err(format!("missing {{{name}}}")));
            }
        }
        for name in &found {
            if !required.contains(name) && !optional.contains(name) {
                return Err(err(format!("{{{name}}} not allowed for variation {}", self.variation)));
            }
        }
        Ok(())
    }

    /// Substitutes every placeholder from `values`.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.text.len() + 32);
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find('{') {
            out.push_str(&rest[..start]);
            let after = &rest[start + 1..];
            let end = after.find('}').unwrap_or(after.len());
            let name = &after[..end];
            let value = values.get(name).ok_or_else(|| TemplateError::Unfilled {
                id: self.id.clone(),
                name: name.to_string(),
            })?;
            out.push_str(value);
            rest = after.get(end + 1..).unwrap_or("");
        }
        out.push_str(rest);
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct TemplatePool {
    templates: Vec<PromptTemplate>,
}

impl TemplatePool {
    /// The pool compiled into the crate.
    pub fn bundled() -> &'static TemplatePool {
        static POOL: OnceLock<TemplatePool> = OnceLock::new();
        POOL.get_or_init(|| {
            let pool = TemplatePool::parse(BUNDLED_TEMPLATES).expect("bundled template pool is valid");
            pool.check_sizes()
                .expect("bundled template pool has the expected sizes");
            pool
        })
    }

    /// Parses `id<TAB>variation<TAB>language<TAB>color_space<TAB>text` lines.
    pub fn parse(text: &str) -> Result<TemplatePool, TemplateError> {
        let mut templates = Vec::new();
        let mut ids = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let raw = raw.trim_end_matches('\r');
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.splitn(5, '\t').collect();
            if fields.len() != 5 {
                return Err(TemplateError::Fields { line });
            }
            let field = |message: String| TemplateError::Field { line, message };
            let variation = fields[1]
                .trim()
                .parse::<u8>()
                .map_err(|e| field(format!("variation: {e}")))?;
            let language = fields[2].trim().parse().map_err(field)?;
            let color_space = fields[3].trim().parse().map_err(field)?;
            let id = fields[0].trim().to_string();
            if !ids.insert(id.clone()) {
                return Err(TemplateError::Duplicate { line, id });
            }
            let t = PromptTemplate {
                id,
                variation,
                language,
                color_space,
                text: fields[4].to_string(),
            };
            t.validate()?;
            templates.push(t);
        }
        Ok(TemplatePool { templates })
    }

    pub fn templates(&self) -> &[PromptTemplate] {
        &self.templates
    }

    pub fn for_variation(&self, variation: u8) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.iter().filter(move |t| t.variation == variation)
    }

    /// Requires the per-variation pool sizes in [`TEMPLATE_COUNTS`].
    pub fn check_sizes(&self) -> Result<(), TemplateError> {
        for (variation, expected) in VARIATIONS.into_iter().zip(TEMPLATE_COUNTS) {
            let found = self.for_variation(variation).count();
            if found != expected {
                return Err(TemplateError::PoolSize {
                    variation,
                    found,
                    expected,
                });
            }
        }
        Ok(())
    }

    fn select(
        &self,
        variation: u8,
        language: Language,
        color_space: ColorSpace,
    ) -> Result<Vec<&PromptTemplate>, TemplateError> {
        let v: Vec<_> = self
            .templates
            .iter()
            .filter(|t| t.variation == variation && t.language == language && t.color_space == color_space)
            .collect();
        if v.is_empty() {
            return Err(TemplateError::Missing {
                variation,
                language,
                color_space,
            });
        }
        Ok(v)
    }
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

/// One benchmark item, serialized as one manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleManifestEntry {
    pub id: String,
    pub variation: u8,
    pub level: ColorLevel,
    pub language: Language,
    pub color_space: ColorSpace,
    pub template_id: String,
    pub prompt: String,
    pub resolution: u32,
    pub regions: Vec<RegionSpec>,
    /// Relative to the dataset root.
    pub gt_path: String,
    /// The ground truth shows a representative in-range color, not an exact target.
    #[serde(default)]
    pub gt_is_midpoint: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitTag>,
    /// Generalization-split membership keyed by strategy name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub generalization: BTreeMap<String, SplitTag>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SampleManifestEntry {
    /// The single exact target of a Var-1 style sample.
    pub fn single_color(&self) -> Option<Rgb8> {
        match self.regions.as_slice() {
            [RegionSpec {
                geometry: RegionGeometry::Full,
                target: ColorTarget::Exact { color },
            }] => Some(*color),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
}

pub fn manifest_to_string(entries: &[SampleManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, entries: &[SampleManifestEntry]) -> Result<(), ManifestError> {
    let io = |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    w.write_all(manifest_to_string(entries).as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_manifest(path: &Path) -> Result<Vec<SampleManifestEntry>, ManifestError> {
    let io = |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(fs::File::open(path).map_err(io)?);
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let e: SampleManifestEntry = serde_json::from_str(&line).map_err(|source| ManifestError::Json {
            path: path.to_path_buf(),
            line: idx + 1,
            source,
        })?;
        if !ids.insert(e.id.clone()) {
            return Err(ManifestError::DuplicateId(e.id));
        }
        out.push(e);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Rendering

/// Paints each region with its target. Range targets get the in-range
/// color closest to the midpoint that maps onto itself.
pub fn render_ground_truth(regions: &[RegionSpec], resolution: u32) -> Result<RgbImage, RegionError> {
    let rects = tile(regions, resolution, resolution)?;
    let mut img = RgbImage::new(resolution, resolution);
    for (spec, rect) in regions.iter().zip(rects) {
        let c = match spec.target {
            ColorTarget::Exact { color } => color,
            ColorTarget::Range { low, high } => {
                if low == high {
                    return Err(RegionError::DegenerateRange(low));
                }
                range_fixed_point(low, high)
            }
        };
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                img.put_pixel(x, y, Rgb(c.channels()));
            }
        }
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// Generation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub resolution: u32,
    pub seed: u64,
    /// Base draws per variation (index 0 is Var-1). Var-2 expands each draw
    /// 4×, Var-3 6×, Var-5 and Var-6 2× (one per language or format).
    pub base_counts: [usize; 6],
    /// Relative weight of granularity levels 1, 2, 3.
    pub level_mix: [f64; 3],
    pub out_dir: PathBuf,
    pub overwrite: bool,
    pub write_images: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            resolution: 256,
            seed: 7,
            base_counts: [DEFAULT_BASE_COUNT; 6],
            level_mix: [1.0, 1.0, 1.0],
            out_dir: PathBuf::from("violin-data"),
            overwrite: false,
            write_images: true,
        }
    }
}

impl GenConfig {
    /// Multiplies every base count by `factor`, rounding half up.
    pub fn scaled(mut self, factor: f64) -> Self {
        for n in &mut self.base_counts {
            *n = (*n as f64 * factor + 0.5).floor() as usize;
        }
        self
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.resolution < 8 {
            return Err(GenError::Config(format!("resolution {} is below 8", self.resolution)));
        }
        if self.level_mix.iter().any(|w| !w.is_finite() || *w < 0.0) || self.level_mix.iter().sum::<f64>() <= 0.0 {
            return Err(GenError::Config(
                "level mix needs finite non-negative weights with a positive sum".into(),
            ));
        }
        Ok(())
    }

    /// Manifest entry count this config produces, per variation.
    pub fn expected_counts(&self) -> [usize; 6] {
        let mult = [1, 4, 6, 1, 2, 2];
        std::array::from_fn(|i| self.base_counts[i] * mult[i])
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0} already exists; pass overwrite to replace it")]
    Collision(PathBuf),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{path}: {message}")]
    Write { path: PathBuf, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GenSummary {
    pub manifest_path: PathBuf,
    pub counts: [usize; 6],
    pub total: usize,
    pub images_written: usize,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Levels for `n` draws: largest-remainder quotas of `mix`, then shuffled.
fn level_plan(n: usize, mix: [f64; 3], rng: &mut ChaCha8Rng) -> Vec<ColorLevel> {
    let total: f64 = mix.iter().sum();
    let exact: Vec<f64> = mix.iter().map(|w| w / total * n as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = n - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    for i in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        if mix[i] > 0.0 {
            quota[i] += 1;
            left -= 1;
        }
    }
    let mut levels: Vec<ColorLevel> = ColorLevel::ALL
        .into_iter()
        .zip(quota)
        .flat_map(|(l, q)| std::iter::repeat_n(l, q))
        .collect();
    levels.shuffle(rng);
    levels
}

/// `k` distinct colors of one level.
fn distinct_colors(level: ColorLevel, k: usize, rng: &mut ChaCha8Rng) -> Vec<Rgb8> {
    let mut out: Vec<Rgb8> = Vec::with_capacity(k);
    while out.len() < k {
        let c = sample_color(level, rng);
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

/// Bounded HSL perturbation of `c` that lands on a different 8-bit color.
fn perturb(c: Rgb8, rng: &mut ChaCha8Rng) -> Rgb8 {
    let base = rgb_to_hsl(c);
    for _ in 0..64 {
        let v = Hsl {
            h: base.h + rng.random_range(-40.0..=40.0),
            s: (base.s + rng.random_range(-0.15..=0.15)).clamp(0.0, 1.0),
            l: (base.l + rng.random_range(-0.15..=0.15)).clamp(0.0, 1.0),
        };
        let p = hsl_to_rgb(v);
        if p != c {
            return p;
        }
    }
    // Unreachable in practice; keep the range non-degenerate regardless.
    Rgb8::new(c.r ^ 0x20, c.g, c.b)
}

fn short_hash(prompt: &str, regions: &[RegionSpec]) -> String {
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    h.update([0u8]);
    h.update(serde_json::to_vec(regions).expect("regions serialize"));
    h.finalize()[..4].iter().map(|b| format!("{b:02x}")).collect()
}

struct Draft {
    variation: u8,
    level: ColorLevel,
    language: Language,
    color_space: ColorSpace,
    template: PromptTemplate,
    values: BTreeMap<&'static str, String>,
    regions: Vec<RegionSpec>,
}

fn pick<'a>(templates: &[&'a PromptTemplate], rng: &mut ChaCha8Rng) -> &'a PromptTemplate {
    templates[rng.random_range(0..templates.len())]
}

fn single_draft(
    variation: u8,
    level: ColorLevel,
    language: Language,
    color_space: ColorSpace,
    color: Rgb8,
    template: &PromptTemplate,
) -> Draft {
    Draft {
        variation,
        level,
        language,
        color_space,
        template: template.clone(),
        values: BTreeMap::from([("color", format_color(color, color_space))]),
        regions: vec![RegionSpec::full(color)],
    }
}

fn plan_variation(variation: u8, cfg: &GenConfig, pool: &TemplatePool) -> Result<Vec<Draft>, GenError> {
    let n = cfg.base_counts[usize::from(variation - 1)];
    let mut rng = rng_for(cfg.seed, u64::from(variation));
    let levels = level_plan(n, cfg.level_mix, &mut rng);
    let mut drafts = Vec::new();
    match variation {
        1 => {
            let ts = pool.select(1, Language::En, ColorSpace::Hex)?;
            for level in levels {
                let c = sample_color(level, &mut rng);
                let t = pick(&ts, &mut rng);
                drafts.push(single_draft(1, level, Language::En, ColorSpace::Hex, c, t));
            }
        }
        2 => {
            let ts = pool.select(2, Language::En, ColorSpace::Hex)?;
            for level in levels {
                let pair = distinct_colors(level, 2, &mut rng);
                for vertical in [false, true] {
                    for order in [[0, 1], [1, 0]] {
                        let (c1, c2) = (pair[order[0]], pair[order[1]]);
                        let (regions, split, pos) = if vertical {
                            let g = |side| RegionGeometry::VerticalSplit {
                                top_fraction: 0.5,
                                side,
                            };
                            (
                                vec![
                                    RegionSpec {
                                        geometry: g(VSide::Top),
                                        target: ColorTarget::Exact { color: c1 },
                                    },
                                    RegionSpec {
                                        geometry: g(VSide::Bottom),
                                        target: ColorTarget::Exact { color: c2 },
                                    },
                                ],
                                "horizontally",
                                ["top", "bottom"],
                            )
                        } else {
                            let g = |side| RegionGeometry::HorizontalSplit {
                                left_fraction: 0.5,
                                side,
                            };
                            (
                                vec![
                                    RegionSpec {
                                        geometry: g(HSide::Left),
                                        target: ColorTarget::Exact { color: c1 },
                                    },
                                    RegionSpec {
                                        geometry: g(HSide::Right),
                                        target: ColorTarget::Exact { color: c2 },
                                    },
                                ],
                                "vertically",
                                ["left", "right"],
                            )
                        };
                        let values = BTreeMap::from([
                            ("color_1", format_hex(c1)),
                            ("color_2", format_hex(c2)),
                            ("split", split.to_string()),
                            ("pos_1", pos[0].to_string()),
                            ("pos_2", pos[1].to_string()),
                        ]);
                        drafts.push(Draft {
                            variation: 2,
                            level,
                            language: Language::En,
                            color_space: ColorSpace::Hex,
                            template: pick(&ts, &mut rng).clone(),
                            values,
                            regions,
                        });
                    }
                }
            }
        }
        3 => {
            let ts = pool.select(3, Language::En, ColorSpace::Hex)?;
            // The first color stays top-left; the other three take every order.
            const PERMS: [[usize; 3]; 6] = [[1, 2, 3], [1, 3, 2], [2, 1, 3], [2, 3, 1], [3, 1, 2], [3, 2, 1]];
            for level in levels {
                let cs = distinct_colors(level, 4, &mut rng);
                for perm in PERMS {
                    let assigned = [cs[0], cs[perm[0]], cs[perm[1]], cs[perm[2]]];
                    let regions = assigned
                        .iter()
                        .enumerate()
                        .map(|(i, &color)| RegionSpec {
                            geometry: RegionGeometry::Quadrant { index: i as u8 },
                            target: ColorTarget::Exact { color },
                        })
                        .collect();
                    let values = BTreeMap::from([
                        ("color_1", format_hex(assigned[0])),
                        ("color_2", format_hex(assigned[1])),
                        ("color_3", format_hex(assigned[2])),
                        ("color_4", format_hex(assigned[3])),
                    ]);
                    drafts.push(Draft {
                        variation: 3,
                        level,
                        language: Language::En,
                        color_space: ColorSpace::Hex,
                        template: pick(&ts, &mut rng).clone(),
                        values,
                        regions,
                    });
                }
            }
        }
        4 => {
            let ts = pool.select(4, Language::En, ColorSpace::Hex)?;
            for level in levels {
                let low = sample_color(level, &mut rng);
                let high = perturb(low, &mut rng);
                drafts.push(Draft {
                    variation: 4,
                    level,
                    language: Language::En,
                    color_space: ColorSpace::Hex,
                    template: pick(&ts, &mut rng).clone(),
                    values: BTreeMap::from([("low", format_hex(low)), ("high", format_hex(high))]),
                    regions: vec![RegionSpec {
                        geometry: RegionGeometry::Full,
                        target: ColorTarget::Range { low, high },
                    }],
                });
            }
        }
        5 | 6 => {
            let variants: [(Language, ColorSpace); 2] = if variation == 5 {
                [(Language::Zh, ColorSpace::Hex), (Language::Fr, ColorSpace::Hex)]
            } else {
                [(Language::En, ColorSpace::Rgb), (Language::En, ColorSpace::Hsl)]
            };
            let pools = [
                pool.select(variation, variants[0].0, variants[0].1)?,
                pool.select(variation, variants[1].0, variants[1].1)?,
            ];
            let colors: Vec<(ColorLevel, Rgb8)> = levels.into_iter().map(|l| (l, sample_color(l, &mut rng))).collect();
            for ((language, space), ts) in variants.into_iter().zip(&pools) {
                for &(level, c) in &colors {
                    let t = pick(ts, &mut rng);
                    drafts.push(single_draft(variation, level, language, space, c, t));
                }
            }
        }
        _ => unreachable!("variations are 1..=6"),
    }
    Ok(drafts)
}

/// The deterministic manifest for `cfg`, without touching the filesystem.
pub fn plan_dataset(cfg: &GenConfig, pool: &TemplatePool) -> Result<Vec<SampleManifestEntry>, GenError> {
    cfg.validate()?;
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for variation in VARIATIONS {
        for (index, d) in plan_variation(variation, cfg, pool)?.into_iter().enumerate() {
            let prompt = d.template.render(&d.values)?;
            let id = format!("v{}-{:05}-{}", d.variation, index, short_hash(&prompt, &d.regions));
            if !ids.insert(id.clone()) {
                return Err(ManifestError::DuplicateId(id).into());
            }
            let gt_is_midpoint = d.regions.iter().any(|r| matches!(r.target, ColorTarget::Range { .. }));
            out.push(SampleManifestEntry {
                gt_path: format!("gt/{id}.png"),
                id,
                variation: d.variation,
                level: d.level,
                language: d.language,
                color_space: d.color_space,
                template_id: d.template.id,
                prompt,
                resolution: cfg.resolution,
                regions: d.regions,
                gt_is_midpoint,
                split: None,
                generalization: BTreeMap::new(),
                warnings: Vec::new(),
            });
        }
    }
    Ok(out)
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Plans the dataset with the bundled templates, writes the manifest and,
/// unless disabled, one lossless PNG per sample under `gt/`.
pub fn generate_dataset(cfg: &GenConfig) -> Result<GenSummary, GenError> {
    generate_with_pool(cfg, TemplatePool::bundled())
}

pub fn generate_with_pool(cfg: &GenConfig, pool: &TemplatePool) -> Result<GenSummary, GenError> {
    let entries = plan_dataset(cfg, pool)?;
    let root = &cfg.out_dir;
    let manifest_path = root.join(MANIFEST_FILE);
    let gt_dir = root.join("gt");
    if !cfg.overwrite {
        if manifest_path.exists() {
            return Err(GenError::Collision(manifest_path));
        }
        if gt_dir.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false) {
            return Err(GenError::Collision(gt_dir));
        }
    }
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|e| GenError::Write {
            path: p.to_path_buf(),
            message: e.to_string(),
        })
    };
    mkdir(root)?;
    let mut images_written = 0;
    if cfg.write_images {
        mkdir(&gt_dir)?;
        entries.par_iter().try_for_each(|e| -> Result<(), GenError> {
            let img = render_ground_truth(&e.regions, e.resolution)?;
            let path = root.join(&e.gt_path);
            img.save_with_format(&path, ImageFormat::Png)
                .map_err(|err| GenError::Write {
                    path: path.clone(),
                    message: err.to_string(),
                })
        })?;
        images_written = entries.len();
    }
    write_manifest(&manifest_path, &entries)?;
    let mut counts = [0usize; 6];
    for e in &entries {
        counts[usize::from(e.variation - 1)] += 1;
    }
    Ok(GenSummary {
        manifest_path,
        counts,
        total: entries.len(),
        images_written,
    })
}

// ---------------------------------------------------------------------------
// Splits

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("ratio {0} must lie strictly between 0 and 1")]
    Ratio(f64),
    #[error("unknown split strategy {0:?}")]
    UnknownStrategy(String),
    #[error("sample {0} is not a single exact color; hue and prompt splits need single-color samples")]
    NotSingleColor(String),
}

pub const SMALL_STRATUM_WARNING: &str = "stratum-too-small";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SplitSummary {
    pub train: usize,
    pub test: usize,
    /// Samples forced into train because their stratum was too small.
    pub warned: usize,
}

/// Stratum of a sample for the stratified split.
pub type StratumKey = (u8, ColorLevel, Language, ColorSpace);

pub fn stratum_of(e: &SampleManifestEntry) -> StratumKey {
    (e.variation, e.level, e.language, e.color_space)
}

fn stream_of(label: &str) -> u64 {
    let d = Sha256::digest(label.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
}

/// Number of training samples for a stratum of `n` at `ratio`.
pub fn train_quota(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio) + 0.5).floor() as usize
}

/// Tags every entry train or test, per stratum, `round(n·ratio)` to train.
/// The result does not depend on manifest order.
pub fn stratified_split(
    entries: &mut [SampleManifestEntry],
    ratio: f64,
    seed: u64,
) -> Result<SplitSummary, SplitError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(SplitError::Ratio(ratio));
    }
    let mut strata: BTreeMap<StratumKey, Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        strata.entry(stratum_of(e)).or_default().push(i);
    }
    let mut summary = SplitSummary::default();
    for (key, mut idx) in strata {
        if idx.len() < 2 {
            for &i in &idx {
                entries[i].split = Some(SplitTag::Train);
                if !entries[i].warnings.iter().any(|w| w == SMALL_STRATUM_WARNING) {
                    entries[i].warnings.push(SMALL_STRATUM_WARNING.to_string());
                }
                summary.train += 1;
                summary.warned += 1;
            }
            continue;
        }
        idx.sort_by(|&a, &b| entries[a].id.cmp(&entries[b].id));
        let label = format!("{}/{}/{}/{}", key.0, key.1.number(), key.2, key.3);
        let mut rng = rng_for(seed, stream_of(&label));
        idx.shuffle(&mut rng);
        let n_train = train_quota(idx.len(), ratio);
        for (k, &i) in idx.iter().enumerate() {
            let tag = if k < n_train { SplitTag::Train } else { SplitTag::Test };
            entries[i].split = Some(tag);
            match tag {
                SplitTag::Train => summary.train += 1,
                SplitTag::Test => summary.test += 1,
            }
        }
    }
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GeneralizationStrategy {
    /// Hold out a random fraction of template ids.
    Prompt { holdout: f64 },
    /// Test on hue [280, 320).
    Hue1,
    /// Train on hue [0, 60) ∪ [120, 180) ∪ [240, 300), test on the rest.
    Hue2,
}

pub const DEFAULT_PROMPT_HOLDOUT: f64 = 0.2;

impl GeneralizationStrategy {
    pub fn name(self) -> &'static str {
        match self {
            GeneralizationStrategy::Prompt { .. } => "prompt",
            GeneralizationStrategy::Hue1 => "hue1",
            GeneralizationStrategy::Hue2 => "hue2",
        }
    }
}

impl FromStr for GeneralizationStrategy {
    type Err = SplitError;

    fn from_str(s: &str) -> Result<Self, SplitError> {
        match s {
            "prompt" => Ok(GeneralizationStrategy::Prompt {
                holdout: DEFAULT_PROMPT_HOLDOUT,
            }),
            "hue1" => Ok(GeneralizationStrategy::Hue1),
            "hue2" => Ok(GeneralizationStrategy::Hue2),
            other => Err(SplitError::UnknownStrategy(other.to_string())),
        }
    }
}

fn in_band(h: f64, lo: f64, hi: f64) -> bool {
    h >= lo && h < hi
}

/// Split side of a target hue under a hue strategy. Achromatic colors
/// carry hue 0.
pub fn hue_tag(strategy: GeneralizationStrategy, hue: f64) -> SplitTag {
    let test = match strategy {
        GeneralizationStrategy::Hue1 => in_band(hue, 280.0, 320.0),
        GeneralizationStrategy::Hue2 => {
            !(in_band(hue, 0.0, 60.0) || in_band(hue, 120.0, 180.0) || in_band(hue, 240.0, 300.0))
        }
        GeneralizationStrategy::Prompt { .. } => false,
    };
    if test {
        SplitTag::Test
    } else {
        SplitTag::Train
    }
}

/// Whether a sample qualifies for the generalization splits.
pub fn is_single_color(e: &SampleManifestEntry) -> bool {
    e.single_color().is_some()
}

/// Records train/test membership under `strategy.name()` in each entry's
/// `generalization` map. Every entry must be a single exact color.
pub fn generalization_split(
    entries: &mut [SampleManifestEntry],
    strategy: GeneralizationStrategy,
    seed: u64,
) -> Result<SplitSummary, SplitError> {
    if let Some(bad) = entries.iter().find(|e| !is_single_color(e)) {
        return Err(SplitError::NotSingleColor(bad.id.clone()));
    }
    let held_out: BTreeSet<String> = match strategy {
        GeneralizationStrategy::Prompt { holdout } => {
            if !(holdout > 0.0 && holdout < 1.0) {
                return Err(SplitError::Ratio(holdout));
            }
            let mut ids: Vec<String> = entries
                .iter()
                .map(|e| e.template_id.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let mut rng = rng_for(seed, stream_of("prompt"));
            ids.shuffle(&mut rng);
            let n = ids.len();
            let k = ((n as f64 * holdout + 0.5).floor() as usize).clamp(usize::from(n > 1), n.saturating_sub(1));
            ids.truncate(k);
            ids.into_iter().collect()
        }
        _ => BTreeSet::new(),
    };
    let mut summary = SplitSummary::default();
    for e in entries.iter_mut() {
        let tag = match strategy {
            GeneralizationStrategy::Prompt { .. } => {
                if held_out.contains(&e.template_id) {
                    SplitTag::Test
                } else {
                    SplitTag::Train
                }
            }
            _ => hue_tag(strategy, rgb_to_hsl(e.single_color().expect("checked above")).h),
        };
        e.generalization.insert(strategy.name().to_string(), tag);
        match tag {
            SplitTag::Train => summary.train += 1,
            SplitTag::Test => summary.test += 1,
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> GenConfig {
        GenConfig {
            base_counts: [30, 12, 9, 15, 10, 10],
            write_images: false,
            ..GenConfig::default()
        }
    }

    #[test]
    fn format_color_examples() {
        let c = Rgb8::new(217, 180, 81);
        assert_eq!(format_color(c, ColorSpace::Rgb), "rgb(217, 180, 81)");
        assert_eq!(format_color(c, ColorSpace::Hex), "#D9B451");
        assert_eq!(format_color(Rgb8::BLACK, ColorSpace::Hex), "#000000");
        assert_eq!(format_color(Rgb8::new(255, 0, 0), ColorSpace::Hsl), "hsl(0, 100%, 50%)");
        assert_eq!(format_color(Rgb8::new(255, 0, 1), ColorSpace::Hsl), "hsl(0, 100%, 50%)");
    }

    #[test]
    fn bundled_pool_sizes_and_examples() {
        let pool = TemplatePool::bundled();
        assert_eq!(pool.templates().len(), 100);
        for (v, n) in VARIATIONS.into_iter().zip(TEMPLATE_COUNTS) {
            assert_eq!(pool.for_variation(v).count(), n);
        }
        let v1 = pool.templates().iter().find(|t| t.id == "v1-t01").unwrap();
        let text = v1.render(&BTreeMap::from([("color", "#D9B451".to_string())])).unwrap();
        assert_eq!(text, "Generate an image with pure color #D9B451 (Hex code).");
        let zh = pool.templates().iter().find(|t| t.id == "v5-t01").unwrap();
        let text = zh.render(&BTreeMap::from([("color", "#D9B451".to_string())])).unwrap();
        assert_eq!(text, "生成一张颜色为 #D9B451（十六进制代码）的纯色图像。");
    }

    #[test]
    fn template_validation_rejects_wrong_arity() {
        let bad = "x\t1\ten\thex\tPaint {color_1} please\n";
        assert!(matches!(
            TemplatePool::parse(bad),
            Err(TemplateError::Placeholders { .. })
        ));
        let missing = "x\t4\ten\thex\tBetween {low} and something\n";
        assert!(matches!(
            TemplatePool::parse(missing),
            Err(TemplateError::Placeholders { .. })
        ));
        let unclosed = "x\t1\ten\thex\tPaint {color\n";
        assert!(matches!(
            TemplatePool::parse(unclosed),
            Err(TemplateError::Placeholders { .. })
        ));
        let lang = "x\t1\tde\thex\tMale {color}\n";
        assert!(matches!(TemplatePool::parse(lang), Err(TemplateError::Field { .. })));
        let dup = "x\t1\ten\thex\t{color}\nx\t1\ten\thex\t{color}\n";
        assert!(matches!(
            TemplatePool::parse(dup),
            Err(TemplateError::Duplicate { line: 2, .. })
        ));
        let small = TemplatePool::parse("x\t1\ten\thex\t{color}\n").unwrap();
        assert!(matches!(
            small.check_sizes(),
            Err(TemplateError::PoolSize { variation: 1, .. })
        ));
    }

    #[test]
    fn render_full_and_split() {
        let c = Rgb8::new(0xD9, 0xB4, 0x51);
        let img = render_ground_truth(&[RegionSpec::full(c)], 256).unwrap();
        assert_eq!(img.pixels().len(), 65_536);
        assert!(img.pixels().all(|p| p.0 == [217, 180, 81]));

        let (a, b) = (Rgb8::new(171, 18, 19), Rgb8::BLACK);
        let g = |side| RegionGeometry::HorizontalSplit {
            left_fraction: 0.315,
            side,
        };
        let regions = [
            RegionSpec {
                geometry: g(HSide::Left),
                target: ColorTarget::Exact { color: a },
            },
            RegionSpec {
                geometry: g(HSide::Right),
                target: ColorTarget::Exact { color: b },
            },
        ];
        let img = render_ground_truth(&regions, 256).unwrap();
        for y in [0, 100, 255] {
            assert_eq!(img.get_pixel(80, y).0, a.channels());
            assert_eq!(img.get_pixel(81, y).0, b.channels());
        }
    }

    #[test]
    fn render_quadrants_and_untiled() {
        let cs = [
            Rgb8::new(1, 2, 3),
            Rgb8::new(4, 5, 6),
            Rgb8::new(7, 8, 9),
            Rgb8::new(10, 11, 12),
        ];
        let regions: Vec<_> = (0..4)
            .map(|i| RegionSpec {
                geometry: RegionGeometry::Quadrant { index: i as u8 },
                target: ColorTarget::Exact { color: cs[i] },
            })
            .collect();
        let img = render_ground_truth(&regions, 256).unwrap();
        for (i, (x0, y0)) in [(0, 0), (128, 0), (0, 128), (128, 128)].into_iter().enumerate() {
            for y in y0..y0 + 128 {
                for x in x0..x0 + 128 {
                    assert_eq!(img.get_pixel(x, y).0, cs[i].channels());
                }
            }
        }
        assert!(render_ground_truth(&regions[..3], 256).is_err());
    }

    #[test]
    fn plan_counts_ids_and_determinism() {
        let cfg = small_cfg();
        let pool = TemplatePool::bundled();
        let a = plan_dataset(&cfg, pool).unwrap();
        let b = plan_dataset(&cfg, pool).unwrap();
        assert_eq!(manifest_to_string(&a), manifest_to_string(&b));
        let mut counts = [0; 6];
        for e in &a {
            counts[usize::from(e.variation - 1)] += 1;
        }
        assert_eq!(counts, cfg.expected_counts());
        let ids: BTreeSet<_> = a.iter().map(|e| &e.id).collect();
        assert_eq!(ids.len(), a.len());
        let other = plan_dataset(&GenConfig { seed: 8, ..cfg }, pool).unwrap();
        assert_ne!(manifest_to_string(&a), manifest_to_string(&other));
    }

    #[test]
    fn regions_match_variation() {
        for e in plan_dataset(&small_cfg(), TemplatePool::bundled()).unwrap() {
            let n = e.regions.len();
            match e.variation {
                1 | 5 | 6 => assert!(e.single_color().is_some()),
                2 => assert_eq!(n, 2),
                3 => assert_eq!(n, 4),
                4 => {
                    assert!(e.gt_is_midpoint);
                    assert!(matches!(e.regions[0].target, ColorTarget::Range { low, high } if low != high));
                }
                _ => unreachable!(),
            }
            assert!(tile(&e.regions, e.resolution, e.resolution).is_ok());
            let t = TemplatePool::bundled()
                .templates()
                .iter()
                .find(|t| t.id == e.template_id)
                .unwrap();
            assert_eq!(
                (t.variation, t.language, t.color_space),
                (e.variation, e.language, e.color_space)
            );
        }
    }

    #[test]
    fn var3_uses_six_distinct_assignments() {
        let cfg = GenConfig {
            base_counts: [0, 0, 1, 0, 0, 0],
            ..small_cfg()
        };
        let plan = plan_dataset(&cfg, TemplatePool::bundled()).unwrap();
        assert_eq!(plan.len(), 6);
        let layouts: BTreeSet<String> = plan
            .iter()
            .map(|e| serde_json::to_string(&e.regions).unwrap())
            .collect();
        assert_eq!(layouts.len(), 6);
    }

    #[test]
    fn level_mix_is_apportioned_exactly() {
        let mut rng = rng_for(1, 1);
        let levels = level_plan(10, [1.0, 1.0, 1.0], &mut rng);
        let count = |l| levels.iter().filter(|&&x| x == l).count();
        assert_eq!(
            (count(ColorLevel::L1), count(ColorLevel::L2), count(ColorLevel::L3)),
            (4, 3, 3)
        );
        let only3 = level_plan(7, [0.0, 0.0, 2.0], &mut rng);
        assert!(only3.iter().all(|&l| l == ColorLevel::L3));
    }

    #[test]
    fn stratified_split_quota_and_errors() {
        let mut m = plan_dataset(&small_cfg(), TemplatePool::bundled()).unwrap();
        assert_eq!(stratified_split(&mut m, 1.0, 0), Err(SplitError::Ratio(1.0)));
        assert_eq!(stratified_split(&mut m, 0.0, 0), Err(SplitError::Ratio(0.0)));
        let s = stratified_split(&mut m, 0.8, 3).unwrap();
        assert_eq!(s.train + s.test, m.len());
        let mut per: BTreeMap<StratumKey, (usize, usize)> = BTreeMap::new();
        for e in &m {
            let slot = per.entry(stratum_of(e)).or_default();
            match e.split.unwrap() {
                SplitTag::Train => slot.0 += 1,
                SplitTag::Test => slot.1 += 1,
            }
        }
        for (train, test) in per.values() {
            let n = train + test;
            if n >= 2 {
                assert!((*train as f64 - 0.8 * n as f64).abs() <= 1.0);
            }
        }
        let mut again = plan_dataset(&small_cfg(), TemplatePool::bundled()).unwrap();
        again.reverse();
        stratified_split(&mut again, 0.8, 3).unwrap();
        again.reverse();
        assert_eq!(manifest_to_string(&m), manifest_to_string(&again));
    }

    #[test]
    fn tiny_stratum_goes_to_train_with_warning() {
        let cfg = GenConfig {
            base_counts: [1, 0, 0, 0, 0, 0],
            ..small_cfg()
        };
        let mut m = plan_dataset(&cfg, TemplatePool::bundled()).unwrap();
        let s = stratified_split(&mut m, 0.8, 0).unwrap();
        assert_eq!(
            s,
            SplitSummary {
                train: 1,
                test: 0,
                warned: 1
            }
        );
        assert_eq!(m[0].warnings, vec![SMALL_STRATUM_WARNING.to_string()]);
    }

    #[test]
    fn hue_bands() {
        assert_eq!(hue_tag(GeneralizationStrategy::Hue1, 300.0), SplitTag::Test);
        assert_eq!(hue_tag(GeneralizationStrategy::Hue1, 100.0), SplitTag::Train);
        assert_eq!(hue_tag(GeneralizationStrategy::Hue1, 280.0), SplitTag::Test);
        assert_eq!(hue_tag(GeneralizationStrategy::Hue1, 320.0), SplitTag::Train);
        assert_eq!(hue_tag(GeneralizationStrategy::Hue2, 90.0), SplitTag::Test);
        assert_eq!(hue_tag(GeneralizationStrategy::Hue2, 30.0), SplitTag::Train);
        assert_eq!(hue_tag(GeneralizationStrategy::Hue2, 300.0), SplitTag::Test);
        assert_eq!(hue_tag(GeneralizationStrategy::Hue2, 299.9), SplitTag::Train);
        assert!(matches!(
            "hue3".parse::<GeneralizationStrategy>(),
            Err(SplitError::UnknownStrategy(_))
        ));
    }

    #[test]
    fn generalization_split_prompt_and_precondition() {
        let mut m = plan_dataset(&small_cfg(), TemplatePool::bundled()).unwrap();
        assert!(matches!(
            generalization_split(&mut m, GeneralizationStrategy::Hue1, 0),
            Err(SplitError::NotSingleColor(_))
        ));
        let mut v1: Vec<_> = m.into_iter().filter(|e| e.variation == 1).collect();
        generalization_split(&mut v1, GeneralizationStrategy::Prompt { holdout: 0.2 }, 5).unwrap();
        let test_ids: BTreeSet<_> = v1
            .iter()
            .filter(|e| e.generalization["prompt"] == SplitTag::Test)
            .map(|e| e.template_id.clone())
            .collect();
        let train_ids: BTreeSet<_> = v1
            .iter()
            .filter(|e| e.generalization["prompt"] == SplitTag::Train)
            .map(|e| e.template_id.clone())
            .collect();
        assert!(test_ids.is_disjoint(&train_ids));
        assert!(!test_ids.is_empty());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut m = plan_dataset(&small_cfg(), TemplatePool::bundled()).unwrap();
        stratified_split(&mut m, 0.8, 1).unwrap();
        write_manifest(&path, &m).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);
    }
}
