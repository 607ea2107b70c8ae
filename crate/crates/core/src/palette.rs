//! ISCC-NBS color categories at three granularity levels.
//!
//! The bundled table lives in `data/iscc_nbs.tsv`, one record per line:
//! `level<TAB>name<TAB>#RRGGBB`. Lines starting with `#` are comments.

use std::collections::HashSet;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::{parse_hex, HexError, Rgb8};

const BUNDLED: &str = include_str!("../data/iscc_nbs.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ColorLevel {
    /// 13 basic categories.
    L1,
    /// 29 intermediate categories.
    L2,
    /// 267 centroid colors.
    L3,
}

impl ColorLevel {
    pub const ALL: [ColorLevel; 3] = [ColorLevel::L1, ColorLevel::L2, ColorLevel::L3];

    pub fn expected_len(self) -> usize {
        match self {
            ColorLevel::L1 => 13,
            ColorLevel::L2 => 29,
            ColorLevel::L3 => 267,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            ColorLevel::L1 => 1,
            ColorLevel::L2 => 2,
            ColorLevel::L3 => 3,
        }
    }
}

impl TryFrom<u8> for ColorLevel {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(ColorLevel::L1),
            2 => Ok(ColorLevel::L2),
            3 => Ok(ColorLevel::L3),
            _ => Err(format!("unknown color level {v}")),
        }
    }
}

impl From<ColorLevel> for u8 {
    fn from(l: ColorLevel) -> u8 {
        l.number()
    }
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("line {line}: expected 3 tab-separated fields")]
    Fields { line: usize },
    #[error("line {line}: bad level {value:?}")]
    Level { line: usize, value: String },
    #[error("line {line}: {source}")]
    Hex { line: usize, source: HexError },
    #[error("line {line}: duplicate entry for level {level} name {name:?}")]
    Duplicate { line: usize, level: u8, name: String },
    #[error("level {level} has {found} entries, expected {expected}")]
    Cardinality { level: u8, found: usize, expected: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorEntry {
    pub level: ColorLevel,
    pub name: String,
    pub color: Rgb8,
}

#[derive(Clone, Debug)]
pub struct ColorTable {
    levels: [Vec<ColorEntry>; 3],
}

impl ColorTable {
    /// The table compiled into the crate.
    pub fn bundled() -> &'static ColorTable {
        static TABLE: OnceLock<ColorTable> = OnceLock::new();
        TABLE.get_or_init(|| ColorTable::parse(BUNDLED).expect("bundled ISCC-NBS table is valid"))
    }

    pub fn parse(text: &str) -> Result<ColorTable, TableError> {
        let mut levels: [Vec<ColorEntry>; 3] = Default::default();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 3 {
                return Err(TableError::Fields { line });
            }
            let level = fields[0]
                .trim()
                .parse::<u8>()
                .ok()
                .and_then(|n| ColorLevel::try_from(n).ok())
                .ok_or_else(|| TableError::Level {
                    line,
                    value: fields[0].to_string(),
                })?;
            let name = fields[1].trim().to_string();
            let color = parse_hex(fields[2].trim()).map_err(|source| TableError::Hex { line, source })?;
            if !seen.insert((level, name.clone())) {
                return Err(TableError::Duplicate {
                    line,
                    level: level.number(),
                    name,
                });
            }
            levels[level as usize].push(ColorEntry { level, name, color });
        }
        for level in ColorLevel::ALL {
            let found = levels[level as usize].len();
            if found != level.expected_len() {
                return Err(TableError::Cardinality {
                    level: level.number(),
                    found,
                    expected: level.expected_len(),
                });
            }
        }
        Ok(ColorTable { levels })
    }

    pub fn entries(&self, level: ColorLevel) -> &[ColorEntry] {
        &self.levels[level as usize]
    }

    /// Uniform draw from the level's centroids.
    pub fn sample<R: Rng + ?Sized>(&self, level: ColorLevel, rng: &mut R) -> &ColorEntry {
        let entries = self.entries(level);
        &entries[rng.random_range(0..entries.len())]
    }
}

/// Draws a centroid color of `level` from the bundled table.
pub fn sample_color<R: Rng + ?Sized>(level: ColorLevel, rng: &mut R) -> Rgb8 {
    ColorTable::bundled().sample(level, rng).color
}
