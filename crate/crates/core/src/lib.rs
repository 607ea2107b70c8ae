//! Tooling for the pure-color generation benchmark.
//!
//! * [`color`] and [`palette`]: color spaces and ISCC-NBS centroid tables.
//! * [`precision`] and [`purity`]: the two metric families.
//! * [`region`]: block-wise sample evaluation and fuzzy-range references.
//! * [`dataset`]: prompt templates, ground-truth rendering, manifests, splits.
//! * [`harness`]: image acquisition, batch evaluation, probes and reports.

pub mod color;
pub mod dataset;
pub mod harness;
pub mod palette;
pub mod precision;
pub mod purity;
pub mod region;

pub use color::{format_hex, parse_hex, Hsl, Lab, Lch, Rgb8, RgbReal};
pub use palette::{ColorLevel, ColorTable};
pub use precision::{NormalizationConstants, PrecisionReport, PrecisionValues};
pub use purity::{CannyParams, PurityConfig, PurityReport, PurityValues};
pub use region::{ColorTarget, EvalConfig, Rect, RegionGeometry, RegionSpec, SampleReport};
