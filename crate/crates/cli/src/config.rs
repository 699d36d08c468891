//! `--config` file: a `[tracker]` table with any `TrackerConfig` field and an
//! optional `[folding]` table.
//!
//! ```toml
//! [tracker]
//! num_scales = 3
//! window_influence = 0.2
//!
//! [folding]
//! name = "custom"
//! clock_hz = 1.5e8
//! folds = [
//!   { pe = 32, simd = 3 }, { pe = 32, simd = 16 }, { pe = 16, simd = 16 },
//!   { pe = 8, simd = 16 }, { pe = 8, simd = 16 }, { pe = 8, simd = 8 },
//! ]
//! ```

use std::path::Path;

use serde::Deserialize;

use qsiam_core::perfmodel::Fold;
use qsiam_core::tracker::TrackerConfig;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub tracker: TrackerConfig,
    pub folding: Option<FoldingSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldingSection {
    #[serde(default = "default_name")]
    pub name: String,
    pub folds: Vec<Fold>,
    pub clock_hz: Option<f64>,
}

fn default_name() -> String {
    "config".into()
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
