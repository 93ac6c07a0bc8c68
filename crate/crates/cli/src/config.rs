//! Layer-suite configuration files.
//!
//! Configs are JSON documents:
//!
//! ```json
//! {
//!   "seed": 42,
//!   "iterations": 3,
//!   "tile_M": 14,
//!   "rns": [251, 241, 239],
//!   "range": "data",
//!   "data": { "input": [0, 127], "weights": [-12, 12] },
//!   "layers": [
//!     { "name": "conv3_1", "H": 56, "W": 56, "C": 128, "K": 128, "R": 3, "padding": 1 }
//!   ],
//!   "random": [
//!     { "rns": [4001, 4331], "count": 70, "tiles": [2, 4, 8], "filters": [3, 5] }
//!   ]
//! }
//! ```
//!
//! `range` selects how outputs are proven to fit the dynamic range:
//! `"static"` (int8 worst case), `"data"` (bound from the generated tensors'
//! actual magnitudes) or `{"declared": N}` (trusted, unchecked).

use std::path::Path;

use rns_winograd::LayerSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const VGG16: &str = include_str!("../configs/vgg16.cfg");
pub const VERIFY_DEFAULT: &str = include_str!("../configs/verify.cfg");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(rename = "tile_M", default = "default_tile")]
    pub tile_m: usize,
    #[serde(default = "default_rns")]
    pub rns: Vec<i64>,
    #[serde(default)]
    pub range: RangeMode,
    #[serde(default)]
    pub data: DataRanges,
    #[serde(default)]
    pub layers: Vec<LayerEntry>,
    #[serde(default)]
    pub random: Vec<RandomSuite>,
}

fn default_seed() -> u64 {
    42
}

fn default_iterations() -> usize {
    1
}

fn default_tile() -> usize {
    4
}

fn default_rns() -> Vec<i64> {
    vec![251, 241, 239]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeMode {
    #[default]
    Static,
    Data,
    #[serde(untagged)]
    Declared {
        declared: i64,
    },
}

/// Inclusive value ranges for generated tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataRanges {
    pub input: [i8; 2],
    pub weights: [i8; 2],
}

impl Default for DataRanges {
    fn default() -> Self {
        DataRanges {
            input: [-128, 127],
            weights: [-128, 127],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub name: String,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(default = "one")]
    pub batch: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default = "one")]
    pub stride: usize,
    /// Run only the baseline for this layer.
    #[serde(default)]
    pub fallback: bool,
}

fn one() -> usize {
    1
}

impl LayerEntry {
    pub fn spec(&self, tile_m: usize) -> LayerSpec {
        LayerSpec {
            h: self.h,
            w: self.w,
            c: self.c,
            k: self.k,
            r: self.r,
            batch: self.batch,
            stride: self.stride,
            padding: self.padding,
            tile_m,
        }
    }
}

/// Randomly drawn layer geometries over one RNS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSuite {
    pub rns: Vec<i64>,
    pub count: usize,
    #[serde(default = "default_tiles")]
    pub tiles: Vec<usize>,
    #[serde(default = "default_filters")]
    pub filters: Vec<usize>,
    #[serde(default = "default_channels")]
    pub channels: Vec<usize>,
    #[serde(default = "default_outputs")]
    pub outputs: Vec<usize>,
    /// Inclusive spatial size range.
    #[serde(default = "default_size")]
    pub size: [usize; 2],
}

fn default_tiles() -> Vec<usize> {
    vec![2, 4, 8, 10, 12, 14]
}

fn default_filters() -> Vec<usize> {
    vec![3, 5]
}

fn default_channels() -> Vec<usize> {
    vec![1, 3, 16]
}

fn default_outputs() -> Vec<usize> {
    vec![1, 4]
}

fn default_size() -> [usize; 2] {
    [7, 32]
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, CliError> {
        let cfg: Config =
            serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Usage(format!("config: {msg}")));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        for (name, [lo, hi]) in [("input", self.data.input), ("weights", self.data.weights)] {
            if lo > hi {
                return bad(format!("empty {name} range [{lo}, {hi}]"));
            }
        }
        for l in &self.layers {
            l.spec(self.tile_m)
                .validate()
                .or_else(|e| bad(format!("layer {}: {e}", l.name)))?;
        }
        for (i, s) in self.random.iter().enumerate() {
            let lists = [&s.tiles, &s.filters, &s.channels, &s.outputs];
            if lists.iter().any(|l| l.is_empty() || l.contains(&0))
                || s.size[0] == 0
                || s.size[0] > s.size[1]
            {
                return bad(format!(
                    "random suite {i} has an empty or zero parameter list"
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_parse() {
        let vgg = Config::parse(VGG16).unwrap();
        assert_eq!(vgg.layers.len(), 13);
        assert_eq!(vgg.rns, vec![251, 241, 239]);
        assert_eq!(vgg.tile_m, 14);
        assert!(vgg.layers[0].fallback);
        let v = Config::parse(VERIFY_DEFAULT).unwrap();
        assert!(v.random.iter().map(|s| s.count).sum::<usize>() >= 200);
    }

    #[test]
    fn range_modes() {
        let parse = |s: &str| Config::parse(&format!("{{\"range\": {s}}}")).unwrap().range;
        assert_eq!(parse("\"static\""), RangeMode::Static);
        assert_eq!(parse("\"data\""), RangeMode::Data);
        assert_eq!(
            parse("{\"declared\": 300000}"),
            RangeMode::Declared { declared: 300000 }
        );
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(Config::parse("{\"bogus\": 1}").is_err());
        assert!(Config::parse("{\"iterations\": 0}").is_err());
        assert!(Config::parse(
            "{\"layers\": [{\"name\": \"x\", \"H\": 2, \"W\": 2, \"C\": 1, \"K\": 1, \"R\": 3}]}"
        )
        .is_err());
        assert!(Config::parse("{\"data\": {\"input\": [5, 1], \"weights\": [0, 1]}}").is_err());
        let empty = Config::parse("{}").unwrap();
        assert!(empty.layers.is_empty() && empty.random.is_empty());
    }
}
