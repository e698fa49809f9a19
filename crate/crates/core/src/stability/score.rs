//! Benchmark score normalization: raw returns mapped onto `[0, 1]` anchors
//! via `(J - scale_min) / (scale_max - scale_min)`, not clipped.
//!
//! The anchor table ships with the crate as a versioned data file. The
//! `2ant` / `3hopper` / `6halfcheetah` rows carry the published benchmark
//! constants; the `spread` row anchors the desk-scale coverage environment
//! between a uniform-random policy (0) and the scripted expert (1), each
//! measured over 500 fixed-seed episodes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Real;

pub const SCORE_SCALE_VERSION: u32 = 1;

const BUILTIN_TABLE: &str = include_str!("../../data/score_scales.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleEntry {
    pub scale_min: Real,
    pub scale_max: Real,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreScale {
    pub format_version: u32,
    pub scales: BTreeMap<String, ScaleEntry>,
}

impl ScoreScale {
    /// The table compiled into the crate.
    pub fn builtin() -> ScoreScale {
        let table: ScoreScale =
            serde_json::from_str(BUILTIN_TABLE).expect("embedded score table is valid");
        table.validate().expect("embedded score table is consistent");
        table
    }

    /// Load an alternative table from disk (same format and version).
    pub fn load(path: impl AsRef<Path>) -> Result<ScoreScale> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let table: ScoreScale =
            serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != SCORE_SCALE_VERSION {
            return Err(Error::config(format!(
                "score table version {} unsupported (expected {})",
                self.format_version, SCORE_SCALE_VERSION
            )));
        }
        for (key, entry) in &self.scales {
            if !(entry.scale_max > entry.scale_min) {
                return Err(Error::config(format!(
                    "score scale '{key}' needs scale_max > scale_min, got [{}, {}]",
                    entry.scale_min, entry.scale_max
                )));
            }
        }
        Ok(())
    }

    /// Affine normalized score; unclipped, so values outside `[0, 1]` report
    /// returns beyond the anchors.
    pub fn normalized_score(&self, key: &str, raw_return: Real) -> Result<Real> {
        let entry = self.scales.get(key).ok_or_else(|| {
            Error::config(format!(
                "unknown score key '{key}' (known: {})",
                self.scales.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })?;
        Ok((raw_return - entry.scale_min) / (entry.scale_max - entry.scale_min))
    }
}

/// [`ScoreScale::normalized_score`] against the built-in table.
pub fn normalized_score(key: &str, raw_return: Real) -> Result<Real> {
    ScoreScale::builtin().normalized_score(key, raw_return)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_anchor_evaluations() {
        assert_eq!(normalized_score("2ant", 2124.15).unwrap(), 1.0);
        assert_eq!(normalized_score("2ant", 895.37).unwrap(), 0.0);
        // the decimal constants are not exactly representable; the midpoint
        // ratio lands within one ulp of 1/2
        let mid = normalized_score("2ant", 1509.76).unwrap();
        assert!((mid - 0.5).abs() <= f64::EPSILON, "midpoint {mid}");
        assert_eq!(normalized_score("3hopper", 3762.68).unwrap(), 1.0);
        assert_eq!(normalized_score("6halfcheetah", -198.76).unwrap(), 0.0);
    }

    #[test]
    fn spread_anchors_and_unclipped_tails() {
        assert_eq!(normalized_score("spread", -9.02).unwrap(), 0.0);
        assert_eq!(normalized_score("spread", -0.99).unwrap(), 1.0);
        assert!(normalized_score("spread", -12.0).unwrap() < 0.0);
        assert!(normalized_score("spread", 0.0).unwrap() > 1.0);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let err = normalized_score("9walker", 0.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn table_validation_rejects_bad_entries() {
        let mut table = ScoreScale::builtin();
        table.scales.insert(
            "broken".into(),
            ScaleEntry { scale_min: 1.0, scale_max: 1.0 },
        );
        assert!(table.validate().is_err());
        let mut table = ScoreScale::builtin();
        table.format_version = 99;
        assert!(table.validate().is_err());
    }

    #[test]
    fn load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scales.json");
        std::fs::write(&path, serde_json::to_string(&ScoreScale::builtin()).unwrap()).unwrap();
        let loaded = ScoreScale::load(&path).unwrap();
        assert_eq!(loaded.scales["2ant"].scale_min, 895.37);
        assert!(ScoreScale::load(dir.path().join("missing.json")).is_err());
    }
}
