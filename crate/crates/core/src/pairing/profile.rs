//! Execution profiles: cumulative time fraction per function.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

/// Functions below this cumulative fraction are considered cold.
pub const HOT_THRESHOLD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileEntry {
    pub function: String,
    pub cumulative_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Profile {
    pub total_weight: f64,
    pub entries: Vec<ProfileEntry>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("cannot read profile {0}: {1}")]
    Io(String, String),
    #[error("malformed profile at {path}: {message}")]
    Malformed { path: String, message: String },
}

fn malformed(path: impl Into<String>, message: impl Into<String>) -> ProfileError {
    ProfileError::Malformed {
        path: path.into(),
        message: message.into(),
    }
}

impl Profile {
    pub fn load(path: &Path) -> Result<Profile, ProfileError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProfileError::Io(path.display().to_string(), e.to_string()))?;
        Profile::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Profile, ProfileError> {
        let v: Value = serde_json::from_str(text).map_err(|e| malformed("$", e.to_string()))?;
        let obj = v.as_object().ok_or_else(|| malformed("$", "expected an object"))?;
        let total_weight = obj
            .get("total_weight")
            .and_then(Value::as_f64)
            .ok_or_else(|| malformed("total_weight", "expected a number"))?;
        if !(total_weight > 0.0) {
            return Err(malformed("total_weight", "must be positive"));
        }
        let list = obj
            .get("entries")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed("entries", "expected an array"))?;
        let mut entries = Vec::new();
        let mut seen = BTreeMap::new();
        for (i, e) in list.iter().enumerate() {
            let at = |f: &str| format!("entries[{i}].{f}");
            let function = e
                .get("function")
                .and_then(Value::as_str)
                .ok_or_else(|| malformed(at("function"), "expected a string"))?
                .to_string();
            let cumulative_fraction = e
                .get("cumulative_fraction")
                .and_then(Value::as_f64)
                .ok_or_else(|| malformed(at("cumulative_fraction"), "expected a number"))?;
            if !(0.0..=1.0).contains(&cumulative_fraction) {
                return Err(malformed(at("cumulative_fraction"), "must lie in [0, 1]"));
            }
            if let Some(j) = seen.insert(function.clone(), i) {
                return Err(malformed(at("function"), format!("duplicate of entries[{j}]")));
            }
            entries.push(ProfileEntry {
                function,
                cumulative_fraction,
            });
        }
        Ok(Profile {
            total_weight,
            entries,
        })
    }

    /// Cumulative fraction of a qualified function name; absent names are 0.
    pub fn fraction(&self, function: &str) -> f64 {
        self.entries
            .iter()
            .find(|e| e.function == function)
            .map_or(0.0, |e| e.cumulative_fraction)
    }

    pub fn is_hot(&self, function: &str) -> bool {
        self.fraction(function) >= HOT_THRESHOLD
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_example_is_valid() {
        let p = Profile::parse(r#"{"total_weight":100,"entries":[{"function":"main.Get","cumulative_fraction":0.3}]}"#)
            .unwrap();
        assert_eq!(p.fraction("main.Get"), 0.3);
        assert!(p.is_hot("main.Get"));
        assert!(!p.is_hot("main.Other"));
    }

    #[test]
    fn threshold_boundary() {
        let p = Profile::parse(
            r#"{"total_weight":1,"entries":[{"function":"a.F","cumulative_fraction":0.009},{"function":"a.G","cumulative_fraction":0.01}]}"#,
        )
        .unwrap();
        assert!(!p.is_hot("a.F"));
        assert!(p.is_hot("a.G"));
    }

    #[test]
    fn fraction_above_one_is_rejected() {
        let e = Profile::parse(r#"{"total_weight":1,"entries":[{"function":"a.F","cumulative_fraction":1.5}]}"#)
            .unwrap_err();
        assert!(matches!(e, ProfileError::Malformed { ref path, .. } if path == "entries[0].cumulative_fraction"));
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let e = Profile::parse(
            r#"{"total_weight":1,"entries":[{"function":"a.F","cumulative_fraction":0.1},{"function":"a.F","cumulative_fraction":0.2}]}"#,
        )
        .unwrap_err();
        assert!(matches!(e, ProfileError::Malformed { ref path, .. } if path == "entries[1].function"));
    }

    #[test]
    fn missing_fields_name_their_path() {
        let e = Profile::parse(r#"{"entries":[]}"#).unwrap_err();
        assert!(matches!(e, ProfileError::Malformed { ref path, .. } if path == "total_weight"));
    }
}
