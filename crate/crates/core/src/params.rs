use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Named parameter values. Names are single lowercase letters plus the
/// jump parameters `lambda`, `mu_j` and `sigma_j`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(BTreeMap<String, f64>);

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn set(&mut self, name: impl Into<String>, value: f64) {
        self.0.insert(name.into(), value);
    }

    pub fn with(mut self, name: impl Into<String>, value: f64) -> Self {
        self.set(name, value);
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Values in the order given by `names`; `None` if any is missing.
    pub fn ordered(&self, names: &[String]) -> Option<Vec<f64>> {
        names.iter().map(|n| self.get(n)).collect()
    }

    pub fn from_ordered(names: &[String], values: &[f64]) -> Self {
        Self(names.iter().cloned().zip(values.iter().copied()).collect())
    }
}

impl<S: Into<String>> FromIterator<(S, f64)> for ParamVector {
    fn from_iter<I: IntoIterator<Item = (S, f64)>>(iter: I) -> Self {
        Self(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

impl fmt::Display for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("bad parameter assignment '{0}', expected name=value")]
pub struct ParamParseError(pub String);

/// Parses `a=0.05,b=0.2`.
impl FromStr for ParamVector {
    type Err = ParamParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|part| {
                let (k, v) = part.split_once('=').ok_or_else(|| ParamParseError(part.to_string()))?;
                let v: f64 = v.trim().parse().map_err(|_| ParamParseError(part.to_string()))?;
                Ok((k.trim().to_string(), v))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_assignments() {
        let p: ParamVector = "a=0.05, b=0.2".parse().unwrap();
        assert_eq!(p.get("a"), Some(0.05));
        assert_eq!(p.get("b"), Some(0.2));
        assert!("a0.05".parse::<ParamVector>().is_err());
        assert!("a=x".parse::<ParamVector>().is_err());
    }

    #[test]
    fn ordered_respects_names() {
        let p = ParamVector::new().with("b", 2.0).with("a", 1.0);
        let names = vec!["b".to_string(), "a".to_string()];
        assert_eq!(p.ordered(&names), Some(vec![2.0, 1.0]));
        assert_eq!(p.ordered(&["c".to_string()]), None);
    }
}
