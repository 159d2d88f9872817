//! `key = value` configuration files.
//!
//! Keys are exactly the field names of [`ModelConfig`] and [`TrainConfig`].
//! A key may carry a `parent.` prefix, which the experiment runner applies to
//! the parent's training run. Lines starting with `#` are comments.

use std::path::Path;

use recycle_core::nmt::{ModelConfig, TrainConfig};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::read_text;

#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub key: String,
    pub value: String,
    /// `file:line` or `--set`, for error messages.
    pub origin: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings(pub Vec<Setting>);

impl Settings {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut out = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let origin = format!("{source}:{}", i + 1);
            out.push(parse_pair(line, origin)?);
        }
        Ok(Settings(out))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, &path.display().to_string())
    }

    /// Appends `key=value` overrides given on the command line.
    pub fn push_overrides<S: AsRef<str>>(&mut self, pairs: &[S]) -> Result<()> {
        for p in pairs {
            self.0.push(parse_pair(p.as_ref(), "--set".into())?);
        }
        Ok(())
    }

    /// Settings without a prefix, or those under `prefix.` with it stripped.
    fn scoped<'a>(&'a self, prefix: Option<&'a str>) -> impl Iterator<Item = (&'a str, &'a Setting)> + 'a {
        self.0.iter().filter_map(move |s| match (prefix, s.key.split_once('.')) {
            (None, None) => Some((s.key.as_str(), s)),
            (Some(p), Some((head, rest))) if head == p => Some((rest, s)),
            _ => None,
        })
    }

    /// Applies matching settings, later ones winning. Every in-scope key
    /// must name a field of one of the two structs.
    pub fn apply(&self, prefix: Option<&str>, model: &mut ModelConfig, train: &mut TrainConfig) -> Result<()> {
        let mut m = serde_json::to_value(&*model).expect("serializes");
        let mut t = serde_json::to_value(&*train).expect("serializes");
        for (key, s) in self.scoped(prefix) {
            let target = if m.get(key).is_some() {
                &mut m
            } else if t.get(key).is_some() {
                &mut t
            } else {
                return Err(Error::usage(format!("{}: unknown key {:?}", s.origin, s.key)));
            };
            let slot = target.get_mut(key).expect("checked");
            *slot = typed(slot, &s.value)
                .ok_or_else(|| Error::usage(format!("{}: bad value {:?} for {}", s.origin, s.value, s.key)))?;
        }
        *model = back(m)?;
        *train = back(t)?;
        model.validate()?;
        train.validate()?;
        Ok(())
    }

    /// Only unprefixed keys of a train config.
    pub fn apply_train(&self, train: &mut TrainConfig) -> Result<()> {
        let mut model = ModelConfig::default();
        self.apply(None, &mut model, train)
    }

    /// Whether any setting lives under `prefix.`.
    pub fn has_scope(&self, prefix: &str) -> bool {
        self.scoped(Some(prefix)).next().is_some()
    }
}

fn parse_pair(line: &str, origin: String) -> Result<Setting> {
    let Some((k, v)) = line.split_once('=') else {
        return Err(Error::usage(format!("{origin}: expected key = value, got {line:?}")));
    };
    let (key, value) = (k.trim(), v.trim());
    if key.is_empty() {
        return Err(Error::usage(format!("{origin}: empty key")));
    }
    Ok(Setting { key: key.to_string(), value: value.to_string(), origin })
}

/// Parses `raw` with the JSON type of the current value.
fn typed(current: &Value, raw: &str) -> Option<Value> {
    match current {
        Value::Bool(_) => raw.parse::<bool>().ok().map(Value::Bool),
        Value::Number(n) if n.is_u64() || n.is_i64() => raw.parse::<u64>().ok().map(Value::from),
        Value::Number(_) => raw.parse::<f64>().ok().filter(|v| v.is_finite()).map(Value::from),
        _ => None,
    }
}

fn back<T: DeserializeOwned + Serialize>(v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::usage(e.to_string()))
}

/// Renders both structs as a config file that [`Settings::parse`] reads back.
pub fn render(model: &ModelConfig, train: &TrainConfig) -> String {
    let mut out = String::new();
    for v in [serde_json::to_value(model), serde_json::to_value(train)] {
        if let Value::Object(map) = v.expect("serializes") {
            for (k, v) in map {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
    }
    out
}
