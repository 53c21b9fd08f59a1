//! TOML loading with unknown-key detection and line-numbered errors.

use std::path::Path;

use serde::de::DeserializeOwned;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: unknown keys: {}", keys.join(", "))]
    UnknownKeys { path: String, keys: Vec<String> },
}

/// 1-based line and column of byte `offset` in `text`.
pub fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |i| offset - i - 1) + 1;
    (line, column)
}

fn located(path: &str, text: &str, err: &toml::de::Error) -> ConfigError {
    let (line, column) = err.span().map_or((1, 1), |s| line_column(text, s.start));
    ConfigError::Parse {
        path: path.into(),
        line,
        column,
        message: err.message().trim().to_string(),
    }
}

/// Deserialize `text`, rejecting any key the schema does not know.
pub fn parse<T: DeserializeOwned>(path: &str, text: &str) -> Result<T, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| located(path, text, &e))?;
    let mut unknown = Vec::new();
    let value: T = serde_ignored::deserialize(de, |p| unknown.push(p.to_string()))
        .map_err(|e| located(path, text, &e))?;
    if unknown.is_empty() {
        Ok(value)
    } else {
        Err(ConfigError::UnknownKeys {
            path: path.into(),
            keys: unknown,
        })
    }
}

/// File contents together with the parsed value.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<(String, T), ConfigError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: name.clone(),
        source,
    })?;
    let value = parse(&name, &text)?;
    Ok((text, value))
}
