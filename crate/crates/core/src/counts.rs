//! Ground-truth count files: CSV rows of `image_id,count`, header optional.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CountsError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} line {line}: expected `image_id,count`, got `{content}`")]
    Malformed {
        path: String,
        line: usize,
        content: String,
    },
}

/// Loads a truth-count file. The first row is treated as a header when its
/// second field does not parse as an integer.
pub fn load_truth_counts(path: &Path) -> Result<BTreeMap<String, u32>, CountsError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| CountsError::Io {
        path: display.clone(),
        source,
    })?;
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let Some((id, count)) = trimmed.split_once(',') else {
            return Err(CountsError::Malformed {
                path: display,
                line,
                content: trimmed.to_string(),
            });
        };
        match count.trim().parse::<u32>() {
            Ok(value) => {
                map.insert(id.trim().to_string(), value);
            }
            Err(_) if line == 1 => continue, // header row
            Err(_) => {
                return Err(CountsError::Malformed {
                    path: display,
                    line,
                    content: trimmed.to_string(),
                });
            }
        }
    }
    Ok(map)
}
