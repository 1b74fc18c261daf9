//! Flat `key = value` configuration files. Keys are the long flag names
//! without the leading dashes; `#` starts a comment.

use std::collections::BTreeMap;

use crate::error::{BenchError, Result};

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| BenchError::Usage(format!("config line {}: expected key = value", n + 1)))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(BenchError::Usage(format!("config line {}: empty key", n + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_spacing() {
        let c = parse_config("# header\nchannels = 5\n  snr_db=0,10 # trailing\n\n").unwrap();
        assert_eq!(c["channels"], "5");
        assert_eq!(c["snr-db"], "0,10");
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(matches!(parse_config("channels 5"), Err(BenchError::Usage(_))));
    }
}
