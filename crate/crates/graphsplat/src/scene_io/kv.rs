//! Line-oriented `key = value` text used by configs and manifests.
//!
//! Grammar: one `key = value` pair per line; `#` starts a comment; blank
//! lines ignored. Keys are bare identifiers, values run to end of line.

use crate::error::{Error, Result};

/// Parses the text into `(line_number, key, value)` triples in file order.
pub fn parse(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(line_no, format!("expected `key = value`, got {raw:?}")))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::parse(line_no, format!("bad key {key:?}")));
        }
        out.push((line_no, key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Formats pairs in the given order, one per line.
pub fn format(pairs: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(v);
        s.push('\n');
    }
    s
}

pub fn parse_scalar<F: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<F> {
    value
        .parse()
        .map_err(|_| Error::parse(line, format!("key {key}: cannot parse value {value:?}")))
}
