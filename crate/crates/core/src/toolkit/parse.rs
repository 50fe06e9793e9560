//! Lenient extraction of structured data from free-form model replies.

use serde_json::Value;

/// Finds the first JSON object in `text`: the whole reply, a fenced block, or
/// the first balanced `{...}` span.
pub fn json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let trimmed = text.trim();
    if let Ok(Value::Object(map)) = serde_json::from_str(trimmed) {
        return Some(map);
    }
    let bytes = trimmed.as_bytes();
    let mut start = 0;
    while let Some(offset) = trimmed[start..].find('{') {
        let open = start + offset;
        if let Some(close) = matching_brace(bytes, open) {
            if let Ok(Value::Object(map)) = serde_json::from_str(&trimmed[open..=close]) {
                return Some(map);
            }
        }
        start = open + 1;
    }
    None
}

/// Index of the `}` closing the `{` at `open`, skipping string literals.
fn matching_brace(bytes: &[u8], open: usize) -> Option<usize> {
    let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Finds the first JSON array of exactly `N` finite numbers.
pub fn number_array<const N: usize>(text: &str) -> Option<[f64; N]> {
    let mut start = 0;
    while let Some(offset) = text[start..].find('[') {
        let open = start + offset;
        if let Some(len) = text[open..].find(']') {
            if let Ok(values) = serde_json::from_str::<Vec<f64>>(&text[open..=open + len]) {
                if let Ok(arr) = <[f64; N]>::try_from(values) {
                    if arr.iter().all(|v| v.is_finite()) {
                        return Some(arr);
                    }
                }
            }
        }
        start = open + 1;
    }
    None
}

/// Lower-cased reply with surrounding quotes, markup and punctuation removed.
pub fn bare_word(text: &str) -> String {
    text.trim()
        .trim_matches(|c: char| c == '`' || c == '"' || c == '\'' || c == '*' || c == '.' || c == '!' || c.is_whitespace())
        .to_lowercase()
}

/// Reads a boolean that may arrive as a JSON bool or a string.
pub fn loose_bool(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim().to_lowercase().as_str() {
            "true" | "yes" => Some(true),
            "false" | "no" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

/// Reads a number that may arrive as a JSON number or a numeric string.
pub fn loose_number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .filter(|x: &f64| x.is_finite())
}

/// First finite number in the text, e.g. the score in "Score: 4.5/5".
pub fn first_number(text: &str) -> Option<f64> {
    let mut current = String::new();
    for c in text.chars().chain(std::iter::once(' ')) {
        if c.is_ascii_digit() || c == '.' || (c == '-' && current.is_empty()) {
            current.push(c);
        } else if !current.is_empty() {
            if let Ok(v) = current.trim_end_matches('.').parse::<f64>() {
                if v.is_finite() {
                    return Some(v);
                }
            }
            current.clear();
        }
    }
    None
}
