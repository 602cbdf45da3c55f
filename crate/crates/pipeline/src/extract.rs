//! Defensive JSON extraction from model replies.
//!
//! Replies are supposed to be bare JSON but often arrive wrapped in prose or
//! fenced code blocks. Extraction tries, in order: the whole text, each
//! fenced block, then every brace- or bracket-delimited span found by a
//! string-aware depth scan.

use serde_json::Value;

/// Pulls the first parseable JSON value out of free-form reply text.
pub fn extract_json(text: &str) -> Option<Value> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        return Some(v);
    }
    for block in fenced_blocks(text) {
        if let Ok(v) = serde_json::from_str::<Value>(block.trim()) {
            return Some(v);
        }
    }
    for opener in ['{', '['] {
        let mut rest = text;
        while let Some((span, after)) = delimited_span(rest, opener) {
            if let Ok(v) = serde_json::from_str::<Value>(span) {
                return Some(v);
            }
            rest = after;
        }
    }
    None
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // Skip the info string on the opening fence line.
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                out.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    out
}

/// Next balanced `{...}` or `[...]` span plus the text after it, skipping
/// string contents.
fn delimited_span(text: &str, opener: char) -> Option<(&str, &str)> {
    let closer = if opener == '{' { '}' } else { ']' };
    let start = text.find(opener)?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            c if c == opener => depth += 1,
            c if c == closer => {
                depth -= 1;
                if depth == 0 {
                    let end = start + i + 1;
                    return Some((&text[start..end], &text[end..]));
                }
            }
            _ => {}
        }
    }
    // Unbalanced tail: skip past this opener so callers can stop cleanly.
    Some(("", &text[start + opener.len_utf8()..]))
}

/// Reads an f64 field, accepting integer JSON numbers too.
pub fn number_field(value: &Value, field: &str) -> Option<f64> {
    value.get(field)?.as_f64()
}

/// Reads a string-array field; non-string elements are skipped.
pub fn string_list(value: &Value, field: &str) -> Vec<String> {
    value
        .get(field)
        .and_then(Value::as_array)
        .map(|items| {
            items.iter().filter_map(Value::as_str).map(str::to_string).collect()
        })
        .unwrap_or_default()
}
