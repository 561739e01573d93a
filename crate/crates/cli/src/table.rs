//! Plain aligned columns for terminal output.

use serde_json::Value;

/// Renders rows under a header, columns padded to their widest cell and
/// separated by two spaces. Trailing padding is trimmed.
pub fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut s = String::new();
        for (i, cell) in cells.enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            s.push_str(cell);
            let pad = widths[i].saturating_sub(cell.chars().count());
            s.extend(std::iter::repeat_n(' ', pad));
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(&mut header.iter().copied());
    for row in rows {
        line(&mut row.iter().map(String::as_str));
    }
    out
}

/// Key/value listing for a single object.
pub fn fields(pairs: &[(&str, String)]) -> String {
    let width = pairs.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    pairs
        .iter()
        .map(|(k, v)| format!("{k:<width$}  {v}\n"))
        .collect()
}

/// A JSON value as a table cell: strings unquoted, null as `-`.
pub fn cell(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(cell).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

/// Fixed-precision number cell for scores and statistics.
pub fn num(v: &Value) -> String {
    v.as_f64().map_or_else(|| cell(v), |x| format!("{x:.4}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn columns_align_on_the_widest_cell() {
        let out = render(
            &["KEY", "SCORE"],
            &[vec!["a".into(), "1.0000".into()], vec!["longer".into(), "0.5000".into()]],
        );
        assert_eq!(out, "KEY     SCORE\na       1.0000\nlonger  0.5000\n");
    }

    #[test]
    fn cells_unquote_strings_and_dash_nulls() {
        assert_eq!(cell(&json!("x")), "x");
        assert_eq!(cell(&Value::Null), "-");
        assert_eq!(cell(&json!([1, "b"])), "1,b");
        assert_eq!(num(&json!(0.123456)), "0.1235");
    }
}
