//! Columnar text files.
//!
//! ```text
//! # optional comment lines
//! # freq(GHz), r2(1), phase(rad)
//! 7.835000000000e0, 9.912345678901e-1, 1.234000000000e-2
//! ```
//!
//! The header is the first comment line whose every comma-separated item has
//! the form `name(unit)`. Numbers are written with `{:.12e}`, which does not
//! depend on locale.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

impl Column {
    pub fn new(name: &str, unit: &str) -> Self {
        Self {
            name: name.to_string(),
            unit: unit.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub comments: Vec<String>,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[(&str, &str)]) -> Self {
        Self {
            comments: Vec::new(),
            columns: columns.iter().map(|(n, u)| Column::new(n, u)).collect(),
            rows: Vec::new(),
        }
    }

    pub fn comment(&mut self, text: impl Into<String>) {
        self.comments.push(text.into());
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    /// Index of the first column whose name matches one of `names`.
    pub fn find(&self, names: &[&str]) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| names.iter().any(|n| c.name.eq_ignore_ascii_case(n)))
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[idx]).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            let _ = writeln!(out, "# {c}");
        }
        let header: Vec<String> = self.columns.iter().map(|c| format!("{}({})", c.name, c.unit)).collect();
        let _ = writeln!(out, "# {}", header.join(", "));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
            let _ = writeln!(out, "{}", cells.join(", "));
        }
        out
    }
}

fn parse_header(line: &str) -> Option<Vec<Column>> {
    let items: Vec<&str> = line.split(',').map(str::trim).collect();
    let mut cols = Vec::with_capacity(items.len());
    for item in items {
        let open = item.find('(')?;
        let unit = item[open + 1..].strip_suffix(')')?;
        let name = item[..open].trim();
        if name.is_empty() || unit.contains('(') {
            return None;
        }
        cols.push(Column::new(name, unit.trim()));
    }
    Some(cols)
}

/// Reads a table; `source` names the file in error messages.
pub fn parse_table(text: &str, source: &str) -> Result<Table, String> {
    let mut table = Table::default();
    let mut have_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(body) = line.strip_prefix('#') {
            let body = body.trim();
            if !have_header {
                if let Some(cols) = parse_header(body) {
                    table.columns = cols;
                    have_header = true;
                    continue;
                }
                table.comments.push(body.to_string());
            }
            continue;
        }
        if !have_header {
            return Err(format!(
                "{source}:{line_no}: data before header; expected a `# name(unit), ...` line first"
            ));
        }
        let row = line
            .split(',')
            .enumerate()
            .map(|(col, cell)| {
                let cell = cell.trim();
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format!("{source}:{line_no}: column {}: `{cell}` is not a finite number", col + 1))
            })
            .collect::<Result<Vec<f64>, String>>()?;
        if row.len() != table.columns.len() {
            return Err(format!(
                "{source}:{line_no}: {} values but the header has {} columns",
                row.len(),
                table.columns.len()
            ));
        }
        table.rows.push(row);
    }
    if !have_header {
        return Err(format!("{source}: no `# name(unit), ...` header line"));
    }
    if table.rows.is_empty() {
        return Err(format!("{source}: no data rows"));
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut t = Table::new(&[("freq", "GHz"), ("r2", "1")]);
        t.comment("bias: 281 mT");
        t.push(vec![7.875, 0.5]);
        t.push(vec![7.876, 1.0 / 3.0]);
        let text = t.render();
        assert!(text.starts_with("# bias: 281 mT\n# freq(GHz), r2(1)\n7.875000000000e0, 5.000000000000e-1\n"));
        let back = parse_table(&text, "t.csv").unwrap();
        assert_eq!(back.columns, t.columns);
        assert_eq!(back.comments, t.comments);
        assert_eq!(back.rows[0], t.rows[0]);
        assert!((back.rows[1][1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn errors_point_at_lines() {
        let e = parse_table("1, 2\n", "d.csv").unwrap_err();
        assert!(e.starts_with("d.csv:1:"), "{e}");
        let e = parse_table("# a(1), b(1)\n1, 2\n1, x\n", "d.csv").unwrap_err();
        assert!(e.starts_with("d.csv:3: column 2"), "{e}");
        let e = parse_table("# a(1), b(1)\n1, 2, 3\n", "d.csv").unwrap_err();
        assert!(e.starts_with("d.csv:2:"), "{e}");
        let e = parse_table("# a(1), b(1)\n", "d.csv").unwrap_err();
        assert!(e.contains("no data rows"));
        let e = parse_table("# a(1), b(1)\n1, nan\n", "d.csv").unwrap_err();
        assert!(e.contains("finite"));
    }

    #[test]
    fn comment_lines_before_header_are_kept() {
        let t = parse_table("# note: x = 3\n# t(ns), energy(1)\n# trailing\n0, 1\n", "d").unwrap();
        assert_eq!(t.comments, vec!["note: x = 3"]);
        assert_eq!(t.find(&["energy"]), Some(1));
    }
}
