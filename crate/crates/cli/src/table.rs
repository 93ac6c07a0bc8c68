//! Aligned text tables, CSV, and matrix printing.

use std::fmt::Display;

/// Rows of preformatted cells under a header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn widths(&self) -> Vec<usize> {
        self.header
            .iter()
            .enumerate()
            .map(|(i, h)| {
                self.rows
                    .iter()
                    .map(|r| r[i].len())
                    .chain([h.len()])
                    .max()
                    .unwrap()
            })
            .collect()
    }

    /// First column left-aligned, the rest right-aligned.
    pub fn render(&self) -> String {
        let widths = self.widths();
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i == 0 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            parts.join("  ").trim_end().to_string() + "\n"
        };
        let mut s = line(&self.header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        s += &(rule.join("  ") + "\n");
        for r in &self.rows {
            s += &line(r);
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let escape = |c: &String| {
            if c.contains([',', '"', '\n']) {
                format!("\"{}\"", c.replace('"', "\"\""))
            } else {
                c.clone()
            }
        };
        std::iter::once(&self.header)
            .chain(&self.rows)
            .map(|r| r.iter().map(escape).collect::<Vec<_>>().join(",") + "\n")
            .collect()
    }

    /// Reads back what [`Table::to_csv`] wrote.
    pub fn from_csv(text: &str) -> Option<Table> {
        let mut lines = text.lines().map(parse_csv_line);
        let header = lines.next()?;
        let rows: Vec<Vec<String>> = lines.collect();
        rows.iter()
            .all(|r| r.len() == header.len())
            .then_some(Table { header, rows })
    }
}

fn parse_csv_line(line: &str) -> Vec<String> {
    let mut cells = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(ch) = chars.next() {
        match (ch, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => cells.push(std::mem::take(&mut cur)),
            _ => cur.push(ch),
        }
    }
    cells.push(cur);
    cells
}

/// Right-aligned matrix, one row per line, columns padded to a common width.
pub fn matrix_text<T: Display>(rows: &[Vec<T>]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect())
        .collect();
    let w = cells.iter().flatten().map(|c| c.len()).max().unwrap_or(0);
    cells
        .iter()
        .map(|r| {
            let parts: Vec<String> = r.iter().map(|c| format!("{c:>w$}")).collect();
            format!("[ {} ]\n", parts.join(" "))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut t = Table::new(["layer", "note"]);
        t.push(vec!["a".into(), "x, \"y\"".into()]);
        t.push(vec!["b".into(), "".into()]);
        assert_eq!(Table::from_csv(&t.to_csv()).unwrap(), t);
    }

    #[test]
    fn render_aligns() {
        let mut t = Table::new(["name", "v"]);
        t.push(vec!["long-name".into(), "1.00".into()]);
        let s = t.render();
        assert_eq!(s.lines().next().unwrap(), "name          v");
        assert_eq!(s.lines().nth(2).unwrap(), "long-name  1.00");
        assert_eq!(
            matrix_text(&[vec![1, -10], vec![100, 0]]),
            "[   1 -10 ]\n[ 100   0 ]\n"
        );
    }
}
