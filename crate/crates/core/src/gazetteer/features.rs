use std::fmt;

use crate::corpus::{TagScheme, NUM_TAGS};

/// N×13 binary matrix of per-token tag indicators.
///
/// Produced either from gold tags (exactly one 1 per row) or from gazetteer
/// matches (any number of B/I columns, with `O` set iff nothing else is).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureMatrix {
    rows: Vec<[u8; NUM_TAGS]>,
}

impl FeatureMatrix {
    pub fn zeros(n: usize) -> FeatureMatrix {
        FeatureMatrix { rows: vec![[0; NUM_TAGS]; n] }
    }

    pub fn from_rows(rows: Vec<[u8; NUM_TAGS]>) -> FeatureMatrix {
        FeatureMatrix { rows }
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cols(&self) -> usize {
        NUM_TAGS
    }

    pub fn row(&self, i: usize) -> &[u8; NUM_TAGS] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, col: usize) -> u8 {
        self.rows[i][col]
    }

    pub fn set(&mut self, i: usize, col: usize) {
        self.rows[i][col] = 1;
    }

    /// Sets `O` on every row with no other column set.
    pub(crate) fn fill_outside(&mut self) {
        for row in &mut self.rows {
            if row[1..].iter().all(|&v| v == 0) {
                row[0] = 1;
            }
        }
    }

    pub fn count_ones(&self) -> usize {
        self.rows.iter().flatten().map(|&v| usize::from(v)).sum()
    }

    /// Row-major values as `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.rows.iter().flatten().map(|&v| f64::from(v)).collect()
    }

    /// Renders the matrix as a table with one line per token. Only columns
    /// holding at least one 1 are shown unless `all_columns` is set.
    pub fn render(&self, tokens: &[String], all_columns: bool) -> String {
        let cols: Vec<usize> = (0..NUM_TAGS)
            .filter(|&c| all_columns || c == 0 || self.rows.iter().any(|r| r[c] == 1))
            .collect();
        let width = tokens.iter().map(|t| t.chars().count()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}", "Words");
        for &c in &cols {
            out.push_str(&format!(" {:>6}", TagScheme::TAGS[c]));
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let tok = tokens.get(i).map(String::as_str).unwrap_or("");
            out.push_str(&format!("{tok:<width$}"));
            for &c in &cols {
                out.push_str(&format!(" {:>6}", row[c]));
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for FeatureMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(u8::to_string).collect();
            writeln!(f, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}
