//! Data ingestion and the monotone ordering of a matrix with missing cells.
//!
//! Columns are sorted so observed counts n_j never increase with j; rows so
//! that the observed block of each column is a prefix. Missing cells that
//! break monotonicity (a later column is observed in the same row) are
//! latent "gaps": they are marked, counted into n_j, and carry an imputed
//! value once the engine supplies one.

use std::io::Read;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Value(f64),
    Missing,
    /// A gap cell; `None` until the engine imputes it.
    Gap(Option<f64>),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }
    pub fn is_gap(&self) -> bool {
        matches!(self, Cell::Gap(_))
    }
    /// Observed or imputed numeric content.
    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Value(v) => Some(*v),
            Cell::Gap(v) => *v,
            Cell::Missing => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DataMatrix {
    pub n: usize,
    pub m: usize,
    cells: Vec<Cell>, // row major
    pub labels: Vec<String>,
}

impl DataMatrix {
    pub fn new(n: usize, m: usize, cells: Vec<Cell>, labels: Vec<String>) -> Self {
        assert_eq!(cells.len(), n * m);
        assert_eq!(labels.len(), m);
        DataMatrix { n, m, cells, labels }
    }

    /// Build from fully observed row-major values.
    pub fn from_complete(n: usize, m: usize, values: &[f64]) -> Self {
        let cells = values.iter().map(|&v| Cell::Value(v)).collect();
        let labels = (1..=m).map(|j| format!("x{j}")).collect();
        DataMatrix::new(n, m, cells, labels)
    }

    pub fn get(&self, i: usize, j: usize) -> Cell {
        self.cells[i * self.m + j]
    }

    pub fn set(&mut self, i: usize, j: usize, c: Cell) {
        self.cells[i * self.m + j] = c;
    }

    pub fn column_missing_count(&self, j: usize) -> usize {
        (0..self.n).filter(|&i| self.get(i, j).is_missing()).count()
    }

    pub fn row_missing_count(&self, i: usize) -> usize {
        (0..self.m).filter(|&j| self.get(i, j).is_missing()).count()
    }

    pub fn has_gaps(&self) -> bool {
        self.cells.iter().any(Cell::is_gap)
    }

    /// Mean of the observed (Value) cells of column j.
    pub fn observed_column_mean(&self, j: usize) -> f64 {
        let mut s = 0.0;
        let mut c = 0usize;
        for i in 0..self.n {
            if let Cell::Value(v) = self.get(i, j) {
                s += v;
                c += 1;
            }
        }
        s / c as f64
    }
}

/// Column/row permutations plus per-column extents of the monotone layout.
#[derive(Clone, Debug)]
pub struct MonotoneLayout {
    /// col_order[k] = original index of the k-th layout column.
    pub col_order: Vec<usize>,
    /// row_order[k] = original index of the k-th layout row.
    pub row_order: Vec<usize>,
    /// Observed (+ latent gap, after marking) count per layout column.
    pub n_j: Vec<usize>,
    /// Layout row indices of gap cells, per layout column.
    pub gap_sets: Vec<Vec<usize>>,
}

impl MonotoneLayout {
    pub fn cell(&self, d: &DataMatrix, i: usize, j: usize) -> Cell {
        d.get(self.row_order[i], self.col_order[j])
    }

    pub fn set_cell(&self, d: &mut DataMatrix, i: usize, j: usize, c: Cell) {
        d.set(self.row_order[i], self.col_order[j], c);
    }

    pub fn label<'a>(&self, d: &'a DataMatrix, j: usize) -> &'a str {
        &d.labels[self.col_order[j]]
    }

    pub fn identity(n: usize, m: usize) -> Self {
        MonotoneLayout {
            col_order: (0..m).collect(),
            row_order: (0..n).collect(),
            n_j: vec![n; m],
            gap_sets: vec![Vec::new(); m],
        }
    }
}

fn sniff_delimiter(head: &str) -> u8 {
    if head.contains('\t') {
        b'\t'
    } else if head.contains(';') && !head.contains(',') {
        b';'
    } else {
        b','
    }
}

/// Parse a delimited text stream with a header row into a DataMatrix.
///
/// Cells equal to `missing_token` (or literal NaN text, or empty) become
/// Missing. Columns with fewer than 2 observed values are rejected.
pub fn load_matrix<R: Read>(source: R, missing_token: &str, delimiter: Option<u8>) -> Result<DataMatrix> {
    let mut text = String::new();
    let mut src = source;
    src.read_to_string(&mut text)?;
    let head = text.lines().next().unwrap_or("");
    let delim = delimiter.unwrap_or_else(|| sniff_delimiter(head));

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delim)
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let labels: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let m = labels.len();

    let mut cells = Vec::new();
    let mut n = 0usize;
    for (ri, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != m {
            return Err(Error::RaggedRow { row: ri + 1, got: rec.len(), expected: m });
        }
        for (ci, field) in rec.iter().enumerate() {
            let t = field.trim();
            let cell = if t == missing_token || t.is_empty() || t.eq_ignore_ascii_case("nan") {
                Cell::Missing
            } else {
                match t.parse::<f64>() {
                    Ok(v) if v.is_finite() => Cell::Value(v),
                    _ => {
                        return Err(Error::BadCell { row: ri + 1, col: ci + 1, text: t.to_string() })
                    }
                }
            };
            cells.push(cell);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let d = DataMatrix::new(n, m, cells, labels);
    for j in 0..m {
        let observed = n - d.column_missing_count(j);
        if observed == 0 {
            return Err(Error::ColumnRejected { index: j + 1, label: d.labels[j].clone(), observed });
        }
    }
    Ok(d)
}

/// Order columns ascending by missing count (stable), then rows ascending by
/// missing count (stable), and record the observed extents n_j.
pub fn order_monotone(d: &DataMatrix) -> MonotoneLayout {
    let mut col_order: Vec<usize> = (0..d.m).collect();
    col_order.sort_by_key(|&j| d.column_missing_count(j));
    let mut row_order: Vec<usize> = (0..d.n).collect();
    row_order.sort_by_key(|&i| d.row_missing_count(i));
    let n_j = col_order
        .iter()
        .map(|&j| d.n - d.column_missing_count(j))
        .collect();
    MonotoneLayout { col_order, row_order, n_j, gap_sets: vec![Vec::new(); d.m] }
}

/// Cells (i, j) in layout coordinates violating the adjacency rule:
/// cell (i, j) missing while (i, j+1) is observed.
pub fn check_monotone(layout: &MonotoneLayout, d: &DataMatrix) -> Vec<(usize, usize)> {
    let mut violations = Vec::new();
    for i in 0..d.n {
        for j in 0..d.m.saturating_sub(1) {
            let here = layout.cell(d, i, j);
            let next = layout.cell(d, i, j + 1);
            if here.is_missing() && !next.is_missing() {
                violations.push((i, j));
            }
        }
    }
    violations
}

/// Mark every missing cell with an observed value later in its row as a
/// latent gap, re-sort rows by remaining missing count, and recompute n_j
/// (now counting gaps) and the per-column gap row sets.
pub fn mark_gaps(d: &DataMatrix, layout: &MonotoneLayout) -> (DataMatrix, MonotoneLayout) {
    let mut out = d.clone();
    // work in layout coordinates
    for i in 0..d.n {
        let mut last_observed = None;
        for j in (0..d.m).rev() {
            if layout.cell(d, i, j).value().is_some() || layout.cell(d, i, j).is_gap() {
                last_observed = Some(j);
                break;
            }
        }
        if let Some(jmax) = last_observed {
            for j in 0..jmax {
                if layout.cell(d, i, j).is_missing() {
                    layout.set_cell(&mut out, i, j, Cell::Gap(None));
                }
            }
        }
    }
    // rows re-sorted by the count of cells that are still Missing; among
    // ties, gap-bearing rows come first so the bottom row of each column's
    // support block stays a fully observed one
    let mut row_order = layout.row_order.clone();
    row_order.sort_by_key(|&ri| {
        let missing = (0..out.m).filter(|&j| out.get(ri, j).is_missing()).count();
        let gaps = (0..out.m).filter(|&j| out.get(ri, j).is_gap()).count();
        (missing, std::cmp::Reverse(gaps))
    });
    let mut new_layout = MonotoneLayout {
        col_order: layout.col_order.clone(),
        row_order,
        n_j: vec![0; out.m],
        gap_sets: vec![Vec::new(); out.m],
    };
    for j in 0..out.m {
        let mut nj = 0usize;
        for i in 0..out.n {
            let c = new_layout.cell(&out, i, j);
            if !c.is_missing() {
                nj += 1;
                if c.is_gap() {
                    new_layout.gap_sets[j].push(i);
                }
            }
        }
        new_layout.n_j[j] = nj;
    }
    (out, new_layout)
}

/// Design matrix and response for the column-j regression: rows 1..n_j of
/// columns 1..j-1 (optionally intercept-prefixed) and of column j, in layout
/// coordinates. Gap cells must carry imputed values.
pub fn design_for_column(
    j: usize,
    d: &DataMatrix,
    layout: &MonotoneLayout,
    include_intercept: bool,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let nj = layout.n_j[j];
    let width = if include_intercept { j + 1 } else { j };
    let mut design = Vec::with_capacity(nj);
    let mut response = Vec::with_capacity(nj);
    for i in 0..nj {
        let mut row = Vec::with_capacity(width);
        if include_intercept {
            row.push(1.0);
        }
        for l in 0..j {
            match layout.cell(d, i, l).value() {
                Some(v) => row.push(v),
                None => {
                    return Err(Error::UnimputedGap {
                        row: layout.row_order[i] + 1,
                        col: layout.col_order[l] + 1,
                    })
                }
            }
        }
        design.push(row);
        match layout.cell(d, i, j).value() {
            Some(v) => response.push(v),
            None if layout.cell(d, i, j).is_gap() => {
                return Err(Error::UnimputedGap {
                    row: layout.row_order[i] + 1,
                    col: layout.col_order[j] + 1,
                })
            }
            None => {
                return Err(Error::Dimension(format!(
                    "missing cell inside the observed block at layout ({i}, {j})"
                )))
            }
        }
    }
    Ok((design, response))
}
