//! On-disk formats: the columnar draws file, summary/weights/inclusion CSVs,
//! and the run manifest. Same seed + same config must produce identical
//! bytes, so all floats are written either raw (little endian) or with the
//! shortest round-trip decimal form.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::engine::{MvnEstimate, PosteriorDrawSet};
use crate::{Error, Result};

#[derive(serde::Serialize, serde::Deserialize)]
struct DrawsHeader {
    magic: String,
    version: u32,
    m: usize,
    t: usize,
    labels: Vec<String>,
    factor_labels: Vec<String>,
    n_factors: usize,
    student_t: bool,
    gap_cells: Vec<(usize, usize)>,
    predecessors: Vec<Vec<usize>>,
}

const MAGIC: &str = "monocov-draws";

/// Write the draw set as a columnar binary file.
pub fn write_draws(path: &Path, draws: &PosteriorDrawSet) -> Result<()> {
    let m = draws.m();
    let t = draws.draws.len();
    let header = DrawsHeader {
        magic: MAGIC.into(),
        version: 1,
        m,
        t,
        labels: draws.labels.clone(),
        factor_labels: draws.factor_labels.clone(),
        n_factors: draws.n_factors,
        student_t: !draws.nu.is_empty(),
        gap_cells: draws.gap_cells.clone(),
        predecessors: draws.predecessors.clone(),
    };
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    let mut put = |v: f64| w.write_all(&v.to_le_bytes());
    for j in 0..m {
        for ti in 0..t {
            put(draws.draws[ti].mu[j])?;
        }
    }
    for a in 0..m {
        for b in 0..=a {
            for ti in 0..t {
                put(draws.draws[ti].sigma[(a, b)])?;
            }
        }
    }
    if !draws.nu.is_empty() {
        for j in 0..m {
            for ti in 0..t {
                put(draws.nu[ti][j])?;
            }
        }
    }
    for g in 0..draws.gap_cells.len() {
        for ti in 0..t {
            put(draws.gap_values[ti][g])?;
        }
    }
    for ti in 0..t {
        put(draws.loglik[ti])?;
    }
    for j in 0..m {
        for slot in 0..draws.predecessors[j].len() {
            for ti in 0..t {
                w.write_all(&[u8::from(draws.inclusion[ti][j][slot])])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a draws file back (diagnostics live in the manifest, not here).
pub fn read_draws(path: &Path) -> Result<PosteriorDrawSet> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut header_line = String::new();
    r.read_line(&mut header_line)?;
    let header: DrawsHeader =
        serde_json::from_str(header_line.trim_end()).map_err(|e| Error::Format(e.to_string()))?;
    if header.magic != MAGIC {
        return Err(Error::Format("not a draws file".into()));
    }
    let (m, t) = (header.m, header.t);
    let get = |r: &mut BufReader<std::fs::File>| -> Result<f64> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    };
    let mut draws = vec![
        MvnEstimate { mu: DVector::zeros(m), sigma: DMatrix::zeros(m, m) };
        t
    ];
    for j in 0..m {
        for d in draws.iter_mut() {
            d.mu[j] = get(&mut r)?;
        }
    }
    for a in 0..m {
        for b in 0..=a {
            for d in draws.iter_mut() {
                let v = get(&mut r)?;
                d.sigma[(a, b)] = v;
                d.sigma[(b, a)] = v;
            }
        }
    }
    let nu = if header.student_t {
        let mut nu = vec![vec![0.0; m]; t];
        for j in 0..m {
            for (ti, row) in nu.iter_mut().enumerate() {
                let _ = ti;
                row[j] = get(&mut r)?;
            }
        }
        nu
    } else {
        Vec::new()
    };
    let n_gaps = header.gap_cells.len();
    let mut gap_values = vec![vec![0.0; n_gaps]; t];
    for g in 0..n_gaps {
        for row in gap_values.iter_mut() {
            row[g] = get(&mut r)?;
        }
    }
    if n_gaps == 0 {
        gap_values = vec![Vec::new(); t];
    }
    let mut loglik = vec![0.0; t];
    for v in loglik.iter_mut() {
        *v = get(&mut r)?;
    }
    let mut inclusion = vec![Vec::with_capacity(m); t];
    for j in 0..m {
        let slots = header.predecessors[j].len();
        let mut per_slot = vec![vec![false; slots]; t];
        for slot in 0..slots {
            for row in per_slot.iter_mut() {
                let mut b = [0u8; 1];
                r.read_exact(&mut b)?;
                row[slot] = b[0] != 0;
            }
        }
        for (ti, row) in per_slot.into_iter().enumerate() {
            inclusion[ti].push(row);
        }
    }
    Ok(PosteriorDrawSet {
        labels: header.labels,
        factor_labels: header.factor_labels,
        draws,
        nu,
        gap_cells: header.gap_cells,
        gap_values,
        loglik,
        predecessors: header.predecessors,
        inclusion,
        diagnostics: Vec::new(),
        n_factors: header.n_factors,
    })
}

/// Summary CSV: one row per variable with its mean and covariance row.
pub fn write_summary_csv(path: &Path, est: &MvnEstimate, labels: &[String]) -> Result<()> {
    let m = est.dim();
    if labels.len() != m {
        return Err(Error::Dimension(format!("{} labels for dim {m}", labels.len())));
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "label,mu")?;
    for l in labels {
        write!(w, ",{l}")?;
    }
    writeln!(w)?;
    for j in 0..m {
        write!(w, "{},{}", labels[j], est.mu[j])?;
        for l in 0..m {
            write!(w, ",{}", est.sigma[(j, l)])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a summary CSV back into (estimate, labels).
pub fn read_summary_csv(path: &Path) -> Result<(MvnEstimate, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.len() < 3 || &header[0] != "label" || &header[1] != "mu" {
        return Err(Error::Format("expected a summary CSV (label,mu,<labels...>)".into()));
    }
    let m = header.len() - 2;
    let mut labels = Vec::with_capacity(m);
    let mut mu = DVector::zeros(m);
    let mut sigma = DMatrix::zeros(m, m);
    for (j, rec) in reader.records().enumerate() {
        let rec = rec?;
        if j >= m {
            return Err(Error::Format("summary CSV has more rows than columns".into()));
        }
        if rec.len() != m + 2 {
            return Err(Error::RaggedRow { row: j + 1, got: rec.len(), expected: m + 2 });
        }
        labels.push(rec[0].to_string());
        mu[j] = rec[1]
            .parse()
            .map_err(|_| Error::BadCell { row: j + 1, col: 2, text: rec[1].into() })?;
        for l in 0..m {
            sigma[(j, l)] = rec[l + 2]
                .parse()
                .map_err(|_| Error::BadCell { row: j + 1, col: l + 3, text: rec[l + 2].into() })?;
        }
    }
    if labels.len() != m {
        return Err(Error::Format(format!("summary CSV has {} rows for {m} columns", labels.len())));
    }
    Ok((MvnEstimate { mu, sigma }, labels))
}

/// Weights CSV: label,weight per asset.
pub fn write_weights_csv(path: &Path, labels: &[String], w: &DVector<f64>) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "label,weight")?;
    for (l, v) in labels.iter().zip(w.iter()) {
        writeln!(out, "{l},{v}")?;
    }
    out.flush()?;
    Ok(())
}

/// Inclusion-probability CSV: rows are response columns, columns are the
/// predictor identities (factors first); blanks where not a predictor.
pub fn write_inclusion_csv(path: &Path, draws: &PosteriorDrawSet) -> Result<()> {
    let probs = draws.inclusion_probabilities();
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "response")?;
    for f in &draws.factor_labels {
        write!(w, ",{f}")?;
    }
    for l in &draws.labels {
        write!(w, ",{l}")?;
    }
    writeln!(w)?;
    for (j, l) in draws.labels.iter().enumerate() {
        write!(w, "{l}")?;
        for c in 0..probs.ncols() {
            let v = probs[(j, c)];
            if v.is_nan() {
                write!(w, ",")?;
            } else {
                write!(w, ",{v}")?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Wide CSV export of the draws (one row per saved draw).
pub fn export_draws_csv(path: &Path, draws: &PosteriorDrawSet) -> Result<()> {
    let m = draws.m();
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let mut cols: Vec<String> = Vec::new();
    for l in &draws.labels {
        cols.push(format!("mu_{l}"));
    }
    for a in 0..m {
        for b in 0..=a {
            cols.push(format!("S_{}_{}", draws.labels[a], draws.labels[b]));
        }
    }
    if !draws.nu.is_empty() {
        for l in &draws.labels {
            cols.push(format!("nu_{l}"));
        }
    }
    for (i, j) in &draws.gap_cells {
        cols.push(format!("gap_r{}_c{}", i + 1, j + 1));
    }
    cols.push("loglik".into());
    writeln!(w, "{}", cols.join(","))?;
    for ti in 0..draws.draws.len() {
        let d = &draws.draws[ti];
        let mut row: Vec<String> = Vec::with_capacity(cols.len());
        for j in 0..m {
            row.push(format!("{}", d.mu[j]));
        }
        for a in 0..m {
            for b in 0..=a {
                row.push(format!("{}", d.sigma[(a, b)]));
            }
        }
        if !draws.nu.is_empty() {
            for j in 0..m {
                row.push(format!("{}", draws.nu[ti][j]));
            }
        }
        for g in 0..draws.gap_cells.len() {
            row.push(format!("{}", draws.gap_values[ti][g]));
        }
        row.push(format!("{}", draws.loglik[ti]));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a single-column CSV (header + one value per row).
pub fn read_series_csv(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.is_empty() {
            continue;
        }
        out.push(rec[0].parse().map_err(|_| Error::BadCell {
            row: i + 1,
            col: 1,
            text: rec[0].into(),
        })?);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}
