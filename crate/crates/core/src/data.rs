//! Observed units, datasets, and the dataset CSV format.
//!
//! A dataset file has header `x1,...,xd,y,z` followed by one row per unit.
//! Values are written with Rust's shortest round-trip float formatting, so
//! `load_dataset(save_dataset(d))` reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One observed unit: covariates, outcome, and binary treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub x: Vec<f64>,
    pub y: f64,
    pub treated: bool,
}

impl Unit {
    pub fn new(x: Vec<f64>, y: f64, treated: bool) -> Self {
        Unit { x, y, treated }
    }
}

/// An ordered collection of units sharing one covariate dimension.
///
/// Unit index is row order and is stable: every index produced downstream
/// (matchings, weights, reports) refers back to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<bool>,
}

impl Dataset {
    pub fn new(units: Vec<Unit>) -> Result<Self> {
        let d = units
            .first()
            .map(|u| u.x.len())
            .ok_or_else(|| Error::contract("dataset must contain at least one unit"))?;
        let mut x = Vec::with_capacity(units.len() * d);
        let mut y = Vec::with_capacity(units.len());
        let mut z = Vec::with_capacity(units.len());
        for (i, u) in units.into_iter().enumerate() {
            if u.x.len() != d {
                return Err(Error::contract(format!(
                    "unit {i} has {} covariates, expected {d}",
                    u.x.len()
                )));
            }
            x.extend(u.x);
            y.push(u.y);
            z.push(u.treated);
        }
        Self::from_columns(d, x, y, z)
    }

    /// Builds a dataset from a row-major covariate buffer of length `n * d`.
    pub fn from_columns(d: usize, x: Vec<f64>, y: Vec<f64>, z: Vec<bool>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::contract("dataset must contain at least one unit"));
        }
        if z.len() != n || x.len() != n * d {
            return Err(Error::contract(format!(
                "column lengths disagree: x has {}, y has {n}, z has {} (d = {d})",
                x.len(),
                z.len()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "non-finite covariate at unit {}, column x{}",
                pos / d.max(1),
                pos % d.max(1) + 1
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite outcome at unit {i}")));
        }
        Ok(Dataset { d, x, y, z })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.z[i]
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    pub fn treatments(&self) -> &[bool] {
        &self.z
    }

    pub fn n_treated(&self) -> usize {
        self.z.iter().filter(|&&t| t).count()
    }

    pub fn n_control(&self) -> usize {
        self.len() - self.n_treated()
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.z[i]).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.z[i]).collect()
    }

    pub fn unit(&self, i: usize) -> Unit {
        Unit::new(self.x(i).to_vec(), self.y[i], self.z[i])
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let parse_err = |row: usize, column: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(0, "header", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let d = validate_header(&header).map_err(|m| parse_err(0, "header", m))?;

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut z = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| parse_err(row, "*", e.to_string()))?;
        if record.len() != d + 2 {
            return Err(parse_err(
                row,
                "*",
                format!("expected {} fields, found {}", d + 2, record.len()),
            ));
        }
        for (j, field) in record.iter().take(d).enumerate() {
            x.push(parse_finite(field).map_err(|m| parse_err(row, &header[j], m))?);
        }
        y.push(parse_finite(&record[d]).map_err(|m| parse_err(row, "y", m))?);
        z.push(match &record[d + 1] {
            "0" => false,
            "1" => true,
            other => {
                return Err(parse_err(
                    row,
                    "z",
                    format!("treatment must be 0 or 1, found {other:?}"),
                ))
            }
        });
    }
    if y.is_empty() {
        return Err(parse_err(1, "*", "file has no data rows".into()));
    }
    Dataset::from_columns(d, x, y, z)
}

fn validate_header(header: &[String]) -> std::result::Result<usize, String> {
    if header.len() < 3 {
        return Err(format!(
            "expected columns x1..xd,y,z with d >= 1, found {}",
            header.join(",")
        ));
    }
    let d = header.len() - 2;
    for (j, name) in header.iter().take(d).enumerate() {
        if *name != format!("x{}", j + 1) {
            return Err(format!("column {} should be x{}, found {name:?}", j + 1, j + 1));
        }
    }
    if header[d] != "y" || header[d + 1] != "z" {
        return Err(format!(
            "last two columns must be y,z, found {},{}",
            header[d],
            header[d + 1]
        ));
    }
    Ok(d)
}

fn parse_finite(field: &str) -> std::result::Result<f64, String> {
    let v: f64 = field
        .parse()
        .map_err(|_| format!("not a number: {field:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite value: {field:?}"))
    }
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if dataset.dim() == 0 {
        return Err(Error::contract(
            "dataset has no covariates; the CSV format needs d >= 1",
        ));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_dataset(dataset, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_dataset(dataset: &Dataset, out: &mut impl Write) -> std::io::Result<()> {
    let d = dataset.dim();
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    header.push("z".into());
    writeln!(out, "{}", header.join(","))?;
    for i in 0..dataset.len() {
        for v in dataset.x(i) {
            write!(out, "{v},")?;
        }
        writeln!(out, "{},{}", dataset.y(i), u8::from(dataset.is_treated(i)))?;
    }
    Ok(())
}
