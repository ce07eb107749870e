//! Delimited text formats.
//!
//! * population: header `y1,y0,x1,...,xK`
//! * observed data: header `y,z,x1,...,xK` with `z` in `{0, 1}`
//! * assignment: a `#` summary line, then header `unit_index,z`
//! * covariate matrix: numeric rows, optional header, comma, tab or
//!   whitespace separated

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::design::{AssignmentDraw, DesignSpec};
use crate::error::{Error, Result};
use crate::estimate::ObservedData;
use crate::popmodel::FinitePopulation;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(e).context(format!("opening {}", path.display())))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::Io(e).context(format!("creating {}", path.display())))
}

fn parse_number(field: &str, row: usize, column: &str) -> Result<f64> {
    let trimmed = field.trim();
    if trimmed.is_empty() {
        return Err(Error::malformed(format!(
            "row {row}: missing value in column {column}"
        )));
    }
    trimmed
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            Error::malformed(format!(
                "row {row}: column {column} holds {trimmed:?}, not a finite number"
            ))
        })
}

/// Checks that the header is `leading` followed by `x1..xK` and returns `K`.
fn check_header(headers: &csv::StringRecord, leading: &[&str]) -> Result<usize> {
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names.len() <= leading.len() || names[..leading.len()] != *leading {
        return Err(Error::malformed(format!(
            "expected header {},x1,...,xK, got {}",
            leading.join(","),
            names.join(",")
        )));
    }
    for (j, name) in names[leading.len()..].iter().enumerate() {
        if *name != format!("x{}", j + 1) {
            return Err(Error::malformed(format!(
                "covariate column {} must be named x{}, got {name:?}",
                leading.len() + j + 1,
                j + 1
            )));
        }
    }
    Ok(names.len() - leading.len())
}

struct Table {
    leading: Vec<Vec<f64>>,
    covariates: DMatrix<f64>,
}

fn read_table<R: Read>(reader: R, leading: &[&str]) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let k = check_header(rdr.headers()?, leading)?;
    let mut cols = vec![Vec::new(); leading.len()];
    let mut x = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        if record.len() != leading.len() + k {
            return Err(Error::malformed(format!(
                "row {row}: expected {} fields, found {}",
                leading.len() + k,
                record.len()
            )));
        }
        for (j, name) in leading.iter().enumerate() {
            cols[j].push(parse_number(&record[j], row, name)?);
        }
        for j in 0..k {
            x.push(parse_number(
                &record[leading.len() + j],
                row,
                &format!("x{}", j + 1),
            )?);
        }
    }
    let n = cols[0].len();
    if n == 0 {
        return Err(Error::malformed("no data rows"));
    }
    Ok(Table {
        leading: cols,
        covariates: DMatrix::from_row_slice(n, k, &x),
    })
}

pub fn read_population<R: Read>(reader: R) -> Result<FinitePopulation> {
    let mut t = read_table(reader, &["y1", "y0"])?;
    let y0 = t.leading.pop().expect("two leading columns");
    let y1 = t.leading.pop().expect("two leading columns");
    FinitePopulation::new(y1, y0, t.covariates)
}

pub fn read_population_file(path: &Path) -> Result<FinitePopulation> {
    read_population(open(path)?).map_err(|e| e.context(format!("reading {}", path.display())))
}

fn covariate_header(k: usize) -> String {
    (1..=k).map(|j| format!(",x{j}")).collect()
}

pub fn write_population<W: Write>(mut out: W, pop: &FinitePopulation) -> Result<()> {
    writeln!(out, "y1,y0{}", covariate_header(pop.k()))?;
    let x = pop.covariates();
    for i in 0..pop.n() {
        write!(out, "{},{}", pop.y1()[i], pop.y0()[i])?;
        for j in 0..pop.k() {
            write!(out, ",{}", x[(i, j)])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_population_file(path: &Path, pop: &FinitePopulation) -> Result<()> {
    let mut f = std::io::BufWriter::new(create(path)?);
    write_population(&mut f, pop)?;
    f.flush()?;
    Ok(())
}

pub fn read_observed<R: Read>(reader: R) -> Result<ObservedData> {
    let mut t = read_table(reader, &["y", "z"])?;
    let z_raw = t.leading.pop().expect("two leading columns");
    let y = t.leading.pop().expect("two leading columns");
    let z = z_raw
        .iter()
        .enumerate()
        .map(|(i, &v)| match v {
            1.0 => Ok(true),
            0.0 => Ok(false),
            other => Err(Error::malformed(format!(
                "row {}: z must be 0 or 1, got {other}",
                i + 2
            ))),
        })
        .collect::<Result<Vec<bool>>>()?;
    ObservedData::new(y, z, t.covariates)
}

pub fn read_observed_file(path: &Path) -> Result<ObservedData> {
    read_observed(open(path)?).map_err(|e| e.context(format!("reading {}", path.display())))
}

pub fn write_observed<W: Write>(mut out: W, data: &ObservedData) -> Result<()> {
    writeln!(out, "y,z{}", covariate_header(data.k()))?;
    let x = data.covariates();
    for i in 0..data.n() {
        write!(out, "{},{}", data.y()[i], u8::from(data.z()[i]))?;
        for j in 0..data.k() {
            write!(out, ",{}", x[(i, j)])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Summary line written ahead of an assignment table.
pub fn assignment_summary(draw: &AssignmentDraw, spec: &DesignSpec) -> String {
    let m = draw
        .mahalanobis
        .map_or_else(|| "NA".to_string(), |v| v.to_string());
    format!(
        "# M={m} attempts={} a={} p={}",
        draw.attempts, spec.threshold, spec.acceptance_probability
    )
}

pub fn write_assignment<W: Write>(
    mut out: W,
    draw: &AssignmentDraw,
    spec: &DesignSpec,
) -> Result<()> {
    writeln!(out, "{}", assignment_summary(draw, spec))?;
    writeln!(out, "unit_index,z")?;
    for (i, &t) in draw.z.iter().enumerate() {
        writeln!(out, "{i},{}", u8::from(t))?;
    }
    Ok(())
}

/// Reads the `z` column of an assignment table, in unit order.
pub fn read_assignment<R: Read>(reader: R) -> Result<Vec<bool>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["unit_index", "z"] {
        return Err(Error::malformed("expected header unit_index,z"));
    }
    let mut z = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let index: usize = record[0]
            .parse()
            .map_err(|_| Error::malformed(format!("row {row}: bad unit index {:?}", &record[0])))?;
        if index != i {
            return Err(Error::malformed(format!(
                "row {row}: unit indices must run 0, 1, 2, ... in order"
            )));
        }
        z.push(match &record[1] {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::malformed(format!(
                    "row {row}: z must be 0 or 1, got {other:?}"
                )))
            }
        });
    }
    Ok(z)
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Numeric matrix with one row per line. A first line that does not parse as
/// numbers is taken as a header and skipped.
pub fn read_matrix<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = split_fields(trimmed);
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(values) => {
                if let Some(first) = rows.first() {
                    if values.len() != first.len() {
                        return Err(Error::malformed(format!(
                            "line {}: expected {} fields, found {}",
                            i + 1,
                            first.len(),
                            values.len()
                        )));
                    }
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::malformed(format!(
                        "line {}: non-finite value",
                        i + 1
                    )));
                }
                rows.push(values);
            }
            Err(_) if rows.is_empty() && i == 0 => continue,
            Err(_) => {
                return Err(Error::malformed(format!(
                    "line {}: non-numeric field",
                    i + 1
                )));
            }
        }
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::malformed("matrix file has no data rows"));
    }
    let k = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(n, k, &flat))
}

pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix(open(path)?).map_err(|e| e.context(format!("reading {}", path.display())))
}

pub fn write_matrix<W: Write>(mut out: W, x: &DMatrix<f64>) -> Result<()> {
    writeln!(
        out,
        "{}",
        (1..=x.ncols())
            .map(|j| format!("x{j}"))
            .collect::<Vec<_>>()
            .join(",")
    )?;
    for row in x.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}
