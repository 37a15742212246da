//! Plain-text field snapshots: one header line `# n=<n> t=<time> field=<name>`
//! followed by `n` comma-separated rows, row `iy` holding `x₂ = iy·h`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub name: String,
    pub field: ScalarField,
}

/// Text of a snapshot file. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn render(field: &ScalarField, time: f64, name: &str) -> String {
    let n = field.grid().n();
    let mut out = format!("# n={n} t={time} field={name}\n");
    for row in field.values().rows() {
        for (ix, v) in row.iter().enumerate() {
            if ix > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write(path: &Path, field: &ScalarField, time: f64, name: &str) -> Result<()> {
    fs::write(path, render(field, time, name))?;
    Ok(())
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

pub fn parse(path: &Path, text: &str) -> Result<Snapshot> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "empty snapshot"))?;
    let body = header
        .strip_prefix('#')
        .ok_or_else(|| parse_error(path, 1, "missing '# n=... t=... field=...' header"))?;
    let (mut n, mut time, mut name) = (None, None, None);
    for item in body.split_whitespace() {
        let Some((key, value)) = item.split_once('=') else {
            return Err(parse_error(path, 1, format!("malformed header entry '{item}'")));
        };
        match key {
            "n" => n = value.parse::<usize>().ok(),
            "t" => time = value.parse::<f64>().ok(),
            "field" => name = Some(value.to_string()),
            _ => return Err(parse_error(path, 1, format!("unknown header key '{key}'"))),
        }
    }
    let n = n.ok_or_else(|| parse_error(path, 1, "header lacks a valid n"))?;
    let time = time.ok_or_else(|| parse_error(path, 1, "header lacks a valid t"))?;
    let grid = Grid2D::new(n)?;
    let mut values = Array2::zeros((n, n));
    let mut rows = 0;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        if rows == n {
            return Err(parse_error(path, line_no, format!("more than {n} rows")));
        }
        let mut cols = 0;
        for (ix, cell) in line.split(',').enumerate() {
            if ix >= n {
                return Err(parse_error(path, line_no, format!("more than {n} columns")));
            }
            values[[rows, ix]] = cell.trim().parse::<f64>().map_err(|_| {
                parse_error(path, line_no, format!("bad number '{}'", cell.trim()))
            })?;
            cols += 1;
        }
        if cols != n {
            return Err(parse_error(path, line_no, format!("expected {n} columns, found {cols}")));
        }
        rows += 1;
    }
    if rows != n {
        return Err(parse_error(path, rows + 2, format!("expected {n} rows, found {rows}")));
    }
    Ok(Snapshot {
        time,
        name: name.unwrap_or_else(|| "theta".into()),
        field: ScalarField::from_values(grid, values)?,
    })
}

pub fn read(path: &Path) -> Result<Snapshot> {
    parse(path, &fs::read_to_string(path)?)
}

/// File name for the snapshot at `time`.
pub fn file_name(time: f64) -> String {
    format!("t_{time:.4}.csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let g = Grid2D::new(9).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (x * 3.7).sin() / (1.0 + y) + 1e-17 * x);
        let text = render(&f, 0.6000000000000001, "theta");
        let back = parse(Path::new("mem"), &text).unwrap();
        assert_eq!(back.field, f);
        assert_eq!(back.time, 0.6000000000000001);
        assert_eq!(back.name, "theta");
        assert!(text.starts_with("# n=9 t=0.6000000000000001 field=theta\n"));
    }

    #[test]
    fn malformed_files_report_lines() {
        let p = Path::new("f.csv");
        assert!(matches!(parse(p, ""), Err(Error::Parse { line: 1, .. })));
        let g = Grid2D::new(8).unwrap();
        let mut text = render(&ScalarField::zeros(g), 0.0, "theta");
        text = text.replacen("0,0,0", "0,x,0", 1);
        assert!(matches!(parse(p, &text), Err(Error::Parse { line: 2, .. })));
        let short: String = render(&ScalarField::zeros(g), 0.0, "theta")
            .lines()
            .take(5)
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(parse(p, &short), Err(Error::Parse { .. })));
    }

    #[test]
    fn file_names() {
        assert_eq!(file_name(0.0), "t_0.0000.csv");
        assert_eq!(file_name(0.6000000000000001), "t_0.6000.csv");
    }
}
