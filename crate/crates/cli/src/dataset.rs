//! CSV ingestion with the `w,y1..yK,z1..zL` header convention.

use std::path::Path;

use cotwave::{JointSample, Points};

use crate::error::{CliError, CliResult};

/// Numeric table with a validated header; `rows[k]` came from file line `lines[k]`.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub d_y: usize,
    pub d_z: usize,
    pub rows: Vec<Vec<f64>>,
    pub lines: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub d_y: usize,
    pub d_z: usize,
    pub control: JointSample,
    pub treated: JointSample,
}

fn parse_header(header: &[String]) -> CliResult<(usize, usize)> {
    let bad = || {
        CliError::Input(format!("line 1: header must be w,y1..yK,z1..zL with K, L >= 1, got '{}'", header.join(",")))
    };
    if header.first().map(String::as_str) != Some("w") {
        return Err(bad());
    }
    let d_y = header[1..].iter().take_while(|h| h.starts_with('y')).count();
    let d_z = header.len() - 1 - d_y;
    if d_y == 0 || d_z == 0 {
        return Err(bad());
    }
    for k in 0..d_y {
        if header[1 + k] != format!("y{}", k + 1) {
            return Err(bad());
        }
    }
    for k in 0..d_z {
        if header[1 + d_y + k] != format!("z{}", k + 1) {
            return Err(bad());
        }
    }
    Ok((d_y, d_z))
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let (d_y, d_z) = parse_header(&header)?;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::Input(format!("line {line}: malformed CSV record: {e}"))
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = record
            .iter()
            .enumerate()
            .map(|(k, field)| {
                field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    CliError::Input(format!("line {line}: column '{}' is not a finite number: '{field}'", header[k]))
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        if row[0] != 0.0 && row[0] != 1.0 {
            return Err(CliError::Input(format!("line {line}: treatment indicator w must be 0 or 1, got {}", row[0])));
        }
        rows.push(row);
        lines.push(line);
    }
    Ok(Table { header, d_y, d_z, rows, lines })
}

/// Reads an estimation data set; coordinates must already lie in `[0, 1]`.
pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let table = read_table(path)?;
    for (row, line) in table.rows.iter().zip(&table.lines) {
        if let Some(k) = (1..row.len()).find(|&k| !(0.0..=1.0).contains(&row[k])) {
            return Err(CliError::Input(format!(
                "line {line}: column '{}' = {} lies outside [0, 1]; run `cotwave rescale` first",
                table.header[k], row[k]
            )));
        }
    }
    let dim = table.d_y + table.d_z;
    let mut coords = [Vec::new(), Vec::new()];
    for row in &table.rows {
        coords[row[0] as usize].extend_from_slice(&row[1..]);
    }
    let [c0, c1] = coords;
    for (name, c) in [("control (w = 0)", &c0), ("treated (w = 1)", &c1)] {
        if c.is_empty() {
            return Err(CliError::Degenerate(format!("the {name} arm has no rows")));
        }
    }
    let control = JointSample::new(table.d_y, table.d_z, Points::new(dim, c0)?)?;
    let treated = JointSample::new(table.d_y, table.d_z, Points::new(dim, c1)?)?;
    Ok(Dataset { d_y: table.d_y, d_z: table.d_z, control, treated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn header_convention() {
        let h = |s: &str| s.split(',').map(str::to_owned).collect::<Vec<_>>();
        assert_eq!(parse_header(&h("w,y1,y2,z1")).unwrap(), (2, 1));
        for bad in ["y1,w,z1", "w,y1", "w,z1", "w,y2,z1", "w,y1,z1,z3", "w,y1,z1,y2"] {
            assert!(parse_header(&h(bad)).is_err(), "{bad}");
        }
    }

    #[test]
    fn splits_arms() {
        let f = write("w,y1,z1\n0,0.1,0.2\n1,0.3,0.4\n0,0.5,0.6\n");
        let d = read_dataset(f.path()).unwrap();
        assert_eq!((d.control.len(), d.treated.len()), (2, 1));
        assert_eq!(d.control.y(1), &[0.5]);
    }

    #[test]
    fn errors_name_the_line() {
        let f = write("w,y1,z1\n0,0.1,0.2\n2,0.3,0.4\n");
        let e = read_dataset(f.path()).unwrap_err();
        assert!(e.to_string().contains("line 3") && e.exit_code() == 2, "{e}");
        let f = write("w,y1,z1\n0,0.1,abc\n");
        assert!(read_dataset(f.path()).unwrap_err().to_string().contains("line 2"));
        let f = write("w,y1,z1\n0,0.1,1.5\n");
        assert_eq!(read_dataset(f.path()).unwrap_err().exit_code(), 2);
        let f = write("w,y1,z1\n0,0.1,0.2\n0,0.1\n");
        assert!(read_dataset(f.path()).unwrap_err().to_string().contains("line 3"));
    }

    #[test]
    fn empty_arm_is_degenerate() {
        let f = write("w,y1,z1\n0,0.1,0.2\n");
        assert_eq!(read_dataset(f.path()).unwrap_err().exit_code(), 3);
    }
}
