use std::io::{Read, Write};
use std::path::Path;

use super::TimeSeriesFrame;
use crate::error::{Error, Result};

/// Header of variable names, then one row per step. An empty cell or `NaN`
/// marks a missing entry.
pub fn read_csv<R: Read>(reader: R) -> Result<TimeSeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let csv_err = |e: csv::Error| Error::Csv {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    };
    let names: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::Csv {
            line: 1,
            message: "missing header row".into(),
        });
    }
    let d = names.len();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != d {
            return Err(Error::Csv {
                line,
                message: format!("expected {d} fields, found {}", rec.len()),
            });
        }
        for cell in rec.iter() {
            if cell.is_empty() || cell == "NaN" {
                values.push(0.0);
                mask.push(false);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Csv {
                line,
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    line,
                    message: format!("`{cell}` is not finite"),
                });
            }
            values.push(v);
            mask.push(true);
        }
    }
    TimeSeriesFrame::with_mask(names, values, mask)
}

pub fn load_csv(path: &Path) -> Result<TimeSeriesFrame> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_csv(std::io::BufReader::new(f))
}

/// Missing entries are written as empty cells; numbers use the shortest
/// representation that parses back to the same value.
pub fn write_csv<W: Write>(frame: &TimeSeriesFrame, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let wrap = |e: csv::Error| Error::Csv {
        line: 0,
        message: e.to_string(),
    };
    w.write_record(&frame.names).map_err(wrap)?;
    let d = frame.dims();
    for t in 0..frame.len() {
        let row = (0..d).map(|v| {
            if frame.observed(t, v) {
                format!("{:?}", frame.value(t, v))
            } else {
                String::new()
            }
        });
        w.write_record(row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("flushing csv", e))
}

pub fn save_csv(frame: &TimeSeriesFrame, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_csv(frame, std::io::BufWriter::new(f))
}
