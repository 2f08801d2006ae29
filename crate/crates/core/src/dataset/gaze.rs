use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use super::{DatasetError, Fixation, GazeSequence};

const HEADER: [&str; 4] = ["x", "y", "t_start", "t_end"];

/// Parses a gaze log: CSV with header exactly `x,y,t_start,t_end`.
///
/// Line numbers in errors are 1-based and count the header, so the first
/// data row is line 2.
pub fn parse_gaze_log<R: Read>(input: R) -> Result<GazeSequence, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| DatasetError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(DatasetError::BadHeader {
            expected: HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut fixations = Vec::new();
    let mut last_start = f64::NEG_INFINITY;
    for row in rdr.records() {
        let row = row.map_err(|e| DatasetError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 4 {
            return Err(DatasetError::MalformedRow {
                line,
                reason: format!("expected 4 fields, found {}", row.len()),
            });
        }
        let x = parse_field::<u32>(&row[0], "x", line)?;
        let y = parse_field::<u32>(&row[1], "y", line)?;
        let t_start = parse_field::<f64>(&row[2], "t_start", line)?;
        let t_end = parse_field::<f64>(&row[3], "t_end", line)?;
        if !t_start.is_finite() || !t_end.is_finite() || t_start < 0.0 {
            return Err(DatasetError::MalformedRow {
                line,
                reason: "timestamps must be finite and non-negative".into(),
            });
        }
        if t_end < t_start {
            return Err(DatasetError::DurationNegative { line });
        }
        if t_start < last_start {
            return Err(DatasetError::Unordered { line });
        }
        last_start = t_start;
        fixations.push(Fixation {
            x,
            y,
            t_start,
            t_end,
        });
    }
    Ok(GazeSequence { fixations })
}

fn parse_field<T: std::str::FromStr>(raw: &str, field: &str, line: u64) -> Result<T, DatasetError> {
    raw.parse::<T>().map_err(|_| DatasetError::NonNumeric {
        line,
        field: field.to_string(),
        value: raw.to_string(),
    })
}

pub fn read_gaze_file(path: &Path) -> Result<GazeSequence, DatasetError> {
    let f = std::fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    parse_gaze_log(std::io::BufReader::new(f)).map_err(|e| match e {
        DatasetError::MalformedRow { line, reason } => DatasetError::Parse {
            path: path.into(),
            line,
            reason,
        },
        DatasetError::NonNumeric { line, field, value } => DatasetError::Parse {
            path: path.into(),
            line,
            reason: format!("field `{field}` is not a valid number: `{value}`"),
        },
        DatasetError::DurationNegative { line } => DatasetError::Parse {
            path: path.into(),
            line,
            reason: "negative duration (t_end < t_start)".into(),
        },
        DatasetError::Unordered { line } => DatasetError::Parse {
            path: path.into(),
            line,
            reason: "t_start goes backwards in time".into(),
        },
        other => other,
    })
}

/// Canonical text form; `parse_gaze_log(serialize_gaze(g)) == g`.
pub fn serialize_gaze(gaze: &GazeSequence) -> String {
    let mut out = String::from("x,y,t_start,t_end\n");
    for f in &gaze.fixations {
        // `{:?}` on f64 is the shortest representation that round-trips.
        let _ = writeln!(out, "{},{},{:?},{:?}", f.x, f.y, f.t_start, f.t_end);
    }
    out
}
