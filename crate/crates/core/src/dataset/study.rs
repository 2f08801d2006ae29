use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    masks::load_masks, read_gaze_file, DatasetError, FindingLabel, FindingLabels, ManifestEntry,
    StudyRecord, TimedSentence,
};
use crate::raster::{read_gray_png, Grid};

/// Parses a transcript CSV with header `text,t_start,t_end`, one timed
/// sentence per row.
pub fn parse_transcript<R: Read>(input: R) -> Result<Vec<TimedSentence>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = rdr.headers().map_err(|e| DatasetError::MalformedRow {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().ne(["text", "t_start", "t_end"]) {
        return Err(DatasetError::BadHeader {
            expected: "text,t_start,t_end".into(),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| DatasetError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 3 {
            return Err(DatasetError::MalformedRow {
                line,
                reason: format!("expected 3 fields, found {}", row.len()),
            });
        }
        let text = row[0].trim();
        if text.is_empty() {
            return Err(DatasetError::MalformedRow {
                line,
                reason: "empty sentence".into(),
            });
        }
        let num = |i: usize, field: &str| {
            row[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| DatasetError::NonNumeric {
                    line,
                    field: field.into(),
                    value: row[i].to_string(),
                })
        };
        let (t_start, t_end) = (num(1, "t_start")?, num(2, "t_end")?);
        if t_end < t_start {
            return Err(DatasetError::DurationNegative { line });
        }
        out.push(TimedSentence {
            text: text.to_string(),
            t_start,
            t_end,
        });
    }
    Ok(out)
}

pub fn serialize_transcript(sentences: &[TimedSentence]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["text", "t_start", "t_end"])
        .expect("in-memory write");
    for s in sentences {
        w.write_record([
            s.text.clone(),
            format!("{:?}", s.t_start),
            format!("{:?}", s.t_end),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Reads the finding-label sidecar (`study_id,finding,value`), returning the
/// labels of every study in the file.
pub fn parse_labels<R: Read>(input: R) -> Result<BTreeMap<String, FindingLabels>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers().map_err(|e| DatasetError::MalformedRow {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().ne(["study_id", "finding", "value"]) {
        return Err(DatasetError::BadHeader {
            expected: "study_id,finding,value".into(),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut out: BTreeMap<String, FindingLabels> = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| DatasetError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 3 {
            return Err(DatasetError::MalformedRow {
                line,
                reason: format!("expected 3 fields, found {}", row.len()),
            });
        }
        let label: FindingLabel = row[2]
            .parse()
            .map_err(|reason| DatasetError::MalformedRow { line, reason })?;
        out.entry(row[0].to_string())
            .or_default()
            .insert(row[1].to_ascii_lowercase(), label);
    }
    Ok(out)
}

/// Optional mean-intensity gate for over- or under-exposed radiographs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrightnessFilter {
    pub min_mean: f64,
    pub max_mean: f64,
}

pub fn passes_brightness(image: &Grid<f64>, filter: Option<&BrightnessFilter>) -> bool {
    match filter {
        None => true,
        Some(f) => {
            let m = image.mean();
            m >= f.min_mean && m <= f.max_mean
        }
    }
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>, DatasetError> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| DatasetError::io(path, e))
}

fn locate(path: &Path, e: DatasetError) -> DatasetError {
    match e {
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
        other => other,
    }
}

/// Loads and validates every artifact a manifest entry points at. Relative
/// paths resolve against `root`.
pub fn load_study(root: &Path, entry: &ManifestEntry) -> Result<StudyRecord, DatasetError> {
    let id = entry.study_id.as_str();
    let image_path = root.join(&entry.image);
    let image = read_gray_png(&image_path).map_err(|source| {
        DatasetError::Image {
            path: image_path.clone(),
            source,
        }
        .in_study(id)
    })?;
    let gaze = read_gaze_file(&root.join(&entry.gaze)).map_err(|e| e.in_study(id))?;
    let mask_paths = entry
        .masks
        .iter()
        .map(|(r, p)| (*r, root.join(p)))
        .collect();
    let masks = load_masks(&mask_paths).map_err(|e| e.in_study(id))?;
    let tpath = root.join(&entry.transcript);
    let transcript = parse_transcript(open(&tpath)?).map_err(|e| locate(&tpath, e).in_study(id))?;
    let lpath = root.join(&entry.labels);
    let mut labels = parse_labels(open(&lpath)?).map_err(|e| locate(&lpath, e).in_study(id))?;
    let record = StudyRecord {
        study_id: id.to_string(),
        image,
        gaze,
        masks,
        transcript,
        finding_labels: labels.remove(id).unwrap_or_default(),
    };
    record
        .validate()
        .map_err(|reason| DatasetError::InvalidRecord {
            study_id: id.to_string(),
            reason,
        })?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transcript_round_trip_with_commas() {
        let s = vec![
            TimedSentence::new("heart size is normal, no effusion", 0.5, 2.25),
            TimedSentence::new("left \"base\" opacity", 3.0, 4.0),
        ];
        let text = serialize_transcript(&s);
        assert_eq!(parse_transcript(text.as_bytes()).unwrap(), s);
    }

    #[test]
    fn transcript_rejects_bad_rows() {
        let err = parse_transcript("text,t_start,t_end\nok,1,0.5\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::DurationNegative { line: 2 }));
        let err = parse_transcript("text,t_start,t_end\n  ,1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::MalformedRow { line: 2, .. }));
    }

    #[test]
    fn labels_grouped_by_study() {
        let csv = "study_id,finding,value\na,Effusion,present\na,cardiomegaly,0\nb,edema,-1\n";
        let l = parse_labels(csv.as_bytes()).unwrap();
        assert_eq!(l["a"]["effusion"], FindingLabel::Present);
        assert_eq!(l["a"]["cardiomegaly"], FindingLabel::Absent);
        assert_eq!(l["b"]["edema"], FindingLabel::Unknown);
        assert!(parse_labels("study_id,finding,value\na,x,maybe\n".as_bytes()).is_err());
    }

    #[test]
    fn brightness_gate() {
        let img = Grid::filled(4, 4, 0.9);
        assert!(passes_brightness(&img, None));
        let f = BrightnessFilter {
            min_mean: 0.05,
            max_mean: 0.85,
        };
        assert!(!passes_brightness(&img, Some(&f)));
        assert!(passes_brightness(&Grid::filled(4, 4, 0.5), Some(&f)));
    }
}
