//! Subject CSV reading and writing.
//!
//! Header row required. Columns: `id`, `arm` (`treatment` / `control`), an
//! optional `stage` (defaults to 1), then per outcome in priority order either
//! `y<q>,delta<q>` (time-to-event) or `v<q>`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use winseq::hce::{Arm, HceSchema, OutcomeKind, OutcomeValue, SubjectRecord};

use crate::error::CliError;

enum Source {
    Event { time: usize, event: usize },
    Value(usize),
}

pub fn read_subjects_path(path: &Path, schema: &HceSchema) -> Result<Vec<SubjectRecord>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    read_subjects(file, schema).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_subjects<R: Read>(input: R, schema: &HceSchema) -> Result<Vec<SubjectRecord>, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        if index.insert(h, i).is_some() {
            return Err(CliError::Data(format!("duplicate column '{h}'")));
        }
    }
    let col = |name: &str| -> Result<usize, CliError> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| CliError::Data(format!("missing column '{name}'")))
    };
    let id_col = col("id")?;
    let arm_col = col("arm")?;
    let stage_col = index.get("stage").copied();
    let mut expected = vec!["id".to_string(), "arm".to_string()];
    if stage_col.is_some() {
        expected.push("stage".into());
    }
    let mut sources = Vec::with_capacity(schema.len());
    for (q, spec) in schema.outcomes().iter().enumerate().map(|(i, s)| (i + 1, s)) {
        if spec.kind == OutcomeKind::TimeToEvent {
            let (y, d) = (format!("y{q}"), format!("delta{q}"));
            sources.push(Source::Event {
                time: col(&y)?,
                event: col(&d)?,
            });
            expected.extend([y, d]);
        } else {
            let v = format!("v{q}");
            sources.push(Source::Value(col(&v)?));
            expected.push(v);
        }
    }
    if let Some(extra) = headers.iter().find(|h| !expected.iter().any(|e| e == h)) {
        return Err(CliError::Data(format!(
            "unexpected column '{extra}' (expected {})",
            expected.join(",")
        )));
    }

    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64, CliError> {
            field(i).parse::<f64>().map_err(|_| {
                CliError::Data(format!(
                    "line {line}: column '{}': '{}' is not a number",
                    &headers[i],
                    field(i)
                ))
            })
        };
        let arm: Arm = field(arm_col)
            .parse()
            .map_err(|e: winseq::Error| CliError::Data(format!("line {line}: {e}")))?;
        let stage = match stage_col {
            Some(c) if !field(c).is_empty() => field(c)
                .parse::<u32>()
                .map_err(|_| CliError::Data(format!("line {line}: stage '{}' is not a positive integer", field(c))))?,
            _ => 1,
        };
        let values = sources
            .iter()
            .map(|s| match *s {
                Source::Event { time, event } => {
                    let event = match field(event) {
                        "1" => true,
                        "0" => false,
                        other => {
                            return Err(CliError::Data(format!(
                                "line {line}: column '{}' must be 0 or 1, got '{other}'",
                                &headers[event]
                            )))
                        }
                    };
                    Ok(OutcomeValue::Event {
                        time: num(time)?,
                        event,
                    })
                }
                Source::Value(c) => Ok(OutcomeValue::Value(num(c)?)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let record = SubjectRecord {
            id: field(id_col).to_string(),
            arm,
            stage,
            values,
        };
        record
            .validate(schema)
            .map_err(|e| CliError::Data(format!("line {line}: {e}")))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_subjects<W: Write>(output: W, schema: &HceSchema, records: &[SubjectRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(output);
    let mut header = vec!["id".to_string(), "arm".into(), "stage".into()];
    for (q, spec) in schema.outcomes().iter().enumerate().map(|(i, s)| (i + 1, s)) {
        if spec.kind == OutcomeKind::TimeToEvent {
            header.extend([format!("y{q}"), format!("delta{q}")]);
        } else {
            header.push(format!("v{q}"));
        }
    }
    w.write_record(&header)?;
    for r in records {
        r.validate(schema)?;
        let mut row = vec![r.id.clone(), r.arm.to_string(), r.stage.to_string()];
        for v in &r.values {
            match *v {
                // `{}` on f64 prints the shortest string that parses back to the same bits
                OutcomeValue::Event { time, event } => row.extend([format!("{time}"), (event as u8).to_string()]),
                OutcomeValue::Value(x) => row.push(format!("{x}")),
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// Records of one arm, stably ordered by enrollment stage.
pub fn arm_records(records: &[SubjectRecord], arm: Arm) -> Vec<SubjectRecord> {
    let mut v: Vec<SubjectRecord> = records.iter().filter(|r| r.arm == arm).cloned().collect();
    v.sort_by_key(|r| r.stage);
    v
}

/// Cumulative `(m_k, n_k)` for stages `1..=last`, where `last` defaults to the
/// largest stage present.
pub fn cumulative_stage_sizes(
    treat: &[SubjectRecord],
    ctrl: &[SubjectRecord],
    last: Option<u32>,
) -> Result<Vec<(usize, usize)>, CliError> {
    let max_stage = treat.iter().chain(ctrl).map(|r| r.stage).max().unwrap_or(1);
    let last = last.unwrap_or(max_stage);
    if last == 0 || last > max_stage {
        return Err(CliError::Data(format!(
            "requested stage {last}, data has stages 1..={max_stage}"
        )));
    }
    let upto = |arm: &[SubjectRecord], k: u32| arm.iter().filter(|r| r.stage <= k).count();
    Ok((1..=last).map(|k| (upto(treat, k), upto(ctrl, k))).collect())
}
