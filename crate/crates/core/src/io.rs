//! CSV readers and writers for cohorts, pooled tables and weights.
//!
//! Every written file starts with one `#` comment line carrying the tool
//! version and the hash of the configuration that produced it. Readers skip
//! comment lines.

use std::io::{Read, Write};

use thiserror::Error;

use crate::domain::{BaselineCovariates, CensorReason, Dictionary, Measurement, Smoking, SubjectRecord, SurgeryType};
use crate::expansion::PooledTable;
use crate::weights::WeightSet;

pub const SUBJECT_COLUMNS: [&str; 14] = [
    "subject_id",
    "gender",
    "race",
    "site",
    "smoking_status",
    "elix_score",
    "insulin",
    "bmi0",
    "a1c0",
    "surgery_time",
    "surgery_type",
    "event_time",
    "censor_time",
    "censor_reason",
];

pub const MEASUREMENT_COLUMNS: [&str; 4] = ["subject_id", "month", "measure", "value"];

pub const POOLED_COLUMNS: [&str; 13] =
    ["trial", "subject_id", "period", "y", "a_base", "n", "c", "e", "r", "bmi_base", "a1c_base", "bmi_t", "a1c_t"];

pub const WEIGHT_COLUMNS: [&str; 8] = ["trial", "subject_id", "period", "w_a", "w_c", "w_n", "w_r", "w_total"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{file} line {line}: column `{column}`: {message}")]
    Field { file: String, line: u64, column: String, message: String },
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("measurements reference unknown subject_id {0}")]
    UnknownSubject(u64),
}

/// Header comment written as the first line of every artifact.
pub fn header_line(config_hash: &str) -> String {
    format!("# seqtte {} config_sha256={}\n", env!("CARGO_PKG_VERSION"), config_hash)
}

fn writer<W: Write>(mut out: W, config_hash: &str) -> Result<csv::Writer<W>, IoError> {
    out.write_all(header_line(config_hash).as_bytes())?;
    Ok(csv::WriterBuilder::new().from_writer(out))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Shortest round-trip float formatting.
fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_subjects<W: Write>(
    out: W,
    cohort: &[SubjectRecord],
    dict: &Dictionary,
    config_hash: &str,
) -> Result<(), IoError> {
    let mut w = writer(out, config_hash)?;
    w.write_record(SUBJECT_COLUMNS)?;
    for s in cohort {
        let b = &s.baseline;
        w.write_record([
            s.subject_id.to_string(),
            b.gender.to_string(),
            dict.race.get(b.race as usize).cloned().unwrap_or_else(|| b.race.to_string()),
            dict.site.get(b.site as usize).cloned().unwrap_or_else(|| b.site.to_string()),
            b.smoking_status.as_str().to_string(),
            num(b.elix_score),
            b.insulin.to_string(),
            num(b.bmi0),
            num(b.a1c0),
            opt(s.surgery_time),
            opt(s.surgery_type.map(|t| t.as_str())),
            opt(s.event_time),
            opt(s.censor_time),
            opt(s.censor_reason.map(|r| r.as_str())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_measurements<W: Write>(out: W, cohort: &[SubjectRecord], config_hash: &str) -> Result<(), IoError> {
    let mut w = writer(out, config_hash)?;
    w.write_record(MEASUREMENT_COLUMNS)?;
    for s in cohort {
        for (name, series) in [("bmi", &s.bmi_series), ("a1c", &s.a1c_series)] {
            for m in series {
                w.write_record([s.subject_id.to_string(), m.month.to_string(), name.to_string(), num(m.value)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Columns {
    file: String,
    index: Vec<usize>,
}

impl Columns {
    fn new(file: &str, headers: &csv::StringRecord, wanted: &[&str]) -> Result<Self, IoError> {
        let index = wanted
            .iter()
            .map(|c| {
                headers
                    .iter()
                    .position(|h| h == *c)
                    .ok_or_else(|| IoError::MissingColumn { file: file.to_string(), column: c.to_string() })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { file: file.to_string(), index })
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, i: usize) -> &'r str {
        rec.get(self.index[i]).unwrap_or("")
    }

    fn err(&self, rec: &csv::StringRecord, column: &str, message: impl Into<String>) -> IoError {
        IoError::Field {
            file: self.file.clone(),
            line: rec.position().map(|p| p.line()).unwrap_or(0),
            column: column.to_string(),
            message: message.into(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, rec: &csv::StringRecord, i: usize, column: &str) -> Result<T, IoError> {
        let s = self.get(rec, i);
        s.parse().map_err(|_| self.err(rec, column, format!("cannot parse `{s}`")))
    }

    fn parse_opt<T: std::str::FromStr>(
        &self,
        rec: &csv::StringRecord,
        i: usize,
        column: &str,
    ) -> Result<Option<T>, IoError> {
        if self.get(rec, i).is_empty() {
            Ok(None)
        } else {
            self.parse(rec, i, column).map(Some)
        }
    }
}

/// Reads the two-file cohort format. Categorical levels must be declared in
/// `dict`; unknown levels are load errors.
pub fn read_cohort<R1: Read, R2: Read>(
    subjects: R1,
    measurements: R2,
    dict: &Dictionary,
) -> Result<Vec<SubjectRecord>, IoError> {
    let mut rdr = reader(subjects);
    let cols = Columns::new("subjects", rdr.headers()?, &SUBJECT_COLUMNS)?;
    let mut cohort = Vec::new();
    let mut by_id = std::collections::HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let c = |i: usize| SUBJECT_COLUMNS[i];
        let level = |i: usize, levels: &[String]| {
            let s = cols.get(&rec, i);
            levels
                .iter()
                .position(|l| l == s)
                .map(|p| p as u32)
                .ok_or_else(|| cols.err(&rec, c(i), format!("unknown level `{s}`")))
        };
        let smoking = cols.get(&rec, 4);
        let baseline = BaselineCovariates {
            gender: cols.parse(&rec, 1, c(1))?,
            race: level(2, &dict.race)?,
            site: level(3, &dict.site)?,
            smoking_status: Smoking::parse(smoking)
                .ok_or_else(|| cols.err(&rec, c(4), format!("unknown level `{smoking}`")))?,
            elix_score: cols.parse(&rec, 5, c(5))?,
            insulin: cols.parse(&rec, 6, c(6))?,
            bmi0: cols.parse(&rec, 7, c(7))?,
            a1c0: cols.parse(&rec, 8, c(8))?,
        };
        let surgery_type = match cols.get(&rec, 10) {
            "" => None,
            s => Some(SurgeryType::parse(s).ok_or_else(|| cols.err(&rec, c(10), format!("unknown level `{s}`")))?),
        };
        let censor_reason = match cols.get(&rec, 13) {
            "" => None,
            s => Some(CensorReason::parse(s).ok_or_else(|| cols.err(&rec, c(13), format!("unknown level `{s}`")))?),
        };
        let id: u64 = cols.parse(&rec, 0, c(0))?;
        by_id.insert(id, cohort.len());
        cohort.push(SubjectRecord {
            subject_id: id,
            baseline,
            bmi_series: Vec::new(),
            a1c_series: Vec::new(),
            surgery_time: cols.parse_opt(&rec, 9, c(9))?,
            surgery_type,
            event_time: cols.parse_opt(&rec, 11, c(11))?,
            censor_time: cols.parse_opt(&rec, 12, c(12))?,
            censor_reason,
        });
    }

    let mut rdr = reader(measurements);
    let cols = Columns::new("measurements", rdr.headers()?, &MEASUREMENT_COLUMNS)?;
    for rec in rdr.records() {
        let rec = rec?;
        let id: u64 = cols.parse(&rec, 0, "subject_id")?;
        let &k = by_id.get(&id).ok_or(IoError::UnknownSubject(id))?;
        let m = Measurement { month: cols.parse(&rec, 1, "month")?, value: cols.parse(&rec, 3, "value")? };
        match cols.get(&rec, 2) {
            "bmi" => cohort[k].bmi_series.push(m),
            "a1c" => cohort[k].a1c_series.push(m),
            s => return Err(cols.err(&rec, "measure", format!("expected bmi or a1c, got `{s}`"))),
        }
    }
    for s in &mut cohort {
        // Stable: rows loaded later win ties within a month.
        s.bmi_series.sort_by_key(|m| m.month);
        s.a1c_series.sort_by_key(|m| m.month);
    }
    Ok(cohort)
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_pooled<W: Write>(out: W, table: &PooledTable, config_hash: &str) -> Result<(), IoError> {
    let mut w = writer(out, config_hash)?;
    w.write_record(POOLED_COLUMNS)?;
    for r in &table.rows {
        w.write_record([
            r.trial.to_string(),
            r.subject_id.to_string(),
            r.period.to_string(),
            flag(r.y).into(),
            flag(r.a_base).into(),
            flag(r.n).into(),
            flag(r.c).into(),
            r.e.map(|e| flag(e).to_string()).unwrap_or_default(),
            flag(r.r).into(),
            opt(r.l_base.bmi.map(num)),
            opt(r.l_base.a1c.map(num)),
            opt(r.l_t.bmi.map(num)),
            opt(r.l_t.a1c.map(num)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_weights<W: Write>(out: W, table: &PooledTable, set: &WeightSet, config_hash: &str) -> Result<(), IoError> {
    let mut w = writer(out, config_hash)?;
    w.write_record(WEIGHT_COLUMNS)?;
    for (i, r) in table.rows.iter().enumerate() {
        w.write_record([
            r.trial.to_string(),
            r.subject_id.to_string(),
            r.period.to_string(),
            num(set.w_a[i]),
            num(set.w_c[i]),
            num(set.w_n[i]),
            num(set.w_r[i]),
            num(set.w_total[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}
