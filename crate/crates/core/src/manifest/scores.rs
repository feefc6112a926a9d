use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// One subject's rating of one sequence on the continuous 0..=100 scale.
///
/// The five scale labels sit at Bad 10, Poor 30, Fair 50, Good 70,
/// Excellent 90.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub subject_id: String,
    pub sequence_id: String,
    pub session_id: String,
    pub score: f64,
    /// Session excluded by the simulator-sickness questionnaire.
    #[serde(deserialize_with = "de_flag")]
    pub ssq_flag: bool,
}

fn de_flag<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" | "" => Ok(false),
        other => Err(serde::de::Error::custom(format!("bad ssq_flag {other:?}"))),
    }
}

pub fn read_scores(reader: impl Read, context: &str) -> Result<Vec<RatingRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse(context, e.to_string()))?.clone();
    let expected = ["subject_id", "sequence_id", "session_id", "score", "ssq_flag"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(context, format!("header must be {}", expected.join(","))));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<RatingRecord>().enumerate() {
        // line 1 is the header
        let line = i + 2;
        let rec = row.map_err(|e| Error::parse(format!("{context}:{line}"), e.to_string()))?;
        if !(0.0..=100.0).contains(&rec.score) {
            return Err(Error::Data(format!(
                "{context}:{line}: score {} outside [0,100]",
                rec.score
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<RatingRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores(std::io::BufReader::new(file), &path.display().to_string())
}

pub fn write_scores(records: &[RatingRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<scores>", e))
}
