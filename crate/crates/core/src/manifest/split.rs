use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use super::Split;
use crate::error::{Error, Result};
use crate::nn::params::init_rng;

/// Number of test sequences for `n` sequences at `train_ratio`: the floor of
/// the test share.
pub fn test_count(n: usize, train_ratio: f64) -> usize {
    ((n as f64 * (1.0 - train_ratio)) + 1e-9).floor() as usize
}

/// Seeded random train/test assignment, returned in input order.
pub fn assign_split(ids: &[String], train_ratio: f64, seed: u64) -> Result<Vec<(String, Split)>> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::Invalid(format!(
            "split ratio must be in (0, 1), got {train_ratio}"
        )));
    }
    let mut seen = HashMap::new();
    for id in ids {
        if seen.insert(id.as_str(), ()).is_some() {
            return Err(Error::Data(format!("duplicate sequence id {id}")));
        }
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut init_rng(seed));
    let n_test = test_count(ids.len(), train_ratio);
    let mut split = vec![Split::Train; ids.len()];
    for &i in &order[..n_test] {
        split[i] = Split::Test;
    }
    Ok(ids.iter().cloned().zip(split).collect())
}

/// Fail if any sequence is assigned to both splits.
pub fn check_split(assignments: &[(String, Split)]) -> Result<()> {
    let mut first: HashMap<&str, Split> = HashMap::new();
    for (id, s) in assignments {
        match first.get(id.as_str()) {
            Some(prev) if *prev != *s && *s != Split::Unassigned && *prev != Split::Unassigned => {
                return Err(Error::Data(format!("split leakage: {id} is in both train and test")));
            }
            Some(_) => {}
            None => {
                first.insert(id, *s);
            }
        }
    }
    Ok(())
}

/// `sequence_id,split`
pub fn write_split_csv(assignments: &[(String, Split)], mut out: impl Write) -> Result<()> {
    let mut text = String::from("sequence_id,split\n");
    for (id, s) in assignments {
        text.push_str(&format!("{id},{s}\n"));
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<split>", e))
}

pub fn read_split_csv(input: impl Read, context: &str) -> Result<Vec<(String, Split)>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| Error::parse(context, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["sequence_id", "split"] {
        return Err(Error::parse(context, "expected header sequence_id,split"));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(context, e.to_string()))?;
        let split = rec[1]
            .parse()
            .map_err(|e| Error::parse(format!("{context}:{}", i + 2), format!("{e}")))?;
        out.push((rec[0].to_string(), split));
    }
    Ok(out)
}

pub fn load_split_csv(path: impl AsRef<Path>) -> Result<Vec<(String, Split)>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_split_csv(f, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i:03}")).collect()
    }

    fn counts(a: &[(String, Split)]) -> (usize, usize) {
        let test = a.iter().filter(|(_, s)| *s == Split::Test).count();
        (a.len() - test, test)
    }

    #[test]
    fn ratio_by_count() {
        assert_eq!(counts(&assign_split(&ids(300), 0.8, 1).unwrap()), (240, 60));
        assert_eq!(counts(&assign_split(&ids(10), 0.8, 1).unwrap()), (8, 2));
        assert_eq!(counts(&assign_split(&ids(8), 0.8, 1).unwrap()), (7, 1));
        assert!(assign_split(&ids(10), 1.0, 1).is_err());
    }

    #[test]
    fn seeded_and_order_preserving() {
        let a = assign_split(&ids(50), 0.8, 3).unwrap();
        assert_eq!(a, assign_split(&ids(50), 0.8, 3).unwrap());
        assert_ne!(a, assign_split(&ids(50), 0.8, 4).unwrap());
        assert!(a.iter().zip(ids(50)).all(|((x, _), y)| *x == y));
    }

    #[test]
    fn csv_round_trip_and_leakage() {
        let a = assign_split(&ids(6), 0.5, 0).unwrap();
        let mut buf = Vec::new();
        write_split_csv(&a, &mut buf).unwrap();
        assert_eq!(read_split_csv(buf.as_slice(), "t").unwrap(), a);
        check_split(&a).unwrap();
        let mut leaky = a.clone();
        leaky.push((
            "v000".into(),
            if a[0].1 == Split::Train {
                Split::Test
            } else {
                Split::Train
            },
        ));
        assert!(check_split(&leaky).is_err());
    }
}
