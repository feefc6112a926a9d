//! Subjective score processing: SSQ exclusion, BT.500 Annex 2 subject
//! screening and MOS with 95% confidence intervals.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::manifest::RatingRecord;
use crate::par;

/// Sequences need at least this many valid ratings to be accepted.
pub const MIN_VALID_RATINGS: usize = 15;

/// Thresholds of the subject rejection rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreeningParams {
    /// Reject only if (P+Q)/N exceeds this.
    pub outlier_fraction: f64,
    /// ...and |P-Q|/(P+Q) is below this.
    pub asymmetry: f64,
}

impl Default for ScreeningParams {
    fn default() -> Self {
        ScreeningParams {
            outlier_fraction: 0.05,
            asymmetry: 0.3,
        }
    }
}

impl ScreeningParams {
    pub fn rejects(&self, p: usize, q: usize, n: usize) -> bool {
        if n == 0 || p + q == 0 {
            return false;
        }
        let pq = (p + q) as f64;
        pq / n as f64 > self.outlier_fraction && (p as f64 - q as f64).abs() / pq < self.asymmetry
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectScreeningResult {
    pub subject_id: String,
    /// Kurtosis of every sequence this subject rated, in first-seen order.
    pub kurtosis_per_sequence: Vec<(String, f64)>,
    pub p_count: usize,
    pub q_count: usize,
    pub n_ratings: usize,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosRecord {
    pub sequence_id: String,
    pub mos: f64,
    pub std: f64,
    pub n_valid: usize,
    pub ci95_half_width: f64,
}

impl MosRecord {
    pub fn is_sufficient(&self) -> bool {
        self.n_valid >= MIN_VALID_RATINGS
    }
}

/// Drop every record from a session flagged by the SSQ.
pub fn exclude_ssq(records: &[RatingRecord]) -> Vec<RatingRecord> {
    let kept: Vec<_> = records.iter().filter(|r| !r.ssq_flag).cloned().collect();
    if kept.is_empty() && !records.is_empty() {
        log::warn!("all {} ratings were excluded by SSQ flags", records.len());
    }
    kept
}

/// Per-sequence moments used by the screening test.
#[derive(Debug, Clone, Copy)]
struct SequenceStats {
    mean: f64,
    std: f64,
    kurtosis: f64,
}

impl SequenceStats {
    fn threshold_k(&self) -> f64 {
        if (2.0..=4.0).contains(&self.kurtosis) {
            2.0
        } else {
            20f64.sqrt()
        }
    }
}

fn sequence_stats(scores: &[f64]) -> SequenceStats {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let (m2, m4) = scores.iter().fold((0.0, 0.0), |(m2, m4), &s| {
        let d = s - mean;
        (m2 + d * d, m4 + d * d * d * d)
    });
    let std = (m2 / (n - 1.0)).sqrt();
    let (m2, m4) = (m2 / n, m4 / n);
    // constant column: no outliers are possible, any k will do
    let kurtosis = if m2 > 0.0 { m4 / (m2 * m2) } else { 0.0 };
    SequenceStats { mean, std, kurtosis }
}

/// Index of keys in first-appearance order.
fn ordered_keys<'a>(keys: impl Iterator<Item = &'a str>) -> (Vec<&'a str>, HashMap<&'a str, usize>) {
    let mut order = Vec::new();
    let mut index = HashMap::new();
    for k in keys {
        index.entry(k).or_insert_with(|| {
            order.push(k);
            order.len() - 1
        });
    }
    (order, index)
}

/// Single-pass BT.500 Annex 2 screening over all sequences.
///
/// Returns one result per subject (first-seen order) and the records of the
/// subjects that were kept.
pub fn screen_subjects(
    records: &[RatingRecord],
    params: &ScreeningParams,
) -> Result<(Vec<SubjectScreeningResult>, Vec<RatingRecord>)> {
    let (subjects, subject_idx) = ordered_keys(records.iter().map(|r| r.subject_id.as_str()));
    let (sequences, sequence_idx) = ordered_keys(records.iter().map(|r| r.sequence_id.as_str()));
    if subjects.len() < 2 || sequences.len() < 2 {
        return Err(Error::Data(format!(
            "screening needs >= 2 subjects and >= 2 sequences (got {} and {})",
            subjects.len(),
            sequences.len()
        )));
    }

    let mut by_sequence: Vec<Vec<f64>> = vec![Vec::new(); sequences.len()];
    for r in records {
        by_sequence[sequence_idx[r.sequence_id.as_str()]].push(r.score);
    }
    if let Some(j) = by_sequence.iter().position(|s| s.len() < 2) {
        return Err(Error::Data(format!(
            "sequence {:?} rated by fewer than 2 subjects",
            sequences[j]
        )));
    }
    let stats = par::map(&by_sequence, |s| sequence_stats(s));

    let mut results: Vec<SubjectScreeningResult> = subjects
        .iter()
        .map(|s| SubjectScreeningResult {
            subject_id: s.to_string(),
            kurtosis_per_sequence: Vec::new(),
            p_count: 0,
            q_count: 0,
            n_ratings: 0,
            rejected: false,
        })
        .collect();
    for r in records {
        let j = sequence_idx[r.sequence_id.as_str()];
        let st = &stats[j];
        let res = &mut results[subject_idx[r.subject_id.as_str()]];
        let k = st.threshold_k();
        if r.score > st.mean + k * st.std {
            res.p_count += 1;
        } else if r.score < st.mean - k * st.std {
            res.q_count += 1;
        }
        res.n_ratings += 1;
        if !res.kurtosis_per_sequence.iter().any(|(id, _)| id == sequences[j]) {
            res.kurtosis_per_sequence.push((sequences[j].to_string(), st.kurtosis));
        }
    }
    for res in &mut results {
        res.rejected = params.rejects(res.p_count, res.q_count, res.n_ratings);
        if res.rejected {
            log::info!(
                "rejected subject {} (P={}, Q={}, N={})",
                res.subject_id,
                res.p_count,
                res.q_count,
                res.n_ratings
            );
        }
    }
    let kept = records
        .iter()
        .filter(|r| !results[subject_idx[r.subject_id.as_str()]].rejected)
        .cloned()
        .collect();
    Ok((results, kept))
}

/// Mean, sample standard deviation and 95% CI half-width per sequence.
///
/// Sequences with fewer than [`MIN_VALID_RATINGS`] ratings are kept and
/// reported through the log.
pub fn compute_mos(records: &[RatingRecord]) -> Result<Vec<MosRecord>> {
    let (sequences, sequence_idx) = ordered_keys(records.iter().map(|r| r.sequence_id.as_str()));
    if sequences.is_empty() {
        return Err(Error::Data("no valid scores to compute MOS from".into()));
    }
    let mut by_sequence: Vec<Vec<f64>> = vec![Vec::new(); sequences.len()];
    for r in records {
        by_sequence[sequence_idx[r.sequence_id.as_str()]].push(r.score);
    }
    let out: Vec<MosRecord> = sequences
        .iter()
        .zip(&by_sequence)
        .map(|(id, scores)| {
            let n = scores.len();
            let mos = scores.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (scores.iter().map(|s| (s - mos).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            MosRecord {
                sequence_id: id.to_string(),
                mos,
                std,
                n_valid: n,
                ci95_half_width: 1.96 * std / (n as f64).sqrt(),
            }
        })
        .collect();
    for rec in out.iter().filter(|r| !r.is_sufficient()) {
        log::warn!(
            "sequence {} has only {} valid ratings (< {MIN_VALID_RATINGS})",
            rec.sequence_id,
            rec.n_valid
        );
    }
    Ok(out)
}

/// SSQ exclusion, screening and MOS in one pass.
pub fn process_scores(
    records: &[RatingRecord],
    params: &ScreeningParams,
) -> Result<(Vec<SubjectScreeningResult>, Vec<MosRecord>)> {
    if records.is_empty() {
        return Err(Error::Data("no ratings".into()));
    }
    let valid = exclude_ssq(records);
    if valid.is_empty() {
        return Err(Error::Data(format!(
            "all {} ratings come from SSQ-flagged sessions",
            records.len()
        )));
    }
    let (screening, kept) = screen_subjects(&valid, params)?;
    Ok((screening, compute_mos(&kept)?))
}

pub fn write_mos_csv(records: &[MosRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sequence_id", "mos", "std", "n_valid", "ci95_half_width"])
        .map_err(|e| Error::Data(e.to_string()))?;
    for r in records {
        w.write_record([
            r.sequence_id.clone(),
            r.mos.to_string(),
            r.std.to_string(),
            r.n_valid.to_string(),
            r.ci95_half_width.to_string(),
        ])
        .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<mos>", e))
}

pub fn read_mos_csv(reader: impl Read, context: &str) -> Result<Vec<MosRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let ctx = format!("{context}:{}", i + 2);
        let row = row.map_err(|e| Error::parse(&ctx, e.to_string()))?;
        if row.len() != 5 {
            return Err(Error::parse(&ctx, "expected 5 columns"));
        }
        let num = |k: usize| -> Result<f64> {
            row[k]
                .parse::<f64>()
                .map_err(|e| Error::parse(&ctx, format!("column {k}: {e}")))
        };
        out.push(MosRecord {
            sequence_id: row[0].to_string(),
            mos: num(1)?,
            std: num(2)?,
            n_valid: row[3]
                .parse()
                .map_err(|e| Error::parse(&ctx, format!("n_valid: {e}")))?,
            ci95_half_width: num(4)?,
        });
    }
    Ok(out)
}

pub fn load_mos_csv(path: impl AsRef<Path>) -> Result<Vec<MosRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_mos_csv(std::io::BufReader::new(file), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rec(subject: usize, seq: usize, score: f64) -> RatingRecord {
        RatingRecord {
            subject_id: format!("s{subject:02}"),
            sequence_id: format!("v{seq:02}"),
            session_id: "sess".into(),
            score,
            ssq_flag: false,
        }
    }

    #[test]
    fn ssq_exclusion() {
        let mut recs: Vec<_> = (0..10).map(|i| rec(i, 0, 50.0)).collect();
        assert_eq!(exclude_ssq(&recs), recs);
        recs[3].ssq_flag = true;
        recs[7].ssq_flag = true;
        let kept = exclude_ssq(&recs);
        assert_eq!(kept.len(), 8);
        assert!(kept.iter().all(|r| r.subject_id != "s03" && r.subject_id != "s07"));
        for r in &mut recs {
            r.ssq_flag = true;
        }
        assert!(exclude_ssq(&recs).is_empty());
    }

    #[test]
    fn identical_scores_reject_nobody() {
        let recs: Vec<_> = (0..20)
            .flat_map(|s| (0..5).map(move |j| rec(s, j, 20.0 + 10.0 * j as f64)))
            .collect();
        let (res, kept) = screen_subjects(&recs, &ScreeningParams::default()).unwrap();
        assert!(res.iter().all(|r| !r.rejected && r.p_count == 0 && r.q_count == 0));
        assert_eq!(kept.len(), recs.len());
    }

    #[test]
    fn rejection_rule_needs_symmetry() {
        let p = ScreeningParams::default();
        // 3/20 = 0.15 > 0.05, but |3-0|/3 = 1 >= 0.3
        assert!(!p.rejects(3, 0, 20));
        assert!(p.rejects(2, 2, 20));
        // 1/20 = 0.05 is not > 0.05
        assert!(!p.rejects(1, 0, 20));
        assert!(!p.rejects(0, 0, 20));
    }

    #[test]
    fn degenerate_inputs() {
        let recs = vec![rec(0, 0, 10.0), rec(1, 0, 20.0)];
        assert!(screen_subjects(&recs, &ScreeningParams::default()).is_err());
        let recs = vec![rec(0, 0, 10.0), rec(1, 0, 20.0), rec(0, 1, 30.0)];
        let err = screen_subjects(&recs, &ScreeningParams::default()).unwrap_err();
        assert!(err.to_string().contains("fewer than 2"), "{err}");
    }

    #[test]
    fn kurtosis_is_non_excess() {
        // two-point symmetric distribution: m4/m2^2 = 1
        let st = sequence_stats(&[-1.0, 1.0, -1.0, 1.0]);
        assert_abs_diff_eq!(st.kurtosis, 1.0, epsilon = 1e-12);
        assert_eq!(st.threshold_k(), 20f64.sqrt());
    }

    #[test]
    fn mos_worked_values() {
        let m = compute_mos(&[rec(0, 0, 50.0), rec(1, 0, 50.0), rec(2, 0, 50.0)]).unwrap();
        assert_eq!(m[0].mos, 50.0);
        assert_eq!(m[0].ci95_half_width, 0.0);

        let m = compute_mos(&[rec(0, 0, 40.0), rec(1, 0, 60.0)]).unwrap();
        assert_eq!(m[0].mos, 50.0);
        assert_abs_diff_eq!(m[0].std, 200f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(m[0].std, 14.142, epsilon = 1e-3);
        assert_abs_diff_eq!(m[0].ci95_half_width, 19.6, epsilon = 1e-9);
        assert!(!m[0].is_sufficient());

        assert!(compute_mos(&[]).is_err());
    }

    #[test]
    fn mos_csv_round_trip() {
        let m = compute_mos(&[rec(0, 0, 40.0), rec(1, 0, 61.5), rec(0, 1, 3.0)]).unwrap();
        let mut buf = Vec::new();
        write_mos_csv(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sequence_id,mos,std,n_valid,ci95_half_width\n"));
        assert_eq!(read_mos_csv(buf.as_slice(), "t").unwrap(), m);
    }

    fn table(noise: &[Vec<f64>]) -> Vec<RatingRecord> {
        noise
            .iter()
            .enumerate()
            .flat_map(|(s, row)| {
                row.iter()
                    .enumerate()
                    .map(move |(j, &v)| rec(s, j, (10.0 + 8.0 * j as f64 + v).clamp(0.0, 100.0)))
            })
            .collect()
    }

    proptest! {
        #[test]
        fn screening_is_affine_invariant(
            noise in prop::collection::vec(prop::collection::vec(-30.0f64..30.0, 6), 6..12),
            a in 0.1f64..3.0,
            b in -50.0f64..50.0,
        ) {
            let recs = table(&noise);
            let mapped: Vec<_> = recs.iter().map(|r| RatingRecord { score: a * r.score + b, ..r.clone() }).collect();
            let p = ScreeningParams::default();
            let (r1, _) = screen_subjects(&recs, &p).unwrap();
            let (r2, _) = screen_subjects(&mapped, &p).unwrap();
            let f = |v: &[SubjectScreeningResult]| v.iter().map(|r| r.rejected).collect::<Vec<_>>();
            prop_assert_eq!(f(&r1), f(&r2));
        }

        #[test]
        fn mos_lies_within_score_range(noise in prop::collection::vec(prop::collection::vec(-30.0f64..30.0, 4), 2..10)) {
            let recs = table(&noise);
            for m in compute_mos(&recs).unwrap() {
                let scores: Vec<f64> = recs.iter().filter(|r| r.sequence_id == m.sequence_id).map(|r| r.score).collect();
                let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(m.mos >= lo - 1e-9 && m.mos <= hi + 1e-9);
            }
        }
    }
}
