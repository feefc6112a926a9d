//! Head-movement traces (yaw, pitch, roll in degrees, nominally 120 Hz).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const NOMINAL_RATE_HZ: f64 = 120.0;
pub const YAW_BINS: usize = 36;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeadMovementTrace {
    pub t: Vec<f64>,
    pub yaw: Vec<f64>,
    pub pitch: Vec<f64>,
    pub roll: Vec<f64>,
}

impl HeadMovementTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Map an angle into `(-180, 180]`.
pub fn wrap_degrees(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Parse CSV `t,yaw,pitch,roll`. Rows repeating the previous timestamp are
/// dropped (first one kept); time must otherwise strictly increase.
pub fn read_hm(reader: impl Read, context: &str) -> Result<HeadMovementTrace> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse(context, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["t", "yaw", "pitch", "roll"] {
        return Err(Error::parse(context, "header must be t,yaw,pitch,roll"));
    }
    let mut trace = HeadMovementTrace {
        t: Vec::new(),
        yaw: Vec::new(),
        pitch: Vec::new(),
        roll: Vec::new(),
    };
    for (i, row) in rdr.records().enumerate() {
        let ctx = format!("{context}:{}", i + 2);
        let row = row.map_err(|e| Error::parse(&ctx, e.to_string()))?;
        if row.len() != 4 {
            return Err(Error::parse(&ctx, "expected 4 columns"));
        }
        let mut v = [0.0; 4];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = row[k]
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::parse(&ctx, format!("bad number {:?}", &row[k])))?;
        }
        let [t, yaw, pitch, roll] = v;
        if !(-180.0..=180.0).contains(&yaw) {
            return Err(Error::Data(format!("{ctx}: yaw {yaw} outside [-180,180]")));
        }
        if !(-90.0..=90.0).contains(&pitch) {
            return Err(Error::Data(format!("{ctx}: pitch {pitch} outside [-90,90]")));
        }
        if !(-180.0..=180.0).contains(&roll) {
            return Err(Error::Data(format!("{ctx}: roll {roll} outside [-180,180]")));
        }
        if let Some(&last) = trace.t.last() {
            if t == last {
                continue;
            }
            if t < last {
                return Err(Error::Data(format!("{ctx}: time {t} goes backwards from {last}")));
            }
        }
        trace.t.push(t);
        trace.yaw.push(yaw);
        trace.pitch.push(pitch);
        trace.roll.push(roll);
    }
    if trace.is_empty() {
        return Err(Error::Data(format!("{context}: empty head-movement trace")));
    }
    Ok(trace)
}

pub fn load_hm(path: impl AsRef<Path>) -> Result<HeadMovementTrace> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_hm(std::io::BufReader::new(file), &path.display().to_string())
}

pub fn write_hm(trace: &HeadMovementTrace, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(["t", "yaw", "pitch", "roll"]).map_err(err)?;
    for i in 0..trace.len() {
        w.write_record([
            trace.t[i].to_string(),
            trace.yaw[i].to_string(),
            trace.pitch[i].to_string(),
            trace.roll[i].to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<hm>", e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisSpeed {
    /// Total angle travelled over total time (deg/s).
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmSummary {
    pub samples: usize,
    pub duration_s: f64,
    pub yaw_speed: AxisSpeed,
    pub pitch_speed: AxisSpeed,
    pub roll_speed: AxisSpeed,
    /// Time-weighted occupancy of 10 degree yaw bins starting at -180.
    pub yaw_histogram: [f64; YAW_BINS],
    /// Time-weighted fraction of samples with |pitch| <= 30.
    pub equator_fraction: f64,
}

fn axis_speed(t: &[f64], a: &[f64], wrap: bool) -> AxisSpeed {
    let mut travelled = 0.0;
    let mut max = 0.0f64;
    for i in 1..t.len() {
        let d = a[i] - a[i - 1];
        let d = if wrap { wrap_degrees(d) } else { d }.abs();
        travelled += d;
        max = max.max(d / (t[i] - t[i - 1]));
    }
    let span = t[t.len() - 1] - t[0];
    AxisSpeed {
        mean: if span > 0.0 { travelled / span } else { 0.0 },
        max,
    }
}

fn yaw_bin(yaw: f64) -> usize {
    // [-180, 180) -> 0..36
    let y = (yaw + 180.0).rem_euclid(360.0);
    ((y / 10.0) as usize).min(YAW_BINS - 1)
}

/// Speeds, yaw occupancy and equator fraction. Each sample is weighted by
/// the time until the next one.
pub fn hm_stats(trace: &HeadMovementTrace) -> Result<HmSummary> {
    let n = trace.len();
    if n < 2 {
        return Err(Error::Data("head-movement statistics need at least 2 samples".into()));
    }
    let t = &trace.t;
    let duration = t[n - 1] - t[0];
    if !(duration > 0.0) {
        return Err(Error::Data("trace spans zero time".into()));
    }
    let mut hist = [0.0; YAW_BINS];
    let mut equator = 0.0;
    for i in 0..n - 1 {
        let dt = (t[i + 1] - t[i]) / duration;
        hist[yaw_bin(trace.yaw[i])] += dt;
        if trace.pitch[i].abs() <= 30.0 {
            equator += dt;
        }
    }
    Ok(HmSummary {
        samples: n,
        duration_s: duration,
        yaw_speed: axis_speed(t, &trace.yaw, true),
        pitch_speed: axis_speed(t, &trace.pitch, false),
        roll_speed: axis_speed(t, &trace.roll, true),
        yaw_histogram: hist,
        equator_fraction: equator,
    })
}

pub fn write_summary_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a HmSummary)>, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Data(e.to_string());
    let mut header: Vec<String> = [
        "trace",
        "samples",
        "duration_s",
        "yaw_speed_mean",
        "yaw_speed_max",
        "pitch_speed_mean",
        "pitch_speed_max",
        "roll_speed_mean",
        "roll_speed_max",
        "equator_fraction",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..YAW_BINS).map(|b| format!("yaw_bin_{b:02}")));
    w.write_record(&header).map_err(err)?;
    for (id, s) in rows {
        let mut rec = vec![
            id.to_string(),
            s.samples.to_string(),
            s.duration_s.to_string(),
            s.yaw_speed.mean.to_string(),
            s.yaw_speed.max.to_string(),
            s.pitch_speed.mean.to_string(),
            s.pitch_speed.max.to_string(),
            s.roll_speed.mean.to_string(),
            s.roll_speed.max.to_string(),
            s.equator_fraction.to_string(),
        ];
        rec.extend(s.yaw_histogram.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<hm summary>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn synthetic(n: usize, rate: f64, yaw: impl Fn(f64) -> f64) -> HeadMovementTrace {
        let t: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
        HeadMovementTrace {
            yaw: t.iter().map(|&s| yaw(s)).collect(),
            pitch: vec![5.0; n],
            roll: vec![0.0; n],
            t,
        }
    }

    fn csv_of(trace: &HeadMovementTrace) -> Vec<u8> {
        let mut buf = Vec::new();
        write_hm(trace, &mut buf).unwrap();
        buf
    }

    #[test]
    fn twenty_seconds_at_nominal_rate() {
        let trace = synthetic(20 * 120, NOMINAL_RATE_HZ, |s| wrap_degrees(s * 3.0));
        let back = read_hm(csv_of(&trace).as_slice(), "t").unwrap();
        assert_eq!(back.len(), 2400);
    }

    #[test]
    fn range_and_empty_errors() {
        let err = read_hm("t,yaw,pitch,roll\n0,0,95,0\n".as_bytes(), "t").unwrap_err();
        assert!(err.to_string().contains("pitch 95"), "{err}");
        assert!(read_hm("t,yaw,pitch,roll\n".as_bytes(), "t").is_err());
        assert!(read_hm("".as_bytes(), "t").is_err());
        assert!(read_hm("t,yaw,pitch,roll\n1,0,0,0\n0.5,0,0,0\n".as_bytes(), "t").is_err());
    }

    #[test]
    fn duplicate_timestamps_keep_first() {
        let tr = read_hm("t,yaw,pitch,roll\n0,1,0,0\n0,2,0,0\n1,3,0,0\n".as_bytes(), "t").unwrap();
        assert_eq!(tr.yaw, vec![1.0, 3.0]);
    }

    #[test]
    fn static_trace() {
        let s = hm_stats(&synthetic(50, 120.0, |_| 42.0)).unwrap();
        assert_eq!(s.yaw_speed.mean, 0.0);
        assert_eq!(s.yaw_speed.max, 0.0);
        assert_eq!(s.pitch_speed.max, 0.0);
        assert_eq!(s.yaw_histogram.iter().filter(|&&v| v > 0.0).count(), 1);
        assert_abs_diff_eq!(s.yaw_histogram[yaw_bin(42.0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.equator_fraction, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn yaw_wraps_across_the_seam() {
        let tr = HeadMovementTrace {
            t: vec![0.0, 1.0],
            yaw: vec![179.0, -179.0],
            pitch: vec![0.0; 2],
            roll: vec![0.0; 2],
        };
        let s = hm_stats(&tr).unwrap();
        assert_abs_diff_eq!(s.yaw_speed.max, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.yaw_speed.mean, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_rotation_speed() {
        let s = hm_stats(&synthetic(20 * 120, 120.0, |s| wrap_degrees(-170.0 + 10.0 * s))).unwrap();
        assert_abs_diff_eq!(s.yaw_speed.mean, 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.yaw_speed.max, 10.0, epsilon = 1e-9);
    }

    #[test]
    fn summary_csv_has_bins() {
        let s = hm_stats(&synthetic(10, 120.0, |_| 0.0)).unwrap();
        let mut buf = Vec::new();
        write_summary_csv([("a", &s)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 10 + YAW_BINS);
    }

    proptest! {
        #[test]
        fn wrapped_difference_range(a in -1000.0f64..1000.0) {
            let w = wrap_degrees(a);
            prop_assert!(w > -180.0 && w <= 180.0);
            prop_assert!(((a - w) / 360.0 - ((a - w) / 360.0).round()).abs() < 1e-9);
        }

        #[test]
        fn stats_invariant_to_full_turns(yaws in prop::collection::vec(-180.0f64..180.0, 3..40)) {
            let n = yaws.len();
            let tr = HeadMovementTrace {
                t: (0..n).map(|i| i as f64 / 120.0).collect(),
                yaw: yaws.clone(),
                pitch: vec![0.0; n],
                roll: vec![0.0; n],
            };
            let shifted = HeadMovementTrace { yaw: yaws.iter().map(|y| y + 360.0).collect(), ..tr.clone() };
            let (a, b) = (hm_stats(&tr).unwrap(), hm_stats(&shifted).unwrap());
            prop_assert!((a.yaw_speed.mean - b.yaw_speed.mean).abs() < 1e-9);
            prop_assert!((a.yaw_histogram.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in a.yaw_histogram.iter().zip(&b.yaw_histogram) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
