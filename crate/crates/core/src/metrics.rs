//! Evaluation metrics: 4-parameter logistic mapping followed by PLCC, SROCC,
//! KROCC (tau-b) and RMSE.

use std::cmp::Ordering;
use std::io::Write;

use crate::error::{Error, Result};

/// Monotone 4-parameter logistic `(b1 - b2) / (1 + exp(-(x - b3) / |b4|)) + b2`.
pub fn logistic4(x: f64, b: &[f64; 4]) -> f64 {
    let scale = b[3].abs().max(f64::MIN_POSITIVE);
    (b[0] - b[1]) / (1.0 + (-(x - b[2]) / scale).exp()) + b[1]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Stop once every vertex is within this distance of the best one.
    pub size_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_iter: 2000,
            size_tol: 1e-10,
        }
    }
}

/// Minimize `f` with the Nelder-Mead simplex method. Returns the best point,
/// its value and the iteration count.
pub fn nelder_mead<const N: usize>(
    f: impl Fn(&[f64; N]) -> f64,
    x0: [f64; N],
    opts: &NelderMeadOptions,
) -> ([f64; N], f64, usize) {
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((x0, f(&x0)));
    for i in 0..N {
        let mut x = x0;
        x[i] = if x[i] != 0.0 { x[i] * 1.05 } else { 0.00025 };
        simplex.push((x, f(&x)));
    }
    let order = |s: &mut Vec<([f64; N], f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    let lerp = |a: &[f64; N], b: &[f64; N], t: f64| -> [f64; N] { std::array::from_fn(|i| a[i] + t * (b[i] - a[i])) };

    let mut iter = 0;
    while iter < opts.max_iter {
        order(&mut simplex);
        let best = simplex[0].0;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&best).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if size < opts.size_tol {
            break;
        }
        iter += 1;

        let centroid: [f64; N] =
            std::array::from_fn(|i| simplex[..N].iter().map(|(x, _)| x[i]).sum::<f64>() / N as f64);
        let (worst, f_worst) = simplex[N];
        let reflected = lerp(&centroid, &worst, -alpha);
        let f_r = f(&reflected);
        if f_r < simplex[0].1 {
            let expanded = lerp(&centroid, &worst, -gamma);
            let f_e = f(&expanded);
            simplex[N] = if f_e < f_r { (expanded, f_e) } else { (reflected, f_r) };
            continue;
        }
        if f_r < simplex[N - 1].1 {
            simplex[N] = (reflected, f_r);
            continue;
        }
        let (contracted, f_c) = if f_r < f_worst {
            let c = lerp(&centroid, &reflected, rho);
            (c, f(&c))
        } else {
            let c = lerp(&centroid, &worst, rho);
            (c, f(&c))
        };
        if f_c < f_worst.min(f_r) {
            simplex[N] = (contracted, f_c);
            continue;
        }
        for v in simplex.iter_mut().skip(1) {
            v.0 = lerp(&best, &v.0, sigma);
            v.1 = f(&v.0);
        }
    }
    order(&mut simplex);
    (simplex[0].0, simplex[0].1, iter)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub params: [f64; 4],
    pub mapped: Vec<f64>,
    pub sse: f64,
    /// True when the targets were constant and the identity mapping was used.
    pub degenerate: bool,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn population_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

fn sse(pred: &[f64], mos: &[f64], b: &[f64; 4]) -> f64 {
    pred.iter()
        .zip(mos)
        .map(|(&p, &m)| {
            let r = logistic4(p, b) - m;
            r * r
        })
        .sum()
}

/// Fit the 4-parameter logistic mapping predictions onto MOS by least squares.
pub fn logistic_fit(pred: &[f64], mos: &[f64]) -> Result<LogisticFit> {
    logistic_fit_with(pred, mos, &NelderMeadOptions::default())
}

pub fn logistic_fit_with(pred: &[f64], mos: &[f64], opts: &NelderMeadOptions) -> Result<LogisticFit> {
    check_pair(pred, mos)?;
    if pred.len() < 5 {
        return Err(Error::Invalid(format!(
            "logistic fit needs at least 5 points, got {}",
            pred.len()
        )));
    }
    let lo = mos.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let init = [hi, lo, median(pred), population_std(pred) / 4.0];
    if hi == lo {
        log::warn!("constant MOS: logistic mapping skipped, identity used");
        let sse = pred.iter().zip(mos).map(|(p, m)| (p - m) * (p - m)).sum();
        return Ok(LogisticFit {
            params: init,
            mapped: pred.to_vec(),
            sse,
            degenerate: true,
        });
    }
    let mut start = init;
    if !(start[3] > 0.0) {
        // constant predictions; any positive slope leaves the fit flat
        start[3] = 1.0;
    }
    let (params, sse, _) = nelder_mead(|b| sse(pred, mos, b), start, opts);
    Ok(LogisticFit {
        params,
        mapped: pred.iter().map(|&p| logistic4(p, &params)).collect(),
        sse,
        degenerate: false,
    })
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Invalid("need at least 2 paired values".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric input".into()));
    }
    Ok(())
}

/// Pearson linear correlation.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Invalid("correlation undefined for constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman correlation: Pearson on average ranks.
pub fn srocc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    plcc(&average_ranks(x), &average_ranks(y))
}

/// Number of tied pairs among runs of equal values in a sorted sequence.
fn tied_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<T> = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * (run + 1) / 2;
            run = 0;
        }
        prev = Some(v);
    }
    total + run * (run + 1) / 2
}

/// Merge sort counting inversions (strictly greater elements before smaller).
fn count_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_swaps(&mut v[..mid], &mut buf[..mid]) + count_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    let k2 = k + mid - i;
    buf[k2..n].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall tau-b in O(n log n) (Knight's algorithm).
pub fn krocc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| match a.0.total_cmp(&b.0) {
        Ordering::Equal => a.1.total_cmp(&b.1),
        o => o,
    });
    let total = n * (n - 1) / 2;
    let x_ties = tied_pairs(pairs.iter().map(|p| p.0));
    let joint_ties = tied_pairs(pairs.iter().copied());
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let swaps = count_swaps(&mut ys, &mut buf);
    let y_ties = tied_pairs(ys.iter().copied());
    let denom = ((total - x_ties) as f64 * (total - y_ties) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::Invalid("correlation undefined for constant input".into()));
    }
    let num = total as i64 - x_ties as i64 - y_ties as i64 + joint_ties as i64 - 2 * swaps as i64;
    Ok(num as f64 / denom)
}

pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    Ok((x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub plcc: f64,
    pub srocc: f64,
    pub krocc: f64,
    pub rmse: f64,
    pub n: usize,
    pub logistic_params: [f64; 4],
}

/// Logistic-map `pred` onto `mos`, then compute all four metrics. PLCC and
/// RMSE use the mapped predictions; the rank metrics are unaffected by the
/// monotone mapping and use raw predictions.
///
/// With fewer than 5 points the logistic fit is skipped (identity mapping,
/// logged) since four parameters cannot be identified.
pub fn evaluate(pred: &[f64], mos: &[f64]) -> Result<MetricReport> {
    check_pair(pred, mos)?;
    let fit = if pred.len() < 5 {
        log::warn!("{} points: logistic mapping skipped, identity used", pred.len());
        LogisticFit {
            params: [0.0; 4],
            mapped: pred.to_vec(),
            sse: pred.iter().zip(mos).map(|(p, m)| (p - m) * (p - m)).sum(),
            degenerate: true,
        }
    } else {
        logistic_fit(pred, mos)?
    };
    let plcc = match plcc(&fit.mapped, mos) {
        Ok(v) => v,
        Err(_) if !fit.degenerate => {
            log::warn!("logistic fit collapsed to a constant; PLCC computed on raw predictions");
            plcc(pred, mos)?
        }
        Err(e) => return Err(e),
    };
    Ok(MetricReport {
        plcc,
        srocc: srocc(pred, mos)?,
        krocc: krocc(pred, mos)?,
        rmse: rmse(&fit.mapped, mos)?,
        n: pred.len(),
        logistic_params: fit.params,
    })
}

/// Single-row CSV `plcc,srocc,krocc,rmse,n,b1,b2,b3,b4`.
pub fn write_report_csv(r: &MetricReport, mut out: impl Write) -> Result<()> {
    let b = r.logistic_params;
    writeln!(
        out,
        "plcc,srocc,krocc,rmse,n,b1,b2,b3,b4\n{},{},{},{},{},{},{},{},{}",
        r.plcc, r.srocc, r.krocc, r.rmse, r.n, b[0], b[1], b[2], b[3]
    )
    .map_err(|e| Error::io("<report>", e))
}

/// Published results of the reference model on its own dataset. The dataset
/// and pretrained backbones are not available, so these are kept for
/// comparison only and are not expected to be reproduced.
pub mod reference {
    pub const SROCC: f64 = 0.8245;
    pub const PLCC: f64 = 0.8590;
    pub const KROCC: f64 = 0.6436;
    pub const RMSE: f64 = 0.5772;
}
