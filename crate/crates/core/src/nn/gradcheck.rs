//! Central finite-difference gradient checking.
//!
//! Relative error per coordinate is `|a - n| / max(|a|, |n|, floor)` where
//! `a` is the analytic and `n` the numeric derivative; the floor keeps
//! coordinates with vanishing gradients from dominating on round-off.
//!
//! ReLU and max-pool are piecewise linear, so a probe interval `[x-h, x+h]`
//! can straddle a kink. A coordinate that disagrees at `h` is re-probed at
//! `h/10` and `h/100` and the closest of the three estimates is kept; the
//! count of such coordinates is reported as `refined`.

use rand::seq::index::sample;

use super::params::{init_rng, Gradients, ParamStore};
use super::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_FLOOR: f64 = 1e-6;
const REFINE_ABOVE: f64 = 1e-6;

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Central difference of `f` (a function of the offset from the probe
/// point) at step `h`, refined on suspected kinks. Returns the estimate and
/// whether refinement was used.
fn numeric_derivative(analytic: f64, h: f64, f: &mut dyn FnMut(f64) -> f64) -> (f64, bool) {
    let mut central = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    let n = central(h);
    if rel_err(analytic, n, DEFAULT_FLOOR) <= REFINE_ABOVE {
        return (n, false);
    }
    let mut best = n;
    for k in [10.0, 100.0] {
        let m = central(h / k);
        if rel_err(analytic, m, DEFAULT_FLOOR) < rel_err(analytic, best, DEFAULT_FLOOR) {
            best = m;
        }
    }
    (best, true)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates re-probed with a smaller step.
    pub refined: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `||a - n|| / (||a|| + ||n||)` over all checked coordinates.
    pub norm_rel_err: f64,
    /// Label and coordinate of the worst element.
    pub worst: Option<(String, usize)>,
    sq_diff: f64,
    sq_a: f64,
    sq_n: f64,
}

impl GradCheckReport {
    pub fn record(&mut self, label: &str, idx: usize, analytic: f64, numeric: f64, floor: f64) {
        let abs = (analytic - numeric).abs();
        let rel = rel_err(analytic, numeric, floor);
        self.checked += 1;
        self.max_abs_err = self.max_abs_err.max(abs);
        if rel > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(rel);
            if rel >= self.max_rel_err {
                self.worst = Some((label.to_string(), idx));
            }
        }
        self.sq_diff += abs * abs;
        self.sq_a += analytic * analytic;
        self.sq_n += numeric * numeric;
        let denom = self.sq_a.sqrt() + self.sq_n.sqrt();
        self.norm_rel_err = if denom > 0.0 { self.sq_diff.sqrt() / denom } else { 0.0 };
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_err >= self.max_rel_err {
            self.worst = other.worst.clone();
        }
        self.checked += other.checked;
        self.refined += other.refined;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.sq_diff += other.sq_diff;
        self.sq_a += other.sq_a;
        self.sq_n += other.sq_n;
        let denom = self.sq_a.sqrt() + self.sq_n.sqrt();
        self.norm_rel_err = if denom > 0.0 { self.sq_diff.sqrt() / denom } else { 0.0 };
    }
}

/// Coordinates to probe: all of them when `len <= max`, otherwise a seeded
/// random subset of size `max`.
pub fn sample_coords(len: usize, max: usize, seed: u64) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let mut v = sample(&mut init_rng(seed), len, max).into_vec();
    v.sort_unstable();
    v
}

/// Compare `analytic` (gradient of `f` at `x`) against central differences on
/// the coordinates in `coords`.
pub fn check_tensor(
    label: &str,
    x: &Tensor,
    analytic: &Tensor,
    coords: &[usize],
    h: f64,
    mut f: impl FnMut(&Tensor) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        let a = analytic.data()[i];
        let (n, refined) = numeric_derivative(a, h, &mut |d| {
            probe.data_mut()[i] = orig + d;
            f(&probe)
        });
        probe.data_mut()[i] = orig;
        report.refined += usize::from(refined);
        report.record(label, i, a, n, DEFAULT_FLOOR);
    }
    report
}

/// Check every parameter of `store` (up to `max_per_param` coordinates each)
/// against the analytic `grads` of `loss`.
pub fn check_params(
    store: &ParamStore,
    grads: &Gradients,
    max_per_param: usize,
    h: f64,
    loss: impl Fn(&ParamStore) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    let mut probe = store.clone();
    let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
    for (i, name) in names.iter().enumerate() {
        let id = super::params::ParamId(i);
        let coords = sample_coords(store.get(id).len(), max_per_param, i as u64);
        for &c in &coords {
            let orig = probe.get(id).data()[c];
            let a = grads.get(id).data()[c];
            let (n, refined) = numeric_derivative(a, h, &mut |d| {
                probe.get_mut(id).data_mut()[c] = orig + d;
                loss(&probe)
            });
            probe.get_mut(id).data_mut()[c] = orig;
            report.refined += usize::from(refined);
            report.record(name, c, a, n, DEFAULT_FLOOR);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let f = |t: &Tensor| t.data().iter().map(|v| v * v * v).sum::<f64>();
        let good = Tensor::new(vec![3], x.data().iter().map(|v| 3.0 * v * v).collect()).unwrap();
        let bad = Tensor::new(vec![3], x.data().iter().map(|v| 2.0 * v * v).collect()).unwrap();
        assert!(check_tensor("x", &x, &good, &[0, 1, 2], DEFAULT_STEP, f).max_rel_err < 1e-8);
        assert!(check_tensor("x", &x, &bad, &[0, 1, 2], DEFAULT_STEP, f).max_rel_err > 0.1);
    }

    #[test]
    fn kink_inside_the_probe_interval_is_refined() {
        // |x| near 0: the central difference at h straddles the kink
        let x = Tensor::new(vec![1], vec![3e-6]).unwrap();
        let f = |t: &Tensor| t.data()[0].abs();
        let r = check_tensor(
            "x",
            &x,
            &Tensor::scalar(1.0).reshape(&[1]).unwrap(),
            &[0],
            DEFAULT_STEP,
            f,
        );
        assert_eq!(r.refined, 1);
        assert!(r.max_rel_err < 1e-9);
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(sample_coords(5, 10, 1), vec![0, 1, 2, 3, 4]);
        let a = sample_coords(1000, 16, 9);
        assert_eq!(a.len(), 16);
        assert_eq!(a, sample_coords(1000, 16, 9));
    }
}
