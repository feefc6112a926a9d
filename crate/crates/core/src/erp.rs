//! Equirectangular geometry: latitude bands and latitude-related weights.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

/// Latitude (radians) of pixel row `r` in a frame of height `h`, taken at the
/// row centre so it never reaches the poles.
pub fn row_latitude(r: usize, h: usize) -> f64 {
    FRAC_PI_2 - PI * (r as f64 + 0.5) / h as f64
}

/// Horizontal bands tiling the rows of an ERP frame, north to south.
#[derive(Debug, Clone, PartialEq)]
pub struct LatitudeBandPartition {
    pub height: usize,
    /// Half-open `[start, end)` row ranges.
    pub band_row_ranges: Vec<(usize, usize)>,
    pub band_latitude_centers: Vec<f64>,
}

impl LatitudeBandPartition {
    pub fn num_bands(&self) -> usize {
        self.band_row_ranges.len()
    }
}

/// Split `height` rows into `bands` near-equal bands; leftover rows go to the
/// northernmost bands.
pub fn partition_erp(height: usize, bands: usize) -> Result<LatitudeBandPartition> {
    if bands == 0 || bands > height {
        return Err(Error::Invalid(format!("band count {bands} must be in 1..={height}")));
    }
    let base = height / bands;
    let extra = height % bands;
    let mut ranges = Vec::with_capacity(bands);
    let mut start = 0;
    for m in 0..bands {
        let len = base + usize::from(m < extra);
        ranges.push((start, start + len));
        start += len;
    }
    let centers = ranges
        .iter()
        .map(|&(s, e)| {
            // middle of the band in continuous row coordinates
            let mid = (s + e) as f64 / 2.0;
            FRAC_PI_2 - PI * mid / height as f64
        })
        .collect();
    Ok(LatitudeBandPartition {
        height,
        band_row_ranges: ranges,
        band_latitude_centers: centers,
    })
}

/// Band weights proportional to the summed cosine latitude of their rows
/// (ERP solid-angle density), normalized to sum to one.
pub fn cos_latitude_prior(partition: &LatitudeBandPartition) -> Vec<f64> {
    let h = partition.height;
    let raw: Vec<f64> = partition
        .band_row_ranges
        .iter()
        .map(|&(s, e)| (s..e).map(|r| row_latitude(r, h).cos()).sum())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Softmax of `logits + ln(prior)`.
pub fn effective_weights(prior: &[f64], logits: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = prior.iter().zip(logits).map(|(p, l)| l + p.ln()).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Prior, learnable logits and the resulting convex weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LatitudeWeights {
    pub prior_weights: Vec<f64>,
    pub learned_logits: Vec<f64>,
    pub effective_weights: Vec<f64>,
}

impl LatitudeWeights {
    pub fn new(prior_weights: Vec<f64>, learned_logits: Vec<f64>) -> Result<Self> {
        if prior_weights.len() != learned_logits.len() || prior_weights.is_empty() {
            return Err(Error::Shape(format!(
                "{} prior weights vs {} logits",
                prior_weights.len(),
                learned_logits.len()
            )));
        }
        if prior_weights.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Invalid("prior weights must be positive".into()));
        }
        let effective_weights = effective_weights(&prior_weights, &learned_logits);
        Ok(LatitudeWeights {
            prior_weights,
            learned_logits,
            effective_weights,
        })
    }

    /// Weights used verbatim, e.g. a one-hot selection. Must be a probability vector.
    pub fn fixed(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid("weights must be non-negative and sum to 1".into()));
        }
        Ok(LatitudeWeights {
            prior_weights: weights.clone(),
            learned_logits: vec![0.0; weights.len()],
            effective_weights: weights,
        })
    }
}

/// `sum_m w_m * features[m]` over equally shaped band feature vectors.
pub fn aggregate_band_features(features: &[Vec<f64>], weights: &LatitudeWeights) -> Result<Vec<f64>> {
    let w = &weights.effective_weights;
    if features.len() != w.len() {
        return Err(Error::Shape(format!(
            "{} band features for {} weights",
            features.len(),
            w.len()
        )));
    }
    let len = features.first().map_or(0, Vec::len);
    if features.iter().any(|f| f.len() != len) {
        return Err(Error::Shape("band features differ in shape".into()));
    }
    let mut out = vec![0.0; len];
    for (f, &wm) in features.iter().zip(w) {
        for (o, v) in out.iter_mut().zip(f) {
            *o += wm * v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn equal_division() {
        let p = partition_erp(32, 4).unwrap();
        assert_eq!(p.band_row_ranges, vec![(0, 8), (8, 16), (16, 24), (24, 32)]);
    }

    #[test]
    fn single_band_centered_on_equator() {
        let p = partition_erp(32, 1).unwrap();
        assert_eq!(p.band_row_ranges, vec![(0, 32)]);
        assert_abs_diff_eq!(p.band_latitude_centers[0], 0.0, epsilon = 1e-15);
        assert_eq!(cos_latitude_prior(&p), vec![1.0]);
    }

    #[test]
    fn remainder_goes_north() {
        let p = partition_erp(10, 3).unwrap();
        assert_eq!(p.band_row_ranges, vec![(0, 4), (4, 7), (7, 10)]);
    }

    #[test]
    fn out_of_range_band_counts() {
        assert!(partition_erp(8, 0).is_err());
        assert!(partition_erp(8, 9).is_err());
        assert!(partition_erp(8, 8).is_ok());
    }

    #[test]
    fn symmetric_halves_share_weight() {
        let w = cos_latitude_prior(&partition_erp(32, 2).unwrap());
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn polar_bands_weigh_less() {
        let p = partition_erp(32, 4).unwrap();
        let w = cos_latitude_prior(&p);
        // independent summation: band m covers rows 8m..8m+8
        let raw: Vec<f64> = (0..4)
            .map(|m| {
                (0..8)
                    .map(|i| {
                        let r = 8 * m + i;
                        (PI / 2.0 - PI * (r as f64 + 0.5) / 32.0).cos()
                    })
                    .sum()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        for m in 0..4 {
            assert_abs_diff_eq!(w[m], raw[m] / total, epsilon = 1e-12);
        }
        assert!(w[0] < w[1] && w[3] < w[2]);
    }

    #[test]
    fn aggregation_cases() {
        let f = vec![0.3, -1.0, 2.0];
        let lw = LatitudeWeights::new(vec![0.1, 0.2, 0.7], vec![0.5, -0.2, 1.0]).unwrap();
        let out = aggregate_band_features(&[f.clone(), f.clone(), f.clone()], &lw).unwrap();
        for (a, b) in out.iter().zip(&f) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }

        let bands = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let onehot = LatitudeWeights::fixed(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(aggregate_band_features(&bands, &onehot).unwrap(), vec![3.0, 4.0]);

        let uniform = LatitudeWeights::new(vec![0.25; 4], vec![0.0; 4]).unwrap();
        let bands = vec![vec![0.9, -0.1], vec![0.4, 0.2], vec![-0.7, 0.8], vec![0.1, 0.3]];
        let out = aggregate_band_features(&bands, &uniform).unwrap();
        assert_abs_diff_eq!(out[0], (0.9 + 0.4 - 0.7 + 0.1) / 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], (-0.1 + 0.2 + 0.8 + 0.3) / 4.0, epsilon = 1e-12);

        assert!(aggregate_band_features(&bands[..3], &uniform).is_err());
        let ragged = vec![vec![1.0], vec![1.0, 2.0], vec![0.0], vec![0.0]];
        assert!(aggregate_band_features(&ragged, &uniform).is_err());
    }

    proptest! {
        #[test]
        fn partition_tiles_rows(h in 1usize..500, frac in 0.0f64..1.0) {
            let m = 1 + ((h - 1) as f64 * frac) as usize;
            let p = partition_erp(h, m).unwrap();
            prop_assert_eq!(p.num_bands(), m);
            prop_assert_eq!(p.band_row_ranges[0].0, 0);
            prop_assert_eq!(p.band_row_ranges[m - 1].1, h);
            for pair in p.band_row_ranges.windows(2) {
                prop_assert_eq!(pair[0].1, pair[1].0);
                let (a, b) = (pair[0].1 - pair[0].0, pair[1].1 - pair[1].0);
                prop_assert!(a == b || a == b + 1);
            }
            for (c, pair) in p.band_latitude_centers.windows(2).zip(p.band_row_ranges.windows(2)) {
                prop_assert!(c[0] > c[1], "{:?}", pair);
            }
            prop_assert!(p.band_latitude_centers.iter().all(|c| c.abs() < FRAC_PI_2));
        }

        #[test]
        fn prior_is_mirror_symmetric(h in 2usize..300, m in 1usize..12) {
            prop_assume!(m <= h);
            let p = partition_erp(h, m).unwrap();
            let w = cos_latitude_prior(&p);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // bands of equal height mirror exactly
            if h % m == 0 {
                for i in 0..m {
                    prop_assert!((w[i] - w[m - 1 - i]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn weights_form_probability_vector_and_aggregate_convexly(
            logits in prop::collection::vec(-5.0f64..5.0, 1..6),
            seed in prop::collection::vec(-3.0f64..3.0, 24),
        ) {
            let m = logits.len();
            let prior = cos_latitude_prior(&partition_erp(64, m).unwrap());
            let lw = LatitudeWeights::new(prior, logits).unwrap();
            prop_assert!(lw.effective_weights.iter().all(|&w| w >= 0.0));
            prop_assert!((lw.effective_weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let bands: Vec<Vec<f64>> = (0..m).map(|i| seed[i * 4..i * 4 + 4].to_vec()).collect();
            let out = aggregate_band_features(&bands, &lw).unwrap();
            for k in 0..4 {
                let lo = bands.iter().map(|b| b[k]).fold(f64::INFINITY, f64::min);
                let hi = bands.iter().map(|b| b[k]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out[k] >= lo - 1e-12 && out[k] <= hi + 1e-12);
            }
        }
    }
}
