//! Reconstruction errors and convergence diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ScalarField;

fn same_shape(a: &ScalarField, b: &ScalarField) -> Result<()> {
    if a.values().len() != b.values().len() || a.grid().nx != b.grid().nx {
        return Err(Error::ShapeMismatch("fields of different shape".into()));
    }
    Ok(())
}

/// `‖p - p*‖₂ / ‖p*‖₂` over the nodes.
pub fn rel_l2_error(p: &ScalarField, p_star: &ScalarField) -> Result<f64> {
    same_shape(p, p_star)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in p.values().iter().zip(p_star.values()) {
        num += (a - b) * (a - b);
        den += b * b;
    }
    if den == 0.0 {
        return Err(Error::InvalidParameter("reference field is zero".into()));
    }
    Ok((num / den).sqrt())
}

/// `max |a - b|`; infinite when the shapes differ.
pub fn max_abs_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    if same_shape(a, b).is_err() {
        return f64::INFINITY;
    }
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `|max p - max p*| / max p*`.
pub fn peak_value_error(p: &ScalarField, p_star: &ScalarField) -> Result<f64> {
    same_shape(p, p_star)?;
    let peak = p_star.max();
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter("reference peak must be positive".into()));
    }
    Ok((p.max() - peak).abs() / peak)
}

/// Ratios `d_{n+1} / d_n` of consecutive entries.
pub fn contraction_ratios(diffs: &[f64]) -> Vec<f64> {
    diffs.windows(2).map(|w| w[1] / w[0]).collect()
}

/// Geometric rate from a least-squares line through `ln d_n`; `None` with
/// fewer than three entries or any non-positive one.
pub fn fit_contraction_rate(diffs: &[f64]) -> Option<f64> {
    if diffs.len() < 3 || diffs.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        return None;
    }
    let n = diffs.len() as f64;
    let xs: Vec<f64> = (0..diffs.len()).map(|i| i as f64).collect();
    let ys: Vec<f64> = diffs.iter().map(|d| d.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Some((sxy / sxx).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rel_l2: f64,
    pub peak_true: f64,
    pub peak_computed: f64,
    pub peak_error: f64,
    pub consecutive_differences: Vec<f64>,
    pub contraction_rate: Option<f64>,
}

impl ErrorReport {
    pub fn new(p: &ScalarField, p_star: &ScalarField, diffs: &[f64]) -> Result<Self> {
        Ok(Self {
            rel_l2: rel_l2_error(p, p_star)?,
            peak_true: p_star.max(),
            peak_computed: p.max(),
            peak_error: peak_value_error(p, p_star)?,
            consecutive_differences: diffs.to_vec(),
            contraction_rate: fit_contraction_rate(diffs),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Rect, SpaceTimeGrid};
    use proptest::prelude::*;

    fn field(values: Vec<f64>) -> ScalarField {
        let g = SpaceTimeGrid::new(Rect::square(1.0), 3, 3, 3, 1.0).unwrap();
        ScalarField::from_values(g, values).unwrap().layer(0).unwrap()
    }

    fn space(values: [f64; 9]) -> ScalarField {
        let mut v = values.to_vec();
        v.resize(27, 0.0);
        field(v)
    }

    #[test]
    fn relative_error_and_peak() {
        let p_star = space([0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let p = space([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((rel_l2_error(&p, &p_star).unwrap() - 0.5).abs() < 1e-15);
        assert!((peak_value_error(&p, &p_star).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(max_abs_diff(&p, &p_star), 1.0);
        assert!(rel_l2_error(&p, &space([0.0; 9])).is_err());
    }

    #[test]
    fn rate_of_exact_geometric_sequence() {
        let d: Vec<f64> = (0..6).map(|n| 3.0 * 0.4f64.powi(n)).collect();
        assert!((fit_contraction_rate(&d).unwrap() - 0.4).abs() < 1e-12);
        assert!(fit_contraction_rate(&d[..2]).is_none());
        assert!(fit_contraction_rate(&[1.0, 0.0, 0.5]).is_none());
        let r = contraction_ratios(&d);
        assert!(r.iter().all(|x| (x - 0.4).abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn error_is_scale_invariant(v in prop::collection::vec(-5.0f64..5.0, 9), s in 0.1f64..10.0) {
            let mut a = [0.0; 9];
            a.copy_from_slice(&v);
            a[4] = 7.0;
            let p_star = space(a);
            let p = space([1.0; 9]);
            let scaled_star = space(a.map(|x| x * s));
            let scaled = space([s; 9]);
            let e1 = rel_l2_error(&p, &p_star).unwrap();
            let e2 = rel_l2_error(&scaled, &scaled_star).unwrap();
            prop_assert!((e1 - e2).abs() < 1e-12);
        }
    }
}
