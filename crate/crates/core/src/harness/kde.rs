use std::f64::consts::PI;

use serde::Serialize;

use crate::{Error, Result};

/// Bandwidth used when the sample has no spread.
pub const ZERO_VARIANCE_BANDWIDTH: f64 = 1e-3;

/// Gaussian kernel density evaluated on a grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    pub n_samples: usize,
    /// Set when the automatic bandwidth had to fall back.
    pub warning: Option<String>,
}

impl KdeCurve {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Silverman's rule `1.06 * sd * n^(-1/5)` with the unbiased sample sd.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: values.len(),
        });
    }
    let (_, sd) = mean_std(values);
    Ok(1.06 * sd * (values.len() as f64).powf(-0.2))
}

/// Density of `values` on `grid`. Without an explicit bandwidth Silverman's
/// rule is used, falling back to [`ZERO_VARIANCE_BANDWIDTH`] (with a
/// warning on the curve) when every value is the same.
pub fn kde(values: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Result<KdeCurve> {
    if values.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: values.len(),
        });
    }
    if values.iter().chain(grid).any(|v| !v.is_finite()) {
        return Err(Error::ConfigInvalid("kde inputs must be finite".into()));
    }
    let mut warning = None;
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::ConfigInvalid(format!("bandwidth must be positive, got {h}"))),
        None => {
            let h = silverman_bandwidth(values)?;
            if h > 0.0 {
                h
            } else {
                warning = Some(format!(
                    "zero variance among {} values; bandwidth set to {ZERO_VARIANCE_BANDWIDTH}",
                    values.len()
                ));
                ZERO_VARIANCE_BANDWIDTH
            }
        }
    };
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * PI).sqrt());
    let density = grid
        .iter()
        .map(|&x| {
            norm * values
                .iter()
                .map(|&v| (-0.5 * ((x - v) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    Ok(KdeCurve {
        grid: grid.to_vec(),
        density,
        bandwidth: h,
        n_samples: values.len(),
        warning,
    })
}

/// `points` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// KDE on a grid spanning four bandwidths beyond the sample range.
pub fn kde_auto(values: &[f64], points: usize) -> Result<KdeCurve> {
    let probe = kde(values, &[], None)?;
    let h = probe.bandwidth;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 4.0 * h;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 4.0 * h;
    let mut curve = kde(values, &linspace(lo, hi, points), Some(h))?;
    curve.warning = probe.warning;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn single_sample_at_the_grid_point() {
        let c = kde(&[0.0, 0.0], &[0.0], Some(1.0)).unwrap();
        assert!((c.density[0] - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-12);
        assert!((c.density[0] - 0.3989).abs() < 1e-4);
    }

    #[test]
    fn repeated_value_falls_back_to_a_spike() {
        let c = kde(&[2.5; 5], &[2.5], None).unwrap();
        assert_eq!(c.bandwidth, ZERO_VARIANCE_BANDWIDTH);
        assert!(c.warning.is_some());
        let peak = 1.0 / (ZERO_VARIANCE_BANDWIDTH * (2.0 * PI).sqrt());
        assert!((c.density[0] - peak).abs() < 1e-9 * peak);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            kde(&[1.0], &[0.0], None),
            Err(Error::TooFewSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn silverman_matches_formula() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((silverman_bandwidth(&v).unwrap() - 1.06 * sd * 4f64.powf(-0.2)).abs() < 1e-12);
    }

    #[test]
    fn auto_grid_integrates_to_one() {
        let mut r = rng::stream(4, "kde", 0);
        for n in [2, 7, 100] {
            let v = rng::normal_vec(&mut r, n);
            let c = kde_auto(&v, 512).unwrap();
            assert!((0.98..=1.02).contains(&c.integral()), "{n}: {}", c.integral());
        }
        let c = kde_auto(&[3.0; 4], 512).unwrap();
        assert!((0.98..=1.02).contains(&c.integral()));
    }

    #[test]
    fn standard_normal_recovers_the_pdf() {
        let mut r = rng::stream(11, "kde", 0);
        let v = rng::normal_vec(&mut r, 10_000);
        let grid = linspace(-4.0, 4.0, 161);
        let c = kde(&v, &grid, None).unwrap();
        let worst = grid
            .iter()
            .zip(&c.density)
            .map(|(x, d)| (d - (-0.5 * x * x).exp() / (2.0 * PI).sqrt()).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.05, "{worst}");
    }
}
