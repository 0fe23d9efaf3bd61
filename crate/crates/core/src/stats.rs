//! Small statistics helpers: weighted means and least-squares fits.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Self-normalized weighted mean Σw v / Σw with the delta-method standard
/// error sqrt(Σ w²(v − m)²) / Σw. A single sample has stderr 0.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Estimate {
    assert_eq!(values.len(), weights.len());
    let total: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total;
    let var: f64 = values.iter().zip(weights).map(|(v, w)| w * w * (v - mean) * (v - mean)).sum();
    Estimate { mean, stderr: var.sqrt() / total }
}

pub fn mean(values: &[f64]) -> Estimate {
    weighted_mean(values, &vec![1.0; values.len()])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_stderr: f64,
}

/// Ordinary least squares y ≈ intercept + slope·x.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need two points for a line");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_stderr = if xs.len() > 2 { (sse / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    LineFit { slope, intercept, r2, slope_stderr }
}

/// Log-log slope of ys against xs.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    fit_line(&lx, &ly)
}

/// Least squares for y ≈ X β with an arbitrary design (rows = samples).
/// Returns β and R².
pub fn least_squares(design: &[Vec<f64>], ys: &[f64]) -> (Vec<f64>, f64) {
    let rows = design.len();
    let cols = design.first().map_or(0, |r| r.len());
    let x = DMatrix::from_fn(rows, cols, |i, j| design[i][j]);
    let y = DVector::from_column_slice(ys);
    let svd = x.clone().svd(true, true);
    let beta = svd.solve(&y, 1e-12).expect("svd solve");
    let resid = &y - &x * &beta;
    let my = ys.iter().sum::<f64>() / rows as f64;
    let syy: f64 = ys.iter().map(|v| (v - my) * (v - my)).sum();
    let r2 = if syy > 0.0 { 1.0 - resid.norm_squared() / syy } else { 1.0 };
    (beta.iter().copied().collect(), r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_recovers_exact_data() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let f = fit_line(&xs, &ys);
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 2.0).abs() < 1e-14);
        assert!((f.r2 - 1.0).abs() < 1e-14);
        let (beta, r2) = least_squares(&xs.iter().map(|&x| vec![1.0, x]).collect::<Vec<_>>(), &ys);
        assert!((beta[0] - 2.0).abs() < 1e-12 && (beta[1] + 0.5).abs() < 1e-12 && r2 > 0.999_999);
    }

    #[test]
    fn weighted_mean_matches_hand_value() {
        let e = weighted_mean(&[1.0, 3.0], &[1.0, 3.0]);
        assert_eq!(e.mean, 2.5);
        // sqrt(1·2.25 + 9·0.25) / 4
        assert!((e.stderr - (4.5f64).sqrt() / 4.0).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
