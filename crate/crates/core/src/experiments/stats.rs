use ndarray::{Array1, Array2};

use crate::error::{Result, SdoreError};

/// Least-squares slope of `log(error)` against `log(n)`.
pub fn rate_slope(ns: &[f64], errors: &[f64]) -> Result<f64> {
    if ns.len() != errors.len() {
        return Err(SdoreError::contract("sizes and errors differ in length"));
    }
    if ns.len() < 3 {
        return Err(SdoreError::contract("rate slope needs at least three sizes"));
    }
    if ns.iter().chain(errors).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(SdoreError::contract("sizes and errors must be positive"));
    }
    let lx: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(SdoreError::contract("sample sizes must not all be equal"));
    }
    Ok(sxy / sxx)
}

/// Closed-form minimizer of `1/n ‖Xθ − y‖² + λ‖θ‖²`, i.e.
/// `θ* = (XᵀX/n + λI)⁻¹ Xᵀy/n`.
pub fn ridge_oracle(x: &Array2<f64>, y: &Array1<f64>, lambda: f64) -> Result<Array1<f64>> {
    let (n, d) = x.dim();
    if n == 0 || y.len() != n {
        return Err(SdoreError::contract("ridge needs matching nonempty X and y"));
    }
    if !(lambda >= 0.0) {
        return Err(SdoreError::contract("ridge lambda must be nonnegative"));
    }
    let mut a = x.t().dot(x) / n as f64;
    for k in 0..d {
        a[[k, k]] += lambda;
    }
    let b = x.t().dot(y) / n as f64;
    solve(a, b)
}

/// Gaussian elimination with partial pivoting.
pub(crate) fn solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Result<Array1<f64>> {
    let d = b.len();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(SdoreError::Numerical("singular system (zero matrix)".into()));
    }
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .expect("nonempty range");
        if a[[pivot, col]].abs() <= 1e-13 * scale {
            return Err(SdoreError::Numerical(format!("singular system at column {col}")));
        }
        if pivot != col {
            for c in 0..d {
                a.swap([pivot, c], [col, c]);
            }
            b.swap(pivot, col);
        }
        for r in col + 1..d {
            let f = a[[r, col]] / a[[col, col]];
            if f == 0.0 {
                continue;
            }
            for c in col..d {
                a[[r, c]] -= f * a[[col, c]];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = Array1::zeros(d);
    for r in (0..d).rev() {
        let tail: f64 = (r + 1..d).map(|c| a[[r, c]] * x[c]).sum();
        x[r] = (b[r] - tail) / a[[r, r]];
    }
    Ok(x)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator); zero for a single value.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}
