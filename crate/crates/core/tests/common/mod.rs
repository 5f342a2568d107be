//! Independent oracles shared by the integration suites.
//!
//! Nothing here touches the tape: networks are evaluated with scalar loops
//! straight from their weights, and derivatives come from central differences.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdore::model::{Model, ReQUNetwork};

/// Random network with nonzero biases; widths and depth drawn from the ranges.
pub fn random_net(rng: &mut ChaCha8Rng, d: usize, depth: usize, max_width: usize) -> ReQUNetwork {
    let mut dims = vec![d];
    for _ in 0..depth {
        dims.push(rng.gen_range(2..=max_width));
    }
    dims.push(1);
    let seed = rng.gen();
    let mut net = ReQUNetwork::init(&dims, seed).unwrap();
    for (i, p) in net.parameters_mut().into_iter().enumerate() {
        if i % 2 == 1 {
            p.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
    }
    net
}

/// Scalar-loop forward pass returning the output and every hidden pre-activation.
pub fn loop_forward(net: &ReQUNetwork, x: &[f64]) -> (f64, Vec<f64>) {
    let mut h = x.to_vec();
    let mut pre = Vec::new();
    let last = net.num_layers() - 1;
    for (l, (w, b)) in net.weights().iter().zip(net.biases()).enumerate() {
        let mut z = vec![0.0; w.nrows()];
        for (r, zr) in z.iter_mut().enumerate() {
            *zr = b[[0, r]] + (0..w.ncols()).map(|c| w[[r, c]] * h[c]).sum::<f64>();
        }
        if l < last {
            pre.extend_from_slice(&z);
            h = z.iter().map(|&v| if v > 0.0 { v * v } else { 0.0 }).collect();
        } else {
            h = z;
        }
    }
    (h[0], pre)
}

/// Scalar-loop forward pass carrying the input Jacobian (forward tangents).
pub fn loop_value_and_gradient(net: &ReQUNetwork, x: &[f64]) -> (f64, Vec<f64>) {
    let d = x.len();
    let mut h = x.to_vec();
    // jac[r][k] = ∂h_r/∂x_k
    let mut jac: Vec<Vec<f64>> = (0..d).map(|r| (0..d).map(|k| (r == k) as u8 as f64).collect()).collect();
    let last = net.num_layers() - 1;
    for (l, (w, b)) in net.weights().iter().zip(net.biases()).enumerate() {
        let rows = w.nrows();
        let mut z = vec![0.0; rows];
        let mut jz = vec![vec![0.0; d]; rows];
        for r in 0..rows {
            z[r] = b[[0, r]];
            for c in 0..w.ncols() {
                z[r] += w[[r, c]] * h[c];
                for k in 0..d {
                    jz[r][k] += w[[r, c]] * jac[c][k];
                }
            }
        }
        if l < last {
            h = z.iter().map(|&v| if v > 0.0 { v * v } else { 0.0 }).collect();
            jac = (0..rows)
                .map(|r| jz[r].iter().map(|t| 2.0 * z[r].max(0.0) * t).collect())
                .collect();
        } else {
            h = z;
            jac = jz;
        }
    }
    (h[0], jac[0].clone())
}

pub fn min_abs_preactivation(net: &ReQUNetwork, points: &Array2<f64>) -> f64 {
    points
        .rows()
        .into_iter()
        .flat_map(|r| loop_forward(net, r.as_slice().unwrap()).1)
        .map(f64::abs)
        .fold(f64::INFINITY, f64::min)
}

/// Central differences of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[k] += h;
            dn[k] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

/// `max |a − b| / max(max |b|, floor)`
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

/// Straight-line SDORE objective: per-point loops, no tape.
pub fn straight_line_sdore(net: &ReQUNetwork, x: &Array2<f64>, y: &[f64], z: &Array2<f64>, lambda: f64) -> f64 {
    let fit = x
        .rows()
        .into_iter()
        .zip(y)
        .map(|(r, yi)| {
            let (v, _) = loop_forward(net, r.as_slice().unwrap());
            (v - yi).powi(2)
        })
        .sum::<f64>()
        / x.nrows() as f64;
    if lambda == 0.0 {
        return fit;
    }
    let pen = z
        .rows()
        .into_iter()
        .map(|r| {
            let (_, g) = loop_value_and_gradient(net, r.as_slice().unwrap());
            g.iter().map(|v| v * v).sum::<f64>()
        })
        .sum::<f64>()
        / z.nrows() as f64;
    fit + lambda * pen
}

/// Perturbs one flattened parameter of a network model.
pub fn with_parameter(model: &Model, index: usize, delta: f64) -> Model {
    let mut m = model.clone();
    let mut seen = 0;
    for p in m.parameters_mut() {
        if index < seen + p.len() {
            let flat = p.as_slice_mut().unwrap();
            flat[index - seen] += delta;
            return m;
        }
        seen += p.len();
    }
    panic!("parameter index {index} out of range");
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_points(rng: &mut ChaCha8Rng, n: usize, d: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.gen_range(lo..hi))
}

/// Ridge minimizer `(XᵀX/n + λI)⁻¹ Xᵀy/n` by Gauss-Jordan elimination.
pub fn ridge_by_elimination(x: &Array2<f64>, y: &[f64], lambda: f64) -> Vec<f64> {
    let (n, d) = x.dim();
    let mut a = vec![vec![0.0; d + 1]; d];
    for r in 0..d {
        for c in 0..d {
            a[r][c] = (0..n).map(|i| x[[i, r]] * x[[i, c]]).sum::<f64>() / n as f64;
        }
        a[r][r] += lambda;
        a[r][d] = (0..n).map(|i| x[[i, r]] * y[i]).sum::<f64>() / n as f64;
    }
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..d {
            if r != col {
                let f = a[r][col];
                let src = a[col].clone();
                for (v, s) in a[r].iter_mut().zip(src) {
                    *v -= f * s;
                }
            }
        }
    }
    a.into_iter().map(|row| row[d]).collect()
}

/// Centered Gaussian design with a planted linear signal and small noise.
pub fn centered_linear_data(seed: u64, n: usize, d: usize) -> (Array2<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::StandardNormal;
    let mut x = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(normal));
    let theta: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut y: Vec<f64> = (0..n)
        .map(|i| (0..d).map(|k| x[[i, k]] * theta[k]).sum::<f64>() + 0.1 * rng.sample::<f64, _>(normal))
        .collect();
    for mut col in x.columns_mut() {
        let m = col.sum() / n as f64;
        col.mapv_inplace(|v| v - m);
    }
    let ym = y.iter().sum::<f64>() / n as f64;
    y.iter_mut().for_each(|v| *v -= ym);
    (x, y)
}
