//! Finite-difference and closed-form self-checks behind `sdore gradcheck`.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{forward_jet, requ_prime, JetOrder, Tape};
use crate::error::Result;
use crate::experiments::ridge_oracle;
use crate::model::{Model, ReQUNetwork};
use crate::training::{loss_sdore, train, LabeledSet, LossSpec, Optimizer, TrainConfig, UnlabeledSet, Variant};

const FD_STEP: f64 = 1e-4;
const KINK_MARGIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Random networks per derivative check and instances per ridge λ.
    pub cases: usize,
    /// Replace ϱ′ in reverse mode by a wrong formula; the param-grad check must fail.
    pub corrupt_requ_prime: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 0,
            cases: 20,
            corrupt_requ_prime: false,
        }
    }
}

fn corrupted_requ_prime(z: f64) -> f64 {
    1.1 * requ_prime(z)
}

/// `max |a − b| / max(max |b|, 1e-8)`
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[k] += FD_STEP;
            dn[k] -= FD_STEP;
            (f(&up) - f(&dn)) / (2.0 * FD_STEP)
        })
        .collect()
}

fn random_net(rng: &mut ChaCha8Rng, d: usize) -> Result<ReQUNetwork> {
    let depth = rng.gen_range(2..=4);
    let mut dims = vec![d];
    for _ in 0..depth {
        dims.push(rng.gen_range(2..=16));
    }
    dims.push(1);
    let mut net = ReQUNetwork::init(&dims, rng.gen())?;
    for (i, p) in net.parameters_mut().into_iter().enumerate() {
        if i % 2 == 1 {
            p.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
    }
    Ok(net)
}

/// Smallest |pre-activation| of any hidden unit over the rows of `x`.
fn kink_distance(net: &ReQUNetwork, x: &Array2<f64>) -> f64 {
    let mut h = x.clone();
    let mut closest = f64::INFINITY;
    let last = net.num_layers() - 1;
    for (w, b) in net.weights().iter().zip(net.biases()).take(last) {
        let mut z = h.dot(&w.t());
        z += b;
        closest = z.iter().fold(closest, |m, v| m.min(v.abs()));
        h = z.mapv(crate::autodiff::requ);
    }
    closest
}

fn points(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, d), |_| rng.gen_range(-1.0..1.0))
}

/// A random network and `rows` inputs all at least `KINK_MARGIN` from every kink.
fn smooth_case(rng: &mut ChaCha8Rng, rows: usize) -> Result<(ReQUNetwork, Array2<f64>)> {
    loop {
        let d = rng.gen_range(1..=4);
        let net = random_net(rng, d)?;
        let x = points(rng, rows, d);
        if kink_distance(&net, &x) >= KINK_MARGIN {
            return Ok((net, x));
        }
    }
}

fn input_gradient_check(rng: &mut ChaCha8Rng, cases: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (net, x) = smooth_case(rng, 1)?;
        let p = x.row(0).to_vec();
        let jet = forward_jet(&net, &p, JetOrder::Gradient)?;
        let value = |q: &[f64]| {
            let row = Array2::from_shape_vec((1, q.len()), q.to_vec()).expect("one row");
            net.predict(&row).expect("matching width")[0]
        };
        let fd = central_difference(value, &p);
        worst = worst.max(relative_error(jet.grad.as_slice().expect("contiguous"), &fd));
    }
    Ok(worst)
}

fn hessian_check(rng: &mut ChaCha8Rng, cases: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (net, x) = smooth_case(rng, 1)?;
        let p = x.row(0).to_vec();
        let d = p.len();
        let jet = forward_jet(&net, &p, JetOrder::Hessian)?;
        let hess = jet.hess.clone().expect("second order requested");
        let mut fd_hess = Array2::zeros((d, d));
        for k in 0..d {
            let grad_k = |q: &[f64]| forward_jet(&net, q, JetOrder::Gradient).expect("width").grad[k];
            let row = central_difference(grad_k, &p);
            for (j, v) in row.into_iter().enumerate() {
                fd_hess[[k, j]] = v;
            }
        }
        let fd_trace: f64 = (0..d).map(|k| fd_hess[[k, k]]).sum();
        let analytic: Vec<f64> = hess.iter().copied().collect();
        let oracle: Vec<f64> = fd_hess.iter().copied().collect();
        let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        let trace_err = (jet.laplacian().expect("hessian") - fd_trace).abs() / scale;
        worst = worst.max(relative_error(&analytic, &oracle)).max(trace_err);
    }
    Ok(worst)
}

fn sdore_loss(model: &Model, x: &Array2<f64>, y: &Array1<f64>, z: &Array2<f64>, lambda: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false)?;
    let terms = loss_sdore(&mut tape, &bound, x, y, z, lambda)?;
    tape.scalar(terms.total)
}

fn perturbed(model: &Model, index: usize, delta: f64) -> Model {
    let mut m = model.clone();
    let mut seen = 0;
    for p in m.parameters_mut() {
        if index < seen + p.len() {
            p.as_slice_mut().expect("standard layout")[index - seen] += delta;
            break;
        }
        seen += p.len();
    }
    m
}

fn parameter_gradient_check(rng: &mut ChaCha8Rng, cases: usize, corrupt: bool) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (net, both) = smooth_case(rng, 6)?;
        let x = both.slice(ndarray::s![..3, ..]).to_owned();
        let z = both.slice(ndarray::s![3.., ..]).to_owned();
        let y = Array1::from_shape_fn(3, |_| rng.gen_range(-1.0..1.0));
        let lambda = rng.gen_range(0.1..1.0);
        let model = Model::from(net);

        let mut tape = Tape::new();
        if corrupt {
            tape = tape.with_requ_prime(corrupted_requ_prime);
        }
        let bound = model.bind(&mut tape, true)?;
        let terms = loss_sdore(&mut tape, &bound, &x, &y, &z, lambda)?;
        let analytic = tape.backward(terms.total)?.flatten();
        let mut fd = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let up = sdore_loss(&perturbed(&model, i, FD_STEP), &x, &y, &z, lambda)?;
            let dn = sdore_loss(&perturbed(&model, i, -FD_STEP), &x, &y, &z, lambda)?;
            fd.push((up - dn) / (2.0 * FD_STEP));
        }
        worst = worst.max(relative_error(&analytic, &fd));
    }
    Ok(worst)
}

/// Upper bound on the largest eigenvalue (Gershgorin).
fn spectral_bound(a: &Array2<f64>) -> f64 {
    a.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Fits an affine model `θᵀx + b` by full-batch gradient descent on the SDORE
/// objective and returns its relative distance to the closed-form ridge solution.
///
/// The penalty of an affine model is `‖θ‖²` at every point, and centering `X`
/// and `y` makes the optimal intercept zero, so the two minimizers coincide.
pub fn ridge_case(seed: u64, n: usize, d: usize, lambda: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
    let theta: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut y = Array1::from_shape_fn(n, |i| {
        (0..d).map(|k| x[[i, k]] * theta[k]).sum::<f64>() + 0.1 * rng.sample::<f64, _>(StandardNormal)
    });
    for mut col in x.columns_mut() {
        let m = col.mean().unwrap_or(0.0);
        col.mapv_inplace(|v| v - m);
    }
    let ym = y.mean().unwrap_or(0.0);
    y.mapv_inplace(|v| v - ym);

    let exact = ridge_oracle(&x, &y, lambda)?;
    let mut gram = x.t().dot(&x) / n as f64;
    for k in 0..d {
        gram[[k, k]] += lambda;
    }
    let lr = 0.5 / spectral_bound(&gram).max(1.0);
    let config = TrainConfig {
        learning_rate: lr,
        batch_size: n,
        epochs: 3000,
        optimizer: Optimizer::Sgd,
        ..TrainConfig::default()
    };
    let model = ReQUNetwork::zeros(&[d, 1])?;
    let labeled = LabeledSet::new(x.clone(), y)?;
    let unlabeled = UnlabeledSet::new(x)?;
    let (fitted, _) = train(
        model.into(),
        &labeled,
        Some(&unlabeled),
        &LossSpec::new(Variant::Sdore, lambda),
        &config,
    )?;
    let params = fitted.parameter_vector();
    let num: f64 = (0..d).map(|k| (params[k] - exact[k]).powi(2)).sum::<f64>() + params[d].powi(2);
    let den: f64 = exact.iter().map(|v| v * v).sum();
    Ok((num / den).sqrt())
}

fn ridge_check(rng: &mut ChaCha8Rng, cases: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for lambda in [1e-3, 1e-1, 1.0] {
        for _ in 0..cases {
            let d = rng.gen_range(1..=10);
            worst = worst.max(ridge_case(rng.gen(), 200, d, lambda)?);
        }
    }
    Ok(worst)
}

pub fn run_gradcheck(opts: GradcheckOptions) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cases = opts.cases.max(1);
    let ridge_cases = cases.div_ceil(4);
    Ok(vec![
        CheckResult {
            name: "input-grad",
            max_rel_err: input_gradient_check(&mut rng, cases)?,
            tolerance: 1e-5,
            cases,
        },
        CheckResult {
            name: "param-grad",
            max_rel_err: parameter_gradient_check(&mut rng, cases, opts.corrupt_requ_prime)?,
            tolerance: 1e-4,
            cases,
        },
        CheckResult {
            name: "hessian",
            max_rel_err: hessian_check(&mut rng, cases)?,
            tolerance: 1e-4,
            cases,
        },
        CheckResult {
            name: "ridge",
            max_rel_err: ridge_check(&mut rng, ridge_cases)?,
            tolerance: 1e-4,
            cases: 3 * ridge_cases,
        },
    ])
}
