//! Synthetic regression problems and their ground truth.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdoreError};
use crate::training::{LabeledSet, UnlabeledSet};

/// Draws used to turn a signal-to-noise ratio into a noise level.
pub const SNR_CALIBRATION_DRAWS: usize = 100_000;
const SNR_CALIBRATION_SEED: u64 = 0x5eed_0f_5a4;

const STREAM_LABELED: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_UNLABELED: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum CoordDist {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

/// Product measure, one distribution per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sampler(pub Vec<CoordDist>);

impl Sampler {
    pub fn uniform_cube(d: usize, lo: f64, hi: f64) -> Self {
        Sampler(vec![CoordDist::Uniform { lo, hi }; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `count × d` matrix, filled row by row.
    pub fn sample(&self, count: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((count, d));
        let dists: Vec<Box<dyn Fn(&mut ChaCha8Rng) -> f64>> = self
            .0
            .iter()
            .map(|c| -> Box<dyn Fn(&mut ChaCha8Rng) -> f64> {
                match *c {
                    CoordDist::Uniform { lo, hi } => {
                        let u = Uniform::new(lo, hi);
                        Box::new(move |r| u.sample(r))
                    }
                    CoordDist::Normal { mean, sd } => {
                        let nd = Normal::new(mean, sd).expect("finite normal parameters");
                        Box::new(move |r| nd.sample(r))
                    }
                }
            })
            .collect();
        for i in 0..count {
            for (k, draw) in dists.iter().enumerate() {
                out[[i, k]] = draw(rng);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    /// Gaussian noise with this standard deviation.
    Sigma(f64),
    /// σ = sd(f₀(X)) / snr, the standard deviation estimated from fresh draws.
    Snr(f64),
}

/// Ground-truth handles for a synthetic problem.
#[derive(Clone, Debug)]
pub struct Truth {
    pub f0: fn(&[f64]) -> f64,
    pub grad: fn(&[f64]) -> Vec<f64>,
    /// Zero-based relevant coordinates.
    pub relevant: Option<BTreeSet<usize>>,
    /// Source `f* = −Δu* + w·u*` for inverse problems.
    pub source: Option<fn(&[f64]) -> f64>,
    pub potential: Option<fn(&[f64]) -> f64>,
}

impl Truth {
    pub fn values(&self, x: &Array2<f64>) -> Array1<f64> {
        x.rows()
            .into_iter()
            .map(|r| (self.f0)(&r.to_vec()))
            .collect()
    }

    pub fn gradients(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut g = Array2::zeros(x.raw_dim());
        for (i, r) in x.rows().into_iter().enumerate() {
            for (k, v) in (self.grad)(&r.to_vec()).into_iter().enumerate() {
                g[[i, k]] = v;
            }
        }
        g
    }
}

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub name: String,
    pub truth: Truth,
    /// Covariate law μ_X of the labeled data.
    pub mu: Sampler,
    /// Law of the unlabeled covariates; `None` means μ_X.
    pub nu: Option<Sampler>,
    pub noise: Noise,
    pub n: usize,
    pub m: usize,
}

/// Data drawn for one seed.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub labeled: LabeledSet,
    pub unlabeled: Option<UnlabeledSet>,
    pub sigma: f64,
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(SdoreError::contract("problem needs n ≥ 1"));
        }
        if let Some(nu) = &self.nu {
            if nu.dim() != self.mu.dim() {
                return Err(SdoreError::contract("mu and nu samplers differ in dimension"));
            }
        }
        match self.noise {
            Noise::Sigma(s) if !(s >= 0.0) => Err(SdoreError::contract("sigma must be ≥ 0")),
            Noise::Snr(r) if !(r > 0.0) => Err(SdoreError::contract("snr must be positive")),
            _ => Ok(()),
        }
    }

    pub fn unlabeled_sampler(&self) -> &Sampler {
        self.nu.as_ref().unwrap_or(&self.mu)
    }

    /// Noise standard deviation and a note on where it came from.
    pub fn sigma(&self) -> (f64, String) {
        match self.noise {
            Noise::Sigma(s) => (s, format!("sigma = {s} (given)")),
            Noise::Snr(snr) => {
                let mut rng = ChaCha8Rng::seed_from_u64(SNR_CALIBRATION_SEED);
                let x = self.mu.sample(SNR_CALIBRATION_DRAWS, &mut rng);
                let v = self.truth.values(&x);
                let sd = super::stats::std_dev(v.as_slice().expect("contiguous"));
                let sigma = sd / snr;
                (
                    sigma,
                    format!(
                        "sigma = sd(f0) / snr = {sd:.6} / {snr} = {sigma:.6}, sd over {SNR_CALIBRATION_DRAWS} draws from mu"
                    ),
                )
            }
        }
    }

    /// Draws `n` labeled pairs and `m` unlabeled covariates; a pure function of `seed`.
    pub fn generate(&self, seed: u64) -> Result<ProblemInstance> {
        self.validate()?;
        let (sigma, _) = self.sigma();
        self.generate_with_sigma(seed, sigma)
    }

    /// As [`ProblemSpec::generate`], with the noise level already resolved.
    pub fn generate_with_sigma(&self, seed: u64, sigma: f64) -> Result<ProblemInstance> {
        self.validate()?;
        let x = self.mu.sample(self.n, &mut stream_rng(seed, STREAM_LABELED));
        let mut y = self.truth.values(&x);
        if sigma > 0.0 {
            let mut rng = stream_rng(seed, STREAM_NOISE);
            let noise = Normal::new(0.0, sigma).expect("finite sigma");
            y.mapv_inplace(|v| v + noise.sample(&mut rng));
        }
        let unlabeled = if self.m > 0 {
            let z = self
                .unlabeled_sampler()
                .sample(self.m, &mut stream_rng(seed, STREAM_UNLABELED));
            Some(UnlabeledSet::new(z)?)
        } else {
            None
        };
        Ok(ProblemInstance {
            labeled: LabeledSet::new(x, y)?,
            unlabeled,
            sigma,
        })
    }

    /// Noisy pairs from μ_X for testing; independent of the training draws.
    pub fn test_set(&self, sigma: f64, size: usize, seed: u64, index: u64) -> Result<LabeledSet> {
        let mut rng = stream_rng(seed ^ 0x7e57_0000_0000, 16 + 2 * index);
        let x = self.mu.sample(size, &mut rng);
        let mut y = self.truth.values(&x);
        if sigma > 0.0 {
            let mut rng = stream_rng(seed ^ 0x7e57_0000_0000, 17 + 2 * index);
            let noise = Normal::new(0.0, sigma).expect("finite sigma");
            y.mapv_inplace(|v| v + noise.sample(&mut rng));
        }
        LabeledSet::new(x, y)
    }
}

// Example 6.1: f₀(x) = 1 + 36x² − 59x³ + 21x⁵ + 0.5cos(πx) on [0, 1].

pub fn example_1d_f0(x: &[f64]) -> f64 {
    let t = x[0];
    1.0 + 36.0 * t.powi(2) - 59.0 * t.powi(3) + 21.0 * t.powi(5) + 0.5 * (PI * t).cos()
}

pub fn example_1d_grad(x: &[f64]) -> Vec<f64> {
    let t = x[0];
    vec![72.0 * t - 177.0 * t.powi(2) + 105.0 * t.powi(4) - 0.5 * PI * (PI * t).sin()]
}

pub fn example_1d_spec(n: usize, m: usize) -> ProblemSpec {
    ProblemSpec {
        name: "example6_1".into(),
        truth: Truth {
            f0: example_1d_f0,
            grad: example_1d_grad,
            relevant: None,
            source: None,
            potential: None,
        },
        mu: Sampler::uniform_cube(1, 0.0, 1.0),
        nu: None,
        noise: Noise::Snr(30.0),
        n,
        m,
    }
}

pub fn gen_example_1d(n: usize, m: usize, seed: u64) -> Result<(ProblemInstance, Truth)> {
    let spec = example_1d_spec(n, m);
    Ok((spec.generate(seed)?, spec.truth))
}

// Example 6.2: f₀(x) = Σ_{i<j≤4} xᵢxⱼ on [0, 1]²⁰.

pub fn selection_f0(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in i + 1..4 {
            s += x[i] * x[j];
        }
    }
    s
}

pub fn selection_grad(x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let head: f64 = x[..4].iter().sum();
    for (k, gk) in g.iter_mut().enumerate().take(4) {
        *gk = head - x[k];
    }
    g
}

pub fn example_selection_spec(n: usize, m: usize) -> ProblemSpec {
    ProblemSpec {
        name: "example6_2".into(),
        truth: Truth {
            f0: selection_f0,
            grad: selection_grad,
            relevant: Some((0..4).collect()),
            source: None,
            potential: None,
        },
        mu: Sampler::uniform_cube(20, 0.0, 1.0),
        nu: None,
        noise: Noise::Snr(25.0),
        n,
        m,
    }
}

pub fn gen_example_selection(n: usize, m: usize, seed: u64) -> Result<(ProblemInstance, Truth)> {
    let spec = example_selection_spec(n, m);
    Ok((spec.generate(seed)?, spec.truth))
}

// Example 6.3: u*(x) = cos(2πx₁)cos(3πx₂), w ≡ 3π², f* = 16π²u*.

pub fn inverse_u(x: &[f64]) -> f64 {
    (2.0 * PI * x[0]).cos() * (3.0 * PI * x[1]).cos()
}

pub fn inverse_grad(x: &[f64]) -> Vec<f64> {
    let (a, b) = (2.0 * PI * x[0], 3.0 * PI * x[1]);
    vec![-2.0 * PI * a.sin() * b.cos(), -3.0 * PI * a.cos() * b.sin()]
}

pub fn inverse_potential(_x: &[f64]) -> f64 {
    3.0 * PI * PI
}

pub fn inverse_source(x: &[f64]) -> f64 {
    16.0 * PI * PI * inverse_u(x)
}

pub fn example_inverse_spec(n: usize, m: usize, sigma: f64) -> ProblemSpec {
    ProblemSpec {
        name: "example6_3".into(),
        truth: Truth {
            f0: inverse_u,
            grad: inverse_grad,
            relevant: None,
            source: Some(inverse_source),
            potential: Some(inverse_potential),
        },
        mu: Sampler::uniform_cube(2, 0.0, 1.0),
        nu: None,
        noise: Noise::Sigma(sigma),
        n,
        m,
    }
}

/// Labeled measurements only; the penalty sample is configured separately.
pub fn gen_example_inverse(n: usize, seed: u64, sigma: f64) -> Result<(ProblemInstance, Truth)> {
    let spec = example_inverse_spec(n, 0, sigma);
    Ok((spec.generate(seed)?, spec.truth))
}

// Appendix toy: f₀(x) = x₁², x₁ ~ U[−1, 1], x₂ ~ N(0, 0.05).

pub fn toy_f0(x: &[f64]) -> f64 {
    x[0] * x[0]
}

pub fn toy_grad(x: &[f64]) -> Vec<f64> {
    vec![2.0 * x[0], 0.0]
}

pub fn appendix_toy_spec(n: usize, m: usize) -> ProblemSpec {
    ProblemSpec {
        name: "appendix_toy".into(),
        truth: Truth {
            f0: toy_f0,
            grad: toy_grad,
            relevant: None,
            source: None,
            potential: None,
        },
        // second parameters are variances, as in N(0, σ²)
        mu: Sampler(vec![
            CoordDist::Uniform { lo: -1.0, hi: 1.0 },
            CoordDist::Normal { mean: 0.0, sd: 0.05f64.sqrt() },
        ]),
        nu: Some(Sampler::uniform_cube(2, -1.0, 1.0)),
        noise: Noise::Sigma(0.1f64.sqrt()),
        n,
        m,
    }
}

pub fn gen_appendix_toy(n: usize, m: usize, seed: u64) -> Result<(ProblemInstance, Truth)> {
    let spec = appendix_toy_spec(n, m);
    Ok((spec.generate(seed)?, spec.truth))
}

// Appendix simulation: f₀(x) = 2x₁² + e^{x₂} + 2sin(x₃) + 2cos(x₄ + 1) in ℝ¹⁰.

pub fn sim_f0(x: &[f64]) -> f64 {
    2.0 * x[0] * x[0] + x[1].exp() + 2.0 * x[2].sin() + 2.0 * (x[3] + 1.0).cos()
}

pub fn sim_grad(x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    g[0] = 4.0 * x[0];
    g[1] = x[1].exp();
    g[2] = 2.0 * x[2].cos();
    g[3] = -2.0 * (x[3] + 1.0).sin();
    g
}

pub fn appendix_sim_spec(n: usize, m: usize) -> ProblemSpec {
    let mut coords = vec![CoordDist::Uniform { lo: 0.0, hi: 1.0 }; 4];
    coords.extend(vec![CoordDist::Uniform { lo: 0.0, hi: 0.05 }; 6]);
    ProblemSpec {
        name: "appendix_sim".into(),
        truth: Truth {
            f0: sim_f0,
            grad: sim_grad,
            relevant: Some((0..4).collect()),
            source: None,
            potential: None,
        },
        mu: Sampler(coords),
        nu: None,
        noise: Noise::Snr(25.0),
        n,
        m,
    }
}

pub fn gen_appendix_sim(n: usize, m: usize, seed: u64) -> Result<(ProblemInstance, Truth)> {
    let spec = appendix_sim_spec(n, m);
    Ok((spec.generate(seed)?, spec.truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fd(f: fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-5;
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

    fn check_grad(f: fn(&[f64]) -> f64, g: fn(&[f64]) -> Vec<f64>, d: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for (a, b) in g(&x).iter().zip(fd(f, &x)) {
                assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn example_1d_values() {
        assert_eq!(example_1d_f0(&[0.0]), 1.5);
        check_grad(example_1d_f0, example_1d_grad, 1);
    }

    #[test]
    fn selection_values() {
        assert_eq!(selection_f0(&[1.0; 20]), 6.0);
        check_grad(selection_f0, selection_grad, 20);
        let x: Vec<f64> = (0..20).map(|i| 0.05 * i as f64).collect();
        let g = selection_grad(&x);
        assert_eq!(g[4], 0.0);
        assert!((g[0] - (x[1] + x[2] + x[3])).abs() < 1e-15);
    }

    #[test]
    fn inverse_values() {
        assert_eq!(inverse_u(&[0.0, 0.0]), 1.0);
        check_grad(inverse_u, inverse_grad, 2);
        assert!((inverse_source(&[0.0, 0.0]) - 157.91367041742973).abs() < 1e-9);
        // −Δu* + w·u* by second differences
        let x = [0.37, 0.81];
        let h = 1e-4;
        let mut lap = 0.0;
        for k in 0..2 {
            let mut up = x;
            let mut dn = x;
            up[k] += h;
            dn[k] -= h;
            lap += (inverse_u(&up) - 2.0 * inverse_u(&x) + inverse_u(&dn)) / (h * h);
        }
        let f = -lap + inverse_potential(&x) * inverse_u(&x);
        assert!((f - inverse_source(&x)).abs() < 1e-4 * 160.0);
    }

    #[test]
    fn toy_and_sim_values() {
        assert_eq!(toy_f0(&[0.5, 123.0]), 0.25);
        assert_eq!(toy_grad(&[-1.0, 0.0]), vec![-2.0, 0.0]);
        check_grad(toy_f0, toy_grad, 2);
        assert!((sim_f0(&[0.0; 10]) - (1.0 + 2.0 * 1f64.cos())).abs() < 1e-15);
        assert!((sim_f0(&[0.0; 10]) - 2.0806).abs() < 1e-4);
        check_grad(sim_f0, sim_grad, 10);
        let g = sim_grad(&[0.3; 10]);
        assert_eq!(g[6], 0.0);
        assert_eq!(g[1], 0.3f64.exp());
    }

    #[test]
    fn generators_are_pure_functions_of_seed() {
        let (a, _) = gen_example_1d(50, 80, 3).unwrap();
        let (b, _) = gen_example_1d(50, 80, 3).unwrap();
        assert_eq!(a.labeled, b.labeled);
        assert_eq!(a.unlabeled, b.unlabeled);
        let (c, _) = gen_example_1d(50, 80, 4).unwrap();
        assert_ne!(a.labeled, c.labeled);
    }

    #[test]
    fn snr_sigma_follows_definition() {
        let spec = example_1d_spec(10, 0);
        let (sigma, note) = spec.sigma();
        assert!(sigma > 0.0 && note.contains("snr"));
        let (again, _) = spec.sigma();
        assert_eq!(sigma.to_bits(), again.to_bits());
    }

    #[test]
    fn selection_generator_shapes() {
        let (inst, truth) = gen_example_selection(100, 1000, 0).unwrap();
        assert_eq!(inst.labeled.x.dim(), (100, 20));
        assert_eq!(inst.unlabeled.unwrap().z.dim(), (1000, 20));
        assert_eq!(truth.relevant.unwrap(), (0..4).collect());
    }

    #[test]
    fn sim_noise_coordinates_stay_small() {
        let (inst, _) = gen_appendix_sim(200, 0, 1).unwrap();
        assert!(inst.labeled.x.column(7).iter().all(|v| (0.0..0.05).contains(v)));
        assert!(inst.unlabeled.is_none());
    }
}
