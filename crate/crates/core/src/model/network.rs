use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{requ, NodeId, Tape};
use crate::error::{Result, SdoreError};

/// Dense network `x ↦ T_L(ϱ(T_{L-1}(… ϱ(T_0 x))))` with affine maps
/// `T_ℓ(h) = A_ℓ h + b_ℓ` and ReQU activation ϱ.
///
/// `layer_dims = [d, N_1, …, N_L, 1]`; weight `ℓ` is `N_{ℓ+1} × N_ℓ` and
/// biases are stored as `1 × N_{ℓ+1}` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ReQUNetwork {
    dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array2<f64>>,
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(SdoreError::contract(format!(
            "layer_dims {dims:?} needs an input and an output width"
        )));
    }
    if dims.iter().any(|&n| n == 0) {
        return Err(SdoreError::contract(format!(
            "layer_dims {dims:?} contains a zero width"
        )));
    }
    if *dims.last().unwrap() != 1 {
        return Err(SdoreError::contract(format!(
            "layer_dims {dims:?} must end with a scalar output"
        )));
    }
    Ok(())
}

impl ReQUNetwork {
    /// Weights and biases uniform on `±1/√fan_in`.
    ///
    /// Nonzero biases matter here: with zero biases every first-layer unit is
    /// a multiple of `(wᵀx)₊²`, so the network starts out positively homogeneous.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
                dist.sample(&mut rng)
            }));
            biases.push(Array2::from_shape_fn((1, fan_out), |_| dist.sample(&mut rng)));
        }
        Ok(ReQUNetwork {
            dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    /// All-zero parameters.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        validate_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|p| Array2::zeros((p[1], p[0])))
            .collect();
        let biases = layer_dims
            .windows(2)
            .map(|p| Array2::zeros((1, p[1])))
            .collect();
        Ok(ReQUNetwork {
            dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Assembles a network from explicit tensors, checking the shape chain.
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array2<f64>>,
    ) -> Result<Self> {
        validate_dims(&layer_dims).map_err(|e| SdoreError::Validation(e.to_string()))?;
        let layers = layer_dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(SdoreError::Validation(format!(
                "{layers} layers expected, got {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        for (l, pair) in layer_dims.windows(2).enumerate() {
            if weights[l].dim() != (pair[1], pair[0]) {
                return Err(SdoreError::Validation(format!(
                    "weight {l} is {:?}, shape chain needs ({}, {})",
                    weights[l].dim(),
                    pair[1],
                    pair[0]
                )));
            }
            if biases[l].dim() != (1, pair[1]) {
                return Err(SdoreError::Validation(format!(
                    "bias {l} is {:?}, shape chain needs (1, {})",
                    biases[l].dim(),
                    pair[1]
                )));
            }
        }
        Ok(ReQUNetwork {
            dims: layer_dims,
            weights,
            biases,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    /// Number of affine maps (L + 1).
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Hidden ReQU layers, L.
    pub fn depth(&self) -> usize {
        self.weights.len() - 1
    }

    /// Count of nonzero weights and biases (the size S).
    pub fn nonzero_parameters(&self) -> usize {
        self.parameters()
            .iter()
            .map(|p| p.iter().filter(|v| **v != 0.0).count())
            .sum()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array2<f64>] {
        &self.biases
    }

    /// `[W_0, b_0, W_1, b_1, …]`
    pub fn parameters(&self) -> Vec<&Array2<f64>> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    /// Binds every tensor as a tape parameter starting at `first_slot`.
    pub fn bind(&self, tape: &mut Tape, first_slot: usize) -> Result<Vec<(NodeId, NodeId)>> {
        let mut slot = first_slot;
        let mut out = Vec::with_capacity(self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let wn = tape.parameter(slot, w.clone())?;
            let bn = tape.parameter(slot + 1, b.clone())?;
            slot += 2;
            out.push((wn, bn));
        }
        Ok(out)
    }

    pub fn bind_constants(&self, tape: &mut Tape) -> Vec<(NodeId, NodeId)> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| (tape.constant(w.clone()), tape.constant(b.clone())))
            .collect()
    }

    /// Forward pass for a `batch × d` matrix.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(SdoreError::Shape {
                context: "predict",
                expected: format!("{} columns", self.input_dim()),
                actual: format!("{}", x.ncols()),
            });
        }
        let mut h = x.to_owned();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.dot(&w.t());
            z += b;
            if l < last {
                z.mapv_inplace(requ);
            }
            h = z;
        }
        Ok(h.column(0).to_owned())
    }

    /// Activations after the first hidden layer.
    pub fn first_hidden(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights[0].t());
        z += &self.biases[0];
        z.mapv(requ)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn init_has_requested_architecture() {
        let net = ReQUNetwork::init(&[2, 64, 64, 1], 7).unwrap();
        assert_eq!(net.depth(), 2);
        assert_eq!(net.weights()[0].dim(), (64, 2));
        assert_eq!(net.weights()[1].dim(), (64, 64));
        assert_eq!(net.weights()[2].dim(), (1, 64));
        let bound = 1.0 / 8.0;
        assert!(net.weights()[1].iter().all(|w| w.abs() <= bound));
        assert!(net.biases()[1].iter().all(|b| b.abs() <= bound));
        assert!(net.biases()[0].iter().any(|b| b.abs() > 0.1));
    }

    #[test]
    fn degenerate_depth_is_affine() {
        let mut net = ReQUNetwork::init(&[1, 1], 3).unwrap();
        assert_eq!(net.depth(), 0);
        net.parameters_mut()[1][[0, 0]] = 0.5;
        let a = net.weights()[0][[0, 0]];
        let y = net.predict(&array![[2.0], [-3.0]]).unwrap();
        assert_eq!(y.to_vec(), vec![2.0 * a + 0.5, -3.0 * a + 0.5]);
    }

    #[test]
    fn init_is_deterministic() {
        let a = ReQUNetwork::init(&[3, 16, 1], 11).unwrap();
        let b = ReQUNetwork::init(&[3, 16, 1], 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ReQUNetwork::init(&[3, 16, 1], 12).unwrap());
    }

    #[test]
    fn invalid_dims_are_rejected() {
        assert!(ReQUNetwork::init(&[], 0).is_err());
        assert!(ReQUNetwork::init(&[3], 0).is_err());
        assert!(ReQUNetwork::init(&[3, 0, 1], 0).is_err());
        assert!(ReQUNetwork::init(&[3, 4, 2], 0).is_err());
    }

    #[test]
    fn zero_network_predicts_zero() {
        let net = ReQUNetwork::zeros(&[4, 8, 8, 1]).unwrap();
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i * 4 + j) as f64 * 0.1);
        assert!(net.predict(&x).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn from_parts_checks_shape_chain() {
        let err = ReQUNetwork::from_parts(
            vec![2, 3, 1],
            vec![Array2::zeros((3, 2)), Array2::zeros((1, 2))],
            vec![Array2::zeros((1, 3)), Array2::zeros((1, 1))],
        );
        assert!(matches!(err, Err(SdoreError::Validation(_))));
    }

    proptest! {
        #[test]
        fn first_layer_positive_homogeneity(seed in 0u64..1000, c in 0.1f64..5.0) {
            let mut net = ReQUNetwork::init(&[3, 6, 1], seed).unwrap();
            net.parameters_mut()[1]
                .indexed_iter_mut()
                .for_each(|((_, j), b)| *b = 0.1 * j as f64 - 0.2);
            let mut scaled = net.clone();
            {
                let mut p = scaled.parameters_mut();
                p[0].mapv_inplace(|w| w * c);
                p[1].mapv_inplace(|b| b * c);
            }
            let x = array![[0.3, -0.2, 0.9], [1.0, 0.5, -0.7]];
            let base = net.first_hidden(&x);
            let got = scaled.first_hidden(&x);
            for (g, b) in got.iter().zip(base.iter()) {
                prop_assert!((g - c * c * b).abs() <= 1e-12 * (1.0 + g.abs()));
            }
        }
    }
}
