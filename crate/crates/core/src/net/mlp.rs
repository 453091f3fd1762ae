use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fully connected network with rectifier hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `weights[l]` maps layer `l` to layer `l + 1` (rows = outputs).
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Activations of a batch, kept for the backward pass. Columns are samples.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[L]` the output.
    pub acts: Vec<DMatrix<f64>>,
}

impl Trace {
    pub fn output(&self) -> &DMatrix<f64> {
        self.acts.last().expect("trace has an input layer")
    }
}

impl Mlp {
    /// He-uniform weights `U(−√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        assert!(sizes.len() >= 2, "need an input and an output layer");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let limit = (6.0 / w[0] as f64).sqrt();
            weights.push(DMatrix::from_fn(w[1], w[0], |_, _| rng.gen_range(-limit..limit)));
            biases.push(DVector::zeros(w[1]));
        }
        Mlp { weights, biases }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Mlp {
            weights: sizes.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect(),
            biases: sizes.windows(2).map(|w| DVector::zeros(w[1])).collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.weights[0].ncols()];
        s.extend(self.weights.iter().map(|w| w.nrows()));
        s
    }

    pub fn n_inputs(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.weights.last().map_or(0, |w| w.nrows())
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let t = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x));
        t.output().iter().copied().collect()
    }

    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Trace {
        let mut acts = vec![x.clone()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l < last {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        Trace { acts }
    }

    /// Gradient of `Σ_samples dyᵀ·output` with respect to every parameter.
    pub fn backward(&self, trace: &Trace, dy: &DMatrix<f64>) -> Mlp {
        let n = self.weights.len();
        let mut grad = Mlp::zeros(&self.sizes());
        let mut delta = dy.clone();
        for l in (0..n).rev() {
            grad.weights[l] = &delta * trace.acts[l].transpose();
            grad.biases[l] = delta.column_sum();
            if l > 0 {
                let mut back = self.weights[l].transpose() * &delta;
                // rectifier derivative, taken as 0 at 0
                back.zip_apply(&trace.acts[l], |d, a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = back;
            }
        }
        grad
    }

    /// Parameters as mutable slices, weights first, in a fixed order.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .map(|w| w.as_mut_slice())
            .chain(self.biases.iter_mut().map(|b| b.as_mut_slice()))
    }

    pub fn params(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .map(|w| w.as_slice())
            .chain(self.biases.iter().map(|b| b.as_slice()))
    }

    pub fn flat(&self) -> Vec<f64> {
        self.params().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.n_params());
        let mut k = 0;
        for s in self.params_mut() {
            s.copy_from_slice(&theta[k..k + s.len()]);
            k += s.len();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|s| s.iter().all(|v| v.is_finite()))
    }
}
