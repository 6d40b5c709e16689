//! Dense feedforward networks with reverse-mode gradients.
//!
//! Hidden layers use a smooth activation (tanh); the output layer is linear.
//! Everything is plain `Vec<f64>` with row-major weight matrices, sized for
//! desk-scale training where a handwritten backward pass is simpler than an
//! autodiff dependency.

use rand::Rng;

use crate::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    #[inline]
    fn eval(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation value a = f(z).
    #[inline]
    fn deriv_from_value(&self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// One dense layer, weights row-major: w[row * cols + col].
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

/// A multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub widths: Vec<usize>,
    pub activation: Activation,
}

/// Per-parameter gradients with the same shapes as the network.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub dw: Vec<Vec<f64>>,
    pub db: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros(mlp: &Mlp) -> Self {
        Self {
            dw: mlp.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            db: mlp.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.dw.iter_mut().chain(self.db.iter_mut()) {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// Batched forward activations kept for the backward pass.
///
/// `acts[l]` holds the activations after layer l (row-major, batch x width);
/// `acts[0]` is the input batch.
pub struct BatchCache {
    pub acts: Vec<Vec<f64>>,
    pub batch: usize,
}

impl BatchCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache has at least the input")
    }
}

impl Mlp {
    /// Zero-initialized network; `widths` is [input, hidden..., output].
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Shape(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|pair| Layer {
                w: vec![0.0; pair[0] * pair[1]],
                b: vec![0.0; pair[1]],
                rows: pair[1],
                cols: pair[0],
            })
            .collect();
        Ok(Self { layers, widths: widths.to_vec(), activation: Activation::Tanh })
    }

    /// Glorot-uniform initialization.
    pub fn random(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut mlp = Self::zeros(widths)?;
        for layer in &mut mlp.layers {
            let bound = (6.0 / (layer.rows + layer.cols) as f64).sqrt();
            for w in layer.w.iter_mut() {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Single-input forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input length {} does not match first layer width {}",
                input.len(),
                self.input_dim()
            )));
        }
        let cache = self.forward_batch(input, 1)?;
        Ok(cache.output().to_vec())
    }

    /// Forward pass over `batch` rows packed input-dim-major.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<BatchCache> {
        if inputs.len() != batch * self.input_dim() {
            return Err(Error::Shape(format!(
                "batch input of {} values does not factor as {} x {}",
                inputs.len(),
                batch,
                self.input_dim()
            )));
        }
        let n_layers = self.layers.len();
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(inputs.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = &acts[l];
            let mut out = vec![0.0; batch * layer.rows];
            for s in 0..batch {
                let x = &prev[s * layer.cols..(s + 1) * layer.cols];
                let y = &mut out[s * layer.rows..(s + 1) * layer.rows];
                for r in 0..layer.rows {
                    let wrow = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                    let mut acc = layer.b[r];
                    for c in 0..layer.cols {
                        acc += wrow[c] * x[c];
                    }
                    y[r] = acc;
                }
            }
            if l + 1 < n_layers {
                for v in out.iter_mut() {
                    *v = self.activation.eval(*v);
                }
            }
            acts.push(out);
        }
        Ok(BatchCache { acts, batch })
    }

    /// Accumulate parameter gradients for a batch given the gradient of the
    /// scalar objective with respect to the network output (`upstream`,
    /// batch x output_dim). Gradients are added into `grads`.
    pub fn backward_batch(&self, cache: &BatchCache, upstream: &[f64], grads: &mut MlpGrads) {
        let batch = cache.batch;
        debug_assert_eq!(upstream.len(), batch * self.output_dim());
        let mut delta = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let prev = &cache.acts[l];
            let dw = &mut grads.dw[l];
            let db = &mut grads.db[l];
            for s in 0..batch {
                let d = &delta[s * layer.rows..(s + 1) * layer.rows];
                let x = &prev[s * layer.cols..(s + 1) * layer.cols];
                for r in 0..layer.rows {
                    db[r] += d[r];
                    let wrow = &mut dw[r * layer.cols..(r + 1) * layer.cols];
                    for c in 0..layer.cols {
                        wrow[c] += d[r] * x[c];
                    }
                }
            }
            if l == 0 {
                break;
            }
            // delta for the previous layer: (W^T d) * act'(a_prev).
            let mut next_delta = vec![0.0; batch * layer.cols];
            for s in 0..batch {
                let d = &delta[s * layer.rows..(s + 1) * layer.rows];
                let a = &prev[s * layer.cols..(s + 1) * layer.cols];
                let nd = &mut next_delta[s * layer.cols..(s + 1) * layer.cols];
                for r in 0..layer.rows {
                    let wrow = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                    let dr = d[r];
                    for c in 0..layer.cols {
                        nd[c] += wrow[c] * dr;
                    }
                }
                for c in 0..layer.cols {
                    nd[c] *= self.activation.deriv_from_value(a[c]);
                }
            }
            delta = next_delta;
        }
    }

    /// Flatten all parameters (layer by layer, weights then biases).
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.w);
            out.extend_from_slice(&layer.b);
        }
        out
    }

    /// Inverse of [`Mlp::flatten_params`].
    pub fn load_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector of {} values does not match network size {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let nw = layer.w.len();
            layer.w.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = layer.b.len();
            layer.b.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }
}

/// Reverse-mode gradients of `dot(output, upstream)` with respect to every
/// parameter, for a single input.
pub fn mlp_gradients(mlp: &Mlp, input: &[f64], upstream: &[f64]) -> Result<MlpGrads> {
    if upstream.len() != mlp.output_dim() {
        return Err(Error::Shape(format!(
            "upstream length {} does not match output width {}",
            upstream.len(),
            mlp.output_dim()
        )));
    }
    let cache = mlp.forward_batch(input, 1)?;
    let mut grads = MlpGrads::zeros(mlp);
    mlp.backward_batch(&cache, upstream, &mut grads);
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = Mlp::zeros(&[3, 5, 2]).unwrap();
        let out = mlp.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer_identity() {
        let mut mlp = Mlp::zeros(&[3, 3]).unwrap();
        for i in 0..3 {
            mlp.layers[0].w[i * 3 + i] = 1.0;
        }
        let out = mlp.forward(&[0.3, -1.7, 2.2]).unwrap();
        assert_eq!(out, vec![0.3, -1.7, 2.2]);
    }

    #[test]
    fn forward_matches_naive_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mlp = Mlp::random(&[2, 7, 5, 3], &mut rng).unwrap();
        let input = [0.4, -0.9];

        // Independent nested-loop evaluation.
        let mut a: Vec<f64> = input.to_vec();
        for (l, layer) in mlp.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.rows];
            for r in 0..layer.rows {
                let mut acc = layer.b[r];
                for c in 0..layer.cols {
                    acc += layer.w[r * layer.cols + c] * a[c];
                }
                next[r] = if l + 1 < mlp.layers.len() { acc.tanh() } else { acc };
            }
            a = next;
        }

        let out = mlp.forward(&input).unwrap();
        for (x, y) in out.iter().zip(&a) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mlp = Mlp::random(&[3, 6, 6, 2], &mut rng).unwrap();
        let input = [0.2, -1.1, 0.7];
        let upstream = [0.8, -0.3];

        let grads = mlp_gradients(&mlp, &input, &upstream).unwrap();

        let objective = |m: &Mlp| -> f64 {
            m.forward(&input).unwrap().iter().zip(&upstream).map(|(o, u)| o * u).sum()
        };
        let eps = 1e-5;
        let flat = mlp.flatten_params();
        let analytic: Vec<f64> = grads
            .dw
            .iter()
            .zip(&grads.db)
            .flat_map(|(dw, db)| dw.iter().chain(db.iter()).copied())
            .collect();
        for idx in 0..flat.len() {
            let mut plus = flat.clone();
            plus[idx] += eps;
            mlp.load_params(&plus).unwrap();
            let f_plus = objective(&mlp);
            let mut minus = flat.clone();
            minus[idx] -= eps;
            mlp.load_params(&minus).unwrap();
            let f_minus = objective(&mlp);
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let denom = numeric.abs().max(analytic[idx].abs()).max(1e-8);
            assert!(
                (numeric - analytic[idx]).abs() / denom < 1e-5,
                "param {idx}: analytic {} vs numeric {}",
                analytic[idx],
                numeric
            );
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::random(&[2, 4, 2], &mut rng).unwrap();
        let grads = mlp_gradients(&mlp, &[0.5, 0.5], &[0.0, 0.0]).unwrap();
        assert!(grads.dw.iter().flatten().all(|&g| g == 0.0));
        assert!(grads.db.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_net_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp = Mlp::random(&[3, 2], &mut rng).unwrap();
        let input = [1.5, -0.5, 2.0];
        let upstream = [0.7, -1.3];
        let grads = mlp_gradients(&mlp, &input, &upstream).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert!((grads.dw[0][r * 3 + c] - upstream[r] * input[c]).abs() < 1e-14);
            }
            assert!((grads.db[0][r] - upstream[r]).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_errors() {
        let mlp = Mlp::zeros(&[3, 2]).unwrap();
        assert!(mlp.forward(&[1.0]).is_err());
        assert!(mlp_gradients(&mlp, &[1.0, 2.0, 3.0], &[1.0]).is_err());
        assert!(Mlp::zeros(&[4]).is_err());
    }
}
