//! MLP feature extractor with exact reverse-mode gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// One affine map `y = x W^T + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// `input -> hidden... -> C` with rectifiers between layers and L2-normalized
/// output rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    layers: Vec<Layer>,
}

impl Backbone {
    /// He-normal weights and zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, seed: u64) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        if dims.contains(&0) {
            return Err(Error::Config(format!("backbone widths must be positive, got {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = (2.0 / fan_in as f64).sqrt();
                Layer {
                    weight: Array2::from_shape_fn((fan_out, fan_in), |_| scale * rng.sample::<f64, _>(StandardNormal)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("backbone needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.nrows() {
                return Err(Error::Shape(format!(
                    "layer {i}: weight {:?} with bias of {}",
                    l.weight.dim(),
                    l.bias.len()
                )));
            }
            if i > 0 && layers[i - 1].weight.nrows() != l.weight.ncols() {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    l.weight.ncols(),
                    i - 1,
                    layers[i - 1].weight.nrows()
                )));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!("backbone takes {} columns, got {}", self.input_dim(), x.ncols())));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        let mut raw = None;
        for (i, l) in self.layers.iter().enumerate() {
            let z = a.dot(&l.weight.t()) + &l.bias;
            inputs.push(a);
            if i == last {
                raw = Some(z);
                break;
            }
            a = z.mapv(|v| v.max(0.0));
        }
        let raw = raw.expect("at least one layer");
        let mut norms = Array1::zeros(raw.nrows());
        let mut output = raw.clone();
        for (r, mut row) in output.outer_iter_mut().enumerate() {
            let n = row.dot(&row).sqrt();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::Normalization { row: r });
            }
            row /= n;
            norms[r] = n;
        }
        Ok(ForwardCache { inputs, norms, output })
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (post-rectifier for all but the first).
    inputs: Vec<Array2<f64>>,
    norms: Array1<f64>,
    pub output: Array2<f64>,
}

pub fn backbone_forward(b: &Backbone, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    Ok(b.forward(x)?.output)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub input: Array2<f64>,
}

/// Gradients of a scalar loss given `grad_out = dL/d output`.
pub fn backbone_backward(b: &Backbone, cache: &ForwardCache, grad_out: ArrayView2<'_, f64>) -> Result<BackboneGrads> {
    if grad_out.dim() != cache.output.dim() {
        return Err(Error::Shape(format!("gradient {:?} for output {:?}", grad_out.dim(), cache.output.dim())));
    }
    // through y = z / |z|: dz = (g - y (y.g)) / |z|
    let mut g = grad_out.to_owned();
    for ((mut gr, y), &n) in g.outer_iter_mut().zip(cache.output.outer_iter()).zip(&cache.norms) {
        let proj = gr.dot(&y);
        gr.scaled_add(-proj, &y);
        gr /= n;
    }

    let n_layers = b.layers.len();
    let mut weights = vec![Array2::zeros((0, 0)); n_layers];
    let mut biases = vec![Array1::zeros(0); n_layers];
    for i in (0..n_layers).rev() {
        let a = &cache.inputs[i];
        weights[i] = g.t().dot(a);
        biases[i] = g.sum_axis(Axis(0));
        let mut ga = g.dot(&b.layers[i].weight);
        if i > 0 {
            // the rectifier output is positive exactly where its input was
            ga.zip_mut_with(a, |d, &act| {
                if act <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        g = ga;
    }
    Ok(BackboneGrads { weights, biases, input: g })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random(shape: (usize, usize), seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn loss(b: &Backbone, x: &Array2<f64>, probe: &Array2<f64>) -> f64 {
        (backbone_forward(b, x.view()).unwrap() * probe).sum()
    }

    fn close(a: f64, n: f64) -> bool {
        (a - n).abs() <= 1e-6_f64.max(1e-4 * a.abs().max(n.abs()))
    }

    #[test]
    fn zero_network_cannot_normalize() {
        let layer = Layer { weight: Array2::zeros((2, 3)), bias: Array1::zeros(2) };
        let b = Backbone::from_layers(vec![layer]).unwrap();
        let err = backbone_forward(&b, Array2::ones((2, 3)).view()).unwrap_err();
        assert!(matches!(err, Error::Normalization { row: 0 }));
    }

    #[test]
    fn identity_layer_normalizes_rows() {
        let layer = Layer { weight: Array2::eye(2), bias: Array1::zeros(2) };
        let b = Backbone::from_layers(vec![layer]).unwrap();
        let y = backbone_forward(&b, array![[3.0, 4.0], [0.0, -2.0]].view()).unwrap();
        assert_eq!(y, array![[0.6, 0.8], [0.0, -1.0]]);
    }

    #[test]
    fn hand_computed_forward() {
        // h = relu(x W1^T + b1), z = h W2^T + b2
        let b = Backbone::from_layers(vec![
            Layer { weight: array![[1.0, 0.0, -1.0], [0.5, 0.5, 0.0]], bias: array![0.0, -1.0] },
            Layer { weight: array![[1.0, 0.0], [0.0, 2.0]], bias: array![0.0, 0.0] },
        ])
        .unwrap();
        let x = array![[2.0, 0.0, 1.0], [0.0, 4.0, 0.0]];
        // row 0: h = [1, max(0,1-1)=0] -> z = [1, 0]
        // row 1: h = [0, 1] -> z = [0, 2] -> [0, 1]
        let y = backbone_forward(&b, x.view()).unwrap();
        assert_eq!(y, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut b = Backbone::new(3, &[5], 4, 7).unwrap();
        for (i, l) in b.layers_mut().iter_mut().enumerate() {
            l.bias = random((1, l.bias.len()), 40 + i as u64).row(0).to_owned() * 0.3;
        }
        let x = random((4, 3), 1);
        let probe = random((4, 4), 2);
        let cache = b.forward(x.view()).unwrap();
        let g = backbone_backward(&b, &cache, probe.view()).unwrap();
        let h = 1e-6;
        for li in 0..2 {
            let (rows, cols) = b.layers()[li].weight.dim();
            for r in 0..rows {
                for c in 0..cols {
                    let mut p = b.clone();
                    p.layers_mut()[li].weight[[r, c]] += h;
                    let mut m = b.clone();
                    m.layers_mut()[li].weight[[r, c]] -= h;
                    let num = (loss(&p, &x, &probe) - loss(&m, &x, &probe)) / (2.0 * h);
                    assert!(close(g.weights[li][[r, c]], num), "W{li}[{r},{c}]");
                }
                let mut p = b.clone();
                p.layers_mut()[li].bias[r] += h;
                let mut m = b.clone();
                m.layers_mut()[li].bias[r] -= h;
                let num = (loss(&p, &x, &probe) - loss(&m, &x, &probe)) / (2.0 * h);
                assert!(close(g.biases[li][r], num), "b{li}[{r}]");
            }
        }
        for r in 0..4 {
            for c in 0..3 {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let num = (loss(&b, &xp, &probe) - loss(&b, &xm, &probe)) / (2.0 * h);
                assert!(close(g.input[[r, c]], num), "x[{r},{c}]");
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let b = Backbone::new(3, &[5], 4, 3).unwrap();
        let x = random((4, 3), 5);
        let cache = b.forward(x.view()).unwrap();
        let g = backbone_backward(&b, &cache, Array2::zeros((4, 4)).view()).unwrap();
        assert!(g.weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));
        assert!(g.biases.iter().all(|w| w.iter().all(|&v| v == 0.0)));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let b = Backbone::new(3, &[5], 4, 11).unwrap();
        let x = random((4, 3), 6);
        let cache = b.forward(x.view()).unwrap();
        let g1 = random((4, 4), 7);
        let g2 = random((4, 4), 8);
        let a = backbone_backward(&b, &cache, g1.view()).unwrap();
        let c = backbone_backward(&b, &cache, g2.view()).unwrap();
        let s = backbone_backward(&b, &cache, (&g1 + &g2).view()).unwrap();
        for i in 0..2 {
            let diff = &s.weights[i] - &(&a.weights[i] + &c.weights[i]);
            assert!(diff.iter().all(|v| v.abs() < 1e-10));
        }
        let diff = &s.input - &(&a.input + &c.input);
        assert!(diff.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn rejects_bad_shapes() {
        let b = Backbone::new(3, &[5], 4, 0).unwrap();
        assert!(matches!(backbone_forward(&b, Array2::ones((2, 2)).view()), Err(Error::Shape(_))));
        let bad = vec![
            Layer { weight: Array2::ones((5, 3)), bias: Array1::zeros(5) },
            Layer { weight: Array2::ones((4, 6)), bias: Array1::zeros(4) },
        ];
        assert!(matches!(Backbone::from_layers(bad), Err(Error::Shape(_))));
    }
}
