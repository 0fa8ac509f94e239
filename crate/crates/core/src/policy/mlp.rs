use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::rng::Rng;

/// Fully connected layer; `weight` is `(inputs, outputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Tanh hidden layers, linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Gain-scaled matrix with orthonormal rows or columns (whichever is
/// shorter), via modified Gram-Schmidt on a Gaussian draw.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut Rng) -> Array2<f64> {
    let (long, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut q = Array2::<f64>::zeros((long, short));
    for v in q.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    for j in 0..short {
        for i in 0..j {
            let dot = q.column(i).dot(&q.column(j));
            let prev = q.column(i).to_owned();
            q.column_mut(j).scaled_add(-dot, &prev);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        if norm > 1e-12 {
            q.column_mut(j).mapv_inplace(|x| x / norm);
        }
    }
    let q = if rows >= cols { q } else { q.reversed_axes() };
    q.mapv(|x| x * gain)
}

impl Mlp {
    /// `sizes` lists layer widths from input to output; `gains` has one entry
    /// per weight matrix.
    pub fn orthogonal(sizes: &[usize], gains: &[f64], rng: &mut Rng) -> Self {
        assert_eq!(gains.len() + 1, sizes.len());
        let layers = sizes
            .windows(2)
            .zip(gains)
            .map(|(w, g)| Dense {
                weight: orthogonal(w[0], w[1], *g, rng),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Mlp {
            layers: sizes
                .windows(2)
                .map(|w| Dense {
                    weight: Array2::zeros((w[0], w[1])),
                    bias: Array1::zeros(w[1]),
                })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").weight.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut acts = self.forward_cached(x);
        acts.pop().expect("output")
    }

    /// Activations of every layer, starting with the input.
    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&layer.weight);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        acts
    }

    /// Backpropagates `d_out` (gradient w.r.t. the output) and returns the
    /// parameter gradients in the same layout as `self`.
    pub fn backward(&self, acts: &[Array2<f64>], d_out: Array2<f64>) -> Mlp {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out;
        for i in (0..self.layers.len()).rev() {
            let input = &acts[i];
            let d_w = input.t().dot(&delta);
            let d_b = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut d_in = delta.dot(&self.layers[i].weight.t());
                // input to layer i is tanh output of layer i-1
                d_in.zip_mut_with(input, |d, a| *d *= 1.0 - a * a);
                delta = d_in;
            }
            grads.push(Dense { weight: d_w, bias: d_b });
        }
        grads.reverse();
        Mlp { layers: grads }
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
    }

    /// Reads parameters back from `flat`, returning the remaining slice.
    pub fn read_flat<'a>(&mut self, mut flat: &'a [f64]) -> &'a [f64] {
        for l in &mut self.layers {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = flat[0];
                flat = &flat[1..];
            }
        }
        flat
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}
