//! Dense multilayer perceptrons with SiLU hidden activations.
//!
//! Every hidden layer is `a = silu(W x + b)`; the output layer is affine.
//! Batches are row-major [`Matrix`] values with one sample per row, and all
//! arithmetic is `f64`. Matrix products go through `matrixmultiply`, which is
//! single-threaded here, so a given model and batch always produce the same
//! bits.

mod adam;
mod checkpoint;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, ModelKind};

use rand::distr::{Distribution, Uniform};

use crate::{rng, Error, Result};

/// Row-major dense matrix; rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// One affine layer, `y = W x + b`, with `W` stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.in_dim + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Dense>,
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::Config(format!(
            "an MLP needs at least input and output sizes, got {sizes:?}"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::Config(format!("layer sizes must be positive, got {sizes:?}")));
    }
    Ok(())
}

#[inline]
pub fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

#[inline]
pub fn silu(u: f64) -> f64 {
    u * sigmoid(u)
}

impl Mlp {
    /// Glorot-uniform weights (`a = sqrt(6 / (fan_in + fan_out))`), zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(sizes)?;
        let mut rng = rng::seeded(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
                let mut layer = Dense::zeros(fan_in, fan_out);
                for w in &mut layer.weights {
                    *w = dist.sample(&mut rng);
                }
                layer
            })
            .collect();
        Ok(Self { sizes: sizes.to_vec(), layers })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        validate_sizes(sizes)?;
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self { sizes: sizes.to_vec(), layers })
    }

    /// Builds a model from explicit layers, checking that they chain.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::Config("no layers".into()))?;
        let mut sizes = vec![first.in_dim];
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim != *sizes.last().unwrap() {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} inputs but the previous layer emits {}",
                    l.in_dim,
                    sizes.last().unwrap()
                )));
            }
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::Shape(format!("layer {i} storage does not match {}x{}", l.out_dim, l.in_dim)));
            }
            sizes.push(l.out_dim);
        }
        validate_sizes(&sizes)?;
        let model = Self { sizes, layers };
        if !model.is_finite() {
            return Err(Error::Input("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn hidden_layers(&self) -> usize {
        self.sizes.len() - 2
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters in storage order: per layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, r) = r.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|p| p.is_finite()))
    }

    fn check_input(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols != self.input_dim() {
            return Err(Error::Shape(format!(
                "model expects {} input features, batch has {}",
                self.input_dim(),
                inputs.cols
            )));
        }
        if let Some(i) = inputs.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite input in row {} column {}",
                i / inputs.cols,
                i % inputs.cols
            )));
        }
        Ok(())
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_input(inputs)?;
        let mut h = inputs.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = affine(layer, &h);
            if i < last {
                z.data.iter_mut().for_each(|u| *u = silu(*u));
            }
            h = z;
        }
        Ok(h)
    }

    /// Forward pass that keeps what [`Mlp::backward`] needs.
    pub fn forward_cached(&self, inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(inputs)?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut sigmoids = Vec::with_capacity(last);
        let mut h = inputs.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = affine(layer, &h);
            activations.push(h);
            if i < last {
                let mut sig = Vec::with_capacity(z.data.len());
                for u in z.data.iter_mut() {
                    let s = sigmoid(*u);
                    sig.push(s);
                    *u *= s;
                }
                sigmoids.push(sig);
            }
            h = z;
        }
        let cache = ForwardCache { sizes: self.sizes.clone(), rows: inputs.rows, activations, sigmoids };
        Ok((h, cache))
    }

    /// Parameter gradients of a scalar loss whose gradient with respect to
    /// the network output is `output_grad`.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<Gradients> {
        if cache.sizes != self.sizes {
            return Err(Error::State(format!(
                "cache was produced by a {:?} model, not {:?}",
                cache.sizes, self.sizes
            )));
        }
        if output_grad.rows != cache.rows || output_grad.cols != self.output_dim() {
            return Err(Error::State(format!(
                "output gradient is {}x{}, forward pass produced {}x{}",
                output_grad.rows,
                output_grad.cols,
                cache.rows,
                self.output_dim()
            )));
        }
        let rows = cache.rows;
        let mut grads = Gradients::zeros_like(self);
        let mut delta = output_grad.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &cache.activations[i];
            let g = &mut grads.layers[i];
            // dW = delta^T . input
            unsafe {
                matrixmultiply::dgemm(
                    layer.out_dim,
                    rows,
                    layer.in_dim,
                    1.0,
                    delta.data.as_ptr(),
                    1,
                    layer.out_dim as isize,
                    input.data.as_ptr(),
                    layer.in_dim as isize,
                    1,
                    0.0,
                    g.weights.as_mut_ptr(),
                    layer.in_dim as isize,
                    1,
                );
            }
            for r in 0..rows {
                for (b, d) in g.bias.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }
            if i == 0 {
                break;
            }
            // d(input) = delta . W, then through the SiLU of the layer below.
            let mut prev = Matrix::zeros(rows, layer.in_dim);
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    layer.out_dim,
                    layer.in_dim,
                    1.0,
                    delta.data.as_ptr(),
                    layer.out_dim as isize,
                    1,
                    layer.weights.as_ptr(),
                    layer.in_dim as isize,
                    1,
                    0.0,
                    prev.data.as_mut_ptr(),
                    layer.in_dim as isize,
                    1,
                );
            }
            // silu'(u) = s + a (1 - s) with s = sigmoid(u), a = silu(u)
            let sig = &cache.sigmoids[i - 1];
            for ((d, &s), &a) in prev.data.iter_mut().zip(sig).zip(&input.data) {
                *d *= s + a * (1.0 - s);
            }
            delta = prev;
        }
        Ok(grads)
    }
}

fn affine(layer: &Dense, input: &Matrix) -> Matrix {
    let rows = input.rows;
    let mut out = Matrix::zeros(rows, layer.out_dim);
    for r in 0..rows {
        out.row_mut(r).copy_from_slice(&layer.bias);
    }
    unsafe {
        matrixmultiply::dgemm(
            rows,
            layer.in_dim,
            layer.out_dim,
            1.0,
            input.data.as_ptr(),
            layer.in_dim as isize,
            1,
            layer.weights.as_ptr(),
            1,
            layer.in_dim as isize,
            1.0,
            out.data.as_mut_ptr(),
            layer.out_dim as isize,
            1,
        );
    }
    out
}

/// Layer inputs and sigmoid values recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    sizes: Vec<usize>,
    rows: usize,
    /// Input to each layer (the raw batch for layer 0).
    activations: Vec<Matrix>,
    /// `sigmoid(pre-activation)` of each hidden layer.
    sigmoids: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients shaped like the parameters of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|l| LayerGrad { weights: vec![0.0; l.weights.len()], bias: vec![0.0; l.bias.len()] })
            .collect();
        Self { layers }
    }

    /// Flattened in the same order as [`Mlp::params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|g| g.is_finite()))
    }

    fn matches(&self, model: &Mlp) -> bool {
        self.layers.len() == model.layers.len()
            && self
                .layers
                .iter()
                .zip(&model.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss_and_grad(model: &Mlp, x: &Matrix, coeffs: &Matrix) -> (f64, Vec<f64>) {
        // loss = sum(coeffs * y) + 0.5 * sum(y^2)
        let (y, cache) = model.forward_cached(x).unwrap();
        let mut g = Matrix::zeros(y.rows(), y.cols());
        let mut loss = 0.0;
        for i in 0..y.as_slice().len() {
            let (yi, ci) = (y.as_slice()[i], coeffs.as_slice()[i]);
            loss += ci * yi + 0.5 * yi * yi;
            g.as_mut_slice()[i] = ci + yi;
        }
        (loss, model.backward(&cache, &g).unwrap().flatten())
    }

    fn loss_only(model: &Mlp, x: &Matrix, coeffs: &Matrix) -> f64 {
        let y = model.forward(x).unwrap();
        y.as_slice().iter().zip(coeffs.as_slice()).map(|(y, c)| c * y + 0.5 * y * y).sum()
    }

    #[test]
    fn init_shapes_follow_layer_sizes() {
        let m = Mlp::new(&[3, 64, 64, 64, 64, 2], 7).unwrap();
        let shapes: Vec<_> = m.layers().iter().map(|l| (l.out_dim, l.in_dim)).collect();
        assert_eq!(shapes, vec![(64, 3), (64, 64), (64, 64), (64, 64), (2, 64)]);
        assert_eq!(m.hidden_layers(), 4);
        assert!(m.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let a = (6.0f64 / 67.0).sqrt();
        assert!(m.layers()[0].weights.iter().all(|w| w.abs() <= a));
    }

    #[test]
    fn init_is_deterministic() {
        let a = Mlp::new(&[2, 128, 2], 42).unwrap();
        let b = Mlp::new(&[2, 128, 2], 42).unwrap();
        let c = Mlp::new(&[2, 128, 2], 43).unwrap();
        assert_eq!(a.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
                   b.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn bad_sizes_are_config_errors() {
        assert!(matches!(Mlp::new(&[], 0), Err(Error::Config(_))));
        assert!(matches!(Mlp::new(&[2], 0), Err(Error::Config(_))));
        assert!(matches!(Mlp::new(&[2, 0, 2], 0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_model_maps_to_zero() {
        let m = Mlp::zeros(&[2, 2]).unwrap();
        let y = m.forward(&Matrix::from_rows(&[[0.3, -7.0], [1e3, 2.0]]).unwrap()).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
        let deep = Mlp::zeros(&[3, 16, 16, 2]).unwrap();
        let y = deep.forward(&Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap()).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let layer = Dense { in_dim: 2, out_dim: 2, weights: vec![1.0, 0.0, 0.0, 1.0], bias: vec![0.0; 2] };
        let m = Mlp::from_layers(vec![layer]).unwrap();
        let y = m.forward(&Matrix::from_rows(&[[1.5, -2.0]]).unwrap()).unwrap();
        assert_eq!(y.as_slice(), &[1.5, -2.0]);
    }

    #[test]
    fn silu_values() {
        assert!((silu(1.0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert_eq!(silu(0.0), 0.0);
        // global minimum of u * sigmoid(u) is about -0.27846 near u = -1.27846
        let min = (-5000..5000).map(|i| silu(i as f64 * 1e-3)).fold(f64::INFINITY, f64::min);
        assert!((min + 0.278_464_5).abs() < 1e-6, "{min}");
        let mut prev = silu(0.0);
        for i in 1..1000 {
            let cur = silu(i as f64 * 0.01);
            assert!(cur > prev);
            prev = cur;
        }
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let m = Mlp::new(&[2, 4, 2], 0).unwrap();
        let wrong = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(m.forward(&wrong), Err(Error::Shape(_))));
        let nan = Matrix::from_rows(&[[1.0, f64::NAN]]).unwrap();
        assert!(matches!(m.forward(&nan), Err(Error::Input(_))));
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let m = Mlp::new(&[2, 8, 2], 3).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2], [-1.0, 0.5]]).unwrap();
        let (_, cache) = m.forward_cached(&x).unwrap();
        let g = m.backward(&cache, &Matrix::zeros(2, 2)).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_gradient_is_input() {
        // loss = y for a 1-output linear model: dW = x, db = 1
        let layer = Dense { in_dim: 3, out_dim: 1, weights: vec![0.4, -0.2, 0.9], bias: vec![0.1] };
        let m = Mlp::from_layers(vec![layer]).unwrap();
        let x = Matrix::from_rows(&[[0.5, -1.5, 2.0]]).unwrap();
        let (_, cache) = m.forward_cached(&x).unwrap();
        let g = m.backward(&cache, &Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert_eq!(g.layers[0].weights, vec![0.5, -1.5, 2.0]);
        assert_eq!(g.layers[0].bias, vec![1.0]);
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let a = Mlp::new(&[2, 8, 2], 0).unwrap();
        let b = Mlp::new(&[2, 4, 2], 0).unwrap();
        let x = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        let (_, cache) = a.forward_cached(&x).unwrap();
        assert!(matches!(b.backward(&cache, &Matrix::zeros(1, 2)), Err(Error::State(_))));
        assert!(matches!(a.backward(&cache, &Matrix::zeros(3, 2)), Err(Error::State(_))));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = rng::seeded(11);
        for sizes in [vec![2, 8, 2], vec![3, 6, 5, 2]] {
            let mut model = Mlp::new(&sizes, 5).unwrap();
            let rows: Vec<Vec<f64>> =
                (0..7).map(|_| (0..sizes[0]).map(|_| rng::normal(&mut rng)).collect()).collect();
            let coeffs: Vec<Vec<f64>> =
                (0..7).map(|_| (0..2).map(|_| rng::normal(&mut rng)).collect()).collect();
            let x = Matrix::from_rows(&rows).unwrap();
            let c = Matrix::from_rows(&coeffs).unwrap();
            // Nonzero biases so every code path is exercised.
            let mut p = model.params();
            for v in p.iter_mut() {
                *v += 0.1 * rng::normal(&mut rng);
            }
            model.set_params(&p).unwrap();

            let (_, analytic) = loss_and_grad(&model, &x, &c);
            let h = 1e-4;
            let mut worst = 0.0f64;
            for i in 0..p.len() {
                let mut plus = p.clone();
                plus[i] += h;
                let mut minus = p.clone();
                minus[i] -= h;
                let mut mp = model.clone();
                mp.set_params(&plus).unwrap();
                let mut mm = model.clone();
                mm.set_params(&minus).unwrap();
                let fd = (loss_only(&mp, &x, &c) - loss_only(&mm, &x, &c)) / (2.0 * h);
                if analytic[i].abs() > 1e-6 {
                    worst = worst.max((fd - analytic[i]).abs() / analytic[i].abs().max(fd.abs()));
                }
            }
            assert!(worst <= 1e-4, "{sizes:?}: worst relative error {worst}");
        }
    }
}
