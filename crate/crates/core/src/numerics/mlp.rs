use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{dot, Matrix};
use crate::error::{check_dim, Error, Result};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Dense layer `y = W x + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weights: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    fn param_count(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }
}

/// Activations recorded by [`MlpModel::forward`]; `inputs[l]` is the input to layer `l`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
}

/// Feed-forward network with a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Layer>,
    activation: Activation,
}

/// Gradient of a scalar loss with respect to every parameter of an [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub layers: Vec<Layer>,
}

impl MlpModel {
    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(dims, activation)?;
        for layer in &mut model.layers {
            let limit = (6.0 / (layer.input_dim() + layer.output_dim()) as f64).sqrt();
            for w in layer.weights.data_mut() {
                *w = rng.random_range(-limit..=limit);
            }
        }
        Ok(model)
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidInput(format!("invalid layer dimensions {dims:?}")));
        }
        let layers = dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self { layers, activation })
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("model needs at least one layer".into()));
        }
        for layer in &layers {
            check_dim(layer.output_dim(), layer.bias.len())?;
            if layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::InvalidInput("non-finite bias".into()));
            }
        }
        for pair in layers.windows(2) {
            check_dim(pair[0].output_dim(), pair[1].input_dim())?;
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        check_dim(self.input_dim(), x.len())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = affine(layer, &current);
            if l != last {
                for v in &mut next {
                    *v = self.activation.apply(*v);
                }
            }
            inputs.push(std::mem::replace(&mut current, next));
        }
        Ok((current, ForwardCache { inputs }))
    }

    /// Forward pass without keeping activations.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let last = self.layers.len() - 1;
        let mut current = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            current = affine(layer, &current);
            if l != last {
                for v in &mut current {
                    *v = self.activation.apply(*v);
                }
            }
        }
        Ok(current)
    }

    pub fn zero_gradient(&self) -> MlpGradient {
        MlpGradient {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn backward(&self, cache: &ForwardCache, grad_logits: &[f64]) -> Result<MlpGradient> {
        let mut grad = self.zero_gradient();
        self.backward_into(cache, grad_logits, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Accumulates `scale · ∂loss/∂θ` into `grad`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_logits: &[f64],
        scale: f64,
        grad: &mut MlpGradient,
    ) -> Result<()> {
        check_dim(self.layers.len(), cache.inputs.len())?;
        check_dim(self.layers.len(), grad.layers.len())?;
        check_dim(self.output_dim(), grad_logits.len())?;
        let mut delta: Vec<f64> = grad_logits.iter().map(|g| g * scale).collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            check_dim(layer.input_dim(), input.len())?;
            let g = &mut grad.layers[l];
            check_dim(layer.weights.data().len(), g.weights.data().len())?;
            let cols = layer.input_dim();
            let gw = g.weights.data_mut();
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (w, &a) in gw[r * cols..(r + 1) * cols].iter_mut().zip(input) {
                    *w += d * a;
                }
                g.bias[r] += d;
            }
            if l > 0 {
                let mut prev = layer.weights.transpose_matvec(&delta)?;
                for (p, &a) in prev.iter_mut().zip(input) {
                    *p *= self.activation.derivative_from_output(a);
                }
                delta = prev;
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn param(&self, index: usize) -> f64 {
        let (l, i) = locate(&self.layers, index);
        let layer = &self.layers[l];
        let nw = layer.weights.data().len();
        if i < nw {
            layer.weights.data()[i]
        } else {
            layer.bias[i - nw]
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (l, i) = locate(&self.layers, index);
        let layer = &mut self.layers[l];
        let nw = layer.weights.data().len();
        if i < nw {
            layer.weights.data_mut()[i] = value;
        } else {
            layer.bias[i - nw] = value;
        }
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub(crate) fn same_shape(&self, grad: &MlpGradient) -> bool {
        self.layers.len() == grad.layers.len()
            && self.layers.iter().zip(&grad.layers).all(|(a, b)| {
                a.weights.rows() == b.weights.rows()
                    && a.weights.cols() == b.weights.cols()
                    && a.bias.len() == b.bias.len()
            })
    }
}

impl MlpGradient {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Flat view in the same order as [`MlpModel::param`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &MlpGradient, scale: f64) -> Result<()> {
        check_dim(self.layers.len(), other.layers.len())?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            check_dim(a.weights.data().len(), b.weights.data().len())?;
            for (x, y) in a.weights.data_mut().iter_mut().zip(b.weights.data()) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.to_flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn affine(layer: &Layer, x: &[f64]) -> Vec<f64> {
    (0..layer.output_dim())
        .map(|r| dot(layer.weights.row(r), x) + layer.bias[r])
        .collect()
}

fn locate(layers: &[Layer], mut index: usize) -> (usize, usize) {
    for (l, layer) in layers.iter().enumerate() {
        let n = layer.param_count();
        if index < n {
            return (l, index);
        }
        index -= n;
    }
    panic!("parameter index out of range");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cross_entropy, softmax};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = MlpModel::zeros(&[3, 4, 2], Activation::Tanh).unwrap();
        assert_eq!(m.logits(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let layer = Layer {
            weights: Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap(),
            bias: vec![0.1, -0.2],
        };
        let m = MlpModel::from_layers(vec![layer], Activation::Relu).unwrap();
        let out = m.logits(&[3.0, -1.0]).unwrap();
        assert_abs_diff_eq!(out[0], 1.0 + 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], -3.0 - 0.5 - 0.2, epsilon = 1e-15);
    }

    #[test]
    fn rejects_mismatched_layers_and_inputs() {
        let a = Layer::zeros(2, 3);
        let b = Layer::zeros(4, 1);
        assert!(MlpModel::from_layers(vec![a, b], Activation::Tanh).is_err());
        let m = MlpModel::zeros(&[2, 3], Activation::Tanh).unwrap();
        assert!(m.forward(&[1.0]).is_err());
        assert!(MlpModel::zeros(&[2], Activation::Tanh).is_err());
    }

    #[test]
    fn two_layer_forward_matches_straight_line_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = MlpModel::new(&[3, 5, 2], Activation::Tanh, &mut rng).unwrap();
        let x = [0.3, -1.2, 0.8];
        let (w1, b1) = (&m.layers()[0].weights, &m.layers()[0].bias);
        let (w2, b2) = (&m.layers()[1].weights, &m.layers()[1].bias);
        let mut hidden = [0.0; 5];
        for j in 0..5 {
            let mut s = b1[j];
            for i in 0..3 {
                s += w1.get(j, i) * x[i];
            }
            hidden[j] = s.tanh();
        }
        let mut expected = [0.0; 2];
        for k in 0..2 {
            let mut s = b2[k];
            for j in 0..5 {
                s += w2.get(k, j) * hidden[j];
            }
            expected[k] = s;
        }
        let (logits, _) = m.forward(&x).unwrap();
        for k in 0..2 {
            assert_abs_diff_eq!(logits[k], expected[k], epsilon = 1e-14);
        }
    }

    #[test]
    fn glorot_init_respects_limits_and_is_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        let m1 = MlpModel::new(&[4, 8, 3], Activation::Relu, &mut a).unwrap();
        let m2 = MlpModel::new(&[4, 8, 3], Activation::Relu, &mut b).unwrap();
        assert_eq!(m1, m2);
        let limit = (6.0f64 / 12.0).sqrt();
        assert!(m1.layers()[0].weights.data().iter().all(|w| w.abs() <= limit));
        assert!(m1.layers()[0].bias.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = MlpModel::new(&[2, 6, 3], Activation::Tanh, &mut rng).unwrap();
        let (_, cache) = m.forward(&[0.5, -0.5]).unwrap();
        let g = m.backward(&cache, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(m.backward(&cache, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn linear_softmax_gradient_has_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = MlpModel::new(&[3, 4], Activation::Tanh, &mut rng).unwrap();
        let x = [0.2, -0.7, 1.5];
        let target = 2;
        let (logits, cache) = m.forward(&x).unwrap();
        let p = softmax(&logits, 1.0).unwrap();
        let mut dz = p.as_slice().to_vec();
        dz[target] -= 1.0;
        let g = m.backward(&cache, &dz).unwrap();
        for r in 0..4 {
            let indicator = if r == target { 1.0 } else { 0.0 };
            let coef = p.as_slice()[r] - indicator;
            for c in 0..3 {
                assert_abs_diff_eq!(g.layers[0].weights.get(r, c), coef * x[c], epsilon = 1e-15);
            }
            assert_abs_diff_eq!(g.layers[0].bias[r], coef, epsilon = 1e-15);
        }
    }

    fn ce_loss(m: &MlpModel, x: &[f64], target: &[f64]) -> f64 {
        let p = softmax(&m.logits(x).unwrap(), 1.0).unwrap();
        cross_entropy(target, p.as_slice()).unwrap()
    }

    #[test]
    fn backward_matches_central_differences_on_2_16_3_net() {
        for (seed, act) in [(5u64, Activation::Tanh), (6, Activation::Relu)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = MlpModel::new(&[2, 16, 3], act, &mut rng).unwrap();
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let target = [0.0, 1.0, 0.0];
            let (logits, cache) = m.forward(&x).unwrap();
            let p = softmax(&logits, 1.0).unwrap();
            let dz: Vec<f64> = p.as_slice().iter().zip(&target).map(|(p, t)| p - t).collect();
            let analytic = m.backward(&cache, &dz).unwrap().to_flat();
            let h = 1e-5;
            for i in 0..m.param_count() {
                let orig = m.param(i);
                m.set_param(i, orig + h);
                let up = ce_loss(&m, &x, &target);
                m.set_param(i, orig - h);
                let down = ce_loss(&m, &x, &target);
                m.set_param(i, orig);
                let numeric = (up - down) / (2.0 * h);
                let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (analytic[i] - numeric).abs() / denom < 1e-4,
                    "param {i}: analytic {} numeric {numeric}",
                    analytic[i]
                );
            }
        }
    }
}
