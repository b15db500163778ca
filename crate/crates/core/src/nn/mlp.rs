use rand::Rng;

use super::matrix::{matmul_nt, matmul_tn_acc, DenseMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output. Valid for all
    /// three supported activations (relu: 1 for y>0; tanh: 1-y^2; id: 1).
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Identity),
            _ => Err(Error::Format(format!("unknown activation tag {tag}"))),
        }
    }
}

/// One dense layer: y = act(W x + b), weights stored (out_dim, in_dim).
#[derive(Debug, Clone)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// A feed-forward stack of dense layers with chained dimensions.
#[derive(Debug, Clone)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

impl MlpModel {
    /// Builds a model from explicit layers, validating the dimension chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("model must have at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::config(format!(
                    "layer output dim {} does not chain into next input dim {}",
                    w[0].out_dim(),
                    w[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform initialisation: weights in +-sqrt(6/(fan_in+fan_out)),
    /// zero bias.
    pub fn glorot(dims: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::config(
                "glorot needs >=2 dims and one activation per layer",
            ));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (i, &act) in activations.iter().enumerate() {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            layers.push(Layer {
                weights: DenseMatrix::from_vec(fan_out, fan_in, data)?,
                bias: vec![0.0; fan_out],
                activation: act,
            });
        }
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Flattens all parameters into one vector (weights then bias, per layer).
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Writes a flat parameter vector back into the model.
    pub fn unflatten_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::usage(format!(
                "flat parameter vector has length {}, model has {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let wlen = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&flat[off..off + wlen]);
            off += wlen;
            let blen = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + blen]);
            off += blen;
        }
        Ok(())
    }
}

/// Primal values recorded during a forward pass, consumed by the backward
/// pass. Shapes mirror the model; one batch row per sample.
#[derive(Debug, Clone, Default)]
pub struct GradTape {
    input: Option<DenseMatrix>,
    layer_outputs: Vec<DenseMatrix>,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.input = None;
        self.layer_outputs.clear();
    }

    fn recorded(&self) -> bool {
        self.input.is_some()
    }
}

/// Parameter gradients mirroring `MlpModel` shapes exactly.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub d_weights: Vec<DenseMatrix>,
    pub d_bias: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            d_weights: model
                .layers
                .iter()
                .map(|l| DenseMatrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            d_bias: model.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.d_weights {
            for v in w.as_mut_slice() {
                *v *= s;
            }
        }
        for b in &mut self.d_bias {
            for v in b {
                *v *= s;
            }
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += y;
            }
        }
        for (a, b) in self.d_bias.iter_mut().zip(&other.d_bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.d_weights.iter().zip(&self.d_bias) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }
}

/// Forward pass for a single input vector.
///
/// If a tape is supplied the primals are recorded for `mlp_backward`.
pub fn mlp_forward(model: &MlpModel, input: &[f64], tape: Option<&mut GradTape>) -> Result<Vec<f64>> {
    if input.len() != model.input_dim() {
        return Err(Error::config(format!(
            "input length {} does not match model input dim {}",
            input.len(),
            model.input_dim()
        )));
    }
    let batch = DenseMatrix::from_vec(1, input.len(), input.to_vec())?;
    let out = match tape {
        Some(t) => mlp_forward_batch(model, &batch, Some(t))?,
        None => mlp_forward_batch(model, &batch, None)?,
    };
    Ok(out.row(0).to_vec())
}

/// Forward pass for a row-major batch (one sample per row).
pub fn mlp_forward_batch(
    model: &MlpModel,
    inputs: &DenseMatrix,
    tape: Option<&mut GradTape>,
) -> Result<DenseMatrix> {
    if inputs.cols() != model.input_dim() {
        return Err(Error::config(format!(
            "batch input dim {} does not match model input dim {}",
            inputs.cols(),
            model.input_dim()
        )));
    }
    let batch = inputs.rows();
    let mut cur = inputs.clone();
    let mut outputs: Vec<DenseMatrix> = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let mut z = DenseMatrix::zeros(batch, layer.out_dim());
        matmul_nt(&cur, &layer.weights, &mut z);
        for r in 0..batch {
            let row = z.row_mut(r);
            for (v, b) in row.iter_mut().zip(&layer.bias) {
                *v = layer.activation.apply(*v + b);
            }
        }
        outputs.push(z.clone());
        cur = z;
    }
    if let Some(t) = tape {
        t.input = Some(inputs.clone());
        t.layer_outputs = outputs;
    }
    Ok(cur)
}

/// Backward pass for a single vector recorded on `tape`.
///
/// Returns parameter gradients and the gradient wrt the input.
pub fn mlp_backward(
    model: &MlpModel,
    tape: &GradTape,
    output_grad: &[f64],
) -> Result<(ParamGrads, Vec<f64>)> {
    if output_grad.len() != model.output_dim() {
        return Err(Error::usage(format!(
            "output_grad length {} does not match model output dim {}",
            output_grad.len(),
            model.output_dim()
        )));
    }
    let g = DenseMatrix::from_vec(1, output_grad.len(), output_grad.to_vec())?;
    let (grads, d_in) = mlp_backward_batch(model, tape, &g)?;
    Ok((grads, d_in.row(0).to_vec()))
}

/// Backward pass for a batch recorded on `tape`.
///
/// Parameter gradients are summed over the batch; scale `d_outputs`
/// beforehand for mean semantics.
pub fn mlp_backward_batch(
    model: &MlpModel,
    tape: &GradTape,
    d_outputs: &DenseMatrix,
) -> Result<(ParamGrads, DenseMatrix)> {
    if !tape.recorded() {
        return Err(Error::usage("backward called without a recorded forward tape"));
    }
    let input = tape.input.as_ref().unwrap();
    if tape.layer_outputs.len() != model.layers.len() {
        return Err(Error::usage("tape does not match model layer count"));
    }
    let batch = input.rows();
    if d_outputs.rows() != batch || d_outputs.cols() != model.output_dim() {
        return Err(Error::usage("d_outputs shape does not match tape batch"));
    }

    let mut grads = ParamGrads::zeros_like(model);
    let mut d_cur = d_outputs.clone();
    for idx in (0..model.layers.len()).rev() {
        let layer = &model.layers[idx];
        let y = &tape.layer_outputs[idx];

        // dZ = dY * act'(y), in place.
        for (dv, yv) in d_cur.as_mut_slice().iter_mut().zip(y.as_slice()) {
            *dv *= layer.activation.grad_from_output(*yv);
        }

        // db = column sums of dZ.
        let db = &mut grads.d_bias[idx];
        for r in 0..batch {
            for (acc, v) in db.iter_mut().zip(d_cur.row(r)) {
                *acc += v;
            }
        }

        // dW = dZ^T * X.
        let x = if idx == 0 {
            input
        } else {
            &tape.layer_outputs[idx - 1]
        };
        matmul_tn_acc(&d_cur, x, &mut grads.d_weights[idx]);

        // dX = dZ * W.
        let mut d_prev = DenseMatrix::zeros(batch, layer.in_dim());
        super::matrix::matmul_nn(&d_cur, &layer.weights, &mut d_prev);
        d_cur = d_prev;
    }
    Ok((grads, d_cur))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(dim: usize) -> Layer {
        let mut w = DenseMatrix::zeros(dim, dim);
        for i in 0..dim {
            w.set(i, i, 1.0);
        }
        Layer {
            weights: w,
            bias: vec![0.0; dim],
            activation: Activation::Identity,
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let model = MlpModel::from_layers(vec![identity_layer(2)]).unwrap();
        let out = mlp_forward(&model, &[1.0, 2.0], None).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);
    }

    #[test]
    fn zero_weights_yield_bias() {
        let layer = Layer {
            weights: DenseMatrix::zeros(2, 2),
            bias: vec![3.0, 4.0],
            activation: Activation::Identity,
        };
        let model = MlpModel::from_layers(vec![layer]).unwrap();
        let out = mlp_forward(&model, &[-7.0, 11.0], None).unwrap();
        assert_eq!(out, vec![3.0, 4.0]);
    }

    #[test]
    fn forward_matches_hand_rolled_multiply() {
        // Independent oracle: explicit loops, no shared kernel code.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let model = MlpModel::glorot(
            &[3, 5, 2],
            &[Activation::Relu, Activation::Identity],
            &mut rng,
        )
        .unwrap();
        let input = [0.3, -0.8, 1.2];

        let mut cur = input.to_vec();
        for layer in model.layers() {
            let mut next = vec![0.0; layer.out_dim()];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut s = layer.bias[o];
                for (i, x) in cur.iter().enumerate() {
                    s += layer.weights.get(o, i) * x;
                }
                *slot = layer.activation.apply(s);
            }
            cur = next;
        }

        let out = mlp_forward(&model, &input, None).unwrap();
        assert_eq!(out.len(), 2);
        for (a, b) in out.iter().zip(&cur) {
            assert!((a - b).abs() < 1e-12, "forward {a} vs oracle {b}");
        }
    }

    #[test]
    fn forward_rejects_dim_mismatch() {
        let model = MlpModel::from_layers(vec![identity_layer(2)]).unwrap();
        assert!(matches!(
            mlp_forward(&model, &[1.0, 2.0, 3.0], None),
            Err(crate::error::Error::Config(_))
        ));
    }

    #[test]
    fn backward_identity_copies_gradient() {
        let model = MlpModel::from_layers(vec![identity_layer(2)]).unwrap();
        let mut tape = GradTape::new();
        mlp_forward(&model, &[0.5, -0.5], Some(&mut tape)).unwrap();
        let (_, d_in) = mlp_backward(&model, &tape, &[1.0, 0.0]).unwrap();
        assert_eq!(d_in, vec![1.0, 0.0]);
    }

    #[test]
    fn backward_zero_grad_is_zero_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model =
            MlpModel::glorot(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], &mut rng)
                .unwrap();
        let mut tape = GradTape::new();
        mlp_forward(&model, &[1.0, 2.0, 3.0], Some(&mut tape)).unwrap();
        let (grads, d_in) = mlp_backward(&model, &tape, &[0.0, 0.0]).unwrap();
        assert!(d_in.iter().all(|v| *v == 0.0));
        assert!(grads.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_requires_tape() {
        let model = MlpModel::from_layers(vec![identity_layer(2)]).unwrap();
        let tape = GradTape::new();
        assert!(matches!(
            mlp_backward(&model, &tape, &[1.0, 0.0]),
            Err(crate::error::Error::Usage(_))
        ));
    }

    #[test]
    fn backward_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model =
            MlpModel::glorot(&[4, 6, 3], &[Activation::Relu, Activation::Tanh], &mut rng).unwrap();
        let input = [0.7, -0.2, 0.05, 1.1];
        let target = [0.1, -0.4, 0.9];

        // loss = sum((y - t)^2)
        let loss = |m: &MlpModel| -> f64 {
            let y = mlp_forward(m, &input, None).unwrap();
            y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum()
        };

        let mut tape = GradTape::new();
        let y = mlp_forward(&model, &input, Some(&mut tape)).unwrap();
        let d_out: Vec<f64> = y.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
        let (grads, _) = mlp_backward(&model, &tape, &d_out).unwrap();
        let analytic = grads.flatten();

        let mut flat = model.flatten_params();
        let step = 1e-4;
        for p in 0..flat.len() {
            let orig = flat[p];
            flat[p] = orig + step;
            model.unflatten_params(&flat).unwrap();
            let plus = loss(&model);
            flat[p] = orig - step;
            model.unflatten_params(&flat).unwrap();
            let minus = loss(&model);
            flat[p] = orig;
            model.unflatten_params(&flat).unwrap();

            let numeric = (plus - minus) / (2.0 * step);
            let denom = analytic[p].abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic[p] - numeric).abs() / denom < 1e-5,
                "param {p}: analytic {} vs numeric {numeric}",
                analytic[p]
            );
        }
    }

    #[test]
    fn glorot_is_deterministic_per_seed() {
        let a = MlpModel::glorot(
            &[3, 3],
            &[Activation::Relu],
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        let b = MlpModel::glorot(
            &[3, 3],
            &[Activation::Relu],
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        assert_eq!(a.flatten_params(), b.flatten_params());
    }
}
