//! Dense MLP in f64: batched forward, reverse-mode gradients, and an
//! analytic forward-over-reverse pass for gradient-penalty terms.
//!
//! The penalty machinery is the load-bearing piece: a critic regularizer of
//! the form `lambda * (||grad_x D(x, c)|| - 1)^2` needs gradients of an
//! input-gradient norm with respect to the critic's own parameters. That is
//! computed here exactly (dual-number tangents through both passes), not by
//! finite differences; finite differences are the test oracle only.

use super::mat::{dot, Mat};
use super::rng::RngStream;
use crate::{Error, Result};

/// Elementwise activation, selected per layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Linear,
    /// `z >= 0` uses the identity branch; the kink at exactly 0 takes slope 1.
    LeakyRelu { slope: f64 },
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::LeakyRelu { slope } => {
                if z >= 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// First derivative as a function of the pre-activation.
    #[inline]
    pub fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::LeakyRelu { slope } => {
                if z >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => {
                let s = self.apply(z);
                s * (1.0 - s)
            }
        }
    }

    /// Second derivative; zero almost everywhere for the piecewise-linear maps.
    #[inline]
    pub fn second_deriv(self, z: f64) -> f64 {
        match self {
            Activation::Linear | Activation::LeakyRelu { .. } => 0.0,
            Activation::Sigmoid => {
                let s = self.apply(z);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
        }
    }
}

/// One dense layer: `a = act(x @ W^T + b)` with `W: out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Mat,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// A validated stack of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl MlpParams {
    /// Validates dimension chaining, nonempty layers, and finite positive
    /// leaky slopes.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("MlpParams: no layers".into()));
        }
        for (l, layer) in layers.iter().enumerate() {
            let (out, inp) = (layer.weights.rows(), layer.weights.cols());
            if out == 0 || inp == 0 {
                return Err(Error::Shape(format!(
                    "MlpParams: layer {l} has degenerate shape {out}x{inp}"
                )));
            }
            if layer.bias.len() != out {
                return Err(Error::Shape(format!(
                    "MlpParams: layer {l} bias length {} does not match {out} outputs",
                    layer.bias.len()
                )));
            }
            if let Activation::LeakyRelu { slope } = layer.activation {
                if !(slope.is_finite() && slope > 0.0) {
                    return Err(Error::Config(format!(
                        "MlpParams: layer {l} leaky slope {slope} must be finite and positive"
                    )));
                }
            }
            if l > 0 && layers[l - 1].weights.rows() != inp {
                return Err(Error::Shape(format!(
                    "MlpParams: layer {l} expects {inp} inputs but layer {} emits {}",
                    l - 1,
                    layers[l - 1].weights.rows()
                )));
            }
        }
        Ok(MlpParams { layers })
    }

    /// Builds a stack from a dimension chain and per-layer activations, with
    /// weights drawn N(0, scale^2) row-major in layer order and biases zero.
    pub fn gaussian(dims: &[usize], activations: &[Activation], scale: f64, rng: &mut RngStream) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::Shape(format!(
                "MlpParams::gaussian: {} dims with {} activations",
                dims.len(),
                activations.len()
            )));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (l, &act) in activations.iter().enumerate() {
            let (inp, out) = (dims[l], dims[l + 1]);
            let mut w = Mat::zeros(out, inp);
            for v in w.data_mut() {
                *v = scale * rng.normal();
            }
            layers.push(Layer {
                weights: w,
                bias: vec![0.0; out],
                activation: act,
            });
        }
        MlpParams::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.rows()
    }

    /// Total parameter count; flat order is per layer weights row-major, then bias.
    pub fn flat_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.rows() * l.weights.cols() + l.bias.len())
            .sum()
    }

    pub fn flat_get(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            let wlen = l.weights.rows() * l.weights.cols();
            if idx < wlen {
                return l.weights.data()[idx];
            }
            idx -= wlen;
            if idx < l.bias.len() {
                return l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("flat_get: index out of range");
    }

    pub fn flat_set(&mut self, mut idx: usize, v: f64) {
        for l in &mut self.layers {
            let wlen = l.weights.rows() * l.weights.cols();
            if idx < wlen {
                l.weights.data_mut()[idx] = v;
                return;
            }
            idx -= wlen;
            if idx < l.bias.len() {
                l.bias[idx] = v;
                return;
            }
            idx -= l.bias.len();
        }
        panic!("flat_set: index out of range");
    }
}

/// Per-layer gradients, mirroring [`MlpParams`] shapes.
#[derive(Clone, Debug)]
pub struct MlpGrads {
    pub weights: Vec<Mat>,
    pub bias: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            weights: params
                .layers()
                .iter()
                .map(|l| Mat::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
            bias: params.layers().iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Accumulates `other` into self; shapes must match.
    pub fn add(&mut self, other: &MlpGrads) {
        for (w, ow) in self.weights.iter_mut().zip(&other.weights) {
            for (a, b) in w.data_mut().iter_mut().zip(ow.data()) {
                *a += b;
            }
        }
        for (b, ob) in self.bias.iter_mut().zip(&other.bias) {
            for (a, v) in b.iter_mut().zip(ob) {
                *a += v;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for w in &mut self.weights {
            for v in w.data_mut() {
                *v *= c;
            }
        }
        for b in &mut self.bias {
            for v in b.iter_mut() {
                *v *= c;
            }
        }
    }

    /// Gradients flattened in the same order as `MlpParams::flat_get`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }
}

/// Cached activations from one forward pass.
#[derive(Debug)]
pub struct ForwardPass {
    pub input: Mat,
    /// Pre-activations per layer.
    pub pre: Vec<Mat>,
    /// Post-activations per layer; the last entry is the network output.
    pub post: Vec<Mat>,
}

impl ForwardPass {
    pub fn output(&self) -> &Mat {
        self.post.last().expect("forward pass has at least one layer")
    }
}

/// Batched forward pass; `input` is one sample per row.
pub fn mlp_forward(params: &MlpParams, input: &Mat) -> Result<ForwardPass> {
    if input.cols() != params.in_dim() {
        return Err(Error::Shape(format!(
            "mlp_forward: input has {} columns, network expects {}",
            input.cols(),
            params.in_dim()
        )));
    }
    let mut pre = Vec::with_capacity(params.num_layers());
    let mut post = Vec::with_capacity(params.num_layers());
    let mut current = input;
    for layer in params.layers() {
        let mut z = Mat::matmul_nt(current, &layer.weights);
        for i in 0..z.rows() {
            let row = z.row_mut(i);
            for (v, b) in row.iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        let mut a = z.clone();
        for v in a.data_mut() {
            *v = layer.activation.apply(*v);
        }
        pre.push(z);
        post.push(a);
        current = post.last().unwrap();
    }
    Ok(ForwardPass {
        input: input.clone(),
        pre,
        post,
    })
}

fn apply_deriv(act: Activation, z: &Mat, m: &mut Mat) {
    for (v, zv) in m.data_mut().iter_mut().zip(z.data()) {
        *v *= act.deriv(*zv);
    }
}

/// Reverse pass: parameter gradients and the gradient with respect to the
/// input rows, given `d loss / d output`.
pub fn mlp_backward(params: &MlpParams, fp: &ForwardPass, out_grad: &Mat) -> (MlpGrads, Mat) {
    let last = params.num_layers() - 1;
    assert_eq!(
        (out_grad.rows(), out_grad.cols()),
        (fp.output().rows(), fp.output().cols()),
        "mlp_backward: out_grad shape mismatch"
    );
    let mut grads = MlpGrads::zeros_like(params);
    let mut delta = out_grad.clone();
    apply_deriv(params.layers()[last].activation, &fp.pre[last], &mut delta);
    for l in (0..=last).rev() {
        let below = if l == 0 { &fp.input } else { &fp.post[l - 1] };
        grads.weights[l] = Mat::matmul_tn(&delta, below);
        grads.bias[l] = delta.col_sums();
        let carried = Mat::matmul(&delta, &params.layers()[l].weights);
        if l == 0 {
            return (grads, carried);
        }
        delta = carried;
        apply_deriv(params.layers()[l - 1].activation, &fp.pre[l - 1], &mut delta);
    }
    unreachable!()
}

/// Gradient of the summed scalar output with respect to each input row.
/// Only valid for networks with a single output unit.
pub fn input_gradients(params: &MlpParams, fp: &ForwardPass) -> Mat {
    let last = params.num_layers() - 1;
    assert_eq!(params.out_dim(), 1, "input_gradients: scalar output required");
    let rows = fp.output().rows();
    let mut delta = Mat::from_vec(rows, 1, vec![1.0; rows]);
    apply_deriv(params.layers()[last].activation, &fp.pre[last], &mut delta);
    for l in (0..=last).rev() {
        let carried = Mat::matmul(&delta, &params.layers()[l].weights);
        if l == 0 {
            return carried;
        }
        delta = carried;
        apply_deriv(params.layers()[l - 1].activation, &fp.pre[l - 1], &mut delta);
    }
    unreachable!()
}

/// Mean gradient penalty over a batch and its exact parameter gradients.
///
/// Per sample: `lambda * (||grad_{x_hat} D([x_hat; cond])|| - 1)^2`. The norm
/// runs over the `x_hat` columns only; condition columns are not penalized.
/// A zero input-gradient norm contributes `lambda` with zero parameter
/// gradient (subgradient convention at the non-differentiable point).
pub fn gradient_penalty_batch(
    d: &MlpParams,
    x_hat: &Mat,
    cond: &Mat,
    lambda: f64,
) -> Result<(f64, MlpGrads)> {
    if d.out_dim() != 1 {
        return Err(Error::Shape(format!(
            "gradient_penalty: critic emits {} outputs, expected 1",
            d.out_dim()
        )));
    }
    if x_hat.rows() != cond.rows() {
        return Err(Error::Shape(format!(
            "gradient_penalty: {} interpolates vs {} conditions",
            x_hat.rows(),
            cond.rows()
        )));
    }
    let dx = x_hat.cols();
    let batch = x_hat.rows();
    let input = Mat::hconcat(x_hat, cond);
    let fp = mlp_forward(d, &input)?;
    let g_full = input_gradients(d, &fp);

    // Fold per-sample chain coefficients into the tangent directions: the
    // machinery below computes d/d theta of sum_i v_i . grad_u D(u_i), which
    // is linear in each v_i.
    let mut tangent_in = Mat::zeros(batch, input.cols());
    let mut penalty_sum = 0.0;
    for i in 0..batch {
        let gx = &g_full.row(i)[..dx];
        let norm = dot(gx, gx).sqrt();
        penalty_sum += lambda * (norm - 1.0) * (norm - 1.0);
        if norm > 0.0 {
            let coef = 2.0 * lambda * (norm - 1.0) / (norm * batch as f64);
            let vrow = tangent_in.row_mut(i);
            for (slot, &g) in vrow[..dx].iter_mut().zip(gx) {
                *slot = coef * g;
            }
        }
    }

    // Forward tangents: adot_l = sigma'(z_l) * (adot_{l-1} @ W_l^T).
    let num_layers = d.num_layers();
    let mut zdot: Vec<Mat> = Vec::with_capacity(num_layers);
    let mut adot: Vec<Mat> = Vec::with_capacity(num_layers);
    {
        let mut current = &tangent_in;
        for (l, layer) in d.layers().iter().enumerate() {
            let zd = Mat::matmul_nt(current, &layer.weights);
            let mut ad = zd.clone();
            apply_deriv(layer.activation, &fp.pre[l], &mut ad);
            zdot.push(zd);
            adot.push(ad);
            current = adot.last().unwrap();
        }
    }

    // Reverse pass carrying (delta, delta-tangent) pairs.
    let last = num_layers - 1;
    let mut grads = MlpGrads::zeros_like(d);
    let rows = batch;
    let mut delta = Mat::from_vec(rows, 1, vec![1.0; rows]);
    apply_deriv(d.layers()[last].activation, &fp.pre[last], &mut delta);
    let mut delta_dot = Mat::zeros(rows, 1);
    {
        let act = d.layers()[last].activation;
        for i in 0..rows {
            let z = fp.pre[last].get(i, 0);
            delta_dot.set(i, 0, act.second_deriv(z) * zdot[last].get(i, 0));
        }
    }
    for l in (0..=last).rev() {
        let below = if l == 0 { &input } else { &fp.post[l - 1] };
        let below_dot = if l == 0 { &tangent_in } else { &adot[l - 1] };
        let mut gw = Mat::matmul_tn(&delta_dot, below);
        let second = Mat::matmul_tn(&delta, below_dot);
        for (a, b) in gw.data_mut().iter_mut().zip(second.data()) {
            *a += b;
        }
        grads.weights[l] = gw;
        grads.bias[l] = delta_dot.col_sums();
        if l == 0 {
            break;
        }
        let e = Mat::matmul(&delta, &d.layers()[l].weights);
        let e_dot = Mat::matmul(&delta_dot, &d.layers()[l].weights);
        let act = d.layers()[l - 1].activation;
        let pre_below = &fp.pre[l - 1];
        let mut next_delta = e.clone();
        let mut next_delta_dot = Mat::zeros(e.rows(), e.cols());
        for i in 0..e.rows() {
            for j in 0..e.cols() {
                let z = pre_below.get(i, j);
                let d1 = act.deriv(z);
                let d2 = act.second_deriv(z);
                next_delta.set(i, j, d1 * e.get(i, j));
                next_delta_dot.set(i, j, d2 * zdot[l - 1].get(i, j) * e.get(i, j) + d1 * e_dot.get(i, j));
            }
        }
        delta = next_delta;
        delta_dot = next_delta_dot;
    }
    Ok((penalty_sum / batch as f64, grads))
}

/// Single-sample gradient penalty: value and critic-parameter gradients.
pub fn penalty_gradients(d: &MlpParams, x_hat: &[f64], cond: &[f64], lambda: f64) -> Result<(f64, MlpGrads)> {
    let x = Mat::from_rows(&[x_hat]);
    let c = Mat::from_rows(&[cond]);
    gradient_penalty_batch(d, &x, &c, lambda)
}

/// `log(sum(exp(x)))` with max-shift stabilization.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    assert!(!x.is_empty(), "log_sum_exp of an empty slice");
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let sum: f64 = x.iter().map(|v| (v - m).exp()).sum();
    m + sum.ln()
}

/// Numerically stable softmax; strictly positive entries summing to 1.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    assert!(!x.is_empty(), "softmax of an empty slice");
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::derive_rng;

    fn single_layer(w: Mat, bias: Vec<f64>, act: Activation) -> MlpParams {
        MlpParams::new(vec![Layer {
            weights: w,
            bias,
            activation: act,
        }])
        .unwrap()
    }

    fn relative_error(n: f64, a: f64) -> f64 {
        (n - a).abs() / (n.abs() + a.abs()).max(1e-8)
    }

    /// Central finite differences over the flat parameter vector.
    fn fd_flat(params: &MlpParams, eval: impl Fn(&MlpParams) -> f64, h: f64) -> Vec<f64> {
        let mut p = params.clone();
        let mut out = Vec::with_capacity(p.flat_len());
        for i in 0..p.flat_len() {
            let orig = p.flat_get(i);
            p.flat_set(i, orig + h);
            let up = eval(&p);
            p.flat_set(i, orig - h);
            let down = eval(&p);
            p.flat_set(i, orig);
            out.push((up - down) / (2.0 * h));
        }
        out
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let w = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let p = single_layer(w, vec![0.0, 0.0], Activation::Linear);
        let x = Mat::from_rows(&[&[3.5, -2.0]]);
        let fp = mlp_forward(&p, &x).unwrap();
        assert_eq!(fp.output().row(0), &[3.5, -2.0]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
    }

    #[test]
    fn leaky_relu_scales_negatives() {
        let act = Activation::LeakyRelu { slope: 0.2 };
        assert_eq!(act.apply(-1.0), -0.2);
        assert_eq!(act.apply(2.0), 2.0);
        assert_eq!(act.deriv(-1.0), 0.2);
        assert_eq!(act.deriv(0.0), 1.0);
    }

    #[test]
    fn input_dim_mismatch_is_a_shape_error() {
        let w = Mat::from_rows(&[&[1.0, 0.0]]);
        let p = single_layer(w, vec![0.0], Activation::Linear);
        let x = Mat::from_rows(&[&[1.0, 2.0, 3.0]]);
        let err = mlp_forward(&p, &x).unwrap_err();
        assert!(
            err.to_string().contains("3 columns"),
            "unexpected message: {err}"
        );
    }

    #[test]
    fn single_linear_layer_gradient_is_the_outer_product() {
        let w = Mat::from_rows(&[&[0.5, -1.0]]);
        let p = single_layer(w, vec![0.1], Activation::Linear);
        let x = Mat::from_rows(&[&[2.0, 3.0]]);
        let fp = mlp_forward(&p, &x).unwrap();
        let og = Mat::from_rows(&[&[1.5]]);
        let (grads, input_grad) = mlp_backward(&p, &fp, &og);
        assert_eq!(grads.weights[0].data(), &[3.0, 4.5]);
        assert_eq!(grads.bias[0], vec![1.5]);
        assert_eq!(input_grad.row(0), &[0.75, -1.5]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_everywhere() {
        let mut rng = derive_rng(7, 1);
        let p = MlpParams::gaussian(
            &[3, 4, 2],
            &[Activation::LeakyRelu { slope: 0.2 }, Activation::Sigmoid],
            0.5,
            &mut rng,
        )
        .unwrap();
        let x = Mat::from_rows(&[&[0.3, -0.2, 0.9]]);
        let fp = mlp_forward(&p, &x).unwrap();
        let (grads, input_grad) = mlp_backward(&p, &fp, &Mat::zeros(1, 2));
        assert!(grads.flat().iter().all(|&g| g == 0.0));
        assert!(input_grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_layer_gradients_match_finite_differences() {
        let mut rng = derive_rng(11, 3);
        let p = MlpParams::gaussian(
            &[4, 5, 3],
            &[Activation::LeakyRelu { slope: 0.2 }, Activation::Sigmoid],
            0.7,
            &mut rng,
        )
        .unwrap();
        let x = Mat::from_rows(&[&[0.4, -1.2, 0.8, 0.1], &[1.1, 0.3, -0.5, 0.9]]);
        // Loss: sum of outputs weighted by fixed coefficients.
        let coefs = [0.7, -0.3, 1.4];
        let eval = |m: &MlpParams| {
            let fp = mlp_forward(m, &x).unwrap();
            let mut total = 0.0;
            for i in 0..fp.output().rows() {
                for (j, c) in coefs.iter().enumerate() {
                    total += c * fp.output().get(i, j);
                }
            }
            total
        };
        let fp = mlp_forward(&p, &x).unwrap();
        let og = Mat::from_rows(&[&coefs[..], &coefs[..]]);
        let (grads, _) = mlp_backward(&p, &fp, &og);
        let numeric = fd_flat(&p, eval, 1e-5);
        let analytic = grads.flat();
        for (i, (n, a)) in numeric.iter().zip(&analytic).enumerate() {
            let rel = relative_error(*n, *a);
            assert!(
                rel < 1e-4,
                "param {i}: numeric {n:.10} vs analytic {a:.10} (rel {rel:.2e})"
            );
        }
    }

    #[test]
    fn unit_norm_linear_critic_has_zero_penalty() {
        // Input weights [0.6, 0.8, 0.5]: the x part [0.6, 0.8] has norm 1.
        let w = Mat::from_rows(&[&[0.6, 0.8, 0.5]]);
        let d = single_layer(w, vec![0.2], Activation::Linear);
        let (penalty, grads) = penalty_gradients(&d, &[0.3, -0.4], &[1.0], 10.0).unwrap();
        assert!(penalty.abs() < 1e-12, "penalty {penalty} should vanish");
        // Gradient of (||w_x|| - 1)^2 at ||w_x|| = 1 is zero.
        assert!(grads.flat().iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn doubled_norm_linear_critic_pays_lambda() {
        let w = Mat::from_rows(&[&[1.2, 1.6, 0.3]]);
        let d = single_layer(w, vec![0.0], Activation::Linear);
        let (penalty, _) = penalty_gradients(&d, &[0.1, 0.2], &[0.5], 10.0).unwrap();
        assert!(
            (penalty - 10.0).abs() < 1e-12,
            "norm-2 critic should pay exactly lambda, got {penalty}"
        );
    }

    #[test]
    fn zero_input_gradient_uses_the_subgradient_convention() {
        let w = Mat::from_rows(&[&[0.0, 0.0, 0.7]]);
        let d = single_layer(w, vec![0.1], Activation::Linear);
        let (penalty, grads) = penalty_gradients(&d, &[0.4, -0.2], &[0.9], 10.0).unwrap();
        assert_eq!(penalty, 10.0);
        assert!(grads.flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn penalty_parameter_gradients_match_finite_differences() {
        let mut rng = derive_rng(23, 9);
        for case in 0..5 {
            let d = MlpParams::gaussian(
                &[5, 6, 1],
                &[Activation::LeakyRelu { slope: 0.2 }, Activation::Linear],
                0.6,
                &mut rng,
            )
            .unwrap();
            let x_hat: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let cond: Vec<f64> = (0..2).map(|_| rng.normal()).collect();
            // Keep the probe away from leaky-relu kinks where finite
            // differences are invalid.
            let probe = Mat::from_rows(&[&[x_hat.clone(), cond.clone()].concat()[..]]);
            let fp = mlp_forward(&d, &probe).unwrap();
            if fp.pre[0].data().iter().any(|z| z.abs() < 1e-3) {
                continue;
            }
            let (_, grads) = penalty_gradients(&d, &x_hat, &cond, 10.0).unwrap();
            let eval = |m: &MlpParams| penalty_gradients(m, &x_hat, &cond, 10.0).unwrap().0;
            let numeric = fd_flat(&d, eval, 1e-5);
            for (i, (n, a)) in numeric.iter().zip(&grads.flat()).enumerate() {
                let rel = relative_error(*n, *a);
                assert!(
                    rel < 1e-4,
                    "case {case} param {i}: numeric {n:.10} vs analytic {a:.10} (rel {rel:.2e})"
                );
            }
        }
    }

    #[test]
    fn softmax_is_a_shift_invariant_distribution() {
        let x = [1.0, 2.0, 3.0];
        let p = softmax(&x);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
        let shifted = softmax(&[101.0, 102.0, 103.0]);
        for (a, b) in p.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-9, "shift changed softmax: {a} vs {b}");
        }
    }

    #[test]
    fn log_sum_exp_handles_large_magnitudes() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}
