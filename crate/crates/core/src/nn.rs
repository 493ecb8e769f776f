//! Small fully connected networks with hand-derived backpropagation.
//!
//! Networks are `affine → activation` stacks with an identity output layer.
//! Batches are row-major matrices with one sample per row.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NetError;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if a > 0.0 {
                    a
                } else {
                    LEAKY_SLOPE * a
                }
            }
            Activation::Tanh => a.tanh(),
        }
    }

    #[inline]
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if a > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
        }
    }

    #[inline]
    fn second_derivative(self, a: f64) -> f64 {
        match self {
            Activation::LeakyRelu => 0.0,
            Activation::Tanh => {
                let t = a.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }

    fn init_gain(self) -> f64 {
        match self {
            Activation::LeakyRelu => (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt(),
            Activation::Tanh => 5.0 / 3.0,
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let data = rows
            .iter()
            .flat_map(|r| {
                assert_eq!(r.len(), cols, "ragged rows");
                r.iter().copied()
            })
            .collect();
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "hcat row mismatch");
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Leading `cols` columns.
    pub fn take_cols(&self, cols: usize) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[..cols]);
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    // out[r] = W · x[r] + b
    fn affine(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows, self.outputs);
        for r in 0..x.rows {
            let xr = x.row(r);
            let or = out.row_mut(r);
            for (i, o) in or.iter_mut().enumerate() {
                let w = &self.weights[i * self.inputs..(i + 1) * self.inputs];
                *o = self.bias[i] + dot(w, xr);
            }
        }
        out
    }

    // dx[r] = Wᵀ · delta[r]
    fn backprop_input(&self, delta: &Matrix) -> Matrix {
        let mut dx = Matrix::zeros(delta.rows, self.inputs);
        for r in 0..delta.rows {
            let dr = delta.row(r);
            let xr = dx.row_mut(r);
            for (i, &d) in dr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let w = &self.weights[i * self.inputs..(i + 1) * self.inputs];
                axpy(d, w, xr);
            }
        }
        dx
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            axpy(1.0, &b.weights, &mut a.weights);
            axpy(1.0, &b.bias, &mut a.bias);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    // accumulates delta[r] ⊗ input[r] into a layer's weight gradient
    fn accumulate(&mut self, layer: usize, delta: &Matrix, input: &Matrix) {
        let g = &mut self.layers[layer];
        for r in 0..delta.rows {
            let dr = delta.row(r);
            let xr = input.row(r);
            for (i, &d) in dr.iter().enumerate() {
                g.bias[i] += d;
                if d != 0.0 {
                    axpy(d, xr, &mut g.weights[i * g.inputs..(i + 1) * g.inputs]);
                }
            }
        }
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
        .collect()
}

/// Recorded forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer: `inputs[0]` is the batch itself.
    inputs: Vec<Matrix>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Matrix>,
    output: Matrix,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn input(&self) -> &Matrix {
        &self.inputs[0]
    }
}

/// Feed-forward network with an identity output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Activation,
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Zero-initialized network with the given layer widths.
    pub fn zeros(sizes: &[usize], hidden: Activation) -> Result<Self, NetError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NetError::Invalid(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Mlp {
            hidden,
            layers: sizes
                .windows(2)
                .map(|w| Layer::zeros(w[0], w[1]))
                .collect(),
        })
    }

    /// Uniform fan-in scaled (Kaiming-style) weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        rng: &mut R,
    ) -> Result<Self, NetError> {
        let mut net = Self::zeros(sizes, hidden)?;
        let last = net.layers.len() - 1;
        for (idx, layer) in net.layers.iter_mut().enumerate() {
            let gain = if idx == last { 1.0 } else { hidden.init_gain() };
            let bound = gain * (3.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), NetError> {
        if params.len() != self.param_count() {
            return Err(NetError::Shape {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &Matrix) -> Result<(), NetError> {
        if x.cols != self.input_width() {
            return Err(NetError::Shape {
                expected: self.input_width(),
                got: x.cols,
            });
        }
        Ok(())
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix, NetError> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = self.layers[0].affine(x);
        if last > 0 {
            h.data.iter_mut().for_each(|v| *v = self.hidden.apply(*v));
        }
        for (idx, layer) in self.layers.iter().enumerate().skip(1) {
            h = layer.affine(&h);
            if idx != last {
                h.data.iter_mut().for_each(|v| *v = self.hidden.apply(*v));
            }
        }
        Ok(h)
    }

    /// Forward pass recording everything [`backward`](Self::backward) needs.
    pub fn forward(&self, x: &Matrix) -> Result<Tape, NetError> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        inputs.push(x.clone());
        for layer in &self.layers[..last] {
            let a = layer.affine(inputs.last().unwrap());
            let mut h = a.clone();
            h.data.iter_mut().for_each(|v| *v = self.hidden.apply(*v));
            pre.push(a);
            inputs.push(h);
        }
        let output = self.layers[last].affine(inputs.last().unwrap());
        Ok(Tape {
            inputs,
            pre,
            output,
        })
    }

    /// Gradients of `Σ_r upstream[r] · output[r]` with respect to every
    /// parameter and to the input batch.
    pub fn backward(&self, tape: &Tape, upstream: &Matrix) -> Result<(Gradients, Matrix), NetError> {
        let (grads, dx) = self.backward_impl(tape, upstream, true)?;
        Ok((grads.expect("requested"), dx))
    }

    /// Input gradients only; parameter gradients are skipped.
    pub fn backward_input(&self, tape: &Tape, upstream: &Matrix) -> Result<Matrix, NetError> {
        Ok(self.backward_impl(tape, upstream, false)?.1)
    }

    fn backward_impl(
        &self,
        tape: &Tape,
        upstream: &Matrix,
        want_params: bool,
    ) -> Result<(Option<Gradients>, Matrix), NetError> {
        if upstream.cols != self.output_width() || upstream.rows != tape.output.rows {
            return Err(NetError::Shape {
                expected: self.output_width(),
                got: upstream.cols,
            });
        }
        let mut grads = want_params.then(|| Gradients::zeros_like(self));
        let last = self.layers.len() - 1;
        let mut delta = upstream.clone();
        for l in (0..=last).rev() {
            if let Some(g) = grads.as_mut() {
                g.accumulate(l, &delta, &tape.inputs[l]);
            }
            let mut dh = self.layers[l].backprop_input(&delta);
            if l > 0 {
                let a = &tape.pre[l - 1];
                for (d, &av) in dh.data.iter_mut().zip(&a.data) {
                    *d *= self.hidden.derivative(av);
                }
            }
            delta = dh;
        }
        Ok((grads, delta))
    }

    /// Input gradients of a scalar-output network, one row per sample.
    pub fn input_gradients(&self, tape: &Tape) -> Result<Matrix, NetError> {
        if self.output_width() != 1 {
            return Err(NetError::Invalid(
                "input gradients need a scalar output".into(),
            ));
        }
        let ones = Matrix::from_vec(tape.output.rows, 1, vec![1.0; tape.output.rows]);
        self.backward_input(tape, &ones)
    }

    /// Parameter gradients of `Σ_r v[r] · ∇_x D(x_r)` for a scalar-output
    /// network, where `v[r]` is the sensitivity of an objective to the
    /// input gradient of sample `r` (second-order backpropagation).
    pub fn input_gradient_backward(&self, tape: &Tape, v0: &Matrix) -> Result<Gradients, NetError> {
        if self.output_width() != 1 {
            return Err(NetError::Invalid(
                "input gradients need a scalar output".into(),
            ));
        }
        if v0.cols != self.input_width() || v0.rows != tape.output.rows {
            return Err(NetError::Shape {
                expected: self.input_width(),
                got: v0.cols,
            });
        }
        let rows = v0.rows;
        let last = self.layers.len() - 1;
        let mut grads = Gradients::zeros_like(self);

        // Re-run the input-gradient recursion, keeping δ_l (pre-activation
        // sensitivities) and g_l (post-activation sensitivities).
        // g_{L-1} = W_Lᵀ·1, δ_l = g_l ⊙ φ'(a_l), g_{l-1} = W_lᵀ δ_l.
        let mut g: Vec<Matrix> = vec![Matrix::zeros(0, 0); last + 1];
        let mut delta: Vec<Matrix> = vec![Matrix::zeros(0, 0); last + 1];
        let ones = Matrix::from_vec(rows, 1, vec![1.0; rows]);
        delta[last] = ones;
        for l in (0..=last).rev() {
            let gl_minus = self.layers[l].backprop_input(&delta[l]);
            if l > 0 {
                let a = &tape.pre[l - 1];
                let mut d = gl_minus.clone();
                for (dv, &av) in d.data.iter_mut().zip(&a.data) {
                    *dv *= self.hidden.derivative(av);
                }
                delta[l - 1] = d;
            }
            g[l] = gl_minus;
        }
        // g[l] here is ∂D/∂(input of layer l); g[0] is the input gradient.

        // Reverse sweep over the recursion. v_in is ∂P/∂(input of layer l).
        let mut v_in = v0.clone();
        // direct pre-activation sensitivities through φ''
        let mut direct: Vec<Matrix> = Vec::with_capacity(last);
        for l in 0..=last {
            // g_in(l) = W_lᵀ δ_l  ⇒  ∂P/∂W_l += δ_l ⊗ v_in, ∂P/∂δ_l = W_l v_in
            {
                let gw = &mut grads.layers[l];
                for r in 0..rows {
                    let dr = delta[l].row(r);
                    let vr = v_in.row(r);
                    for (i, &d) in dr.iter().enumerate() {
                        if d != 0.0 {
                            axpy(d, vr, &mut gw.weights[i * gw.inputs..(i + 1) * gw.inputs]);
                        }
                    }
                }
            }
            if l == last {
                break;
            }
            let e = self.layers[l].affine_no_bias(&v_in);
            // δ_l = g_out(l) ⊙ φ'(a_l), where g_out(l) is the input gradient of layer l+1
            let a = &tape.pre[l];
            let g_out = &g[l + 1];
            let mut next_v = e.clone();
            let mut r_direct = e;
            for idx in 0..next_v.data.len() {
                let av = a.data[idx];
                next_v.data[idx] *= self.hidden.derivative(av);
                r_direct.data[idx] *= g_out.data[idx] * self.hidden.second_derivative(av);
            }
            direct.push(r_direct);
            v_in = next_v;
        }

        // Backpropagate the direct pre-activation terms through the forward
        // graph (non-zero only for curved activations).
        if direct.iter().any(|m| m.data.iter().any(|&v| v != 0.0)) {
            let mut da = direct[last - 1].clone();
            for l in (0..last).rev() {
                grads.accumulate(l, &da, &tape.inputs[l]);
                if l == 0 {
                    break;
                }
                let mut dh = self.layers[l].backprop_input(&da);
                let a = &tape.pre[l - 1];
                for (idx, d) in dh.data.iter_mut().enumerate() {
                    *d = *d * self.hidden.derivative(a.data[idx]) + direct[l - 1].data[idx];
                }
                da = dh;
            }
        }
        Ok(grads)
    }

    /// Applies one optimizer update. Fails if any parameter becomes
    /// non-finite.
    pub fn step(
        &mut self,
        grads: &Gradients,
        state: &mut OptimizerState,
        cfg: &OptimizerConfig,
    ) -> Result<(), NetError> {
        let n = self.param_count();
        if state.first.len() != n {
            *state = OptimizerState::new(n);
        }
        state.steps += 1;
        let t = state.steps as f64;
        let mut k = 0;
        let mut finite = true;
        for (layer, grad) in self.layers.iter_mut().zip(&grads.layers) {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let gs = grad.weights.iter().chain(&grad.bias);
            for (p, &g) in params.zip(gs) {
                let update = match cfg.rule {
                    UpdateRule::Sgd => cfg.lr * g,
                    UpdateRule::Adam { beta1, beta2, eps } => {
                        let m = &mut state.first[k];
                        let v = &mut state.second[k];
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / (1.0 - beta1.powf(t));
                        let v_hat = *v / (1.0 - beta2.powf(t));
                        cfg.lr * m_hat / (v_hat.sqrt() + eps)
                    }
                    UpdateRule::RmsProp { decay, eps } => {
                        let v = &mut state.second[k];
                        *v = decay * *v + (1.0 - decay) * g * g;
                        cfg.lr * g / (v.sqrt() + eps)
                    }
                };
                *p -= update;
                finite &= p.is_finite();
                k += 1;
            }
        }
        if finite {
            Ok(())
        } else {
            Err(NetError::NonFinite)
        }
    }

    /// Divides every weight matrix whose estimated largest singular value
    /// exceeds 1 by that value. `state` keeps the power-iteration vectors
    /// between calls.
    pub fn spectral_normalize(&mut self, iterations: usize, state: &mut PowerIteration) {
        state.ensure(self);
        for (layer, u) in self.layers.iter_mut().zip(&mut state.left) {
            let sigma = power_iteration(&layer.weights, layer.outputs, layer.inputs, u, iterations);
            if sigma > 1.0 {
                layer.weights.iter_mut().for_each(|w| *w /= sigma);
            }
        }
    }

    /// Largest singular value of every layer, estimated from scratch.
    pub fn spectral_norms(&self, iterations: usize) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| {
                let mut u = vec![1.0; l.outputs];
                power_iteration(&l.weights, l.outputs, l.inputs, &mut u, iterations)
            })
            .collect()
    }
}

impl Layer {
    fn affine_no_bias(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows, self.outputs);
        for r in 0..x.rows {
            let xr = x.row(r);
            let or = out.row_mut(r);
            for (i, o) in or.iter_mut().enumerate() {
                *o = dot(&self.weights[i * self.inputs..(i + 1) * self.inputs], xr);
            }
        }
        out
    }
}

/// Persistent left singular vector estimates, one per layer.
#[derive(Debug, Clone, Default)]
pub struct PowerIteration {
    left: Vec<Vec<f64>>,
}

impl PowerIteration {
    fn ensure(&mut self, net: &Mlp) {
        let ok = self.left.len() == net.layers.len()
            && self.left.iter().zip(&net.layers).all(|(u, l)| u.len() == l.outputs);
        if !ok {
            self.left = net.layers.iter().map(|l| vec![1.0; l.outputs]).collect();
        }
    }
}

/// Estimates σ_max of a `rows × cols` matrix, updating `u` in place.
/// Returns 0 for a zero matrix.
pub fn power_iteration(w: &[f64], rows: usize, cols: usize, u: &mut [f64], iterations: usize) -> f64 {
    let mut v = vec![0.0; cols];
    let mut sigma = 0.0;
    for _ in 0..iterations.max(1) {
        // v = Wᵀu / ‖Wᵀu‖
        v.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..rows {
            axpy(u[i], &w[i * cols..(i + 1) * cols], &mut v);
        }
        let vn = dot(&v, &v).sqrt();
        if vn == 0.0 {
            // u may be orthogonal to the row space; restart from a dense vector
            if w.iter().all(|&x| x == 0.0) {
                return 0.0;
            }
            for (i, ui) in u.iter_mut().enumerate() {
                *ui = 1.0 + i as f64;
            }
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vn);
        // u = Wv / ‖Wv‖
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = dot(&w[i * cols..(i + 1) * cols], &v);
        }
        let un = dot(u, u).sqrt();
        sigma = un;
        if un == 0.0 {
            return 0.0;
        }
        u.iter_mut().for_each(|x| *x /= un);
    }
    sigma
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum UpdateRule {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    #[serde(rename = "rmsprop")]
    RmsProp { decay: f64, eps: f64 },
    Sgd,
}

impl UpdateRule {
    pub fn adam() -> Self {
        UpdateRule::Adam {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rmsprop() -> Self {
        UpdateRule::RmsProp {
            decay: 0.9,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub rule: UpdateRule,
    pub lr: f64,
}

impl OptimizerConfig {
    pub fn new(rule: UpdateRule, lr: f64) -> Self {
        OptimizerConfig { rule, lr }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(NetError::Invalid(format!("learning rate {}", self.lr)));
        }
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        match self.rule {
            UpdateRule::Adam { beta1, beta2, .. } if !beta_ok(beta1) || !beta_ok(beta2) => {
                Err(NetError::Invalid("Adam betas must lie in [0, 1)".into()))
            }
            UpdateRule::RmsProp { decay, .. } if !beta_ok(decay) => {
                Err(NetError::Invalid("RMSProp decay must lie in [0, 1)".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Moment estimates for Adam / RMSProp.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(params: usize) -> Self {
        OptimizerState {
            first: vec![0.0; params],
            second: vec![0.0; params],
            steps: 0,
        }
    }
}

/// Serialized network: layer sizes plus a flat parameter array
/// (per layer: weights row-major, then biases).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub params: Vec<f64>,
}

impl From<&Mlp> for Checkpoint {
    fn from(net: &Mlp) -> Self {
        Checkpoint {
            sizes: net.sizes(),
            hidden: net.hidden,
            params: net.params(),
        }
    }
}

impl TryFrom<&Checkpoint> for Mlp {
    type Error = NetError;

    fn try_from(c: &Checkpoint) -> Result<Self, NetError> {
        let mut net = Mlp::zeros(&c.sizes, c.hidden)?;
        net.set_params(&c.params)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_batch(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| r.random_range(-1.5..1.5)).collect(),
        )
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut net = Mlp::zeros(&[3, 4, 2], Activation::LeakyRelu).unwrap();
        net.layers[1].bias = vec![0.5, -2.0];
        let out = net.predict(&Matrix::from_rows(&[vec![1.0, 2.0, 3.0]])).unwrap();
        assert_eq!(out.data(), &[0.5, -2.0]);
    }

    #[test]
    fn single_linear_layer() {
        let mut net = Mlp::zeros(&[1, 1], Activation::LeakyRelu).unwrap();
        net.layers[0].weights = vec![2.0];
        net.layers[0].bias = vec![1.0];
        let out = net.predict(&Matrix::from_rows(&[vec![3.0]])).unwrap();
        assert_eq!(out.data(), &[7.0]);
    }

    #[test]
    fn forward_matches_predict_and_is_finite() {
        let mut r = rng(1);
        let net = Mlp::new(&[2, 16, 16, 1], Activation::LeakyRelu, &mut r).unwrap();
        let x = random_batch(10, 2, &mut r);
        let a = net.predict(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(&a, b.output());
        assert!(a.data().iter().all(|v| v.is_finite()));
        assert!(net.predict(&random_batch(2, 3, &mut r)).is_err());
    }

    #[test]
    fn input_gradient_of_linear_is_weight() {
        let mut net = Mlp::zeros(&[3, 1], Activation::LeakyRelu).unwrap();
        net.layers[0].weights = vec![0.3, -1.2, 2.5];
        let x = Matrix::from_rows(&[vec![1.0, 1.0, 1.0], vec![-4.0, 0.2, 9.0]]);
        let tape = net.forward(&x).unwrap();
        let g = net.input_gradients(&tape).unwrap();
        assert_eq!(g.row(0), &[0.3, -1.2, 2.5]);
        assert_eq!(g.row(1), &[0.3, -1.2, 2.5]);
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let mut r = rng(2);
        let net = Mlp::new(&[2, 8, 3], Activation::Tanh, &mut r).unwrap();
        let x = random_batch(5, 2, &mut r);
        let tape = net.forward(&x).unwrap();
        let up = random_batch(5, 3, &mut r);
        let mut up2 = up.clone();
        up2.scale(2.0);
        let (g1, dx1) = net.backward(&tape, &up).unwrap();
        let (g2, dx2) = net.backward(&tape, &up2).unwrap();
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        for (a, b) in dx1.data().iter().zip(dx2.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_step() {
        let mut net = Mlp::zeros(&[1, 1], Activation::LeakyRelu).unwrap();
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].weights = vec![1.0];
        let cfg = OptimizerConfig::new(UpdateRule::Sgd, 0.1);
        let mut st = OptimizerState::default();
        net.step(&g, &mut st, &cfg).unwrap();
        assert!((net.layers[0].weights[0] + 0.1).abs() < 1e-15);
        assert_eq!(net.layers[0].bias[0], 0.0);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        for scale in [1e-4, 1.0, 1e4] {
            let mut net = Mlp::zeros(&[1, 1], Activation::LeakyRelu).unwrap();
            let mut g = Gradients::zeros_like(&net);
            g.layers[0].weights = vec![scale];
            let cfg = OptimizerConfig::new(UpdateRule::adam(), 1e-3);
            let mut st = OptimizerState::default();
            net.step(&g, &mut st, &cfg).unwrap();
            assert!((net.layers[0].weights[0] + 1e-3).abs() < 1e-6, "scale {scale}");
        }
    }

    #[test]
    fn non_finite_update_is_reported() {
        let mut net = Mlp::zeros(&[1, 1], Activation::LeakyRelu).unwrap();
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].weights = vec![f64::NAN];
        let cfg = OptimizerConfig::new(UpdateRule::Sgd, 0.1);
        assert_eq!(
            net.step(&g, &mut OptimizerState::default(), &cfg),
            Err(NetError::NonFinite)
        );
        assert!(!net.is_finite());
    }

    #[test]
    fn optimizer_config_validation() {
        assert!(OptimizerConfig::new(UpdateRule::Sgd, 0.0).validate().is_err());
        let bad = UpdateRule::Adam { beta1: 1.0, beta2: 0.9, eps: 1e-8 };
        assert!(OptimizerConfig::new(bad, 1e-3).validate().is_err());
        assert!(OptimizerConfig::new(UpdateRule::rmsprop(), 1e-3).validate().is_ok());
    }

    #[test]
    fn spectral_normalize_diagonal() {
        let mut net = Mlp::zeros(&[2, 2], Activation::LeakyRelu).unwrap();
        net.layers[0].weights = vec![3.0, 0.0, 0.0, 1.0];
        net.spectral_normalize(50, &mut PowerIteration::default());
        let w = &net.layers[0].weights;
        assert!((w[0] - 1.0).abs() < 1e-6);
        assert!((w[3] - 1.0 / 3.0).abs() < 1e-6);
        assert!(w[1].abs() < 1e-12 && w[2].abs() < 1e-12);
    }

    #[test]
    fn spectral_normalize_orthogonal_and_zero() {
        let (c, s) = (0.6f64, 0.8f64);
        let mut net = Mlp::zeros(&[2, 2], Activation::LeakyRelu).unwrap();
        net.layers[0].weights = vec![c, -s, s, c];
        let before = net.layers[0].weights.clone();
        net.spectral_normalize(50, &mut PowerIteration::default());
        for (a, b) in before.iter().zip(&net.layers[0].weights) {
            assert!((a - b).abs() < 1e-6);
        }
        let mut zero = Mlp::zeros(&[3, 2], Activation::LeakyRelu).unwrap();
        zero.spectral_normalize(5, &mut PowerIteration::default());
        assert!(zero.layers[0].weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn spectral_normalize_bounds_every_layer() {
        let mut r = rng(3);
        let mut net = Mlp::new(&[2, 32, 32, 1], Activation::LeakyRelu, &mut r).unwrap();
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w *= 2.0);
        }
        let before = net.spectral_norms(200);
        assert!(before.iter().all(|&s| s > 1.0));
        net.spectral_normalize(200, &mut PowerIteration::default());
        let after = net.spectral_norms(500);
        for (b, a) in before.iter().zip(&after) {
            assert!((a - 1.0).abs() < 1e-3, "σ after = {a}");
            assert!(a <= b);
        }
    }

    #[test]
    fn spectral_normalize_never_increases() {
        let mut r = rng(4);
        for _ in 0..20 {
            let mut net = Mlp::new(&[3, 5, 2], Activation::Tanh, &mut r).unwrap();
            let scale = r.random_range(0.05..3.0);
            for l in &mut net.layers {
                l.weights.iter_mut().for_each(|w| *w *= scale);
            }
            let before = net.spectral_norms(300);
            net.spectral_normalize(300, &mut PowerIteration::default());
            let after = net.spectral_norms(300);
            for (b, a) in before.iter().zip(&after) {
                assert!(*a <= b + 1e-9);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut r = rng(5);
        let net = Mlp::new(&[4, 7, 2], Activation::LeakyRelu, &mut r).unwrap();
        let text = serde_json::to_string(&Checkpoint::from(&net)).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(Mlp::try_from(&back).unwrap(), net);
        let mut broken = back.clone();
        broken.params.pop();
        assert!(Mlp::try_from(&broken).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut r = rng(9);
            let mut net = Mlp::new(&[2, 8, 1], Activation::LeakyRelu, &mut r).unwrap();
            let cfg = OptimizerConfig::new(UpdateRule::adam(), 1e-2);
            let mut st = OptimizerState::default();
            for _ in 0..20 {
                let x = random_batch(8, 2, &mut r);
                let tape = net.forward(&x).unwrap();
                let up = Matrix::from_vec(8, 1, tape.output().data().to_vec());
                let (g, _) = net.backward(&tape, &up).unwrap();
                net.step(&g, &mut st, &cfg).unwrap();
            }
            net.params()
        };
        assert_eq!(run(), run());
    }
}
