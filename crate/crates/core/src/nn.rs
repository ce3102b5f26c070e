//! Two-layer dense networks with hand-written backpropagation.
//!
//! A [`DenseNet`] computes `w2 · relu(w1 · x + b1) + b2`. Policies read the
//! output as logits of a softmax distribution. Gradients are produced as
//! [`GradientBundle`]s that mirror the parameter arrays one to one, and are
//! applied with [`RmsPropState`] as ascent directions.
//!
//! `w1` is stored input-major (`w1[j * hidden + h]` is the weight from input
//! `j` to hidden unit `h`) so that the sparse one-hot observations used by the
//! environments only touch the columns they activate.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};

/// Uniform access to the flat parameter arrays of a model.
pub trait Parameters {
    fn arrays(&self) -> Vec<&[f64]>;
    fn arrays_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_parameters(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl DenseNet {
    pub const DEFAULT_HIDDEN: usize = 128;

    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            w1: vec![0.0; input_dim * hidden_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; output_dim * hidden_dim],
            b2: vec![0.0; output_dim],
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(input_dim, hidden_dim, output_dim);
        let l1 = 1.0 / (input_dim.max(1) as f64).sqrt();
        let d1 = Uniform::new_inclusive(-l1, l1);
        net.w1.iter_mut().for_each(|w| *w = d1.sample(rng));
        let l2 = 1.0 / (hidden_dim.max(1) as f64).sqrt();
        let d2 = Uniform::new_inclusive(-l2, l2);
        net.w2.iter_mut().for_each(|w| *w = d2.sample(rng));
        net
    }

    /// Rebuilds a network from arrays in the same layout as [`Parameters::arrays`].
    pub fn from_arrays(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        let check = |context, expected, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { context, expected, got })
            }
        };
        check("w1", input_dim * hidden_dim, w1.len())?;
        check("b1", hidden_dim, b1.len())?;
        check("w2", output_dim * hidden_dim, w2.len())?;
        check("b2", output_dim, b2.len())?;
        Ok(Self { input_dim, hidden_dim, output_dim, w1, b1, w2, b2 })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Weight from input `j` to hidden unit `h`.
    pub fn w1(&self, h: usize, j: usize) -> f64 {
        self.w1[j * self.hidden_dim + h]
    }

    pub fn set_w1(&mut self, h: usize, j: usize, value: f64) {
        self.w1[j * self.hidden_dim + h] = value;
    }

    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    /// Weight from hidden unit `h` to output `o`.
    pub fn w2(&self, o: usize, h: usize) -> f64 {
        self.w2[o * self.hidden_dim + h]
    }

    pub fn set_w2(&mut self, o: usize, h: usize, value: f64) {
        self.w2[o * self.hidden_dim + h] = value;
    }

    pub fn b2(&self) -> &[f64] {
        &self.b2
    }

    pub fn b2_mut(&mut self) -> &mut [f64] {
        &mut self.b2
    }

    pub fn b1_mut(&mut self) -> &mut [f64] {
        &mut self.b1
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        let hd = self.hidden_dim;
        let mut hidden = self.b1.clone();
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let col = &self.w1[j * hd..(j + 1) * hd];
            for (acc, &w) in hidden.iter_mut().zip(col) {
                *acc += w * xj;
            }
        }
        for v in &mut hidden {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        hidden
    }

    fn output_from_hidden(&self, hidden: &[f64]) -> Vec<f64> {
        let hd = self.hidden_dim;
        self.b2
            .iter()
            .enumerate()
            .map(|(o, &b)| {
                let row = &self.w2[o * hd..(o + 1) * hd];
                b + row.iter().zip(hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let hidden = self.hidden_activations(x);
        let logits = self.output_from_hidden(&hidden);
        Ok((logits, ForwardCache { input: x.to_vec(), hidden }))
    }

    /// Forward pass without keeping the cache.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.output_from_hidden(&self.hidden_activations(x)))
    }

    /// `softmax(forward(x))`.
    pub fn action_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        softmax(&self.logits(x)?)
    }

    /// `scale · ∇θ log softmax(forward(x))[action]` as a fresh bundle.
    pub fn logprob_gradient(&self, x: &[f64], action: usize, scale: f64) -> Result<GradientBundle> {
        let mut grad = GradientBundle::zeros_like(self);
        self.accumulate_logprob_gradient(x, action, scale, &mut grad)?;
        Ok(grad)
    }

    /// Adds `scale · ∇θ log π(action | x)` into `grad`.
    pub fn accumulate_logprob_gradient(
        &self,
        x: &[f64],
        action: usize,
        scale: f64,
        grad: &mut GradientBundle,
    ) -> Result<()> {
        self.check_input(x)?;
        if action >= self.output_dim {
            return Err(Error::DimensionMismatch {
                context: "action index",
                expected: self.output_dim,
                got: action,
            });
        }
        grad.check_congruent(self)?;
        if scale == 0.0 {
            return Ok(());
        }

        let hd = self.hidden_dim;
        let hidden = self.hidden_activations(x);
        let probs = softmax(&self.output_from_hidden(&hidden))?;

        // d log softmax[a] / d logits = onehot(a) - p
        let delta_out: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(o, &p)| scale * (if o == action { 1.0 } else { 0.0 } - p))
            .collect();

        let mut delta_hidden = vec![0.0; hd];
        for (o, &d) in delta_out.iter().enumerate() {
            grad.arrays[3][o] += d;
            if d == 0.0 {
                continue;
            }
            let w_row = &self.w2[o * hd..(o + 1) * hd];
            let g_row = &mut grad.arrays[2][o * hd..(o + 1) * hd];
            for h in 0..hd {
                g_row[h] += d * hidden[h];
                delta_hidden[h] += d * w_row[h];
            }
        }
        for h in 0..hd {
            if hidden[h] <= 0.0 {
                delta_hidden[h] = 0.0;
            }
            grad.arrays[1][h] += delta_hidden[h];
        }
        let gw1 = &mut grad.arrays[0];
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let col = &mut gw1[j * hd..(j + 1) * hd];
            for (g, &dh) in col.iter_mut().zip(&delta_hidden) {
                *g += xj * dh;
            }
        }
        Ok(())
    }
}

impl Parameters for DenseNet {
    fn arrays(&self) -> Vec<&[f64]> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `log softmax(logits)[index]`.
pub fn log_softmax_at(logits: &[f64], index: usize) -> Result<f64> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    Ok(logits[index] - lse)
}

/// Draws an index from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Per-parameter gradient arrays, congruent with some [`Parameters`] value.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub arrays: Vec<Vec<f64>>,
}

impl GradientBundle {
    pub fn zeros_like<P: Parameters + ?Sized>(params: &P) -> Self {
        Self {
            arrays: params.arrays().iter().map(|a| vec![0.0; a.len()]).collect(),
        }
    }

    pub fn check_congruent<P: Parameters + ?Sized>(&self, params: &P) -> Result<()> {
        let shapes = params.arrays();
        if shapes.len() != self.arrays.len() {
            return Err(Error::DimensionMismatch {
                context: "gradient array count",
                expected: shapes.len(),
                got: self.arrays.len(),
            });
        }
        for (p, g) in shapes.iter().zip(&self.arrays) {
            if p.len() != g.len() {
                return Err(Error::DimensionMismatch {
                    context: "gradient array length",
                    expected: p.len(),
                    got: g.len(),
                });
            }
        }
        Ok(())
    }

    pub fn global_norm(&self) -> f64 {
        self.arrays
            .iter()
            .flat_map(|a| a.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.arrays.iter_mut().flat_map(|a| a.iter_mut()) {
            *v *= factor;
        }
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &GradientBundle, factor: f64) {
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += factor * y;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.arrays.iter().all(|a| a.iter().all(|&v| v == 0.0))
    }

    /// Rescales so the global L2 norm is at most one.
    pub fn clip_to_unit_norm(&mut self) {
        let norm = self.global_norm();
        if norm > 1.0 {
            self.scale(1.0 / norm);
        }
    }
}

impl Parameters for GradientBundle {
    fn arrays(&self) -> Vec<&[f64]> {
        self.arrays.iter().map(|a| a.as_slice()).collect()
    }

    fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        self.arrays.iter_mut().map(|a| a.as_mut_slice()).collect()
    }
}

/// Returns a copy of `grad` clipped to unit global norm.
pub fn clip_to_unit_norm(grad: &GradientBundle) -> GradientBundle {
    let mut out = grad.clone();
    out.clip_to_unit_norm();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    pub mean_square: Vec<Vec<f64>>,
    pub decay: f64,
    pub step_size: f64,
    pub epsilon: f64,
}

impl RmsPropState {
    pub const DEFAULT_DECAY: f64 = 0.95;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new<P: Parameters + ?Sized>(params: &P, step_size: f64) -> Self {
        Self::with_hyperparameters(params, step_size, Self::DEFAULT_DECAY, Self::DEFAULT_EPSILON)
    }

    pub fn with_hyperparameters<P: Parameters + ?Sized>(
        params: &P,
        step_size: f64,
        decay: f64,
        epsilon: f64,
    ) -> Self {
        Self {
            mean_square: params.arrays().iter().map(|a| vec![0.0; a.len()]).collect(),
            decay,
            step_size,
            epsilon,
        }
    }

    /// One ascent step: `params += step · g / (sqrt(ms) + eps)`.
    pub fn apply<P: Parameters + ?Sized>(&mut self, params: &mut P, grad: &GradientBundle) -> Result<()> {
        grad.check_congruent(params)?;
        let (decay, step, eps) = (self.decay, self.step_size, self.epsilon);
        for ((p, g), ms) in params
            .arrays_mut()
            .into_iter()
            .zip(&grad.arrays)
            .zip(self.mean_square.iter_mut())
        {
            for ((pv, &gv), mv) in p.iter_mut().zip(g).zip(ms.iter_mut()) {
                *mv = decay * *mv + (1.0 - decay) * gv * gv;
                if gv != 0.0 {
                    *pv += step * gv / (mv.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
