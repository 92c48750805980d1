//! Velocity-prediction model and the interpolated training loss.
//!
//! The model is a small tanh MLP mapping `(state x_t, time t, condition c)`
//! to a velocity in state space. The condition enters as a one-hot block in
//! the input features, so its embedding lives in the first weight layer.
//!
//! The per-sample loss interpolates between pulling the prediction toward a
//! velocity target and pushing it away:
//!
//! ```text
//! loss = r * ||v_plus - v||^2 + (1 - r) * ||v_minus - v||^2
//! v_plus  = (1 - beta) * v_old + beta * v_model
//! v_minus = (1 + beta) * v_old - beta * v_model
//! ```
//!
//! Both branch losses are independent of the advantage; the advantage enters
//! only through the affine map to `r`. That affinity is load-bearing: a convex
//! combination of per-reward gradients equals one gradient evaluated at the
//! combined coefficient, which is what makes amortized balancing exact.
//!
//! Gradients are hand-derived reverse-mode (no autodiff); every path is gated
//! by central finite-difference tests.
//!
//! # Checkpoint format
//!
//! Little-endian throughout:
//!
//! ```text
//! bytes 0..8   magic "VELMODEL"
//! u32          format version (1)
//! u32          state_dim
//! u32          num_conditions
//! u32          number of hidden layers
//! u32 * n      hidden layer widths
//! u64          parameter count
//! f64 * count  flat parameters
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::advantage::{advantage_to_r, AdvantageMatrix, InterpolationCoefficient};
use crate::error::{Error, Result};
use crate::gradient::GradientVector;

const CHECKPOINT_MAGIC: &[u8; 8] = b"VELMODEL";
const CHECKPOINT_VERSION: u32 = 1;

/// Architecture of the velocity model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub state_dim: usize,
    pub num_conditions: usize,
    pub hidden_sizes: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            state_dim: 2,
            num_conditions: 4,
            hidden_sizes: vec![32, 32],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::Parameter("state_dim must be >= 1".into()));
        }
        if self.num_conditions == 0 {
            return Err(Error::Parameter("num_conditions must be >= 1".into()));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Parameter("hidden layer width must be >= 1".into()));
        }
        Ok(())
    }

    /// Input feature width: state, time, one-hot condition.
    pub fn input_dim(&self) -> usize {
        self.state_dim + 1 + self.num_conditions
    }

    /// (in, out) per weight layer, hidden layers then the linear output layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_sizes.len() + 1);
        let mut prev = self.input_dim();
        for &h in &self.hidden_sizes {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.state_dim));
        dims
    }

    /// MLP weights and biases, followed by the per-condition output-bias
    /// table (`num_conditions x state_dim`) and the linear state-feedback
    /// matrix (`state_dim x state_dim`).
    pub fn param_count(&self) -> usize {
        self.mlp_param_count()
            + self.num_conditions * self.state_dim
            + self.state_dim * self.state_dim
    }

    fn mlp_param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| i * o + o).sum()
    }

    /// Offset of the per-condition output-bias table in the flat parameters.
    pub fn condition_bias_offset(&self) -> usize {
        self.mlp_param_count()
    }

    /// Offset of the linear state-feedback matrix in the flat parameters.
    pub fn state_feedback_offset(&self) -> usize {
        self.mlp_param_count() + self.num_conditions * self.state_dim
    }
}

/// Offsets of one weight layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub weight_offset: usize,
    pub bias_offset: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Velocity model: a small tanh MLP plus an affine bypass,
///
/// ```text
/// v(x, t, c) = mlp(x, t, onehot(c)) + bias[c] + feedback * x
/// ```
///
/// The parameter layout is, per MLP layer: row-major weights `(out x in)`,
/// then biases `(out)`; after the last layer come the condition-bias table
/// (`num_conditions x state_dim`, row-major) and the state-feedback matrix
/// (`state_dim x state_dim`, row-major). Gradients use the identical layout,
/// so a parameter index means the same thing everywhere downstream.
///
/// The affine bypass carries the linear part of the field exactly: the
/// condition bias places each class's generation mode, and the feedback
/// matrix expresses uniform expansion or contraction of the flow around it.
/// Distinct classes can then start from distinct, concentrated modes, the
/// way distinct prompts do for a pretrained generator, while the MLP learns
/// the shape on top.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityModel {
    config: ModelConfig,
    params: Vec<f64>,
}

impl VelocityModel {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let n = config.param_count();
        Ok(Self {
            config,
            params: vec![0.0; n],
        })
    }

    /// Uniform init scaled by `1/sqrt(fan_in)` per layer; layer biases and
    /// the condition-bias table start at zero.
    pub fn random_init(config: ModelConfig, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; config.param_count()];
        let mut offset = 0;
        for (in_dim, out_dim) in config.layer_dims() {
            let scale = 1.0 / (in_dim as f64).sqrt();
            for w in params.iter_mut().skip(offset).take(in_dim * out_dim) {
                *w = (rng.random::<f64>() * 2.0 - 1.0) * scale;
            }
            offset += in_dim * out_dim + out_dim;
        }
        Ok(Self { config, params })
    }

    /// [`random_init`](Self::random_init) with the affine bypass set up so
    /// that condition `c` generates around its own mode: the condition-bias
    /// table carries the per-condition velocity anchors and the feedback
    /// matrix is `-contraction * I`, which concentrates the flow around each
    /// mode (integrating `dx = (a - g x) dt` over unit time shrinks the noise
    /// scale by `exp(-g)`).
    pub fn random_init_anchored(
        config: ModelConfig,
        seed: u64,
        anchors: &[Vec<f64>],
        contraction: f64,
    ) -> Result<Self> {
        if anchors.len() != config.num_conditions {
            return Err(Error::Dimension(format!(
                "{} anchors for {} conditions",
                anchors.len(),
                config.num_conditions
            )));
        }
        if !contraction.is_finite() || contraction < 0.0 {
            return Err(Error::Parameter(format!(
                "contraction must be finite and >= 0, got {contraction}"
            )));
        }
        let mut model = Self::random_init(config, seed)?;
        let d = model.config.state_dim;
        let offset = model.config.condition_bias_offset();
        for (c, anchor) in anchors.iter().enumerate() {
            if anchor.len() != d {
                return Err(Error::Dimension(format!(
                    "anchor {c} has length {}, state_dim is {d}",
                    anchor.len()
                )));
            }
            for (j, &a) in anchor.iter().enumerate() {
                if !a.is_finite() {
                    return Err(Error::Numeric("non-finite anchor".into()));
                }
                model.params[offset + c * d + j] = a;
            }
        }
        let feedback = model.config.state_feedback_offset();
        for j in 0..d {
            model.params[feedback + j * d + j] = -contraction;
        }
        Ok(model)
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::Dimension(format!(
                "{} params for an architecture needing {}",
                params.len(),
                config.param_count()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn layer_layouts(&self) -> Vec<LayerLayout> {
        let mut layouts = Vec::new();
        let mut offset = 0;
        for (in_dim, out_dim) in self.config.layer_dims() {
            layouts.push(LayerLayout {
                weight_offset: offset,
                bias_offset: offset + in_dim * out_dim,
                in_dim,
                out_dim,
            });
            offset += in_dim * out_dim + out_dim;
        }
        layouts
    }

    fn features(&self, x: &[f64], t: f64, condition: u32) -> Result<Vec<f64>> {
        if x.len() != self.config.state_dim {
            return Err(Error::Dimension(format!(
                "state has length {}, model expects {}",
                x.len(),
                self.config.state_dim
            )));
        }
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite model input".into()));
        }
        if condition as usize >= self.config.num_conditions {
            return Err(Error::Parameter(format!(
                "condition {condition} out of range (< {})",
                self.config.num_conditions
            )));
        }
        let mut f = Vec::with_capacity(self.config.input_dim());
        f.extend_from_slice(x);
        f.push(t);
        let mut onehot = vec![0.0; self.config.num_conditions];
        onehot[condition as usize] = 1.0;
        f.extend_from_slice(&onehot);
        Ok(f)
    }

    /// Forward pass storing the input to every weight layer (hidden inputs
    /// are post-tanh activations, which is all backprop needs).
    fn forward_trace(
        &self,
        x: &[f64],
        t: f64,
        condition: u32,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let layouts = self.layer_layouts();
        let mut inputs = Vec::with_capacity(layouts.len());
        let mut cur = self.features(x, t, condition)?;
        let last = layouts.len() - 1;
        for (l, layout) in layouts.iter().enumerate() {
            let mut out = vec![0.0; layout.out_dim];
            for i in 0..layout.out_dim {
                let row = layout.weight_offset + i * layout.in_dim;
                let mut z = self.params[layout.bias_offset + i];
                for j in 0..layout.in_dim {
                    z += self.params[row + j] * cur[j];
                }
                out[i] = if l < last { z.tanh() } else { z };
            }
            inputs.push(cur);
            cur = out;
        }
        let d = self.config.state_dim;
        let bias = self.config.condition_bias_offset() + condition as usize * d;
        let feedback = self.config.state_feedback_offset();
        for (j, v) in cur.iter_mut().enumerate() {
            *v += self.params[bias + j];
            for (i, &xi) in x.iter().enumerate() {
                *v += self.params[feedback + j * d + i] * xi;
            }
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite model output".into()));
        }
        Ok((cur, inputs))
    }

    /// Evaluates the velocity field. Deterministic and smooth in the
    /// parameters.
    pub fn forward_velocity(&self, x: &[f64], t: f64, condition: u32) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x, t, condition)?.0)
    }

    /// Accumulates `d(loss)/d(params)` into `grad` given `d(loss)/d(output)`
    /// and the layer inputs recorded by `forward_trace`.
    fn accumulate_param_grad(
        &self,
        inputs: &[Vec<f64>],
        d_output: &[f64],
        condition: u32,
        grad: &mut [f64],
    ) {
        let d = self.config.state_dim;
        let bias = self.config.condition_bias_offset() + condition as usize * d;
        let feedback = self.config.state_feedback_offset();
        // the state block of the first layer's input is x itself
        let x = &inputs[0][..d];
        for (j, dj) in d_output.iter().enumerate() {
            grad[bias + j] += dj;
            for (i, &xi) in x.iter().enumerate() {
                grad[feedback + j * d + i] += dj * xi;
            }
        }
        let layouts = self.layer_layouts();
        let mut delta = d_output.to_vec();
        for (l, layout) in layouts.iter().enumerate().rev() {
            let input = &inputs[l];
            for i in 0..layout.out_dim {
                let row = layout.weight_offset + i * layout.in_dim;
                let di = delta[i];
                for j in 0..layout.in_dim {
                    grad[row + j] += di * input[j];
                }
                grad[layout.bias_offset + i] += di;
            }
            if l > 0 {
                let mut d_input = vec![0.0; layout.in_dim];
                for i in 0..layout.out_dim {
                    let row = layout.weight_offset + i * layout.in_dim;
                    let di = delta[i];
                    for j in 0..layout.in_dim {
                        d_input[j] += di * self.params[row + j];
                    }
                }
                // input of this layer is a tanh activation
                for (dj, &a) in d_input.iter_mut().zip(input.iter()) {
                    *dj *= 1.0 - a * a;
                }
                delta = d_input;
            }
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.config.state_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.config.num_conditions as u32).to_le_bytes());
        buf.extend_from_slice(&(self.config.hidden_sizes.len() as u32).to_le_bytes());
        for &h in &self.config.hidden_sizes {
            buf.extend_from_slice(&(h as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for &p in &self.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
            if *cursor + n > bytes.len() {
                return Err(Error::Config("truncated checkpoint".into()));
            }
            let s = &bytes[*cursor..*cursor + n];
            *cursor += n;
            Ok(s)
        };
        if take(&mut cursor, 8)? != CHECKPOINT_MAGIC {
            return Err(Error::Config("bad checkpoint magic".into()));
        }
        let read_u32 = |cursor: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(cursor, 4)?.try_into().unwrap()))
        };
        let version = read_u32(&mut cursor)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let state_dim = read_u32(&mut cursor)? as usize;
        let num_conditions = read_u32(&mut cursor)? as usize;
        let num_hidden = read_u32(&mut cursor)? as usize;
        let mut hidden_sizes = Vec::with_capacity(num_hidden);
        for _ in 0..num_hidden {
            hidden_sizes.push(read_u32(&mut cursor)? as usize);
        }
        let count = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
        let config = ModelConfig {
            state_dim,
            num_conditions,
            hidden_sizes,
        };
        if count != config.param_count() {
            return Err(Error::Config(format!(
                "checkpoint has {count} params, architecture needs {}",
                config.param_count()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(f64::from_le_bytes(
                take(&mut cursor, 8)?.try_into().unwrap(),
            ));
        }
        if cursor != bytes.len() {
            return Err(Error::Config("trailing bytes after checkpoint".into()));
        }
        Self::from_params(config, params)
    }
}

/// One training pair plus the rollout-time snapshot's prediction at it.
#[derive(Debug, Clone, PartialEq)]
pub struct NftBatchElement {
    pub x_t: Vec<f64>,
    /// Strictly inside (0, 1).
    pub t: f64,
    /// Ground-truth velocity target.
    pub target_v: Vec<f64>,
    /// Snapshot prediction at `(x_t, t, condition)`, frozen at rollout time.
    pub v_old: Vec<f64>,
    pub condition: u32,
    /// Index of the rollout sample this pair was built from.
    pub source_index: usize,
}

/// A validated batch of training pairs with a common state dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct NftBatch {
    elements: Vec<NftBatchElement>,
    state_dim: usize,
}

impl NftBatch {
    pub fn new(elements: Vec<NftBatchElement>, state_dim: usize) -> Result<Self> {
        for (i, e) in elements.iter().enumerate() {
            if e.x_t.len() != state_dim
                || e.target_v.len() != state_dim
                || e.v_old.len() != state_dim
            {
                return Err(Error::Dimension(format!(
                    "batch element {i} does not match state_dim {state_dim}"
                )));
            }
            let finite = e
                .x_t
                .iter()
                .chain(&e.target_v)
                .chain(&e.v_old)
                .all(|v| v.is_finite())
                && e.t.is_finite();
            if !finite {
                return Err(Error::Numeric(format!(
                    "non-finite tensor in batch element {i}"
                )));
            }
            if !(e.t > 0.0 && e.t < 1.0) {
                return Err(Error::Parameter(format!(
                    "t = {} in batch element {i} is not strictly inside (0, 1)",
                    e.t
                )));
            }
        }
        Ok(Self {
            elements,
            state_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn elements(&self) -> &[NftBatchElement] {
        &self.elements
    }

    /// Contiguous sub-batch (used for worker shards).
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.elements.len() {
            return Err(Error::Dimension(format!(
                "slice {start}..{} out of {} elements",
                start + len,
                self.elements.len()
            )));
        }
        Ok(Self {
            elements: self.elements[start..start + len].to_vec(),
            state_dim: self.state_dim,
        })
    }
}

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NftLossConfig {
    /// Mixing strength of the model prediction into the two branches.
    pub beta: f64,
    /// Advantage clamp scale for the interpolation coefficient.
    pub a_max: f64,
    /// Weight of the reference-regularization term in the final update.
    pub kl_weight: f64,
}

impl Default for NftLossConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            a_max: 5.0,
            kl_weight: 0.01,
        }
    }
}

impl NftLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::Parameter(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if !(self.a_max > 0.0) {
            return Err(Error::Parameter(format!(
                "a_max must be > 0, got {}",
                self.a_max
            )));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(Error::Parameter(format!(
                "kl_weight must be >= 0, got {}",
                self.kl_weight
            )));
        }
        Ok(())
    }
}

fn check_rs(batch: &NftBatch, rs: &[InterpolationCoefficient]) -> Result<()> {
    if rs.len() != batch.len() {
        return Err(Error::Dimension(format!(
            "{} interpolation coefficients for {} batch elements",
            rs.len(),
            batch.len()
        )));
    }
    for (i, rc) in rs.iter().enumerate() {
        if !(0.0..=1.0).contains(&rc.r) || !rc.r.is_finite() {
            return Err(Error::Parameter(format!(
                "r = {} outside [0, 1] at batch element {i}",
                rc.r
            )));
        }
    }
    Ok(())
}

/// Mean over the batch of the interpolated two-branch velocity loss.
pub fn nft_loss(
    model: &VelocityModel,
    batch: &NftBatch,
    rs: &[InterpolationCoefficient],
    config: &NftLossConfig,
) -> Result<f64> {
    config.validate()?;
    check_rs(batch, rs)?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty training batch".into()));
    }
    let beta = config.beta;
    let mut total = 0.0;
    for (e, rc) in batch.elements().iter().zip(rs) {
        let v_model = model.forward_velocity(&e.x_t, e.t, e.condition)?;
        let mut pos = 0.0;
        let mut neg = 0.0;
        for j in 0..v_model.len() {
            let v_plus = (1.0 - beta) * e.v_old[j] + beta * v_model[j];
            let v_minus = (1.0 + beta) * e.v_old[j] - beta * v_model[j];
            pos += (v_plus - e.target_v[j]).powi(2);
            neg += (v_minus - e.target_v[j]).powi(2);
        }
        total += rc.r * pos + (1.0 - rc.r) * neg;
    }
    Ok(total / batch.len() as f64)
}

/// Exact reverse-mode gradient of [`nft_loss`] with respect to the parameters.
///
/// Elements are reduced in batch order, so the result is deterministic.
pub fn nft_gradient(
    model: &VelocityModel,
    batch: &NftBatch,
    rs: &[InterpolationCoefficient],
    config: &NftLossConfig,
) -> Result<GradientVector> {
    config.validate()?;
    check_rs(batch, rs)?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty training batch".into()));
    }
    let beta = config.beta;
    let inv_b = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; model.param_count()];
    for (e, rc) in batch.elements().iter().zip(rs) {
        let (v_model, trace) = model.forward_trace(&e.x_t, e.t, e.condition)?;
        let mut d_out = vec![0.0; v_model.len()];
        for j in 0..v_model.len() {
            let v_plus = (1.0 - beta) * e.v_old[j] + beta * v_model[j];
            let v_minus = (1.0 + beta) * e.v_old[j] - beta * v_model[j];
            // d/dv_model of r*(v_plus - v)^2 + (1-r)*(v_minus - v)^2
            d_out[j] = 2.0
                * beta
                * inv_b
                * (rc.r * (v_plus - e.target_v[j]) - (1.0 - rc.r) * (v_minus - e.target_v[j]));
        }
        model.accumulate_param_grad(&trace, &d_out, e.condition, &mut grad);
    }
    Ok(GradientVector::from_vec(grad))
}

/// One gradient per reward column, all on the same batch; column `k` is the
/// gradient at the coefficients derived from advantage column `k`.
pub fn per_reward_gradients(
    model: &VelocityModel,
    batch: &NftBatch,
    advantages: &AdvantageMatrix,
    config: &NftLossConfig,
) -> Result<Vec<GradientVector>> {
    if advantages.rows() != batch.len() {
        return Err(Error::Dimension(format!(
            "{} advantage rows for {} batch elements",
            advantages.rows(),
            batch.len()
        )));
    }
    let mut out = Vec::with_capacity(advantages.num_rewards());
    for k in 0..advantages.num_rewards() {
        let rs: Vec<InterpolationCoefficient> = (0..batch.len())
            .map(|i| advantage_to_r(advantages.entry(i, k), config.a_max))
            .collect::<Result<_>>()?;
        out.push(nft_gradient(model, batch, &rs, config)?);
    }
    Ok(out)
}

/// Gradient of the reference-discrepancy surrogate
/// `mean ||v_model - v_ref||^2` over the batch.
///
/// Exact divergence between flow policies is intractable; this velocity
/// discrepancy is the desk-scale stand-in and is documented as such.
pub fn kl_surrogate_gradient(
    model: &VelocityModel,
    ref_model: &VelocityModel,
    batch: &NftBatch,
) -> Result<GradientVector> {
    if model.config() != ref_model.config() {
        return Err(Error::Dimension(
            "reference model architecture differs from the policy".into(),
        ));
    }
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty training batch".into()));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; model.param_count()];
    for e in batch.elements() {
        let (v_model, trace) = model.forward_trace(&e.x_t, e.t, e.condition)?;
        let v_ref = ref_model.forward_velocity(&e.x_t, e.t, e.condition)?;
        let d_out: Vec<f64> = v_model
            .iter()
            .zip(&v_ref)
            .map(|(m, r)| 2.0 * inv_b * (m - r))
            .collect();
        model.accumulate_param_grad(&trace, &d_out, e.condition, &mut grad);
    }
    Ok(GradientVector::from_vec(grad))
}
