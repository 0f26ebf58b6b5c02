//! Actor-critic function approximator with exact manual gradients.
//!
//! The observation's throughput window runs through a 1D convolution
//! (stride 1, ReLU); the conv features are concatenated with the ages and
//! the last transmission time and fed to a dense ReLU hidden layer. Two
//! heads follow: a softmax policy head with one output per sensor and a
//! single linear value output.
//!
//! Parameters live in one flat `f64` vector so updates, checkpointing and
//! finite-difference checks stay trivial. `backward` returns separate
//! full-length actor and critic gradients; shared layers receive both
//! contributions, each scaled by its own learning rate at update time.

use crate::env::Observation;
use crate::policy::ProbVector;
use crate::{Error, Result, Rng};
use rand::Rng as _;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::io::{Read as _, Write as _};
use std::path::Path;

/// Network shape. Conv stride is fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArch {
    pub n_sensors: usize,
    pub history_len: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub hidden_units: usize,
}

impl NetArch {
    /// Default shape: 128 conv filters of width 8, 256 hidden units.
    pub fn new(n_sensors: usize, history_len: usize) -> Self {
        NetArch {
            n_sensors,
            history_len,
            conv_filters: 128,
            conv_kernel: 8,
            hidden_units: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sensors < 2 {
            return Err(Error::Config(format!(
                "arch.n_sensors must be >= 2, got {}",
                self.n_sensors
            )));
        }
        if self.conv_filters < 1 || self.conv_kernel < 1 || self.hidden_units < 1 {
            return Err(Error::Config(
                "arch.conv_filters, arch.conv_kernel and arch.hidden_units must be >= 1".into(),
            ));
        }
        if self.history_len < self.conv_kernel {
            return Err(Error::Config(format!(
                "arch.history_len ({}) must be >= arch.conv_kernel ({})",
                self.history_len, self.conv_kernel
            )));
        }
        Ok(())
    }

    /// Positions the kernel can take: `history_len - conv_kernel + 1`.
    pub fn conv_out_len(&self) -> usize {
        self.history_len - self.conv_kernel + 1
    }

    /// Flattened conv output width.
    pub fn conv_features(&self) -> usize {
        self.conv_filters * self.conv_out_len()
    }

    /// Hidden-layer input width: conv features plus ages plus last_tx.
    pub fn hidden_input(&self) -> usize {
        self.conv_features() + self.n_sensors + 1
    }

    /// Expected observation length.
    pub fn obs_len(&self) -> usize {
        self.n_sensors + 1 + self.history_len
    }

    pub fn n_params(&self) -> usize {
        let l = Layout::new(self);
        l.total
    }
}

/// Offsets of each parameter block in the flat vector. Weight matrices are
/// row-major `[out][in]`; conv filters are filter-major `[filter][tap]`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    conv_w: usize,
    conv_b: usize,
    hid_w: usize,
    hid_b: usize,
    pi_w: usize,
    pi_b: usize,
    v_w: usize,
    v_b: usize,
    total: usize,
}

impl Layout {
    fn new(arch: &NetArch) -> Self {
        let conv_w = 0;
        let conv_b = conv_w + arch.conv_filters * arch.conv_kernel;
        let hid_w = conv_b + arch.conv_filters;
        let hid_b = hid_w + arch.hidden_input() * arch.hidden_units;
        let pi_w = hid_b + arch.hidden_units;
        let pi_b = pi_w + arch.hidden_units * arch.n_sensors;
        let v_w = pi_b + arch.n_sensors;
        let v_b = v_w + arch.hidden_units;
        Layout {
            conv_w,
            conv_b,
            hid_w,
            hid_b,
            pi_w,
            pi_b,
            v_w,
            v_b,
            total: v_b + 1,
        }
    }
}

/// All network weights: shared conv/hidden layers, the policy head and the
/// value head, stored as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    arch: NetArch,
    w: Vec<f64>,
}

impl NetParams {
    pub fn zeros(arch: NetArch) -> Result<Self> {
        arch.validate()?;
        let n = arch.n_params();
        Ok(NetParams {
            arch,
            w: vec![0.0; n],
        })
    }

    pub fn arch(&self) -> &NetArch {
        &self.arch
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|v| v.is_finite())
    }

    /// Serializes arch and parameters to the versioned binary checkpoint
    /// format. Round-trips bit-exactly.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 + 5 * 4 + 8 + 8 * self.w.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for field in [
            self.arch.n_sensors,
            self.arch.history_len,
            self.arch.conv_filters,
            self.arch.conv_kernel,
            self.arch.hidden_units,
        ] {
            out.extend_from_slice(&(field as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.w.len() as u64).to_le_bytes());
        for v in &self.w {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut cursor, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = read_u32(&mut cursor)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let arch = NetArch {
            n_sensors: read_u32(&mut cursor)? as usize,
            history_len: read_u32(&mut cursor)? as usize,
            conv_filters: read_u32(&mut cursor)? as usize,
            conv_kernel: read_u32(&mut cursor)? as usize,
            hidden_units: read_u32(&mut cursor)? as usize,
        };
        arch.validate()
            .map_err(|e| Error::Checkpoint(format!("invalid arch in checkpoint: {e}")))?;
        let count = read_u64(&mut cursor)? as usize;
        if count != arch.n_params() {
            return Err(Error::Checkpoint(format!(
                "parameter count {count} does not match arch ({})",
                arch.n_params()
            )));
        }
        let mut w = Vec::with_capacity(count);
        for _ in 0..count {
            let mut buf = [0u8; 8];
            read_exact(&mut cursor, &mut buf)?;
            w.push(f64::from_le_bytes(buf));
        }
        if !cursor.is_empty() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after parameters",
                cursor.len()
            )));
        }
        Ok(NetParams { arch, w })
    }

    /// Writes the checkpoint atomically (temp file + rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut file = std::fs::File::create(&tmp)?;
            file.write_all(&self.to_bytes())?;
            file.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"AOIS";
const CHECKPOINT_VERSION: u32 = 1;

fn read_exact(cursor: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    if cursor.len() < buf.len() {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    buf.copy_from_slice(&cursor[..buf.len()]);
    *cursor = &cursor[buf.len()..];
    Ok(())
}

fn read_u32(cursor: &mut &[u8]) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(cursor, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(cursor: &mut &[u8]) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(cursor, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Fan-in-scaled uniform initialization: each weight block draws from
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases start at zero.
/// Deterministic for a given seed.
pub fn init_params(arch: &NetArch, seed: u64) -> Result<NetParams> {
    arch.validate()?;
    let layout = Layout::new(arch);
    let mut params = NetParams::zeros(*arch)?;
    let mut rng = Rng::seed_from_u64(seed);
    let mut fill = |w: &mut [f64], start: usize, len: usize, fan_in: usize| {
        let scale = 1.0 / (fan_in as f64).sqrt();
        for v in &mut w[start..start + len] {
            *v = rng.gen_range(-scale..scale);
        }
    };
    let w = params.w.as_mut_slice();
    fill(
        w,
        layout.conv_w,
        arch.conv_filters * arch.conv_kernel,
        arch.conv_kernel,
    );
    fill(
        w,
        layout.hid_w,
        arch.hidden_input() * arch.hidden_units,
        arch.hidden_input(),
    );
    fill(
        w,
        layout.pi_w,
        arch.hidden_units * arch.n_sensors,
        arch.hidden_units,
    );
    fill(w, layout.v_w, arch.hidden_units, arch.hidden_units);
    Ok(params)
}

/// Numerically stable softmax: exponents are taken after subtracting the
/// largest logit.
pub fn softmax(logits: &[f64]) -> ProbVector {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    ProbVector::new(exp.into_iter().map(|e| e / sum).collect())
        .expect("softmax of finite logits is a valid distribution")
}

/// Policy entropy `-sum p ln p`, with `0 ln 0 := 0`.
pub fn entropy(probs: &ProbVector) -> f64 {
    probs
        .probs()
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

/// Activations cached by `forward` for the matching `backward` call.
#[derive(Debug, Clone)]
struct Cache {
    tput: Vec<f64>,
    conv_pre: Vec<f64>,
    hidden_in: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden_act: Vec<f64>,
}

/// Forward output: action distribution, state value and the cached
/// activations backprop needs.
#[derive(Debug, Clone)]
pub struct ForwardOut {
    pub probs: ProbVector,
    pub value: f64,
    cache: Cache,
}

impl ForwardOut {
    /// True when any ReLU pre-activation lies within `margin` of zero.
    /// Finite-difference gradient checks are unreliable on such inputs.
    pub fn near_kink(&self, margin: f64) -> bool {
        self.cache
            .conv_pre
            .iter()
            .chain(&self.cache.hidden_pre)
            .any(|z| z.abs() < margin)
    }
}

/// Full forward pass. Pure: identical inputs give identical outputs.
pub fn forward(params: &NetParams, obs: &Observation) -> Result<ForwardOut> {
    let arch = &params.arch;
    if obs.len() != arch.obs_len() || obs.n_sensors() != arch.n_sensors {
        return Err(Error::Dimension(format!(
            "observation length {} does not match arch (expected {} = {} ages + 1 + {} throughputs)",
            obs.len(),
            arch.obs_len(),
            arch.n_sensors,
            arch.history_len
        )));
    }
    let layout = Layout::new(arch);
    let w = &params.w;
    let tput = obs.throughputs();
    let out_len = arch.conv_out_len();

    // Conv over the throughput window, filter-major flattening.
    let mut conv_pre = vec![0.0; arch.conv_features()];
    for f in 0..arch.conv_filters {
        let weights = &w[layout.conv_w + f * arch.conv_kernel..][..arch.conv_kernel];
        let bias = w[layout.conv_b + f];
        for t in 0..out_len {
            let mut z = bias;
            for (k, wk) in weights.iter().enumerate() {
                z += wk * tput[t + k];
            }
            conv_pre[f * out_len + t] = z;
        }
    }

    // Hidden input: ReLU conv features, then ages, then last_tx.
    let mut hidden_in = Vec::with_capacity(arch.hidden_input());
    hidden_in.extend(conv_pre.iter().map(|z| z.max(0.0)));
    hidden_in.extend_from_slice(obs.ages());
    hidden_in.push(obs.last_tx());

    // Dense weights are row-major `[out][in]` so each unit reads a
    // contiguous slice.
    let hidden_input = arch.hidden_input();
    let mut hidden_pre = vec![0.0; arch.hidden_units];
    for (u, pre) in hidden_pre.iter_mut().enumerate() {
        let row = &w[layout.hid_w + u * hidden_input..][..hidden_input];
        let mut z = w[layout.hid_b + u];
        for (x, wk) in hidden_in.iter().zip(row) {
            z += x * wk;
        }
        *pre = z;
    }
    let hidden_act: Vec<f64> = hidden_pre.iter().map(|z| z.max(0.0)).collect();

    let mut logits = vec![0.0; arch.n_sensors];
    for (a, logit) in logits.iter_mut().enumerate() {
        let row = &w[layout.pi_w + a * arch.hidden_units..][..arch.hidden_units];
        let mut z = w[layout.pi_b + a];
        for (h, wk) in hidden_act.iter().zip(row) {
            z += h * wk;
        }
        *logit = z;
    }
    let mut value = w[layout.v_b];
    for (u, h) in hidden_act.iter().enumerate() {
        value += h * w[layout.v_w + u];
    }

    Ok(ForwardOut {
        probs: softmax(&logits),
        value,
        cache: Cache {
            tput: tput.to_vec(),
            conv_pre,
            hidden_in,
            hidden_pre,
            hidden_act,
        },
    })
}

/// Separate actor and critic gradients over the full flat parameter vector.
/// Head coordinates are exclusive to their side; conv and hidden
/// coordinates carry each side's contribution.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
}

impl Gradients {
    pub fn zeros(n_params: usize) -> Self {
        Gradients {
            actor: vec![0.0; n_params],
            critic: vec![0.0; n_params],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.actor.iter().chain(&self.critic).all(|v| v.is_finite())
    }
}

/// Per-step gradients for the actor objective
/// `log pi(a|s) * advantage + entropy_weight * H(pi(s))` (ascent direction)
/// and the critic squared TD error (descent direction: adding
/// `critic_lr * critic` moves the value toward the TD target).
pub fn backward(
    params: &NetParams,
    fwd: &ForwardOut,
    action: usize,
    advantage: f64,
    td_error: f64,
    entropy_weight: f64,
) -> Result<Gradients> {
    let mut grads = Gradients::zeros(params.w.len());
    accumulate_backward(params, fwd, action, advantage, td_error, entropy_weight, &mut grads)?;
    Ok(grads)
}

/// `backward` accumulating into an existing gradient pair; rollout updates
/// sum per-step gradients this way without reallocating.
pub fn accumulate_backward(
    params: &NetParams,
    fwd: &ForwardOut,
    action: usize,
    advantage: f64,
    td_error: f64,
    entropy_weight: f64,
    grads: &mut Gradients,
) -> Result<()> {
    let arch = &params.arch;
    let cache = &fwd.cache;
    if cache.hidden_in.len() != arch.hidden_input()
        || cache.hidden_act.len() != arch.hidden_units
        || fwd.probs.len() != arch.n_sensors
    {
        return Err(Error::Usage(
            "forward cache does not match the network architecture".into(),
        ));
    }
    if action >= arch.n_sensors {
        return Err(Error::Usage(format!(
            "action {action} out of range for {} policy outputs",
            arch.n_sensors
        )));
    }
    if grads.actor.len() != params.w.len() || grads.critic.len() != params.w.len() {
        return Err(Error::Usage("gradient buffers do not match parameters".into()));
    }
    let layout = Layout::new(arch);
    let w = &params.w;
    let probs = fwd.probs.probs();
    let ent = entropy(&fwd.probs);

    // d/dlogit_j of [log pi(a) * advantage] = advantage * (1{j=a} - p_j);
    // d/dlogit_j of H = -p_j (ln p_j + H).
    let mut d_logits = vec![0.0; arch.n_sensors];
    for (j, d) in d_logits.iter_mut().enumerate() {
        let indicator = if j == action { 1.0 } else { 0.0 };
        let d_logp = advantage * (indicator - probs[j]);
        let d_ent = if probs[j] > 0.0 {
            -probs[j] * (probs[j].ln() + ent)
        } else {
            0.0
        };
        *d = d_logp + entropy_weight * d_ent;
    }

    // Policy head.
    let mut d_hidden_actor = vec![0.0; arch.hidden_units];
    for (j, d) in d_logits.iter().enumerate() {
        let row_off = layout.pi_w + j * arch.hidden_units;
        for (u, h) in cache.hidden_act.iter().enumerate() {
            grads.actor[row_off + u] += h * d;
        }
        for (dh, wk) in d_hidden_actor.iter_mut().zip(&w[row_off..]) {
            *dh += wk * d;
        }
        grads.actor[layout.pi_b + j] += d;
    }

    // Value head: d/dV of -(target - V)^2 is 2 * td_error.
    let d_value = 2.0 * td_error;
    let mut d_hidden_critic = vec![0.0; arch.hidden_units];
    for (u, h) in cache.hidden_act.iter().enumerate() {
        grads.critic[layout.v_w + u] += d_value * h;
        d_hidden_critic[u] = d_value * w[layout.v_w + u];
    }
    grads.critic[layout.v_b] += d_value;

    backprop_shared(arch, &layout, w, cache, &d_hidden_actor, &mut grads.actor);
    backprop_shared(arch, &layout, w, cache, &d_hidden_critic, &mut grads.critic);
    Ok(())
}

/// Propagates a hidden-activation delta through the dense layer and the
/// conv layer, accumulating into one gradient vector.
fn backprop_shared(
    arch: &NetArch,
    layout: &Layout,
    w: &[f64],
    cache: &Cache,
    d_hidden: &[f64],
    out: &mut [f64],
) {
    let conv_features = arch.conv_features();
    let hidden_input = arch.hidden_input();
    let mut d_conv_act = vec![0.0; conv_features];
    for (u, d) in d_hidden.iter().enumerate() {
        if cache.hidden_pre[u] <= 0.0 || *d == 0.0 {
            continue;
        }
        let dz = *d;
        let row_off = layout.hid_w + u * hidden_input;
        out[layout.hid_b + u] += dz;
        for (i, x) in cache.hidden_in.iter().enumerate() {
            out[row_off + i] += x * dz;
        }
        for (dca, wk) in d_conv_act.iter_mut().zip(&w[row_off..]) {
            *dca += wk * dz;
        }
    }
    let out_len = arch.conv_out_len();
    for f in 0..arch.conv_filters {
        for t in 0..out_len {
            let idx = f * out_len + t;
            if cache.conv_pre[idx] <= 0.0 {
                continue;
            }
            let dz = d_conv_act[idx];
            out[layout.conv_b + f] += dz;
            for k in 0..arch.conv_kernel {
                out[layout.conv_w + f * arch.conv_kernel + k] += dz * cache.tput[t + k];
            }
        }
    }
}
