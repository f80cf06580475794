//! The gated convolutional autoencoder.
//!
//! Seven encoder layers over the channel schedule `1, r, r, r, 2r, 2r, 3r,
//! 4r`, mirrored by seven transposed-convolution decoder layers, with the
//! encoder layer outputs added onto the mirrored decoder inputs as skip
//! connections. Every layer is zero-padded in time so utterances keep their
//! duration; in frequency the default is valid (unpadded) convolution, which
//! takes a 257-bin input down to a height-2 bottleneck and matches the
//! 3..=255 bin range the frequency gate is defined on. The input layer's
//! feature maps and the maps entering the output layer are multiplied by
//! gate weights in `[0, 1]` produced by one of three generators: a
//! per-kernel logistic curve over frequency, a wide convolution over each
//! frame and its neighbours, or a recurrent scan over past frames.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{
    lstm_step, BnMode, ConvGeom, Graph, LstmParamNodes, NodeId, RunningStats,
};
use crate::dsp::F_BINS;
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
/// Encoder/decoder layer count.
pub const N_LAYERS: usize = 7;

/// Gate generator choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gating {
    None,
    FreqWise,
    Local,
    Temporal,
}

impl Gating {
    pub fn as_str(&self) -> &'static str {
        match self {
            Gating::None => "none",
            Gating::FreqWise => "freq_wise",
            Gating::Local => "local",
            Gating::Temporal => "temporal",
        }
    }
}

impl core::str::FromStr for Gating {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Gating::None),
            "freq_wise" => Ok(Gating::FreqWise),
            "local" => Ok(Gating::Local),
            "temporal" => Ok(Gating::Temporal),
            other => Err(Error::invalid(
                "gating",
                format!("unknown gating '{other}' (none|freq_wise|local|temporal)"),
            )),
        }
    }
}

/// Frequency padding policy. `Valid` reproduces the height-2 bottleneck;
/// `Same` keeps every map at 257 bins.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreqPadding {
    Valid,
    Same,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureConfig {
    pub rho: usize,
    pub gating: Gating,
    /// Hidden size of the temporal gate's LSTM.
    pub temporal_hidden: usize,
    /// Map temporal gate scores through a sigmoid instead of the hard clamp.
    pub temporal_sigmoid: bool,
    pub freq_padding: FreqPadding,
}

impl ArchitectureConfig {
    pub fn new(rho: usize, gating: Gating) -> Self {
        ArchitectureConfig {
            rho,
            gating,
            temporal_hidden: 128,
            temporal_sigmoid: false,
            freq_padding: FreqPadding::Valid,
        }
    }
}

/// Geometry of one layer; decoder entries describe the transposed op.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub has_bn_relu: bool,
}

impl LayerSpec {
    pub fn geom(&self) -> ConvGeom {
        ConvGeom::new(self.stride, self.pad)
    }
}

fn channel_schedule(rho: usize) -> [usize; 8] {
    [1, rho, rho, rho, 2 * rho, 2 * rho, 3 * rho, 4 * rho]
}

pub fn encoder_specs(cfg: &ArchitectureConfig) -> Vec<LayerSpec> {
    let ch = channel_schedule(cfg.rho);
    (0..N_LAYERS)
        .map(|i| {
            let k = if i < 3 { 5 } else { 3 };
            let pf = match cfg.freq_padding {
                FreqPadding::Valid => 0,
                FreqPadding::Same => (k - 1) / 2,
            };
            LayerSpec {
                in_ch: ch[i],
                out_ch: ch[i + 1],
                kernel: (k, k),
                stride: if i == 0 { (1, 1) } else { (2, 1) },
                pad: (pf, (k - 1) / 2),
                has_bn_relu: true,
            }
        })
        .collect()
}

pub fn decoder_specs(cfg: &ArchitectureConfig) -> Vec<LayerSpec> {
    let ch = channel_schedule(cfg.rho);
    let enc = encoder_specs(cfg);
    (0..N_LAYERS)
        .map(|d| {
            let mirror = enc[N_LAYERS - 1 - d];
            LayerSpec {
                in_ch: ch[N_LAYERS - d],
                out_ch: ch[N_LAYERS - 1 - d],
                kernel: mirror.kernel,
                stride: mirror.stride,
                pad: mirror.pad,
                has_bn_relu: d != N_LAYERS - 1,
            }
        })
        .collect()
}

/// One convolutional layer's trainables. Encoder kernels are
/// `[out, in, kf, kt]`; decoder (transposed) kernels `[in, out, kf, kt]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub gamma: Option<Tensor>,
    pub beta: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GateParams {
    None,
    /// Per-kernel logistic frequency curve; the pair is shared between the
    /// input-layer gate k and the output-layer gate k, so it adds exactly
    /// two scalars per kernel.
    FreqWise { alpha: Tensor, beta: Tensor },
    /// `2r` full-height kernels `[2r, 1, 257, 3]` over the noisy input.
    Local { kernel: Tensor, bias: Tensor },
    /// LSTM over input frames, projected to `2r` scores per frame.
    Temporal {
        lstm: LstmParams,
        proj_w: Tensor,
        proj_b: Tensor,
    },
}

/// All state of one network: trainables plus batch-norm running statistics
/// (encoder layers first, then the six normalized decoder layers).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ArchitectureConfig,
    pub encoder: Vec<ConvLayer>,
    pub decoder: Vec<ConvLayer>,
    pub gate: GateParams,
    pub running: Vec<RunningStats>,
}

fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, stream: &mut SeedStream) -> Tensor {
    let limit = crate::math::sqrt(6.0 / (fan_in + fan_out) as f64);
    Tensor::rand_uniform(shape, -limit, limit, stream)
}

/// Deterministic initialization from a seed. Convolution stacks are drawn
/// before gate parameters, so two configs differing only in gating share
/// their convolution initializations for the same seed.
pub fn build(config: &ArchitectureConfig, seed: u64) -> ModelParams {
    let mut stream = SeedStream::derived(seed, &[0x6d6f64]);
    let mut running = Vec::new();

    let mut make_stack = |specs: &[LayerSpec], transposed: bool, running: &mut Vec<RunningStats>| {
        specs
            .iter()
            .map(|s| {
                let (kf, kt) = s.kernel;
                let shape = if transposed {
                    [s.in_ch, s.out_ch, kf, kt]
                } else {
                    [s.out_ch, s.in_ch, kf, kt]
                };
                let fan_in = s.in_ch * kf * kt;
                let fan_out = s.out_ch * kf * kt;
                let kernel = xavier(&shape, fan_in, fan_out, &mut stream);
                let (gamma, beta) = if s.has_bn_relu {
                    running.push(RunningStats::new(s.out_ch));
                    (Some(Tensor::full(&[s.out_ch], 1.0)), Some(Tensor::zeros(&[s.out_ch])))
                } else {
                    (None, None)
                };
                ConvLayer {
                    kernel,
                    bias: Tensor::zeros(&[s.out_ch]),
                    gamma,
                    beta,
                }
            })
            .collect::<Vec<_>>()
    };

    let encoder = make_stack(&encoder_specs(config), false, &mut running);
    let decoder = make_stack(&decoder_specs(config), true, &mut running);

    let rho = config.rho;
    let gate = match config.gating {
        Gating::None => GateParams::None,
        // alpha 0, beta 2: gates start flat near 0.88, close to ungated
        Gating::FreqWise => GateParams::FreqWise {
            alpha: Tensor::zeros(&[rho]),
            beta: Tensor::full(&[rho], 2.0),
        },
        Gating::Local => GateParams::Local {
            kernel: Tensor::rand_uniform(&[2 * rho, 1, F_BINS, 3], -0.01, 0.01, &mut stream),
            bias: Tensor::full(&[2 * rho], 2.0),
        },
        Gating::Temporal => {
            let h = config.temporal_hidden;
            let limit = 1.0 / crate::math::sqrt(h as f64);
            let w_x = Tensor::rand_uniform(&[4 * h, F_BINS], -limit, limit, &mut stream);
            let w_h = Tensor::rand_uniform(&[4 * h, h], -limit, limit, &mut stream);
            let mut b = Tensor::zeros(&[4 * h]);
            // forget-gate bias 1 keeps early memory open
            for v in &mut b.data_mut()[h..2 * h] {
                *v = 1.0;
            }
            let proj_w = Tensor::rand_uniform(&[2 * rho, h], -0.01, 0.01, &mut stream);
            // clamp map: start strictly inside (0, 1) so gradient flows;
            // sigmoid map: start near 0.88 like the other variants
            let init = if config.temporal_sigmoid { 2.0 } else { 0.9 };
            GateParams::Temporal {
                lstm: LstmParams { w_x, w_h, b },
                proj_w,
                proj_b: Tensor::full(&[2 * rho], init),
            }
        }
    };

    ModelParams {
        config: config.clone(),
        encoder,
        decoder,
        gate,
        running,
    }
}

/// Number of trainable scalars (batch-norm running statistics excluded).
pub fn count_params(p: &ModelParams) -> usize {
    named_tensors(p).iter().map(|(_, t)| t.numel()).sum()
}

/// Trainable tensors with stable names, in the canonical order used by the
/// optimizer and the checkpoint format.
pub fn named_tensors(p: &ModelParams) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    for (prefix, stack) in [("enc", &p.encoder), ("dec", &p.decoder)] {
        for (i, layer) in stack.iter().enumerate() {
            out.push((format!("{prefix}{i}.kernel"), &layer.kernel));
            out.push((format!("{prefix}{i}.bias"), &layer.bias));
            if let Some(g) = &layer.gamma {
                out.push((format!("{prefix}{i}.gamma"), g));
            }
            if let Some(b) = &layer.beta {
                out.push((format!("{prefix}{i}.beta"), b));
            }
        }
    }
    match &p.gate {
        GateParams::None => {}
        GateParams::FreqWise { alpha, beta } => {
            out.push((String::from("gate.alpha"), alpha));
            out.push((String::from("gate.beta"), beta));
        }
        GateParams::Local { kernel, bias } => {
            out.push((String::from("gate.kernel"), kernel));
            out.push((String::from("gate.bias"), bias));
        }
        GateParams::Temporal { lstm, proj_w, proj_b } => {
            out.push((String::from("gate.lstm.w_x"), &lstm.w_x));
            out.push((String::from("gate.lstm.w_h"), &lstm.w_h));
            out.push((String::from("gate.lstm.b"), &lstm.b));
            out.push((String::from("gate.proj_w"), proj_w));
            out.push((String::from("gate.proj_b"), proj_b));
        }
    }
    out
}

/// Mutable view in the same order as [`named_tensors`].
pub fn named_tensors_mut(p: &mut ModelParams) -> Vec<(String, &mut Tensor)> {
    let mut out: Vec<(String, &mut Tensor)> = Vec::new();
    for (prefix, stack) in [("enc", &mut p.encoder), ("dec", &mut p.decoder)] {
        for (i, layer) in stack.iter_mut().enumerate() {
            out.push((format!("{prefix}{i}.kernel"), &mut layer.kernel));
            out.push((format!("{prefix}{i}.bias"), &mut layer.bias));
            if let Some(g) = &mut layer.gamma {
                out.push((format!("{prefix}{i}.gamma"), g));
            }
            if let Some(b) = &mut layer.beta {
                out.push((format!("{prefix}{i}.beta"), b));
            }
        }
    }
    match &mut p.gate {
        GateParams::None => {}
        GateParams::FreqWise { alpha, beta } => {
            out.push((String::from("gate.alpha"), alpha));
            out.push((String::from("gate.beta"), beta));
        }
        GateParams::Local { kernel, bias } => {
            out.push((String::from("gate.kernel"), kernel));
            out.push((String::from("gate.bias"), bias));
        }
        GateParams::Temporal { lstm, proj_w, proj_b } => {
            out.push((String::from("gate.lstm.w_x"), &mut lstm.w_x));
            out.push((String::from("gate.lstm.w_h"), &mut lstm.w_h));
            out.push((String::from("gate.lstm.b"), &mut lstm.b));
            out.push((String::from("gate.proj_w"), proj_w));
            out.push((String::from("gate.proj_b"), proj_b));
        }
    }
    out
}

// ---- graph binding ----

#[derive(Clone, Copy, Debug)]
pub struct LayerNodes {
    pub kernel: NodeId,
    pub bias: NodeId,
    pub gamma: Option<NodeId>,
    pub beta: Option<NodeId>,
}

#[derive(Clone, Debug)]
pub enum GateParamNodes {
    None,
    FreqWise { alpha: NodeId, beta: NodeId },
    Local { kernel: NodeId, bias: NodeId },
    Temporal {
        w_x: NodeId,
        w_h: NodeId,
        b: NodeId,
        proj_w: NodeId,
        proj_b: NodeId,
    },
}

/// Node handles of all bound parameters.
#[derive(Clone, Debug)]
pub struct ParamNodes {
    pub encoder: Vec<LayerNodes>,
    pub decoder: Vec<LayerNodes>,
    pub gate: GateParamNodes,
}

impl ParamNodes {
    /// Node ids in [`named_tensors`] order, for zipping with gradients.
    pub fn flat_ids(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for stack in [&self.encoder, &self.decoder] {
            for layer in stack {
                out.push(layer.kernel);
                out.push(layer.bias);
                out.extend(layer.gamma);
                out.extend(layer.beta);
            }
        }
        match &self.gate {
            GateParamNodes::None => {}
            GateParamNodes::FreqWise { alpha, beta } => out.extend([*alpha, *beta]),
            GateParamNodes::Local { kernel, bias } => out.extend([*kernel, *bias]),
            GateParamNodes::Temporal { w_x, w_h, b, proj_w, proj_b } => {
                out.extend([*w_x, *w_h, *b, *proj_w, *proj_b])
            }
        }
        out
    }
}

/// Copies every trainable tensor into the graph as a leaf (trainable) or
/// constant (inference).
pub fn bind(g: &mut Graph, p: &ModelParams, trainable: bool) -> ParamNodes {
    let mut put = |t: &Tensor, g: &mut Graph| {
        if trainable {
            g.leaf(t.clone())
        } else {
            g.constant(t.clone())
        }
    };
    let bind_stack = |stack: &[ConvLayer], g: &mut Graph, put: &mut dyn FnMut(&Tensor, &mut Graph) -> NodeId| {
        stack
            .iter()
            .map(|l| LayerNodes {
                kernel: put(&l.kernel, g),
                bias: put(&l.bias, g),
                gamma: l.gamma.as_ref().map(|t| put(t, g)),
                beta: l.beta.as_ref().map(|t| put(t, g)),
            })
            .collect::<Vec<_>>()
    };
    let encoder = bind_stack(&p.encoder, g, &mut put);
    let decoder = bind_stack(&p.decoder, g, &mut put);
    let gate = match &p.gate {
        GateParams::None => GateParamNodes::None,
        GateParams::FreqWise { alpha, beta } => GateParamNodes::FreqWise {
            alpha: put(alpha, g),
            beta: put(beta, g),
        },
        GateParams::Local { kernel, bias } => GateParamNodes::Local {
            kernel: put(kernel, g),
            bias: put(bias, g),
        },
        GateParams::Temporal { lstm, proj_w, proj_b } => GateParamNodes::Temporal {
            w_x: put(&lstm.w_x, g),
            w_h: put(&lstm.w_h, g),
            b: put(&lstm.b, g),
            proj_w: put(proj_w, g),
            proj_b: put(proj_b, g),
        },
    };
    ParamNodes {
        encoder,
        decoder,
        gate,
    }
}

/// Forward mode: training uses per-forward batch statistics (optionally
/// folding them into the running stats); eval uses the stored running stats.
pub enum Mode<'a> {
    Train {
        running: Option<&'a mut Vec<RunningStats>>,
    },
    Eval {
        running: &'a [RunningStats],
    },
}

/// Gate tensors for the two gated ends of the network. For the frequency
/// gate both handles are the same node (the parameter pair is shared).
struct GateEnds {
    input: NodeId,
    output: NodeId,
}

/// Builds the gate weight nodes from the noisy input. `gate_height` is the
/// frequency extent of the maps being gated (the input layer's output
/// height).
fn build_gates(
    g: &mut Graph,
    gate: &GateParamNodes,
    cfg: &ArchitectureConfig,
    x: NodeId,
    gate_height: usize,
) -> Result<Option<GateEnds>> {
    let rho = cfg.rho;
    match gate {
        GateParamNodes::None => Ok(None),
        GateParamNodes::FreqWise { alpha, beta } => {
            // Bin positions x = 3..=255 are the 1-indexed centers a 5-tall
            // kernel can sit on; maps of other heights clamp to that range.
            let offset = (F_BINS - gate_height) / 2 + 1;
            let xs: Vec<f64> = (0..gate_height)
                .map(|i| ((i + offset).clamp(3, 255)) as f64 / F_BINS as f64)
                .collect();
            let xs = g.constant(Tensor::new(&[1, gate_height, 1], xs)?);
            let a = g.reshape(*alpha, &[rho, 1, 1])?;
            let b = g.reshape(*beta, &[rho, 1, 1])?;
            let slope = g.mul(a, xs)?;
            let score = g.add(slope, b)?;
            let gate = g.sigmoid(score);
            Ok(Some(GateEnds {
                input: gate,
                output: gate,
            }))
        }
        GateParamNodes::Local { kernel, bias } => {
            let scores = g.conv2d(x, *kernel, Some(*bias), ConvGeom::new((1, 1), (0, 1)))?;
            let weights = g.sigmoid(scores); // [2r, 1, T]
            let input = g.slice_axis0(weights, 0, rho)?;
            let output = g.slice_axis0(weights, rho, rho)?;
            Ok(Some(GateEnds { input, output }))
        }
        GateParamNodes::Temporal { w_x, w_h, b, proj_w, proj_b } => {
            let t_len = g.shape(x)[2];
            let hidden = cfg.temporal_hidden;
            let frames = g.reshape(x, &[F_BINS, t_len])?;
            let params = LstmParamNodes {
                w_x: *w_x,
                w_h: *w_h,
                b: *b,
            };
            let mut h = g.constant(Tensor::zeros(&[hidden]));
            let mut c = g.constant(Tensor::zeros(&[hidden]));
            let mut cols = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let col = g.select_cols(frames, &[t])?;
                let x_t = g.reshape(col, &[F_BINS])?;
                let (h_next, c_next) = lstm_step(g, x_t, (h, c), &params)?;
                h = h_next;
                c = c_next;
                cols.push(g.affine(*proj_w, h, Some(*proj_b))?);
            }
            let stacked = g.stack_cols(&cols)?;
            let scores = g.reshape(stacked, &[2 * rho, 1, t_len])?;
            let weights = if cfg.temporal_sigmoid {
                g.sigmoid(scores)
            } else {
                g.clamp(scores, 0.0, 1.0)
            };
            let input = g.slice_axis0(weights, 0, rho)?;
            let output = g.slice_axis0(weights, rho, rho)?;
            Ok(Some(GateEnds { input, output }))
        }
    }
}

/// Full forward pass over one utterance `[1, 257, T]`, producing enhanced
/// features of the same shape. The output layer has no batch norm and no
/// nonlinearity.
pub fn forward(
    g: &mut Graph,
    nodes: &ParamNodes,
    cfg: &ArchitectureConfig,
    x: NodeId,
    mode: Mode<'_>,
) -> Result<NodeId> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 || shape[0] != 1 || shape[1] != F_BINS {
        return Err(Error::shape(
            "forward",
            format!("expected [1, {F_BINS}, T], got {shape:?}"),
        ));
    }
    if shape[2] < 3 {
        return Err(Error::invalid(
            "forward",
            format!("need at least 3 frames of context, got {}", shape[2]),
        ));
    }

    let (train, mut running_mut, running_ref): (bool, Option<&mut Vec<RunningStats>>, Option<&[RunningStats]>) =
        match mode {
            Mode::Train { running } => (true, running, None),
            Mode::Eval { running } => (false, None, Some(running)),
        };
    let mut bn_index = 0usize;
    let mut bn =
        |g: &mut Graph, y: NodeId, layer: &LayerNodes, running_mut: &mut Option<&mut Vec<RunningStats>>| -> Result<NodeId> {
            let idx = bn_index;
            bn_index += 1;
            let mode = if train {
                BnMode::Train {
                    running: running_mut.as_mut().map(|v| &mut v[idx]),
                }
            } else {
                BnMode::Eval {
                    running: &running_ref.expect("eval mode carries running stats")[idx],
                }
            };
            g.batch_norm(y, layer.gamma.expect("bn layer"), layer.beta.expect("bn layer"), BN_EPS, BN_MOMENTUM, mode)
        };

    let especs = encoder_specs(cfg);
    let dspecs = decoder_specs(cfg);

    let gate_height = crate::autodiff::conv2d_out_dim(F_BINS, especs[0].kernel.0, 1, especs[0].pad.0)
        .expect("input layer geometry");
    let gates = build_gates(g, &nodes.gate, cfg, x, gate_height)?;

    // encoder
    let mut enc_outputs: Vec<NodeId> = Vec::with_capacity(N_LAYERS);
    let mut enc_in_shapes: Vec<(usize, usize)> = Vec::with_capacity(N_LAYERS);
    let mut cur = x;
    for (i, spec) in especs.iter().enumerate() {
        let s = g.shape(cur);
        enc_in_shapes.push((s[1], s[2]));
        let conv = g.conv2d(cur, nodes.encoder[i].kernel, Some(nodes.encoder[i].bias), spec.geom())?;
        let conv = if i == 0 {
            match &gates {
                Some(ends) => g.mul(conv, ends.input)?,
                None => conv,
            }
        } else {
            conv
        };
        let normed = bn(g, conv, &nodes.encoder[i], &mut running_mut)?;
        cur = g.relu(normed);
        enc_outputs.push(cur);
    }

    // decoder with mirrored skip connections
    for (d, spec) in dspecs.iter().enumerate() {
        let input = if d == 0 {
            cur
        } else {
            g.add(cur, enc_outputs[N_LAYERS - 1 - d])?
        };
        let input = if d == N_LAYERS - 1 {
            match &gates {
                Some(ends) => g.mul(input, ends.output)?,
                None => input,
            }
        } else {
            input
        };
        let out_hw = enc_in_shapes[N_LAYERS - 1 - d];
        let conv = g.conv2d_transposed(
            input,
            nodes.decoder[d].kernel,
            Some(nodes.decoder[d].bias),
            spec.geom(),
            out_hw,
        )?;
        cur = if spec.has_bn_relu {
            let normed = bn(g, conv, &nodes.decoder[d], &mut running_mut)?;
            g.relu(normed)
        } else {
            conv
        };
    }
    Ok(cur)
}

/// Gate weights as a plain `[2r, n]` matrix for inspection: per-kernel
/// frequency profiles (freq-wise) or time traces (local/temporal), plus the
/// axis they run over.
#[derive(Clone, Debug)]
pub struct GateDump {
    pub weights: Tensor,
    /// "frequency" or "time"
    pub axis: &'static str,
}

pub fn gate_matrix(params: &ModelParams, noisy: &Tensor) -> Result<GateDump> {
    if params.config.gating == Gating::None {
        return Err(Error::invalid("gate_matrix", "model has no gating layer"));
    }
    let mut g = Graph::new();
    let nodes = bind(&mut g, params, false);
    let x = g.constant(noisy.clone());
    let especs = encoder_specs(&params.config);
    let gate_height = crate::autodiff::conv2d_out_dim(F_BINS, especs[0].kernel.0, 1, especs[0].pad.0)
        .expect("input layer geometry");
    let ends = build_gates(&mut g, &nodes.gate, &params.config, x, gate_height)?
        .expect("gating checked above");

    let rho = params.config.rho;
    let input = g.value(ends.input);
    let output = g.value(ends.output);
    let cols = input.numel() / rho;
    let mut weights = Tensor::zeros(&[2 * rho, cols]);
    weights.data_mut()[..rho * cols].copy_from_slice(input.data());
    weights.data_mut()[rho * cols..].copy_from_slice(output.data());
    let axis = match params.config.gating {
        Gating::FreqWise => "frequency",
        _ => "time",
    };
    Ok(GateDump { weights, axis })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    fn input(t: usize, seed: u64) -> Tensor {
        let mut s = SeedStream::new(seed);
        Tensor::rand_uniform(&[1, F_BINS, t], -1.0, 1.0, &mut s)
    }

    fn eval_forward(p: &ModelParams, x: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let nodes = bind(&mut g, p, false);
        let xi = g.constant(x.clone());
        let y = forward(
            &mut g,
            &nodes,
            &p.config,
            xi,
            Mode::Train { running: None },
        )
        .unwrap();
        g.value(y).clone()
    }

    #[test]
    fn layer_schedule_contract() {
        let cfg = ArchitectureConfig::new(3, Gating::None);
        let enc = encoder_specs(&cfg);
        let dec = decoder_specs(&cfg);
        assert_eq!(enc.len(), 7);
        assert_eq!(dec.len(), 7);
        // first/last three layers 5x5, the rest 3x3
        for i in 0..7 {
            assert_eq!(enc[i].kernel, if i < 3 { (5, 5) } else { (3, 3) });
            assert_eq!(dec[i].kernel, if i >= 4 { (5, 5) } else { (3, 3) });
        }
        // first and last network layer stride 1
        assert_eq!(enc[0].stride, (1, 1));
        assert_eq!(dec[6].stride, (1, 1));
        for i in 1..7 {
            assert_eq!(enc[i].stride, (2, 1));
            assert_eq!(dec[i - 1].stride, (2, 1));
        }
        // output layer carries no bn/relu
        assert!(!dec[6].has_bn_relu);
        assert!(dec[..6].iter().all(|s| s.has_bn_relu));
        // decoder channels are the exact reverse
        let enc_ch: Vec<(usize, usize)> = enc.iter().map(|s| (s.in_ch, s.out_ch)).collect();
        let dec_ch: Vec<(usize, usize)> = dec.iter().map(|s| (s.out_ch, s.in_ch)).collect();
        let mut rev = dec_ch.clone();
        rev.reverse();
        assert_eq!(enc_ch, rev);
    }

    #[test]
    fn valid_padding_reaches_height_two() {
        let cfg = ArchitectureConfig::new(1, Gating::None);
        let mut h = F_BINS;
        for spec in encoder_specs(&cfg) {
            h = crate::autodiff::conv2d_out_dim(h, spec.kernel.0, spec.stride.0, spec.pad.0).unwrap();
        }
        assert_eq!(h, 2, "bottleneck height");
    }

    #[test]
    fn same_seed_bit_identical_and_shared_conv_stack() {
        let cfg = ArchitectureConfig::new(2, Gating::Local);
        let a = build(&cfg, 42);
        let b = build(&cfg, 42);
        assert_eq!(a, b);
        let c = build(&cfg, 43);
        assert_ne!(a, c);
        // conv stacks identical across gating choices at equal seed
        let plain = build(&ArchitectureConfig::new(2, Gating::None), 42);
        assert_eq!(a.encoder, plain.encoder);
        assert_eq!(a.decoder, plain.decoder);
    }

    #[test]
    fn parameter_count_arithmetic() {
        // one conv layer 1 -> 2 channels, 3x3 kernels, with bias: 20
        let layer = ConvLayer {
            kernel: Tensor::zeros(&[2, 1, 3, 3]),
            bias: Tensor::zeros(&[2]),
            gamma: None,
            beta: None,
        };
        assert_eq!(layer.kernel.numel() + layer.bias.numel(), 20);

        // the paper's sizes: ungated rho=37 is 732823 and freq-wise gating
        // adds exactly 2*rho on top
        let ungated = build(&ArchitectureConfig::new(37, Gating::None), 1);
        assert_eq!(count_params(&ungated), 732_823);
        let gated = build(&ArchitectureConfig::new(37, Gating::FreqWise), 1);
        assert_eq!(count_params(&gated), 732_897);
        for rho in [1usize, 36, 37] {
            let none = count_params(&build(&ArchitectureConfig::new(rho, Gating::None), 5));
            let fw = count_params(&build(&ArchitectureConfig::new(rho, Gating::FreqWise), 5));
            assert_eq!(fw - none, 2 * rho, "rho {rho}");
        }
    }

    #[test]
    fn forward_preserves_shape() {
        let p = build(&ArchitectureConfig::new(1, Gating::None), 7);
        for t in [3usize, 40, 100] {
            let y = eval_forward(&p, &input(t, t as u64));
            assert_eq!(y.shape(), &[1, F_BINS, t]);
        }
        // wrong height is an error
        let mut g = Graph::new();
        let nodes = bind(&mut g, &p, false);
        let bad = g.constant(Tensor::zeros(&[1, 128, 8]));
        assert!(forward(&mut g, &nodes, &p.config, bad, Mode::Train { running: None }).is_err());
        let thin = g.constant(Tensor::zeros(&[1, F_BINS, 2]));
        assert!(forward(&mut g, &nodes, &p.config, thin, Mode::Train { running: None }).is_err());
    }

    #[test]
    fn saturated_gates_match_ungated_network() {
        let seed = 11;
        let plain = build(&ArchitectureConfig::new(1, Gating::None), seed);
        let mut gated = build(&ArchitectureConfig::new(1, Gating::FreqWise), seed);
        if let GateParams::FreqWise { beta, .. } = &mut gated.gate {
            *beta = Tensor::full(&[1], 500.0); // sigmoid saturates to 1
        }
        let x = input(10, 3);
        let a = eval_forward(&plain, &x);
        let b = eval_forward(&gated, &x);
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-9, "{u} vs {v}");
        }
    }

    #[test]
    fn gate_weights_live_in_unit_interval() {
        let x = input(9, 5);
        for gating in [Gating::FreqWise, Gating::Local, Gating::Temporal] {
            let mut cfg = ArchitectureConfig::new(2, gating);
            cfg.temporal_hidden = 8;
            let mut p = build(&cfg, 31);
            // push parameters around to stress the bound
            for (_, t) in named_tensors_mut(&mut p) {
                let mut s = SeedStream::new(1);
                for v in t.data_mut() {
                    *v += s.uniform(-3.0, 3.0);
                }
            }
            let dump = gate_matrix(&p, &x).unwrap();
            assert_eq!(dump.weights.shape()[0], 4);
            assert!(dump
                .weights
                .data()
                .iter()
                .all(|&w| (0.0..=1.0).contains(&w)));
        }
    }

    #[test]
    fn freq_gate_monotone_for_positive_alpha() {
        let cfg = ArchitectureConfig::new(2, Gating::FreqWise);
        let mut p = build(&cfg, 3);
        if let GateParams::FreqWise { alpha, beta } = &mut p.gate {
            *alpha = Tensor::new(&[2], alloc::vec![4.0, -4.0]).unwrap();
            *beta = Tensor::new(&[2], alloc::vec![-2.0, 2.0]).unwrap();
        }
        let dump = gate_matrix(&p, &input(5, 9)).unwrap();
        assert_eq!(dump.axis, "frequency");
        let cols = dump.weights.shape()[1];
        assert_eq!(cols, 253); // valid padding: bins 3..=255
        for c in 1..cols {
            assert!(dump.weights.at2(0, c) > dump.weights.at2(0, c - 1));
            assert!(dump.weights.at2(1, c) < dump.weights.at2(1, c - 1));
        }
        // alpha = 0, beta = 0 gives flat 0.5
        if let GateParams::FreqWise { alpha, beta } = &mut p.gate {
            *alpha = Tensor::zeros(&[2]);
            *beta = Tensor::zeros(&[2]);
        }
        let flat = gate_matrix(&p, &input(5, 9)).unwrap();
        assert!(flat.weights.data().iter().all(|&w| w == 0.5));
    }

    #[test]
    fn local_gate_zero_params_give_half_and_shift_equivariance() {
        let mut cfg = ArchitectureConfig::new(1, Gating::Local);
        cfg.temporal_hidden = 4;
        let mut p = build(&cfg, 13);
        if let GateParams::Local { kernel, bias } = &mut p.gate {
            *kernel = Tensor::zeros(kernel.shape());
            *bias = Tensor::zeros(&[2]);
        }
        let dump = gate_matrix(&p, &input(6, 1)).unwrap();
        assert!(dump.weights.data().iter().all(|&w| w == 0.5));
        assert_eq!(dump.weights.shape(), &[2, 6]);

        // time-shift equivariance with random kernels on interior columns
        let p = build(&cfg, 14);
        let t_len = 12usize;
        let x = input(t_len, 21);
        let mut shifted = Tensor::zeros(&[1, F_BINS, t_len]);
        for k in 0..F_BINS {
            for t in 1..t_len {
                let v = x.data()[k * t_len + (t - 1)];
                shifted.data_mut()[k * t_len + t] = v;
            }
            // column 0 copies column 0 of x (edge effect, excluded below)
            shifted.data_mut()[k * t_len] = x.data()[k * t_len];
        }
        let a = gate_matrix(&p, &x).unwrap().weights;
        let b = gate_matrix(&p, &shifted).unwrap().weights;
        for r in 0..2 {
            for t in 2..t_len - 1 {
                let expected = a.at2(r, t - 1);
                let got = b.at2(r, t);
                assert!(
                    (expected - got).abs() < 1e-9,
                    "kernel {r} frame {t}: {expected} vs {got}"
                );
            }
        }
    }

    #[test]
    fn temporal_gate_zero_params_clamp_to_zero_and_causal() {
        let mut cfg = ArchitectureConfig::new(1, Gating::Temporal);
        cfg.temporal_hidden = 6;
        let mut p = build(&cfg, 17);
        if let GateParams::Temporal { lstm, proj_w, proj_b } = &mut p.gate {
            lstm.w_x = Tensor::zeros(lstm.w_x.shape());
            lstm.w_h = Tensor::zeros(lstm.w_h.shape());
            lstm.b = Tensor::zeros(lstm.b.shape());
            *proj_w = Tensor::zeros(proj_w.shape());
            *proj_b = Tensor::zeros(proj_b.shape());
        }
        let dump = gate_matrix(&p, &input(5, 2)).unwrap();
        assert!(dump.weights.data().iter().all(|&w| w == 0.0));

        // causality: perturbing frame t leaves earlier gate columns alone
        let p = build(&cfg, 18);
        let t_len = 8usize;
        let x = input(t_len, 3);
        let mut bumped = x.clone();
        let t_hit = 5usize;
        for k in 0..F_BINS {
            bumped.data_mut()[k * t_len + t_hit] += 1.5;
        }
        let a = gate_matrix(&p, &x).unwrap().weights;
        let b = gate_matrix(&p, &bumped).unwrap().weights;
        for r in 0..a.shape()[0] {
            for t in 0..t_hit {
                assert_eq!(a.at2(r, t), b.at2(r, t), "kernel {r} frame {t} not causal");
            }
        }
        assert!(
            (0..a.shape()[0]).any(|r| (a.at2(r, t_hit) - b.at2(r, t_hit)).abs() > 1e-12),
            "perturbation must reach its own frame"
        );
    }

    #[test]
    fn skips_carry_gradient_past_a_dead_bottleneck() {
        let mut p = build(&ArchitectureConfig::new(1, Gating::None), 23);
        // kill the bottleneck path
        p.encoder[6].kernel = Tensor::zeros(p.encoder[6].kernel.shape());
        p.encoder[6].bias = Tensor::zeros(p.encoder[6].bias.shape());
        let mut g = Graph::new();
        let nodes = bind(&mut g, &p, false);
        let x = g.leaf(input(5, 4));
        let y = forward(&mut g, &nodes, &p.config, x, Mode::Train { running: None }).unwrap();
        let s = g.sum_all(y);
        let grads = g.backward(s).unwrap();
        let gx = grads.get(x).unwrap();
        assert!(gx.data().iter().any(|&v| v != 0.0), "input gradient vanished");
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let p = build(&ArchitectureConfig::new(1, Gating::None), 29);
        let x = input(6, 6);
        let mut g = Graph::new();
        let nodes = bind(&mut g, &p, false);
        let xi = g.constant(x.clone());
        let y = forward(&mut g, &nodes, &p.config, xi, Mode::Eval { running: &p.running }).unwrap();
        assert_eq!(g.shape(y), &[1, F_BINS, 6]);

        // training with stats updates mutates the running buffers
        let mut p2 = p.clone();
        let mut g2 = Graph::new();
        let nodes2 = bind(&mut g2, &p2, false);
        let xi2 = g2.constant(x);
        let before = p2.running.clone();
        {
            let running = &mut p2.running;
            forward(&mut g2, &nodes2, &p.config, xi2, Mode::Train { running: Some(running) }).unwrap();
        }
        assert_ne!(before, p2.running);
    }

    #[test]
    fn flat_ids_align_with_named_tensors() {
        for gating in [Gating::None, Gating::FreqWise, Gating::Local, Gating::Temporal] {
            let mut cfg = ArchitectureConfig::new(2, gating);
            cfg.temporal_hidden = 4;
            let p = build(&cfg, 9);
            let mut g = Graph::new();
            let nodes = bind(&mut g, &p, true);
            let ids = nodes.flat_ids();
            let named = named_tensors(&p);
            assert_eq!(ids.len(), named.len());
            for (id, (name, tensor)) in ids.iter().zip(&named) {
                assert_eq!(g.value(*id), *tensor, "mismatch at {name}");
            }
        }
    }
}
