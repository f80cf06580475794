//! The `gradcheck` subcommand: finite-difference verification of the engine
//! primitives and of the full network + loss objective at a configurable
//! size, printing one line per part and the overall maximum.

use anyhow::Result;
use gse_core::autodiff::{grad_check, BnMode, ConvGeom, Graph, NodeId};
use gse_core::data::NormStats;
use gse_core::dsp::F_BINS;
use gse_core::loss::{self, LossConfig};
use gse_core::model::{self, ArchitectureConfig, Gating};
use gse_core::rng::SeedStream;
use gse_core::Tensor;

fn rand(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut s = SeedStream::new(seed);
    Tensor::rand_uniform(shape, lo, hi, &mut s)
}

fn weighted_mean(g: &mut Graph, x: NodeId, seed: u64) -> gse_core::Result<NodeId> {
    let shape = g.shape(x).to_vec();
    let w = g.constant(rand(&shape, -1.0, 1.0, seed));
    let p = g.mul(x, w)?;
    Ok(g.mean_all(p))
}

/// Rebuilds ParamNodes from leaves laid out in named_tensors order.
fn rebind(cfg: &ArchitectureConfig, ids: &[NodeId]) -> model::ParamNodes {
    let template = model::build(cfg, 0);
    let mut cursor = 0usize;
    let mut next = || {
        let id = ids[cursor];
        cursor += 1;
        id
    };
    let mut bind_stack = |stack: &[model::ConvLayer]| {
        stack
            .iter()
            .map(|l| model::LayerNodes {
                kernel: next(),
                bias: next(),
                gamma: l.gamma.as_ref().map(|_| next()),
                beta: l.beta.as_ref().map(|_| next()),
            })
            .collect::<Vec<_>>()
    };
    let encoder = bind_stack(&template.encoder);
    let decoder = bind_stack(&template.decoder);
    let gate = match &template.gate {
        model::GateParams::None => model::GateParamNodes::None,
        model::GateParams::FreqWise { .. } => model::GateParamNodes::FreqWise {
            alpha: next(),
            beta: next(),
        },
        model::GateParams::Local { .. } => model::GateParamNodes::Local {
            kernel: next(),
            bias: next(),
        },
        model::GateParams::Temporal { .. } => model::GateParamNodes::Temporal {
            w_x: next(),
            w_h: next(),
            b: next(),
            proj_w: next(),
            proj_b: next(),
        },
    };
    model::ParamNodes {
        encoder,
        decoder,
        gate,
    }
}

fn part<F>(name: &str, build: F, inputs: &[Tensor], eps: f64, worst: &mut f64) -> Result<()>
where
    F: Fn(&mut Graph, &[NodeId]) -> gse_core::Result<NodeId>,
{
    let err = grad_check(build, inputs, eps).map_err(|e| anyhow::anyhow!("{name}: {e}"))?;
    println!("  {name:<28} max rel err {err:.3e}");
    *worst = worst.max(err);
    Ok(())
}

/// Runs the battery; returns the maximum relative error observed.
pub fn run(rho: usize, gating: Gating, temporal_hidden: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    println!("primitive gradients:");
    part(
        "elementwise chain",
        |g, ids| {
            let a = g.relu(ids[0]);
            let b = g.sigmoid(a);
            let c = g.tanh(b);
            let d = g.exp(c);
            let e = g.sqrt_eps(d, 1e-12);
            let f = g.clamp(e, 0.5, 3.0);
            weighted_mean(g, f, 1)
        },
        &[rand(&[4, 5], 0.2, 1.5, 2)],
        1e-5,
        &mut worst,
    )?;
    part(
        "broadcast mul/div/add/sub",
        |g, ids| {
            let m = g.mul(ids[0], ids[1])?;
            let d = g.div(m, ids[1])?;
            let s = g.sub(d, ids[0])?;
            let a = g.add(s, ids[1])?;
            weighted_mean(g, a, 3)
        },
        &[rand(&[3, 4, 2], -1.0, 1.0, 4), rand(&[3, 1, 2], 0.5, 1.5, 5)],
        1e-5,
        &mut worst,
    )?;
    part(
        "conv2d",
        |g, ids| {
            let y = g.conv2d(ids[0], ids[1], Some(ids[2]), ConvGeom::new((2, 1), (0, 1)))?;
            weighted_mean(g, y, 6)
        },
        &[
            rand(&[2, 11, 5], -1.0, 1.0, 7),
            rand(&[3, 2, 3, 3], -0.7, 0.7, 8),
            rand(&[3], -0.2, 0.2, 9),
        ],
        1e-5,
        &mut worst,
    )?;
    part(
        "conv2d_transposed",
        |g, ids| {
            let y = g.conv2d_transposed(ids[0], ids[1], Some(ids[2]), ConvGeom::new((2, 1), (0, 1)), (11, 5))?;
            weighted_mean(g, y, 10)
        },
        &[
            rand(&[3, 5, 5], -1.0, 1.0, 11),
            rand(&[3, 2, 3, 3], -0.7, 0.7, 12),
            rand(&[2], -0.2, 0.2, 13),
        ],
        1e-5,
        &mut worst,
    )?;
    part(
        "batch_norm (train)",
        |g, ids| {
            let y = g.batch_norm(ids[0], ids[1], ids[2], 1e-5, 0.9, BnMode::Train { running: None })?;
            weighted_mean(g, y, 14)
        },
        &[
            rand(&[2, 4, 5], -1.5, 1.5, 15),
            rand(&[2], 0.5, 1.5, 16),
            rand(&[2], -0.5, 0.5, 17),
        ],
        1e-5,
        &mut worst,
    )?;
    part(
        "lstm step",
        |g, ids| {
            let params = gse_core::autodiff::LstmParamNodes {
                w_x: ids[0],
                w_h: ids[1],
                b: ids[2],
            };
            let (h, c) = gse_core::autodiff::lstm_step(g, ids[3], (ids[4], ids[5]), &params)?;
            let hw = weighted_mean(g, h, 18)?;
            let cw = weighted_mean(g, c, 19)?;
            g.add(hw, cw)
        },
        &[
            rand(&[12, 4], -0.4, 0.4, 20),
            rand(&[12, 3], -0.4, 0.4, 21),
            rand(&[12], -0.2, 0.2, 22),
            rand(&[4], -1.0, 1.0, 23),
            rand(&[3], -0.5, 0.5, 24),
            rand(&[3], -0.5, 0.5, 25),
        ],
        1e-5,
        &mut worst,
    )?;
    part(
        "mse",
        |g, ids| g.mse(ids[0], ids[1]),
        &[rand(&[4, 3], -1.0, 1.0, 26), rand(&[4, 3], -1.0, 1.0, 27)],
        1e-5,
        &mut worst,
    )?;

    println!("composite (rho {rho}, gating {}):", gating.as_str());
    let mut cfg = ArchitectureConfig::new(rho, gating);
    cfg.temporal_hidden = temporal_hidden;
    let params = model::build(&cfg, seed);
    let mut leaves: Vec<Tensor> = model::named_tensors(&params)
        .iter()
        .map(|(_, t)| (*t).clone())
        .collect();
    let n = leaves.len();
    let mut s = SeedStream::new(seed + 1);
    leaves.push(Tensor::rand_uniform(&[1, F_BINS, 12], -2.0, -0.2, &mut s));
    let clean = Tensor::rand_uniform(&[F_BINS, 12], -7.0, -0.5, &mut s);
    // stats shifted so network-path magnitudes stay clear of the clip point
    let stats = NormStats {
        mean: vec![-8.0; F_BINS],
        std: vec![1.0; F_BINS],
        n_frames: 2,
    };
    let loss_cfg = LossConfig {
        min_active: 2,
        ..LossConfig::default()
    };
    let cfg2 = cfg.clone();
    part(
        "network + loss objective",
        move |g, ids| {
            let nodes = rebind(&cfg2, &ids[..n]);
            let y = model::forward(g, &nodes, &cfg2, ids[n], model::Mode::Train { running: None })?;
            let c = g.constant(clean.clone());
            let l = loss::e2stoi_loss(g, y, c, &stats, &loss_cfg)?;
            Ok(l.total)
        },
        &leaves,
        1e-6,
        &mut worst,
    )?;
    Ok(worst)
}
