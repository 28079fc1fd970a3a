//! Forward and backward passes of the shared-decoder network.
//!
//! Encoder: `E_1 = f_1(I)`, `E_l = f_l(maxpool(E_{l-1}))`.
//! First decoder layer: `D_1 = f([up(E_L), E_{L-1}])`.
//! SDM-`i`, `i = 1..=L-2`: `D_{i+1} = f_i([up_i(D_i), E_{L-i-1}])` and
//! `F_{i+1,j+1} = f_i(F_{i,j})` with `F_{i,0} = D_i`, all through the same
//! weights of `f_i`.
//! Final SDM: a shared 1x1 convolution and sigmoid maps `D_{L-1}` to `O_0`
//! and `F_{L-1,k}` to `O_k`.

use std::hash::{Hash, Hasher};

use super::config::{SideOutput, SpnetConfig};
use super::params::{encoder_block, sdm_stats, sdm_weights, side_head, GradStore, ParameterStore};
use crate::error::{Error, Result};
use crate::ops::{
    batchnorm_backward, batchnorm_eval, batchnorm_eval_backward, batchnorm_train, concat_channels,
    conv2d, conv2d_backward, deconv2x2, deconv2x2_backward, maxpool2x2, maxpool2x2_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, split_channels, BatchStats, BnTrace, PoolTrace,
};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics updates are reported.
    Train,
    /// Running statistics.
    Eval,
}

/// A running-statistics update produced by one training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    /// Name prefix such as `sdm2.branch1.bn1`.
    pub prefix: String,
    pub stats: BatchStats<T>,
}

pub struct ForwardPass<T> {
    /// `O_0..=O_K`, each `(n, 1, h / 2^k, w / 2^k)`.
    pub outputs: Vec<Tensor<T>>,
    pub cache: ForwardCache<T>,
    pub bn_updates: Vec<BnUpdate<T>>,
}

enum NormTrace<T> {
    None,
    Train(BnTrace<T>),
    Eval { pre: Tensor<T> },
}

struct StageTrace<T> {
    norm: NormTrace<T>,
    out: Tensor<T>,
}

struct DoubleConvTrace<T> {
    stats: String,
    input: Tensor<T>,
    stages: Vec<StageTrace<T>>,
}

struct EncoderTrace<T> {
    pool: Option<PoolTrace>,
    conv: DoubleConvTrace<T>,
}

struct DecoderTrace<T> {
    /// Input of the transposed convolution (`E_L` or `D_i`).
    up_input: Tensor<T>,
    up_channels: usize,
    main: DoubleConvTrace<T>,
    branches: Vec<DoubleConvTrace<T>>,
}

struct HeadTrace<T> {
    input: Tensor<T>,
    output: Tensor<T>,
}

/// Activations saved by [`forward`] for [`backward`].
pub struct ForwardCache<T> {
    config: SpnetConfig,
    encoder: Vec<EncoderTrace<T>>,
    first: DecoderTrace<T>,
    sdms: Vec<DecoderTrace<T>>,
    heads: Vec<HeadTrace<T>>,
}

impl<T: Real> ForwardCache<T> {
    /// Hash of every ReLU on/off state and max-pool selection. Two
    /// parameter points with the same pattern lie on the same smooth piece
    /// of the network function.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        let mut dc = |t: &DoubleConvTrace<T>| {
            for s in &t.stages {
                for v in s.out.data() {
                    (*v > T::zero()).hash(&mut h);
                }
            }
        };
        for e in &self.encoder {
            dc(&e.conv);
        }
        dc(&self.first.main);
        for s in &self.sdms {
            dc(&s.main);
            s.branches.iter().for_each(&mut dc);
        }
        for e in &self.encoder {
            if let Some(p) = &e.pool {
                p.argmax.hash(&mut h);
            }
        }
        h.finish()
    }
}

struct Ctx<'a, T> {
    params: &'a ParameterStore<T>,
    mode: Mode,
    bn_updates: Vec<BnUpdate<T>>,
}

impl<T: Real> Ctx<'_, T> {
    fn double_conv(
        &mut self,
        weights: &str,
        stats: &str,
        input: Tensor<T>,
    ) -> Result<(Tensor<T>, DoubleConvTrace<T>)> {
        let p = self.params;
        let bn = p.config().use_batchnorm;
        let mut stages = Vec::with_capacity(2);
        let mut x = input.clone();
        for j in 1..=2 {
            let z = conv2d(
                &x,
                p.tensor(&format!("{weights}.conv{j}.weight")),
                p.tensor(&format!("{weights}.conv{j}.bias")),
                3,
                1,
            )?;
            let (z, norm) = if bn {
                let gamma = p.tensor(&format!("{weights}.bn{j}.gamma"));
                let beta = p.tensor(&format!("{weights}.bn{j}.beta"));
                match self.mode {
                    Mode::Train => {
                        let (y, trace, batch) = batchnorm_train(&z, gamma, beta)?;
                        self.bn_updates.push(BnUpdate {
                            prefix: format!("{stats}.bn{j}"),
                            stats: batch,
                        });
                        (y, NormTrace::Train(trace))
                    }
                    Mode::Eval => {
                        let y = batchnorm_eval(
                            &z,
                            gamma,
                            beta,
                            p.tensor(&format!("{stats}.bn{j}.running_mean")),
                            p.tensor(&format!("{stats}.bn{j}.running_var")),
                        )?;
                        (y, NormTrace::Eval { pre: z })
                    }
                }
            } else {
                (z, NormTrace::None)
            };
            let out = relu(&z);
            x = out.clone();
            stages.push(StageTrace { norm, out });
        }
        Ok((
            x,
            DoubleConvTrace {
                stats: stats.to_string(),
                input,
                stages,
            },
        ))
    }

    fn decoder_step(
        &mut self,
        up: &str,
        weights: &str,
        stats: &str,
        below: &Tensor<T>,
        skip: &Tensor<T>,
    ) -> Result<(Tensor<T>, DecoderTrace<T>)> {
        let p = self.params;
        let upsampled = deconv2x2(
            below,
            p.tensor(&format!("{up}.weight")),
            p.tensor(&format!("{up}.bias")),
        )?;
        let up_channels = upsampled.shape().c;
        let cat = concat_channels(&upsampled, skip)?;
        let (out, main) = self.double_conv(weights, stats, cat)?;
        Ok((
            out,
            DecoderTrace {
                up_input: below.clone(),
                up_channels,
                main,
                branches: Vec::new(),
            },
        ))
    }

    fn head(&self, name: &str, input: &Tensor<T>) -> Result<HeadTrace<T>> {
        let z = conv2d(
            input,
            self.params.tensor(&format!("{name}.weight")),
            self.params.tensor(&format!("{name}.bias")),
            1,
            0,
        )?;
        Ok(HeadTrace {
            input: input.clone(),
            output: sigmoid(&z),
        })
    }
}

/// Runs the network on a batch `(n, in_channels, h, w)`.
pub fn forward<T: Real>(
    params: &ParameterStore<T>,
    batch: &Tensor<T>,
    mode: Mode,
) -> Result<ForwardPass<T>> {
    let config = params.config().clone();
    let s = batch.shape();
    let m = config.input_multiple();
    if s.c != config.in_channels || !s.h.is_multiple_of(m) || !s.w.is_multiple_of(m) {
        return Err(Error::shape(
            "forward",
            format!(
                "input {s} needs {} channels and spatial dims divisible by {m}",
                config.in_channels
            ),
        ));
    }
    let depth = config.depth;
    let mut ctx = Ctx {
        params,
        mode,
        bn_updates: Vec::new(),
    };

    // encoder
    let mut enc_out: Vec<Tensor<T>> = Vec::with_capacity(depth);
    let mut encoder = Vec::with_capacity(depth);
    for l in 1..=depth {
        let (x, pool) = if l == 1 {
            (batch.clone(), None)
        } else {
            let (x, tr) = maxpool2x2(&enc_out[l - 2])?;
            (x, Some(tr))
        };
        let name = encoder_block(l);
        let (e, conv) = ctx.double_conv(&name, &name, x)?;
        enc_out.push(e);
        encoder.push(EncoderTrace { pool, conv });
    }
    let enc = |l: usize| &enc_out[l - 1];

    // D_1
    let (d1, first) = ctx.decoder_step("up0", "dec0", "dec0", enc(depth), enc(depth - 1))?;
    // decoded[i] = D_i; branch_maps[i] = [F_{i,1}, ..., F_{i,i-1}]
    let mut decoded: Vec<Tensor<T>> = vec![Tensor::zeros(d1.shape()), d1];
    let mut branch_maps: Vec<Vec<Tensor<T>>> = vec![Vec::new(), Vec::new()];
    let mut sdms = Vec::with_capacity(depth - 2);
    for i in 1..=depth - 2 {
        let (next, mut trace) = ctx.decoder_step(
            &format!("up{i}"),
            &sdm_weights(&config, i, 0),
            &sdm_stats(i, 0),
            &decoded[i],
            enc(depth - i - 1),
        )?;
        let mut next_branches = Vec::new();
        for j in 0..config.branch_count(i) {
            let input = if j == 0 {
                decoded[i].clone()
            } else {
                branch_maps[i][j - 1].clone()
            };
            let (f, tr) =
                ctx.double_conv(&sdm_weights(&config, i, j + 1), &sdm_stats(i, j + 1), input)?;
            next_branches.push(f);
            trace.branches.push(tr);
        }
        decoded.push(next);
        branch_maps.push(next_branches);
        sdms.push(trace);
    }

    let mut heads = Vec::with_capacity(config.output_count());
    for k in 0..=config.pyramid_levels {
        let input = match (k, config.side_output) {
            (0, _) => &decoded[depth - 1],
            (_, SideOutput::Sdm) => &branch_maps[depth - 1][k - 1],
            (_, SideOutput::Conv1x1) => &decoded[depth - 1 - k],
        };
        heads.push(ctx.head(&side_head(&config, k), input)?);
    }

    let outputs = heads.iter().map(|h| h.output.clone()).collect();
    Ok(ForwardPass {
        outputs,
        bn_updates: ctx.bn_updates,
        cache: ForwardCache {
            config,
            encoder,
            first,
            sdms,
            heads,
        },
    })
}

fn add_into<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn double_conv_backward<T: Real>(
    params: &ParameterStore<T>,
    grads: &mut GradStore<T>,
    weights: &str,
    trace: &DoubleConvTrace<T>,
    grad_out: Tensor<T>,
) -> Result<Tensor<T>> {
    let mut g = grad_out;
    for j in (1..=2).rev() {
        let stage = &trace.stages[j - 1];
        let stage_input = if j == 1 {
            &trace.input
        } else {
            &trace.stages[0].out
        };
        let g_act = relu_backward(&stage.out, &g);
        let g_pre = match &stage.norm {
            NormTrace::None => g_act,
            NormTrace::Train(bn) => {
                let gamma = params.tensor(&format!("{weights}.bn{j}.gamma"));
                let (gx, gg, gb) = batchnorm_backward(bn, gamma, &g_act);
                grads.accumulate(&format!("{weights}.bn{j}.gamma"), &gg);
                grads.accumulate(&format!("{weights}.bn{j}.beta"), &gb);
                gx
            }
            NormTrace::Eval { pre } => {
                let stats = &trace.stats;
                let (gx, gg, gb) = batchnorm_eval_backward(
                    pre,
                    params.tensor(&format!("{weights}.bn{j}.gamma")),
                    params.tensor(&format!("{stats}.bn{j}.running_mean")),
                    params.tensor(&format!("{stats}.bn{j}.running_var")),
                    &g_act,
                );
                grads.accumulate(&format!("{weights}.bn{j}.gamma"), &gg);
                grads.accumulate(&format!("{weights}.bn{j}.beta"), &gb);
                gx
            }
        };
        let w = params.tensor(&format!("{weights}.conv{j}.weight"));
        let cg = conv2d_backward(stage_input, w, &g_pre, 3, 1)?;
        grads.accumulate(&format!("{weights}.conv{j}.weight"), &cg.weight);
        grads.accumulate(&format!("{weights}.conv{j}.bias"), &cg.bias);
        g = cg.input;
    }
    Ok(g)
}

fn decoder_backward<T: Real>(
    params: &ParameterStore<T>,
    grads: &mut GradStore<T>,
    up: &str,
    weights: &str,
    trace: &DecoderTrace<T>,
    grad_out: Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g_cat = double_conv_backward(params, grads, weights, &trace.main, grad_out)?;
    let (g_up, g_skip) = split_channels(&g_cat, trace.up_channels)?;
    let dg = deconv2x2_backward(
        &trace.up_input,
        params.tensor(&format!("{up}.weight")),
        &g_up,
    )?;
    grads.accumulate(&format!("{up}.weight"), &dg.weight);
    grads.accumulate(&format!("{up}.bias"), &dg.bias);
    Ok((dg.input, g_skip))
}

/// Gradients of a scalar objective w.r.t. every learnable parameter, given
/// its gradients w.r.t. each output map. A shared convolution receives the
/// sum of the contributions of every branch that applied it.
pub fn backward<T: Real>(
    params: &ParameterStore<T>,
    cache: &ForwardCache<T>,
    grad_outputs: &[Tensor<T>],
) -> Result<GradStore<T>> {
    let config = params.config();
    if *config != cache.config {
        return Err(Error::InvalidArgument(
            "forward cache was produced with a different configuration".into(),
        ));
    }
    if grad_outputs.len() != cache.heads.len() {
        return Err(Error::shape(
            "backward",
            format!(
                "{} output gradients for {} outputs",
                grad_outputs.len(),
                cache.heads.len()
            ),
        ));
    }
    let depth = config.depth;
    let mut grads = GradStore::zeros_like(params);

    let mut d_grad: Vec<Option<Tensor<T>>> = (0..depth).map(|_| None).collect();
    let mut f_grad: Vec<Vec<Option<Tensor<T>>>> = (0..depth)
        .map(|i| (0..i.max(1)).map(|_| None).collect())
        .collect();
    let mut e_grad: Vec<Option<Tensor<T>>> = (0..=depth).map(|_| None).collect();

    for (k, (head, g)) in cache.heads.iter().zip(grad_outputs).enumerate() {
        if g.shape() != head.output.shape() {
            return Err(Error::shape(
                "backward",
                format!(
                    "gradient {} for output {k} of {}",
                    g.shape(),
                    head.output.shape()
                ),
            ));
        }
        let name = side_head(config, k);
        let gz = sigmoid_backward(&head.output, g);
        let cg = conv2d_backward(
            &head.input,
            params.tensor(&format!("{name}.weight")),
            &gz,
            1,
            0,
        )?;
        grads.accumulate(&format!("{name}.weight"), &cg.weight);
        grads.accumulate(&format!("{name}.bias"), &cg.bias);
        match (k, config.side_output) {
            (0, _) => add_into(&mut d_grad[depth - 1], cg.input),
            (_, SideOutput::Sdm) => add_into(&mut f_grad[depth - 1][k], cg.input),
            (_, SideOutput::Conv1x1) => add_into(&mut d_grad[depth - 1 - k], cg.input),
        }
    }

    for i in (1..=depth - 2).rev() {
        let trace = &cache.sdms[i - 1];
        for j in (0..trace.branches.len()).rev() {
            let Some(g) = f_grad[i + 1][j + 1].take() else {
                continue;
            };
            let gin = double_conv_backward(
                params,
                &mut grads,
                &sdm_weights(config, i, j + 1),
                &trace.branches[j],
                g,
            )?;
            if j == 0 {
                add_into(&mut d_grad[i], gin);
            } else {
                add_into(&mut f_grad[i][j], gin);
            }
        }
        if let Some(g) = d_grad[i + 1].take() {
            let (g_below, g_skip) = decoder_backward(
                params,
                &mut grads,
                &format!("up{i}"),
                &sdm_weights(config, i, 0),
                trace,
                g,
            )?;
            add_into(&mut d_grad[i], g_below);
            add_into(&mut e_grad[depth - i - 1], g_skip);
        }
    }

    if let Some(g) = d_grad[1].take() {
        let (g_below, g_skip) =
            decoder_backward(params, &mut grads, "up0", "dec0", &cache.first, g)?;
        add_into(&mut e_grad[depth], g_below);
        add_into(&mut e_grad[depth - 1], g_skip);
    }

    for l in (1..=depth).rev() {
        let Some(g) = e_grad[l].take() else {
            continue;
        };
        let trace = &cache.encoder[l - 1];
        let gin = double_conv_backward(params, &mut grads, &encoder_block(l), &trace.conv, g)?;
        if let Some(pool) = &trace.pool {
            add_into(&mut e_grad[l - 1], maxpool2x2_backward(&gin, pool));
        }
    }
    Ok(grads)
}
