//! The noise-prediction network.
//!
//! A U-Net-shaped residual MLP: the noisy solution vector is embedded into
//! `hidden` dimensions, passed through `depth` down-sampling residual
//! blocks that halve the width at each stage, then through `depth`
//! up-sampling blocks that restore it, with additive skip connections
//! between mirrored stages (through learned width-matching projections).
//! The timestep (as a sinusoidal embedding) and the condition vector are
//! projected into each block's input width and added to the block input.
//! Sampling without a condition routes through a learned null embedding
//! instead of the condition projection.
//!
//! No attention, no convolutions; every layer is dense. All arithmetic is
//! f64 and forward/backward are pure functions over explicit caches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{silu, silu_backward, DenseGrad, DenseLayer};
use crate::rng::Rng;

/// Shape of the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Solution dimension N.
    pub solution_dim: usize,
    /// Condition dimension C.
    pub condition_dim: usize,
    /// Hidden width h.
    pub hidden: usize,
    /// Down/up-sampling depth n.
    pub depth: usize,
    /// Maximum diffusion step T.
    pub max_step: usize,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.solution_dim == 0
            || self.condition_dim == 0
            || self.hidden == 0
            || self.depth == 0
            || self.max_step == 0
        {
            return Err(Error::invalid_argument(
                "denoiser config: all dimensions must be >= 1",
            ));
        }
        // Depth is bounded by the width: each stage halves it.
        if self.hidden % (1 << self.depth) != 0 {
            return Err(Error::invalid_argument(format!(
                "hidden width {} is not divisible by 2^depth = {}",
                self.hidden,
                1 << self.depth
            )));
        }
        Ok(())
    }

    /// Width at stage `k` (stage 0 = full hidden width).
    pub fn width(&self, k: usize) -> usize {
        self.hidden >> k
    }

    /// Sinusoidal time-embedding dimension (4h).
    pub fn time_dim(&self) -> usize {
        4 * self.hidden
    }
}

/// Sinusoidal timestep embedding: pairs `(sin(t w_i), cos(t w_i))` with
/// `w_i = 10000^(-2i/dim)`. `dim` must be even and `t <= max_step`.
pub fn time_embed(t: usize, dim: usize, max_step: usize) -> Result<Vec<f64>> {
    if t > max_step {
        return Err(Error::invalid_argument(format!(
            "timestep {t} outside [0, {max_step}]"
        )));
    }
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::invalid_argument(format!(
            "time embedding dim {dim} must be positive and even"
        )));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let omega = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        let angle = t as f64 * omega;
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}

/// One residual stage: `out = lin2(silu(lin1(u))) + res(u)` where
/// `u = z + time_in(te) + cond_in(ce)`.
#[derive(Debug, Clone, PartialEq)]
struct ResBlock {
    time_in: DenseLayer,
    cond_in: DenseLayer,
    lin1: DenseLayer,
    lin2: DenseLayer,
    res: DenseLayer,
}

impl ResBlock {
    fn init(hidden: usize, w_in: usize, w_out: usize, rng: &mut Rng) -> Result<Self> {
        Ok(ResBlock {
            time_in: DenseLayer::init(hidden, w_in, rng)?,
            cond_in: DenseLayer::init(hidden, w_in, rng)?,
            lin1: DenseLayer::init(w_in, w_out, rng)?,
            lin2: DenseLayer::init(w_out, w_out, rng)?,
            res: DenseLayer::init(w_in, w_out, rng)?,
        })
    }

    fn forward(&self, z: &[f64], te: &[f64], ce: &[f64], cache: &mut BlockCache) -> Result<()> {
        self.time_in.forward_into(te, &mut cache.u)?;
        self.cond_in.forward_into(ce, &mut cache.tmp_in)?;
        for i in 0..cache.u.len() {
            cache.u[i] += cache.tmp_in[i] + z[i];
        }
        self.lin1.forward_into(&cache.u, &mut cache.a1)?;
        silu(&cache.a1, &mut cache.s1);
        self.lin2.forward_into(&cache.s1, &mut cache.out)?;
        self.res.forward_into(&cache.u, &mut cache.tmp_out)?;
        for i in 0..cache.out.len() {
            cache.out[i] += cache.tmp_out[i];
        }
        Ok(())
    }

    /// Accumulates parameter gradients into `grads` and embedding gradients
    /// into `d_te`/`d_ce`. The gradient w.r.t. the block input is left in
    /// `scratch.du` for the caller.
    fn backward(
        &self,
        cache: &BlockCache,
        te: &[f64],
        ce: &[f64],
        upstream: &[f64],
        grads: &mut ResBlockGrad,
        d_te: &mut [f64],
        d_ce: &mut [f64],
        scratch: &mut BlockScratch,
    ) -> Result<()> {
        // out = lin2(silu(lin1(u))) + res(u)
        scratch.ds1.fill(0.0);
        self.lin2.backward_into(&cache.s1, upstream, &mut grads.lin2, &mut scratch.ds1)?;
        silu_backward(&cache.a1, &scratch.ds1, &mut scratch.da1);
        scratch.du.fill(0.0);
        self.lin1.backward_into(&cache.u, &scratch.da1, &mut grads.lin1, &mut scratch.du)?;
        self.res.backward_into(&cache.u, upstream, &mut grads.res, &mut scratch.du)?;
        // u = z + time_in(te) + cond_in(ce); dz = du.
        self.time_in.backward_into(te, &scratch.du, &mut grads.time_in, d_te)?;
        self.cond_in.backward_into(ce, &scratch.du, &mut grads.cond_in, d_ce)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    u: Vec<f64>,
    a1: Vec<f64>,
    s1: Vec<f64>,
    out: Vec<f64>,
    tmp_in: Vec<f64>,
    tmp_out: Vec<f64>,
}

impl BlockCache {
    fn sized(w_in: usize, w_out: usize) -> Self {
        BlockCache {
            u: vec![0.0; w_in],
            a1: vec![0.0; w_out],
            s1: vec![0.0; w_out],
            out: vec![0.0; w_out],
            tmp_in: vec![0.0; w_in],
            tmp_out: vec![0.0; w_out],
        }
    }
}

#[derive(Debug, Clone)]
struct BlockScratch {
    ds1: Vec<f64>,
    da1: Vec<f64>,
    du: Vec<f64>,
}

impl BlockScratch {
    fn sized(w_in: usize, w_out: usize) -> Self {
        BlockScratch {
            ds1: vec![0.0; w_out],
            da1: vec![0.0; w_out],
            du: vec![0.0; w_in],
        }
    }
}

#[derive(Debug, Clone)]
struct ResBlockGrad {
    time_in: DenseGrad,
    cond_in: DenseGrad,
    lin1: DenseGrad,
    lin2: DenseGrad,
    res: DenseGrad,
}

impl ResBlockGrad {
    fn zeros_like(block: &ResBlock) -> Self {
        ResBlockGrad {
            time_in: DenseGrad::zeros_like(&block.time_in),
            cond_in: DenseGrad::zeros_like(&block.cond_in),
            lin1: DenseGrad::zeros_like(&block.lin1),
            lin2: DenseGrad::zeros_like(&block.lin2),
            res: DenseGrad::zeros_like(&block.res),
        }
    }

    fn fill_zero(&mut self) {
        self.time_in.fill_zero();
        self.cond_in.fill_zero();
        self.lin1.fill_zero();
        self.lin2.fill_zero();
        self.res.fill_zero();
    }
}

/// All weights of the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    config: DenoiserConfig,
    input_embed: DenseLayer,
    time_proj: DenseLayer,
    cond_embed: DenseLayer,
    null_embed: Vec<f64>,
    down: Vec<ResBlock>,
    up: Vec<ResBlock>,
    skip_proj: Vec<DenseLayer>,
    head: DenseLayer,
}

impl DenoiserParams {
    pub fn init(config: DenoiserConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let n = config.depth;
        let mut down = Vec::with_capacity(n);
        let mut up = Vec::with_capacity(n);
        let mut skip_proj = Vec::with_capacity(n);
        for k in 1..=n {
            down.push(ResBlock::init(h, config.width(k - 1), config.width(k), rng)?);
        }
        // Up block i undoes down block n-1-i; its skip taps that down
        // block's input (width h/2^(n-1-i)).
        for i in 0..n {
            let k = n - i;
            up.push(ResBlock::init(h, config.width(k), config.width(k - 1), rng)?);
            skip_proj.push(DenseLayer::init(config.width(k - 1), config.width(k - 1), rng)?);
        }
        let params = DenoiserParams {
            config,
            input_embed: DenseLayer::init(config.solution_dim, h, rng)?,
            time_proj: DenseLayer::init(config.time_dim(), h, rng)?,
            cond_embed: DenseLayer::init(config.condition_dim, h, rng)?,
            null_embed: (0..h).map(|_| rng.normal() * 0.1).collect(),
            down,
            up,
            skip_proj,
            head: DenseLayer::init(h, config.solution_dim, rng)?,
        };
        debug_assert_eq!(params.param_count(), params.expected_param_count());
        Ok(params)
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Closed-form parameter count implied by the architecture.
    pub fn expected_param_count(&self) -> usize {
        let c = &self.config;
        let dense = |a: usize, b: usize| a * b + b;
        let block =
            |a: usize, b: usize| 2 * dense(c.hidden, a) + dense(a, b) + dense(b, b) + dense(a, b);
        let mut total = dense(c.solution_dim, c.hidden)
            + dense(c.time_dim(), c.hidden)
            + dense(c.condition_dim, c.hidden)
            + c.hidden
            + dense(c.hidden, c.solution_dim);
        for k in 1..=c.depth {
            total += block(c.width(k - 1), c.width(k)); // down
            total += block(c.width(k), c.width(k - 1)); // up
            total += dense(c.width(k - 1), c.width(k - 1)); // skip
        }
        total
    }

    /// Predicts the noise component of `y_t` at step `t`, optionally
    /// conditioned on `cond`. `cond = None` routes through the learned null
    /// embedding (the classifier-free pathway).
    pub fn forward(&self, y_t: &[f64], t: usize, cond: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut ws = Workspace::new(&self.config);
        self.forward_cached(y_t, t, cond, &mut ws)?;
        Ok(ws.eps_hat.clone())
    }

    /// Forward pass writing all intermediate activations into `ws` so that
    /// [`DenoiserParams::backward`] can run afterwards.
    pub fn forward_cached(
        &self,
        y_t: &[f64],
        t: usize,
        cond: Option<&[f64]>,
        ws: &mut Workspace,
    ) -> Result<()> {
        let c = &self.config;
        if y_t.len() != c.solution_dim {
            return Err(Error::invalid_argument(format!(
                "denoiser input len {} != solution dim {}",
                y_t.len(),
                c.solution_dim
            )));
        }
        if t == 0 || t > c.max_step {
            return Err(Error::invalid_argument(format!(
                "denoiser timestep {t} outside [1, {}]",
                c.max_step
            )));
        }
        if !y_t.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid_argument("denoiser input must be finite"));
        }
        if let Some(x) = cond {
            if x.len() != c.condition_dim {
                return Err(Error::invalid_argument(format!(
                    "condition len {} != condition dim {}",
                    x.len(),
                    c.condition_dim
                )));
            }
        }

        ws.forward_done = false;
        ws.t4.copy_from_slice(&ws.t4_cache[t]);
        self.time_proj.forward_into(&ws.t4, &mut ws.te)?;
        match cond {
            Some(x) => {
                ws.cond.clear();
                ws.cond.extend_from_slice(x);
                ws.is_null = false;
                self.cond_embed.forward_into(x, &mut ws.ce)?;
            }
            None => {
                ws.cond.clear();
                ws.is_null = true;
                ws.ce.copy_from_slice(&self.null_embed);
            }
        }
        ws.y_t.clear();
        ws.y_t.extend_from_slice(y_t);

        self.input_embed.forward_into(y_t, &mut ws.d_out[0])?;
        for k in 0..c.depth {
            let (prev, rest) = ws.d_out.split_at_mut(k + 1);
            self.down[k].forward(&prev[k], &ws.te, &ws.ce, &mut ws.down_cache[k])?;
            rest[0].copy_from_slice(&ws.down_cache[k].out);
        }
        ws.v[0].copy_from_slice(&ws.d_out[c.depth]);
        for i in 0..c.depth {
            let skip_stage = c.depth - i - 1;
            {
                let (prev, _) = ws.v.split_at_mut(i + 1);
                self.up[i].forward(&prev[i], &ws.te, &ws.ce, &mut ws.up_cache[i])?;
            }
            self.skip_proj[i].forward_into(&ws.d_out[skip_stage], &mut ws.skip_out[i])?;
            let up_out = &ws.up_cache[i].out;
            let skip_out = &ws.skip_out[i];
            for (o, (a, b)) in ws.v[i + 1].iter_mut().zip(up_out.iter().zip(skip_out.iter())) {
                *o = a + b;
            }
        }
        self.head.forward_into(&ws.v[c.depth], &mut ws.eps_hat)?;
        ws.forward_done = true;
        Ok(())
    }

    /// Reverse-mode gradients for every parameter given the upstream
    /// gradient w.r.t. the network output. Requires a prior
    /// [`forward_cached`](Self::forward_cached) on the same workspace.
    /// Gradients are accumulated into `grads`.
    pub fn backward(
        &self,
        ws: &mut Workspace,
        upstream: &[f64],
        grads: &mut DenoiserGrads,
    ) -> Result<()> {
        let c = &self.config;
        if !ws.forward_done {
            return Err(Error::InvalidState(
                "denoiser backward called without a cached forward pass".into(),
            ));
        }
        if upstream.len() != c.solution_dim {
            return Err(Error::invalid_argument(format!(
                "upstream len {} != solution dim {}",
                upstream.len(),
                c.solution_dim
            )));
        }

        ws.d_te.fill(0.0);
        ws.d_ce.fill(0.0);
        for buf in ws.d_dout.iter_mut() {
            buf.fill(0.0);
        }

        // Head.
        ws.d_v[c.depth].fill(0.0);
        self.head.backward_into(&ws.v[c.depth], upstream, &mut grads.head, &mut ws.d_v[c.depth])?;

        // Up path, reverse order. d_v[i+1] holds the gradient w.r.t. the
        // combined (block + skip) output of up step i.
        for i in (0..c.depth).rev() {
            let skip_stage = c.depth - i - 1;
            let upstream_i = std::mem::take(&mut ws.d_v[i + 1]);
            self.up[i].backward(
                &ws.up_cache[i],
                &ws.te,
                &ws.ce,
                &upstream_i,
                &mut grads.up[i],
                &mut ws.d_te,
                &mut ws.d_ce,
                &mut ws.up_scratch[i],
            )?;
            self.skip_proj[i].backward_into(
                &ws.d_out[skip_stage],
                &upstream_i,
                &mut grads.skip_proj[i],
                &mut ws.d_dout[skip_stage],
            )?;
            ws.d_v[i + 1] = upstream_i;
            ws.d_v[i].fill(0.0);
            let du = &ws.up_scratch[i].du;
            for (acc, g) in ws.d_v[i].iter_mut().zip(du.iter()) {
                *acc += g;
            }
        }
        // Bottleneck gradient feeds the last down stage's output.
        {
            let dv0 = &ws.d_v[0];
            for (acc, g) in ws.d_dout[c.depth].iter_mut().zip(dv0.iter()) {
                *acc += g;
            }
        }

        // Down path.
        for k in (0..c.depth).rev() {
            let upstream_k = std::mem::take(&mut ws.d_dout[k + 1]);
            self.down[k].backward(
                &ws.down_cache[k],
                &ws.te,
                &ws.ce,
                &upstream_k,
                &mut grads.down[k],
                &mut ws.d_te,
                &mut ws.d_ce,
                &mut ws.down_scratch[k],
            )?;
            ws.d_dout[k + 1] = upstream_k;
            let du = &ws.down_scratch[k].du;
            for (acc, g) in ws.d_dout[k].iter_mut().zip(du.iter()) {
                *acc += g;
            }
        }

        // Leaf layers: inputs are constants, so only parameter gradients.
        self.input_embed.backward_params_only(&ws.y_t, &ws.d_dout[0], &mut grads.input_embed)?;
        self.time_proj.backward_params_only(&ws.t4, &ws.d_te, &mut grads.time_proj)?;
        if ws.is_null {
            for (g, d) in grads.null_embed.iter_mut().zip(ws.d_ce.iter()) {
                *g += d;
            }
        } else {
            self.cond_embed.backward_params_only(&ws.cond, &ws.d_ce, &mut grads.cond_embed)?;
        }
        Ok(())
    }

    /// Ordered flat views over every parameter array; the canonical order
    /// shared with [`DenoiserGrads::blocks`], the optimizer, and
    /// checkpoints.
    pub fn blocks(&self) -> Vec<&[f64]> {
        fn dense<'a>(out: &mut Vec<&'a [f64]>, l: &'a DenseLayer) {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        let mut out: Vec<&[f64]> = Vec::new();
        dense(&mut out, &self.input_embed);
        dense(&mut out, &self.time_proj);
        dense(&mut out, &self.cond_embed);
        out.push(self.null_embed.as_slice());
        for b in &self.down {
            for l in [&b.time_in, &b.cond_in, &b.lin1, &b.lin2, &b.res] {
                dense(&mut out, l);
            }
        }
        for b in &self.up {
            for l in [&b.time_in, &b.cond_in, &b.lin1, &b.lin2, &b.res] {
                dense(&mut out, l);
            }
        }
        for l in &self.skip_proj {
            dense(&mut out, l);
        }
        dense(&mut out, &self.head);
        out
    }

    /// Mutable counterpart of [`blocks`](Self::blocks), same order.
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        fn dense<'a>(out: &mut Vec<&'a mut [f64]>, l: &'a mut DenseLayer) {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        let mut out: Vec<&mut [f64]> = Vec::new();
        dense(&mut out, &mut self.input_embed);
        dense(&mut out, &mut self.time_proj);
        dense(&mut out, &mut self.cond_embed);
        out.push(self.null_embed.as_mut_slice());
        for b in &mut self.down {
            dense(&mut out, &mut b.time_in);
            dense(&mut out, &mut b.cond_in);
            dense(&mut out, &mut b.lin1);
            dense(&mut out, &mut b.lin2);
            dense(&mut out, &mut b.res);
        }
        for b in &mut self.up {
            dense(&mut out, &mut b.time_in);
            dense(&mut out, &mut b.cond_in);
            dense(&mut out, &mut b.lin1);
            dense(&mut out, &mut b.lin2);
            dense(&mut out, &mut b.res);
        }
        for l in &mut self.skip_proj {
            dense(&mut out, l);
        }
        dense(&mut out, &mut self.head);
        out
    }

    /// Named parameter arrays with shapes (`[out, in]` for weights,
    /// `[len]` for vectors) in canonical order, for checkpointing.
    pub fn named_arrays(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        fn dense<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: String, l: &'a DenseLayer) {
            out.push((format!("{name}.weight"), vec![l.out_dim(), l.in_dim()], l.weight.as_slice()));
            out.push((format!("{name}.bias"), vec![l.out_dim()], l.bias.as_slice()));
        }
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        dense(&mut out, "input_embed".into(), &self.input_embed);
        dense(&mut out, "time_proj".into(), &self.time_proj);
        dense(&mut out, "cond_embed".into(), &self.cond_embed);
        out.push(("null_embed".into(), vec![self.null_embed.len()], self.null_embed.as_slice()));
        for (k, b) in self.down.iter().enumerate() {
            dense(&mut out, format!("down.{k}.time_in"), &b.time_in);
            dense(&mut out, format!("down.{k}.cond_in"), &b.cond_in);
            dense(&mut out, format!("down.{k}.lin1"), &b.lin1);
            dense(&mut out, format!("down.{k}.lin2"), &b.lin2);
            dense(&mut out, format!("down.{k}.res"), &b.res);
        }
        for (k, b) in self.up.iter().enumerate() {
            dense(&mut out, format!("up.{k}.time_in"), &b.time_in);
            dense(&mut out, format!("up.{k}.cond_in"), &b.cond_in);
            dense(&mut out, format!("up.{k}.lin1"), &b.lin1);
            dense(&mut out, format!("up.{k}.lin2"), &b.lin2);
            dense(&mut out, format!("up.{k}.res"), &b.res);
        }
        for (k, l) in self.skip_proj.iter().enumerate() {
            dense(&mut out, format!("skip_proj.{k}"), l);
        }
        dense(&mut out, "head".into(), &self.head);
        out
    }

    /// Rebuilds parameters from named arrays (checkpoint loading).
    pub fn from_named_arrays(
        config: DenoiserConfig,
        mut lookup: impl FnMut(&str) -> Option<Vec<f64>>,
    ) -> Result<Self> {
        let mut params = DenoiserParams::init(config, &mut Rng::new(0))?;
        let names: Vec<(String, usize)> = params
            .named_arrays()
            .iter()
            .map(|(n, _, d)| (n.clone(), d.len()))
            .collect();
        let mut blocks = params.blocks_mut();
        for (idx, (name, want_len)) in names.iter().enumerate() {
            let data = lookup(name).ok_or_else(|| {
                Error::invalid_argument(format!("checkpoint missing array {name}"))
            })?;
            if data.len() != *want_len {
                return Err(Error::invalid_argument(format!(
                    "checkpoint array {name} has {} values, expected {want_len}",
                    data.len()
                )));
            }
            if !data.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid_argument(format!(
                    "checkpoint array {name} contains non-finite values"
                )));
            }
            blocks[idx].copy_from_slice(&data);
        }
        drop(blocks);
        Ok(params)
    }

    /// True when every parameter is finite.
    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| crate::nn::all_finite(b))
    }
}

/// Pre-sized buffers for one forward/backward pass. Reuse across calls to
/// avoid per-sample allocation; one workspace per thread.
#[derive(Debug, Clone)]
pub struct Workspace {
    t4: Vec<f64>,
    te: Vec<f64>,
    ce: Vec<f64>,
    cond: Vec<f64>,
    y_t: Vec<f64>,
    is_null: bool,
    /// d_out[k] = output of down stage k (d_out[0] = input embedding).
    d_out: Vec<Vec<f64>>,
    /// v[i] = input of up block i; v[depth] = final hidden state.
    v: Vec<Vec<f64>>,
    skip_out: Vec<Vec<f64>>,
    down_cache: Vec<BlockCache>,
    up_cache: Vec<BlockCache>,
    down_scratch: Vec<BlockScratch>,
    up_scratch: Vec<BlockScratch>,
    /// Network output of the last forward pass.
    pub eps_hat: Vec<f64>,
    forward_done: bool,
    d_te: Vec<f64>,
    d_ce: Vec<f64>,
    d_dout: Vec<Vec<f64>>,
    d_v: Vec<Vec<f64>>,
    /// Sinusoidal embeddings precomputed for every timestep.
    t4_cache: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn new(config: &DenoiserConfig) -> Self {
        let n = config.depth;
        let h = config.hidden;
        let mut d_out = Vec::with_capacity(n + 1);
        let mut v = Vec::with_capacity(n + 1);
        let mut skip_out = Vec::with_capacity(n);
        let mut down_cache = Vec::with_capacity(n);
        let mut up_cache = Vec::with_capacity(n);
        let mut down_scratch = Vec::with_capacity(n);
        let mut up_scratch = Vec::with_capacity(n);
        for k in 0..=n {
            d_out.push(vec![0.0; config.width(k)]);
            v.push(vec![0.0; config.width(n - k)]);
        }
        for k in 0..n {
            down_cache.push(BlockCache::sized(config.width(k), config.width(k + 1)));
            down_scratch.push(BlockScratch::sized(config.width(k), config.width(k + 1)));
            let w_in = config.width(n - k);
            let w_out = config.width(n - k - 1);
            up_cache.push(BlockCache::sized(w_in, w_out));
            up_scratch.push(BlockScratch::sized(w_in, w_out));
            skip_out.push(vec![0.0; w_out]);
        }
        let d_dout = d_out.clone();
        let d_v = v.clone();
        let t4_cache: Vec<Vec<f64>> = (0..=config.max_step)
            .map(|t| time_embed(t, config.time_dim(), config.max_step).expect("valid by range"))
            .collect();
        Workspace {
            t4: vec![0.0; config.time_dim()],
            te: vec![0.0; h],
            ce: vec![0.0; h],
            cond: Vec::with_capacity(config.condition_dim),
            y_t: Vec::with_capacity(config.solution_dim),
            is_null: false,
            d_out,
            v,
            skip_out,
            down_cache,
            up_cache,
            down_scratch,
            up_scratch,
            eps_hat: vec![0.0; config.solution_dim],
            forward_done: false,
            d_te: vec![0.0; h],
            d_ce: vec![0.0; h],
            d_dout,
            d_v,
            t4_cache,
        }
    }
}

/// Gradient buffers mirroring [`DenoiserParams`].
#[derive(Debug, Clone)]
pub struct DenoiserGrads {
    input_embed: DenseGrad,
    time_proj: DenseGrad,
    cond_embed: DenseGrad,
    pub null_embed: Vec<f64>,
    down: Vec<ResBlockGrad>,
    up: Vec<ResBlockGrad>,
    skip_proj: Vec<DenseGrad>,
    head: DenseGrad,
}

impl DenoiserGrads {
    pub fn zeros_like(params: &DenoiserParams) -> Self {
        DenoiserGrads {
            input_embed: DenseGrad::zeros_like(&params.input_embed),
            time_proj: DenseGrad::zeros_like(&params.time_proj),
            cond_embed: DenseGrad::zeros_like(&params.cond_embed),
            null_embed: vec![0.0; params.null_embed.len()],
            down: params.down.iter().map(ResBlockGrad::zeros_like).collect(),
            up: params.up.iter().map(ResBlockGrad::zeros_like).collect(),
            skip_proj: params.skip_proj.iter().map(DenseGrad::zeros_like).collect(),
            head: DenseGrad::zeros_like(&params.head),
        }
    }

    pub fn fill_zero(&mut self) {
        self.input_embed.fill_zero();
        self.time_proj.fill_zero();
        self.cond_embed.fill_zero();
        self.null_embed.fill(0.0);
        for b in &mut self.down {
            b.fill_zero();
        }
        for b in &mut self.up {
            b.fill_zero();
        }
        for l in &mut self.skip_proj {
            l.fill_zero();
        }
        self.head.fill_zero();
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.blocks_mut() {
            for g in b {
                *g *= factor;
            }
        }
    }

    /// Flat views in the canonical parameter order.
    pub fn blocks(&self) -> Vec<&[f64]> {
        fn dense<'a>(out: &mut Vec<&'a [f64]>, g: &'a DenseGrad) {
            out.push(&g.weight);
            out.push(&g.bias);
        }
        let mut out: Vec<&[f64]> = Vec::new();
        dense(&mut out, &self.input_embed);
        dense(&mut out, &self.time_proj);
        dense(&mut out, &self.cond_embed);
        out.push(&self.null_embed);
        for b in &self.down {
            for g in [&b.time_in, &b.cond_in, &b.lin1, &b.lin2, &b.res] {
                dense(&mut out, g);
            }
        }
        for b in &self.up {
            for g in [&b.time_in, &b.cond_in, &b.lin1, &b.lin2, &b.res] {
                dense(&mut out, g);
            }
        }
        for g in &self.skip_proj {
            dense(&mut out, g);
        }
        dense(&mut out, &self.head);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        fn dense<'a>(out: &mut Vec<&'a mut [f64]>, g: &'a mut DenseGrad) {
            out.push(g.weight.as_mut_slice());
            out.push(g.bias.as_mut_slice());
        }
        let mut out: Vec<&mut [f64]> = Vec::new();
        dense(&mut out, &mut self.input_embed);
        dense(&mut out, &mut self.time_proj);
        dense(&mut out, &mut self.cond_embed);
        out.push(self.null_embed.as_mut_slice());
        for b in &mut self.down {
            dense(&mut out, &mut b.time_in);
            dense(&mut out, &mut b.cond_in);
            dense(&mut out, &mut b.lin1);
            dense(&mut out, &mut b.lin2);
            dense(&mut out, &mut b.res);
        }
        for b in &mut self.up {
            dense(&mut out, &mut b.time_in);
            dense(&mut out, &mut b.cond_in);
            dense(&mut out, &mut b.lin1);
            dense(&mut out, &mut b.lin2);
            dense(&mut out, &mut b.res);
        }
        for g in &mut self.skip_proj {
            dense(&mut out, g);
        }
        dense(&mut out, &mut self.head);
        out
    }
}
