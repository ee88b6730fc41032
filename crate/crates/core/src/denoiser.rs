//! Conditional x0 predictor.
//!
//! Two encoder towers read the noisy interaction vector. The category-aware
//! tower also sees an embedding of the target category preference; the
//! category-agnostic tower does not. The decoder maps both latents plus a
//! sinusoidal step embedding back to item scores, and a linear head predicts
//! the category preference from the aware latent.
//!
//! ```text
//! c      = tanh(y W_c + b_c)
//! z_aw   = tanh(tanh([x, c] W_a1 + b_a1) W_a2 + b_a2)
//! z_ag   = tanh(tanh(x W_g1 + b_g1) W_g2 + b_g2)
//! x0_hat = tanh([z_aw, z_ag, emb(t)] W_d1 + b_d1) W_d2 + b_d2
//! logits = z_aw W_h + b_h
//! ```
//!
//! The all-zero condition is the unconditional token.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nnet::{
    dense_backward, dense_forward, dropout_mask, xavier_uniform, Activation, DenseCache, ParamId,
    ParamStore, Tensor2,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub n_items: usize,
    pub n_categories: usize,
    pub hidden: usize,
    pub latent: usize,
    pub step_embed_dim: usize,
    pub cond_embed_dim: usize,
    /// Dropout probability on the interaction input, train mode only.
    pub dropout: f64,
}

impl DenoiserConfig {
    pub fn new(n_items: usize, n_categories: usize) -> Self {
        Self {
            n_items,
            n_categories,
            hidden: 600,
            latent: 200,
            step_embed_dim: 16,
            cond_embed_dim: 16,
            dropout: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_items > 0 && self.n_categories > 0, Config, "empty item or category space");
        ensure!(self.hidden > 0 && self.latent > 0, Config, "hidden and latent must be positive");
        ensure!(self.latent <= self.hidden, Config, "latent ({}) exceeds hidden ({})", self.latent, self.hidden);
        ensure!(
            self.step_embed_dim > 0 && self.step_embed_dim.is_multiple_of(2),
            Config,
            "step_embed_dim must be positive and even, got {}",
            self.step_embed_dim
        );
        ensure!(self.cond_embed_dim > 0, Config, "cond_embed_dim must be positive");
        ensure!((0.0..1.0).contains(&self.dropout), Config, "dropout must be in [0, 1)");
        Ok(())
    }
}

/// Sinusoidal embedding: pairs `sin(t w_k), cos(t w_k)` with
/// `w_k = 10000^(-2k/dim)`.
pub fn timestep_embedding(t: usize, dim: usize) -> Result<Array1<f64>> {
    ensure!(dim.is_multiple_of(2), Config, "step embedding dimension must be even, got {dim}");
    let mut out = Array1::zeros(dim);
    for k in 0..dim / 2 {
        let freq = 10000f64.powf(-2.0 * k as f64 / dim as f64);
        let arg = t as f64 * freq;
        out[2 * k] = arg.sin();
        out[2 * k + 1] = arg.cos();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    fn forward(&self, store: &ParamStore, x: &Tensor2, act: Activation) -> Result<(Tensor2, DenseCache)> {
        dense_forward(x, store.value(self.w), &store.bias(self.b), act)
    }

    /// Accumulates parameter grads and returns the input grad.
    fn backward(&self, store: &mut ParamStore, cache: &DenseCache, grad_out: &Tensor2) -> Result<Tensor2> {
        let g = dense_backward(cache, store.value(self.w), grad_out)?;
        store.accumulate_grad(self.w, &g.weight);
        store.accumulate_bias_grad(self.b, &g.bias);
        Ok(g.input)
    }
}

#[derive(Debug, Clone, Copy)]
struct Layers {
    cond: Dense,
    aware1: Dense,
    aware2: Dense,
    agnostic1: Dense,
    agnostic2: Dense,
    decoder1: Dense,
    decoder2: Dense,
    head: Dense,
}

impl Layers {
    fn lookup(store: &ParamStore) -> Result<Self> {
        let get = |name: &str| -> Result<Dense> {
            let w = store.id(&format!("{name}.w"));
            let b = store.id(&format!("{name}.b"));
            match (w, b) {
                (Some(w), Some(b)) => Ok(Dense { w, b }),
                _ => Err(crate::Error::Data(format!("checkpoint lacks layer {name}"))),
            }
        };
        Ok(Self {
            cond: get("cond")?,
            aware1: get("aware1")?,
            aware2: get("aware2")?,
            agnostic1: get("agnostic1")?,
            agnostic2: get("agnostic2")?,
            decoder1: get("decoder1")?,
            decoder2: get("decoder2")?,
            head: get("head")?,
        })
    }
}

/// Layer names and `(fan_in, fan_out)` in parameter-store order.
fn layer_shapes(cfg: &DenoiserConfig) -> [(&'static str, usize, usize); 8] {
    let (i, c, h, l) = (cfg.n_items, cfg.n_categories, cfg.hidden, cfg.latent);
    [
        ("cond", c, cfg.cond_embed_dim),
        ("aware1", i + cfg.cond_embed_dim, h),
        ("aware2", h, l),
        ("agnostic1", i, h),
        ("agnostic2", h, l),
        ("decoder1", 2 * l + cfg.step_embed_dim, h),
        ("decoder2", h, i),
        ("head", l, c),
    ]
}

/// Everything a backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub x0_hat: Tensor2,
    pub z_aware: Tensor2,
    pub z_agnostic: Tensor2,
    pub cate_logits: Tensor2,
    cond: DenseCache,
    aware1: DenseCache,
    aware2: DenseCache,
    agnostic1: DenseCache,
    agnostic2: DenseCache,
    decoder1: DenseCache,
    decoder2: DenseCache,
    head: DenseCache,
}

/// Loss gradients with respect to the forward outputs.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub x0_hat: Tensor2,
    pub z_aware: Tensor2,
    pub z_agnostic: Tensor2,
    pub cate_logits: Tensor2,
}

/// Single-row prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub x0_hat: Array1<f64>,
    pub z_aware: Array1<f64>,
    pub z_agnostic: Array1<f64>,
    pub cate_logits: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    layers: Layers,
    pub params: ParamStore,
}

impl Denoiser {
    /// Xavier-uniform weights, zero biases.
    pub fn init(cfg: DenoiserConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, fan_in, fan_out) in layer_shapes(&cfg) {
            store.add(&format!("{name}.w"), xavier_uniform(fan_in, fan_out, &mut rng))?;
            store.add(&format!("{name}.b"), Array2::zeros((1, fan_out)))?;
        }
        Self::from_params(cfg, store)
    }

    pub fn from_params(cfg: DenoiserConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let layers = Layers::lookup(&params)?;
        for (name, fan_in, fan_out) in layer_shapes(&cfg) {
            let w = params.value(params.id(&format!("{name}.w")).unwrap());
            let b = params.value(params.id(&format!("{name}.b")).unwrap());
            ensure!(
                w.dim() == (fan_in, fan_out) && b.dim() == (1, fan_out),
                Data,
                "layer {name} has shape {:?}, config expects ({fan_in}, {fan_out})",
                w.dim()
            );
        }
        Ok(Self { cfg, layers, params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    /// Batched forward pass. `input_mask`, when given, multiplies `x_t`
    /// elementwise (dropout).
    pub fn forward(
        &self,
        params: &ParamStore,
        x_t: &Tensor2,
        steps: &[usize],
        cond: &Tensor2,
        input_mask: Option<&Tensor2>,
    ) -> Result<ForwardPass> {
        let cfg = &self.cfg;
        let rows = x_t.nrows();
        ensure!(
            x_t.ncols() == cfg.n_items && cond.dim() == (rows, cfg.n_categories) && steps.len() == rows,
            Contract,
            "batch shapes: x_t {:?}, cond {:?}, {} steps",
            x_t.dim(),
            cond.dim(),
            steps.len()
        );
        ensure!(
            cond.iter().all(|&v| v >= 0.0 && v.is_finite()),
            Contract,
            "condition entries must be finite and nonnegative"
        );
        let x_in = match input_mask {
            Some(mask) => {
                ensure!(mask.dim() == x_t.dim(), Contract, "dropout mask shape {:?}", mask.dim());
                x_t * mask
            }
            None => x_t.clone(),
        };
        let l = self.layers;
        let (c, cond_cache) = l.cond.forward(params, cond, Activation::Tanh)?;
        let aware_in = concatenate![Axis(1), x_in, c];
        let (h_aw, aware1) = l.aware1.forward(params, &aware_in, Activation::Tanh)?;
        let (z_aware, aware2) = l.aware2.forward(params, &h_aw, Activation::Tanh)?;
        let (h_ag, agnostic1) = l.agnostic1.forward(params, &x_in, Activation::Tanh)?;
        let (z_agnostic, agnostic2) = l.agnostic2.forward(params, &h_ag, Activation::Tanh)?;

        let mut step_emb = Array2::zeros((rows, cfg.step_embed_dim));
        for (r, &t) in steps.iter().enumerate() {
            step_emb.row_mut(r).assign(&timestep_embedding(t, cfg.step_embed_dim)?);
        }
        let dec_in = concatenate![Axis(1), z_aware, z_agnostic, step_emb];
        let (h_dec, decoder1) = l.decoder1.forward(params, &dec_in, Activation::Tanh)?;
        let (x0_hat, decoder2) = l.decoder2.forward(params, &h_dec, Activation::Identity)?;
        let (cate_logits, head) = l.head.forward(params, &z_aware, Activation::Identity)?;

        Ok(ForwardPass {
            x0_hat,
            z_aware,
            z_agnostic,
            cate_logits,
            cond: cond_cache,
            aware1,
            aware2,
            agnostic1,
            agnostic2,
            decoder1,
            decoder2,
            head,
        })
    }

    /// Accumulates parameter gradients of a scalar loss into `params`.
    pub fn backward(&self, params: &mut ParamStore, pass: &ForwardPass, grads: &OutputGrads) -> Result<()> {
        let l = self.layers;
        let latent = self.cfg.latent;
        let n_items = self.cfg.n_items;

        let d_h_dec = l.decoder2.backward(params, &pass.decoder2, &grads.x0_hat)?;
        let d_dec_in = l.decoder1.backward(params, &pass.decoder1, &d_h_dec)?;
        let d_z_head = l.head.backward(params, &pass.head, &grads.cate_logits)?;

        let d_z_aware = &grads.z_aware + &d_dec_in.slice(s![.., ..latent]) + &d_z_head;
        let d_z_agnostic = &grads.z_agnostic + &d_dec_in.slice(s![.., latent..2 * latent]);

        let d_h_aw = l.aware2.backward(params, &pass.aware2, &d_z_aware)?;
        let d_aware_in = l.aware1.backward(params, &pass.aware1, &d_h_aw)?;
        let d_c = d_aware_in.slice(s![.., n_items..]).to_owned();
        l.cond.backward(params, &pass.cond, &d_c)?;

        let d_h_ag = l.agnostic2.backward(params, &pass.agnostic2, &d_z_agnostic)?;
        l.agnostic1.backward(params, &pass.agnostic1, &d_h_ag)?;
        Ok(())
    }

    /// Batched eval-mode x0 prediction.
    pub fn predict_batch(&self, x_t: &Tensor2, steps: &[usize], cond: &Tensor2) -> Result<Tensor2> {
        Ok(self.forward(&self.params, x_t, steps, cond, None)?.x0_hat)
    }

    /// Single-row prediction. In train mode the input dropout mask is drawn
    /// from `dropout_seed`.
    pub fn predict_x0(
        &self,
        x_t: ArrayView1<'_, f64>,
        t: usize,
        y_cond: ArrayView1<'_, f64>,
        train_mode: bool,
        dropout_seed: u64,
    ) -> Result<DenoiserOutput> {
        let x = x_t.to_owned().insert_axis(Axis(0));
        let y = y_cond.to_owned().insert_axis(Axis(0));
        let mask = train_mode.then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            dropout_mask(1, self.cfg.n_items, self.cfg.dropout, &mut rng)
        });
        let pass = self.forward(&self.params, &x, &[t], &y, mask.as_ref())?;
        Ok(DenoiserOutput {
            x0_hat: pass.x0_hat.row(0).to_owned(),
            z_aware: pass.z_aware.row(0).to_owned(),
            z_agnostic: pass.z_agnostic.row(0).to_owned(),
            cate_logits: pass.cate_logits.row(0).to_owned(),
        })
    }
}
