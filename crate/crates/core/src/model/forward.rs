use super::params::{Block, ModelParams, Params, WindowBlock};
use super::{FusionMode, ModelConfig, INPUT_DIM};
use crate::error::{Error, Result};
use crate::featurize::FeatureWindowSet;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Per-frame `silu(layer_norm(x·W + b))` for one window, `T×D`.
pub fn window_frame_activations<F: Real>(
    tape: &mut Tape<'_, F>,
    wb: &WindowBlock<Var>,
    window: Var,
    eps: F,
) -> Result<Var> {
    if tape.value(window).cols() != INPUT_DIM {
        return Err(Error::Shape(format!("window block input {:?}", tape.value(window).shape())));
    }
    let z = tape.matmul(window, wb.proj_w)?;
    let z = tape.add_row_bias(z, wb.proj_b)?;
    let z = tape.layer_norm(z, wb.ln_gain, wb.ln_bias, eps)?;
    tape.silu(z)
}

/// Compresses a `T×54` window into one `1×D` token (mean over frames).
pub fn window_block_forward<F: Real>(
    tape: &mut Tape<'_, F>,
    wb: &WindowBlock<Var>,
    window: Var,
    eps: F,
) -> Result<Var> {
    let a = window_frame_activations(tape, wb, window, eps)?;
    tape.mean_rows(a)
}

/// `H₁ = H + time_mix(LN(H))`, `H₂ = H₁ + silu(FC(LN(H₁)))`.
///
/// `time_mask`, when present, is a constant tape value multiplied into the
/// time map.
pub fn mlp_block_forward<F: Real>(
    tape: &mut Tape<'_, F>,
    block: &Block<Var>,
    h: Var,
    time_mask: Option<Var>,
    eps: F,
) -> Result<Var> {
    let expected = tape.value(block.time_w).cols();
    if tape.value(h).rows() != expected {
        return Err(Error::Shape(format!(
            "block expects {expected} frames, got {:?}",
            tape.value(h).shape()
        )));
    }
    let n1 = tape.layer_norm(h, block.ln1_gain, block.ln1_bias, eps)?;
    let w = match time_mask {
        Some(m) => tape.mul(block.time_w, m)?,
        None => block.time_w,
    };
    let mixed = tape.time_mix(n1, w)?;
    let h1 = tape.add(h, mixed)?;
    let n2 = tape.layer_norm(h1, block.ln2_gain, block.ln2_bias, eps)?;
    let f = tape.matmul(n2, block.fc_w)?;
    let f = tape.add_row_bias(f, block.fc_b)?;
    let f = tape.silu(f)?;
    tape.add(h1, f)
}

/// Merges window tokens into the trunk latent `h` (`T×D`).
pub fn fuse_latents<F: Real>(
    tape: &mut Tape<'_, F>,
    h: Var,
    tokens: &[Var],
    weight: Var,
    mode: FusionMode,
) -> Result<Var> {
    match mode {
        FusionMode::Time => {
            let (cols, t) = (tape.value(weight).cols(), tape.value(h).rows());
            if cols != t + tokens.len() {
                return Err(Error::Shape(format!(
                    "fusion map has {cols} inputs for {t} frames and {} tokens",
                    tokens.len()
                )));
            }
            let mut parts = Vec::with_capacity(tokens.len() + 1);
            parts.push(h);
            parts.extend_from_slice(tokens);
            let cat = tape.concat_time(&parts)?;
            tape.time_mix(cat, weight)
        }
        FusionMode::Feature => {
            let t = tape.value(h).rows();
            let mut parts = vec![h];
            for &tok in tokens {
                parts.push(tape.broadcast_rows(tok, t)?);
            }
            let cat = tape.concat_features(&parts)?;
            tape.matmul(cat, weight)
        }
    }
}

/// Input projection, blocks with fusion, output projection. `tokens` are the
/// `1×D` window latents, nearest window first.
pub fn trunk_forward<F: Real>(
    tape: &mut Tape<'_, F>,
    p: &Params<Var>,
    config: &ModelConfig,
    current: Var,
    tokens: &[Var],
) -> Result<Var> {
    let eps = F::lit(config.ln_eps);
    let mask = config.time_mask::<F>().map(|m| tape.constant(m));
    let h = tape.matmul(current, p.input_w)?;
    let mut h = tape.add_row_bias(h, p.input_b)?;
    let fusion_layers = config.active_fusion_layers();
    let mut next_fusion = 0;
    for (l, block) in p.blocks.iter().enumerate() {
        h = mlp_block_forward(tape, block, h, mask, eps)?;
        if fusion_layers.get(next_fusion) == Some(&(l + 1)) {
            h = fuse_latents(tape, h, tokens, p.fusion[next_fusion], config.fusion)?;
            next_fusion += 1;
        }
    }
    let y = tape.matmul(h, p.output_w)?;
    tape.add_row_bias(y, p.output_b)
}

fn check_windows(config: &ModelConfig, windows: &FeatureWindowSet) -> Result<()> {
    let want = [config.window, INPUT_DIM];
    if windows.current.shape() != want {
        return Err(Error::Shape(format!("current window {:?}, model wants {want:?}", windows.current.shape())));
    }
    if windows.past.len() != config.past_windows {
        return Err(Error::Shape(format!(
            "{} past windows, model wants {}",
            windows.past.len(),
            config.past_windows
        )));
    }
    if let Some(bad) = windows.past.iter().find(|w| w.shape() != want) {
        return Err(Error::Shape(format!("past window {:?}, model wants {want:?}", bad.shape())));
    }
    Ok(())
}

/// Full forward pass recorded on `tape`; returns the `T×132` prediction.
pub fn forward<F: Real>(
    tape: &mut Tape<'_, F>,
    p: &Params<Var>,
    config: &ModelConfig,
    windows: &FeatureWindowSet,
) -> Result<Var> {
    check_windows(config, windows)?;
    let eps = F::lit(config.ln_eps);
    let current = tape.constant(windows.current.cast());
    let mut tokens = Vec::with_capacity(windows.past.len());
    for (wb, past) in p.windows.iter().zip(&windows.past) {
        let x = tape.constant(past.cast());
        tokens.push(window_block_forward(tape, wb, x, eps)?);
    }
    trunk_forward(tape, p, config, current, &tokens)
}

/// Inference: `T×132` prediction without recording gradients.
pub fn predict<F: Real>(params: &ModelParams<F>, windows: &FeatureWindowSet) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let y = forward(&mut tape, &p, &params.config, windows)?;
    Ok(tape.value(y).clone())
}

/// Inference from precomputed window tokens.
pub fn predict_with_tokens<F: Real>(
    params: &ModelParams<F>,
    current: &Tensor<f64>,
    tokens: &[Tensor<F>],
) -> Result<Tensor<F>> {
    if current.shape() != [params.config.window, INPUT_DIM] {
        return Err(Error::Shape(format!("current window {:?}", current.shape())));
    }
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let cur = tape.constant(current.cast());
    let toks: Vec<Var> = tokens.iter().map(|t| tape.constant_ref(t)).collect();
    let y = trunk_forward(&mut tape, &p, &params.config, cur, &toks)?;
    Ok(tape.value(y).clone())
}

/// The plain MLP without any window machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseMlp<F: Real> {
    pub config: ModelConfig,
    pub input_w: Tensor<F>,
    pub input_b: Tensor<F>,
    pub blocks: Vec<Block<Tensor<F>>>,
    pub output_w: Tensor<F>,
    pub output_b: Tensor<F>,
}

impl<F: Real> BaseMlp<F> {
    /// Takes the trunk of a model that has no past windows.
    pub fn from_params(params: ModelParams<F>) -> Result<Self> {
        if params.config.past_windows != 0 {
            return Err(Error::Config("base MLP needs K = 0".into()));
        }
        let t = params.tensors;
        Ok(Self {
            config: params.config,
            input_w: t.input_w,
            input_b: t.input_b,
            blocks: t.blocks,
            output_w: t.output_w,
            output_b: t.output_b,
        })
    }
}

/// Forward pass of [`BaseMlp`] on one `T×54` window.
pub fn base_forward<F: Real>(model: &BaseMlp<F>, window: &Tensor<f64>) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let eps = F::lit(model.config.ln_eps);
    let mask = model.config.time_mask::<F>().map(|m| tape.constant(m));
    let x = tape.constant(window.cast());
    let w_in = tape.constant_ref(&model.input_w);
    let b_in = tape.constant_ref(&model.input_b);
    let h = tape.matmul(x, w_in)?;
    let mut h = tape.add_row_bias(h, b_in)?;
    for b in &model.blocks {
        let vars = Block {
            ln1_gain: tape.constant_ref(&b.ln1_gain),
            ln1_bias: tape.constant_ref(&b.ln1_bias),
            time_w: tape.constant_ref(&b.time_w),
            ln2_gain: tape.constant_ref(&b.ln2_gain),
            ln2_bias: tape.constant_ref(&b.ln2_bias),
            fc_w: tape.constant_ref(&b.fc_w),
            fc_b: tape.constant_ref(&b.fc_b),
        };
        h = mlp_block_forward(&mut tape, &vars, h, mask, eps)?;
    }
    let w_out = tape.constant_ref(&model.output_w);
    let b_out = tape.constant_ref(&model.output_b);
    let y = tape.matmul(h, w_out)?;
    let y = tape.add_row_bias(y, b_out)?;
    Ok(tape.value(y).clone())
}
