use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FusionMode, ModelConfig, INPUT_DIM, OUTPUT_DIM};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// One residual MLP block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub ln1_gain: T,
    pub ln1_bias: T,
    /// `T×T` time map.
    pub time_w: T,
    pub ln2_gain: T,
    pub ln2_bias: T,
    /// `D×D`.
    pub fc_w: T,
    pub fc_b: T,
}

/// Compresses one past window into a token.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBlock<T> {
    /// `54×D` per-frame projection.
    pub proj_w: T,
    pub proj_b: T,
    pub ln_gain: T,
    pub ln_bias: T,
}

/// Every trainable tensor of the model, generic over storage so the same
/// structure holds values (`Tensor`) or tape handles (`Var`).
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    /// `54×D`.
    pub input_w: T,
    pub input_b: T,
    pub blocks: Vec<Block<T>>,
    pub windows: Vec<WindowBlock<T>>,
    /// One map per active fusion layer, ascending.
    pub fusion: Vec<T>,
    /// `D×132`.
    pub output_w: T,
    pub output_b: T,
    pub log_var_theta: T,
    pub log_var_rv: T,
}

impl<T> Params<T> {
    /// All entries in declaration order (the checkpoint order).
    pub fn iter(&self) -> Vec<&T> {
        let mut v = vec![&self.input_w, &self.input_b];
        for b in &self.blocks {
            v.extend([&b.ln1_gain, &b.ln1_bias, &b.time_w, &b.ln2_gain, &b.ln2_bias, &b.fc_w, &b.fc_b]);
        }
        for w in &self.windows {
            v.extend([&w.proj_w, &w.proj_b, &w.ln_gain, &w.ln_bias]);
        }
        v.extend(self.fusion.iter());
        v.extend([&self.output_w, &self.output_b, &self.log_var_theta, &self.log_var_rv]);
        v
    }

    pub fn iter_mut(&mut self) -> Vec<&mut T> {
        let mut v = vec![&mut self.input_w, &mut self.input_b];
        for b in &mut self.blocks {
            v.extend([
                &mut b.ln1_gain,
                &mut b.ln1_bias,
                &mut b.time_w,
                &mut b.ln2_gain,
                &mut b.ln2_bias,
                &mut b.fc_w,
                &mut b.fc_b,
            ]);
        }
        for w in &mut self.windows {
            v.extend([&mut w.proj_w, &mut w.proj_b, &mut w.ln_gain, &mut w.ln_bias]);
        }
        v.extend(self.fusion.iter_mut());
        v.extend([&mut self.output_w, &mut self.output_b, &mut self.log_var_theta, &mut self.log_var_rv]);
        v
    }

    /// Rebuilds the structure from entries in declaration order.
    pub fn from_ordered(config: &ModelConfig, items: Vec<T>) -> Result<Self> {
        let expected = layout(config).len();
        if items.len() != expected {
            return Err(Error::Shape(format!("expected {expected} parameter tensors, got {}", items.len())));
        }
        let mut it = items.into_iter();
        let mut next = || it.next().expect("count checked");
        let input_w = next();
        let input_b = next();
        let blocks = (0..config.blocks)
            .map(|_| Block {
                ln1_gain: next(),
                ln1_bias: next(),
                time_w: next(),
                ln2_gain: next(),
                ln2_bias: next(),
                fc_w: next(),
                fc_b: next(),
            })
            .collect();
        let windows = (0..config.past_windows)
            .map(|_| WindowBlock { proj_w: next(), proj_b: next(), ln_gain: next(), ln_bias: next() })
            .collect();
        let fusion = config.active_fusion_layers().iter().map(|_| next()).collect();
        Ok(Self {
            input_w,
            input_b,
            blocks,
            windows,
            fusion,
            output_w: next(),
            output_b: next(),
            log_var_theta: next(),
            log_var_rv: next(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Weight matrix; included in the L2 regularizer.
    Weight,
    Bias,
    NormGain,
    NormBias,
    /// Learned log-variance of a loss term.
    LogVariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: ParamKind,
    pub fan_in: usize,
}

/// Names, shapes and kinds of every tensor, in declaration order.
pub fn layout(c: &ModelConfig) -> Vec<ParamSpec> {
    let (t, d, k) = (c.window, c.width, c.past_windows);
    let spec = |name: String, rows, cols, kind, fan_in| ParamSpec { name, rows, cols, kind, fan_in };
    let mut v = vec![
        spec("input.w".into(), INPUT_DIM, d, ParamKind::Weight, INPUT_DIM),
        spec("input.b".into(), 1, d, ParamKind::Bias, INPUT_DIM),
    ];
    for l in 1..=c.blocks {
        v.extend([
            spec(format!("block{l}.ln1.gain"), 1, d, ParamKind::NormGain, d),
            spec(format!("block{l}.ln1.bias"), 1, d, ParamKind::NormBias, d),
            spec(format!("block{l}.time.w"), t, t, ParamKind::Weight, t),
            spec(format!("block{l}.ln2.gain"), 1, d, ParamKind::NormGain, d),
            spec(format!("block{l}.ln2.bias"), 1, d, ParamKind::NormBias, d),
            spec(format!("block{l}.fc.w"), d, d, ParamKind::Weight, d),
            spec(format!("block{l}.fc.b"), 1, d, ParamKind::Bias, d),
        ]);
    }
    for w in 1..=k {
        v.extend([
            spec(format!("window{w}.proj.w"), INPUT_DIM, d, ParamKind::Weight, INPUT_DIM),
            spec(format!("window{w}.proj.b"), 1, d, ParamKind::Bias, INPUT_DIM),
            spec(format!("window{w}.ln.gain"), 1, d, ParamKind::NormGain, d),
            spec(format!("window{w}.ln.bias"), 1, d, ParamKind::NormBias, d),
        ]);
    }
    for &l in c.active_fusion_layers() {
        match c.fusion {
            FusionMode::Time => v.push(spec(format!("fusion{l}.w"), t, t + k, ParamKind::Weight, t + k)),
            FusionMode::Feature => {
                v.push(spec(format!("fusion{l}.w"), d * (k + 1), d, ParamKind::Weight, d * (k + 1)))
            }
        }
    }
    v.extend([
        spec("output.w".into(), d, OUTPUT_DIM, ParamKind::Weight, d),
        spec("output.b".into(), 1, OUTPUT_DIM, ParamKind::Bias, d),
        spec("log_var.theta".into(), 1, 1, ParamKind::LogVariance, 1),
        spec("log_var.rv".into(), 1, 1, ParamKind::LogVariance, 1),
    ]);
    v
}

/// Configuration plus parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F: Real = f32> {
    pub config: ModelConfig,
    pub tensors: Params<Tensor<F>>,
}

impl<F: Real> ModelParams<F> {
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor<F>>) -> Result<Self> {
        config.validate()?;
        for (spec, t) in layout(&config).iter().zip(&tensors) {
            if t.shape() != [spec.rows, spec.cols] {
                return Err(Error::Shape(format!(
                    "{} expected {}x{}, got {:?}",
                    spec.name, spec.rows, spec.cols, t.shape()
                )));
            }
        }
        let tensors = Params::from_ordered(&config, tensors)?;
        Ok(Self { config, tensors })
    }

    pub fn layout(&self) -> Vec<ParamSpec> {
        layout(&self.config)
    }

    /// Total scalar count, including the two log-variances.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().iter().map(|t| t.len()).sum()
    }

    /// Scalar count of the network proper (log-variances excluded).
    pub fn num_network_params(&self) -> usize {
        self.layout()
            .iter()
            .zip(self.tensors.iter())
            .filter(|(s, _)| s.kind != ParamKind::LogVariance)
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        let items = self.tensors.iter().into_iter().map(|t| t.cast::<G>()).collect();
        ModelParams {
            config: self.config.clone(),
            tensors: Params::from_ordered(&self.config, items).expect("same layout"),
        }
    }

    /// Registers every tensor on `tape` by reference.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, F>, trainable: bool) -> Params<Var> {
        let vars = self
            .tensors
            .iter()
            .into_iter()
            .map(|t| if trainable { tape.param_ref(t) } else { tape.constant_ref(t) })
            .collect();
        Params::from_ordered(&self.config, vars).expect("same layout")
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().iter().all(|t| t.is_finite())
    }
}

/// Deterministic initialization: weights and biases of linear maps
/// `U(−1/√fan_in, 1/√fan_in)`, norm gains 1, norm biases 0,
/// log-variances 0.
///
/// Every tensor draws from its own stream derived from `seed` and the
/// tensor's position, so adding a window block does not perturb the trunk.
pub fn init_params<F: Real>(config: &ModelConfig, seed: u64) -> Result<ModelParams<F>> {
    config.validate()?;
    let tensors = layout(config)
        .iter()
        .map(|spec| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream_id(&spec.name));
            let bound = 1.0 / (spec.fan_in as f64).sqrt();
            match spec.kind {
                ParamKind::Weight => {
                    Tensor::from_fn(spec.rows, spec.cols, |_, _| F::lit(rng.random_range(-bound..bound)))
                }
                ParamKind::Bias | ParamKind::NormBias | ParamKind::LogVariance => Tensor::zeros(spec.rows, spec.cols),
                ParamKind::NormGain => Tensor::ones(spec.rows, spec.cols),
            }
        })
        .collect();
    ModelParams::from_tensors(config.clone(), tensors)
}

/// FNV-1a of the tensor name.
fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
