//! Training losses: L1 on 6D rotations, L1 on their frame-to-frame
//! differences, an L2 penalty on weight matrices, and either learned
//! (log-variance) or fixed weighting of the two rotation terms.
//!
//! Every loss exists twice: on plain [`PoseSequence`] values for evaluation
//! and tests, and recorded on a [`Tape`] for training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::FeatureWindowSet;
use crate::kinematics::{PoseSequence, JOINT_COUNT};
use crate::model::{forward, layout, ModelConfig, ModelParams, ParamKind, Params};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Coefficient of the L2 term in the total loss.
pub const REG_COEF: f64 = 1e-4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LossWeighting {
    /// `exp(−s)·L + s` per term with learned `s`.
    #[default]
    Uncertainty,
    Fixed { theta: f64, rv: f64 },
}

impl LossWeighting {
    pub fn fixed() -> Self {
        LossWeighting::Fixed { theta: 1.0, rv: 1.0 }
    }
}

/// Where weight decay lives. Exactly one is active.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularization {
    /// `REG_COEF · Σ w²` added to the loss.
    #[default]
    Explicit,
    /// No loss term; the optimizer applies decoupled decay instead.
    Decoupled,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    #[serde(default)]
    pub weighting: LossWeighting,
    #[serde(default)]
    pub regularization: Regularization,
}

impl ObjectiveConfig {
    fn reg_coef(&self) -> f64 {
        match self.regularization {
            Regularization::Explicit => REG_COEF,
            Regularization::Decoupled => 0.0,
        }
    }
}

/// Learned log-variances of the two rotation terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyParams {
    pub s_theta: f64,
    pub s_rv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l_theta: f64,
    pub l_rv: f64,
    pub l_reg: f64,
    pub total: f64,
    pub weight_theta: f64,
    pub weight_rv: f64,
    pub weight_reg: f64,
}

impl LossBreakdown {
    /// Reassembles the total from parts and weights.
    pub fn recompute_total(&self, u: &UncertaintyParams, weighting: LossWeighting) -> f64 {
        let offsets = match weighting {
            LossWeighting::Uncertainty => u.s_theta + u.s_rv,
            LossWeighting::Fixed { .. } => 0.0,
        };
        self.weight_theta * self.l_theta + self.weight_rv * self.l_rv + offsets + self.weight_reg * self.l_reg
    }

    pub fn is_finite(&self) -> bool {
        [self.l_theta, self.l_rv, self.l_reg, self.total, self.weight_theta, self.weight_rv]
            .iter()
            .all(|x| x.is_finite())
    }
}

fn check_pair(pred: &PoseSequence, gt: &PoseSequence) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape(format!("sequences of {} and {} frames", pred.len(), gt.len())));
    }
    Ok(())
}

fn rot_diff_l1(pred: &PoseSequence, gt: &PoseSequence, t: usize, dt: usize) -> f64 {
    let (p, g) = (&pred.frames, &gt.frames);
    let mut s = 0.0;
    for j in 0..JOINT_COUNT {
        for c in 0..6 {
            let dp = p[t + dt].rotations[j].0[c] - if dt > 0 { p[t].rotations[j].0[c] } else { 0.0 };
            let dg = g[t + dt].rotations[j].0[c] - if dt > 0 { g[t].rotations[j].0[c] } else { 0.0 };
            s += (dp - dg).abs();
        }
    }
    s
}

/// Mean over frames of the summed per-joint L1 distance between 6D rotations.
pub fn rotation_loss(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    check_pair(pred, gt)?;
    let n = pred.len();
    Ok((0..n).map(|t| rot_diff_l1(pred, gt, t, 0)).sum::<f64>() / n as f64)
}

/// Same as [`rotation_loss`] on frame-to-frame differences.
pub fn rotation_velocity_loss(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    check_pair(pred, gt)?;
    let n = pred.len();
    if n < 2 {
        return Err(Error::Contract(format!("velocity loss needs >= 2 frames, got {n}")));
    }
    Ok((0..n - 1).map(|t| rot_diff_l1(pred, gt, t, 1)).sum::<f64>() / (n - 1) as f64)
}

/// Weight matrices of a parameter set, the tensors the L2 term covers.
pub fn weight_matrices<'p, T>(config: &ModelConfig, p: &'p Params<T>) -> Vec<&'p T> {
    layout(config)
        .iter()
        .zip(p.iter())
        .filter(|(s, _)| s.kind == ParamKind::Weight)
        .map(|(_, t)| t)
        .collect()
}

pub fn l2_regularizer<F: Real>(params: &ModelParams<F>) -> f64 {
    weight_matrices(&params.config, &params.tensors)
        .iter()
        .map(|t| t.data().iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>())
        .sum()
}

/// Combines the three terms into the training objective.
pub fn weighted_total(
    l_theta: f64,
    l_rv: f64,
    l_reg: f64,
    u: &UncertaintyParams,
    cfg: &ObjectiveConfig,
) -> LossBreakdown {
    let weight_reg = cfg.reg_coef();
    let (weight_theta, weight_rv, offsets) = match cfg.weighting {
        LossWeighting::Uncertainty => ((-u.s_theta).exp(), (-u.s_rv).exp(), u.s_theta + u.s_rv),
        LossWeighting::Fixed { theta, rv } => (theta, rv, 0.0),
    };
    let total = weight_theta * l_theta + weight_rv * l_rv + offsets + weight_reg * l_reg;
    LossBreakdown { l_theta, l_rv, l_reg, total, weight_theta, weight_rv, weight_reg }
}

/// Uncertainty-weighted total with the explicit L2 term.
pub fn total_loss(l_theta: f64, l_rv: f64, l_reg: f64, u: &UncertaintyParams) -> LossBreakdown {
    weighted_total(l_theta, l_rv, l_reg, u, &ObjectiveConfig::default())
}

/// `Σ|pred − gt| / T` on the tape.
pub fn rotation_loss_var<F: Real>(tape: &mut Tape<'_, F>, pred: Var, gt: Var) -> Result<Var> {
    let n = tape.value(pred).rows();
    let d = tape.sub(pred, gt)?;
    let s = tape.sum_abs(d)?;
    tape.scale(s, F::one() / F::lit(n as f64))
}

/// `Σ|Δpred − Δgt| / (T − 1)` on the tape.
pub fn rotation_velocity_loss_var<F: Real>(tape: &mut Tape<'_, F>, pred: Var, gt: Var) -> Result<Var> {
    let n = tape.value(pred).rows();
    if n < 2 {
        return Err(Error::Contract(format!("velocity loss needs >= 2 frames, got {n}")));
    }
    let dp = tape.diff_time(pred)?;
    let dg = tape.diff_time(gt)?;
    let d = tape.sub(dp, dg)?;
    let s = tape.sum_abs(d)?;
    tape.scale(s, F::one() / F::lit((n - 1) as f64))
}

pub fn l2_regularizer_var<F: Real>(tape: &mut Tape<'_, F>, config: &ModelConfig, p: &Params<Var>) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &w in weight_matrices(config, p) {
        let s = tape.sum_sq(w)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    match acc {
        Some(a) => Ok(a),
        None => Ok(tape.constant(Tensor::scalar(F::zero()))),
    }
}

fn uncertainty_term<F: Real>(tape: &mut Tape<'_, F>, l: Var, s: Var) -> Result<Var> {
    let neg = tape.scale(s, -F::one())?;
    let w = tape.exp(neg)?;
    let wl = tape.mul(w, l)?;
    tape.add(wl, s)
}

/// Total loss on the tape; `s_theta` and `s_rv` are `1×1` variables.
pub fn total_loss_var<F: Real>(
    tape: &mut Tape<'_, F>,
    terms: [Var; 3],
    s_theta: Var,
    s_rv: Var,
    cfg: &ObjectiveConfig,
) -> Result<Var> {
    let [l_theta, l_rv, l_reg] = terms;
    let (a, b) = match cfg.weighting {
        LossWeighting::Uncertainty => (uncertainty_term(tape, l_theta, s_theta)?, uncertainty_term(tape, l_rv, s_rv)?),
        LossWeighting::Fixed { theta, rv } => (tape.scale(l_theta, F::lit(theta))?, tape.scale(l_rv, F::lit(rv))?),
    };
    let ab = tape.add(a, b)?;
    let reg = tape.scale(l_reg, F::lit(cfg.reg_coef()))?;
    tape.add(ab, reg)
}

/// Handles of one recorded training loss.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub prediction: Var,
    pub l_theta: Var,
    pub l_rv: Var,
    pub l_reg: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown<F: Real>(&self, tape: &Tape<'_, F>, p: &Params<Var>, cfg: &ObjectiveConfig) -> LossBreakdown {
        let v = |x: Var| tape.value(x).item().as_f64();
        let u = UncertaintyParams { s_theta: v(p.log_var_theta), s_rv: v(p.log_var_rv) };
        let mut b = weighted_total(v(self.l_theta), v(self.l_rv), v(self.l_reg), &u, cfg);
        b.total = v(self.total);
        b
    }
}

/// Records forward pass and total loss against a `T×132` target.
pub fn training_loss<'a, F: Real>(
    tape: &mut Tape<'a, F>,
    p: &Params<Var>,
    config: &ModelConfig,
    windows: &FeatureWindowSet,
    target: &'a Tensor<F>,
    cfg: &ObjectiveConfig,
) -> Result<LossVars> {
    let prediction = forward(tape, p, config, windows)?;
    if tape.value(prediction).shape() != target.shape() {
        return Err(Error::Shape(format!("target {:?}", target.shape())));
    }
    let gt = tape.constant_ref(target);
    let l_theta = rotation_loss_var(tape, prediction, gt)?;
    let l_rv = rotation_velocity_loss_var(tape, prediction, gt)?;
    let l_reg = l2_regularizer_var(tape, config, p)?;
    let total = total_loss_var(tape, [l_theta, l_rv, l_reg], p.log_var_theta, p.log_var_rv, cfg)?;
    Ok(LossVars { prediction, l_theta, l_rv, l_reg, total })
}
