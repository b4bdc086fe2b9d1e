//! Analytic cost of one forward pass over a window set.
//!
//! Only multiply-accumulates of the linear maps are counted, one MAC = one
//! FLOP; norms, activations, bias adds and residual adds are ignored.

use serde::Serialize;

use super::params::{layout, ParamKind};
use super::{FusionMode, ModelConfig, TemporalMap, INPUT_DIM, OUTPUT_DIM};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub flops: u64,
    pub params: u64,
    /// Output activation size at 32-bit precision.
    pub activation_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub flops: u64,
    pub params: u64,
    pub activation_bytes: u64,
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    pub fn gflops(&self) -> f64 {
        self.flops as f64 / 1e9
    }

    pub fn mparams(&self) -> f64 {
        self.params as f64 / 1e6
    }
}

fn time_map_entries(c: &ModelConfig) -> u64 {
    let t = c.window as u64;
    match c.temporal_map {
        TemporalMap::Full => t * t,
        TemporalMap::Banded { width } => (0..c.window)
            .map(|i| (i.saturating_sub(width)..(i + width + 1).min(c.window)).len() as u64)
            .sum(),
        TemporalMap::Causal => t * (t + 1) / 2,
    }
}

pub fn count_cost(c: &ModelConfig) -> CostReport {
    let (t, k, d) = (c.window as u64, c.past_windows as u64, c.width as u64);
    let (din, dout) = (INPUT_DIM as u64, OUTPUT_DIM as u64);
    let act = |rows: u64, cols: u64| rows * cols * 4;
    let mut layers = Vec::new();
    let mut push = |name: String, flops: u64, params: u64, activation_bytes: u64| {
        layers.push(LayerCost { name, flops, params, activation_bytes })
    };

    push("input".into(), t * din * d, din * d + d, act(t, d));
    for w in 1..=k {
        push(format!("window{w}"), t * din * d, din * d + 3 * d, act(t, d) + act(1, d));
    }
    let fusion = c.active_fusion_layers();
    for l in 1..=c.blocks {
        let time = time_map_entries(c) * d;
        let fc = t * d * d;
        push(format!("block{l}"), time + fc, t * t + d * d + 5 * d, 4 * act(t, d));
        if fusion.contains(&l) {
            let (flops, params) = match c.fusion {
                FusionMode::Time => (t * (t + k) * d, t * (t + k)),
                FusionMode::Feature => (t * d * (k + 1) * d, d * (k + 1) * d),
            };
            push(format!("fusion{l}"), flops, params, act(t + k, d) + act(t, d));
        }
    }
    push("output".into(), t * d * dout, d * dout + dout, act(t, dout));

    let report = CostReport {
        flops: layers.iter().map(|l| l.flops).sum(),
        params: layers.iter().map(|l| l.params).sum(),
        activation_bytes: layers.iter().map(|l| l.activation_bytes).sum(),
        layers,
    };
    debug_assert_eq!(
        report.params,
        layout(c)
            .iter()
            .filter(|s| s.kind != ParamKind::LogVariance)
            .map(|s| (s.rows * s.cols) as u64)
            .sum::<u64>()
    );
    report
}
