//! Analytic parameter and multiply-accumulate accounting.
//!
//! One FLOP here is one multiply-accumulate. Convolutions cost
//! `output elements x taps per output`; biases add parameters but no MACs,
//! and element-wise products, additions and pixel shuffles are free.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::ModelConfig;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ComplexityError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("large-kernel mixer needs an odd kernel, got {0}")]
    EvenKernel(u64),
    #[error("window {k} exceeds feature map {h}x{w}")]
    WindowTooLarge { k: u64, h: u64, w: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostEntry {
    pub name: String,
    pub params: u128,
    pub flops: u128,
}

/// Totals always equal the sum of the breakdown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub params: u128,
    pub flops: u128,
    pub breakdown: Vec<CostEntry>,
}

impl CostReport {
    pub fn from_entries(breakdown: Vec<CostEntry>) -> Self {
        let params = breakdown.iter().map(|e| e.params).sum();
        let flops = breakdown.iter().map(|e| e.flops).sum();
        Self {
            params,
            flops,
            breakdown,
        }
    }

    pub fn entry(&self, name: &str) -> Option<&CostEntry> {
        self.breakdown.iter().find(|e| e.name == name)
    }

    /// Aligned plain-text table with a total row.
    pub fn to_text(&self) -> String {
        let width = self
            .breakdown
            .iter()
            .map(|e| e.name.len())
            .chain(["layer".len(), "total".len()])
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>12}  {:>16}", "layer", "params", "flops");
        for e in &self.breakdown {
            let _ = writeln!(out, "{:<width$}  {:>12}  {:>16}", e.name, e.params, e.flops);
        }
        let _ = writeln!(out, "{:<width$}  {:>12}  {:>16}", "total", self.params, self.flops);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,params,flops\n");
        for e in &self.breakdown {
            let _ = writeln!(out, "{},{},{}", e.name, e.params, e.flops);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixerKind {
    /// Global self-attention.
    SelfAttention,
    /// Local window self-attention.
    WindowAttention,
    /// Gated large-kernel depth-wise mixer.
    LargeKernel,
}

fn entry(name: &str, params: u128, flops: u128) -> CostEntry {
    CostEntry {
        name: name.to_string(),
        params,
        flops,
    }
}

/// Cost of one token mixer on an `h x w x c` feature map with window or
/// kernel size `k`:
///
/// | kind | flops                | params      |
/// |------|----------------------|-------------|
/// | SA   | 4HWC^2 + 2H^2W^2C    | 4C^2        |
/// | LWSA | 4HWC^2 + 2HWCK^2     | 4C^2        |
/// | LK   | 3HWC^2 + HWCK^2      | 3C^2 + CK^2 |
pub fn mixer_cost(kind: MixerKind, h: u64, w: u64, c: u64, k: u64) -> Result<CostReport, ComplexityError> {
    for (v, name) in [(h, "height"), (w, "width"), (c, "channels"), (k, "kernel")] {
        if v == 0 {
            return Err(ComplexityError::NonPositive(name));
        }
    }
    let (h, w, c, k) = (h as u128, w as u128, c as u128, k as u128);
    let hw = h * w;
    let report = match kind {
        MixerKind::SelfAttention => CostReport::from_entries(vec![
            entry("projections", 4 * c * c, 4 * hw * c * c),
            entry("attention", 0, 2 * hw * hw * c),
        ]),
        MixerKind::WindowAttention => {
            if k > h.min(w) {
                return Err(ComplexityError::WindowTooLarge {
                    k: k as u64,
                    h: h as u64,
                    w: w as u64,
                });
            }
            CostReport::from_entries(vec![
                entry("projections", 4 * c * c, 4 * hw * c * c),
                entry("window_attention", 0, 2 * hw * c * k * k),
            ])
        }
        MixerKind::LargeKernel => {
            if k % 2 == 0 {
                return Err(ComplexityError::EvenKernel(k as u64));
            }
            CostReport::from_entries(vec![
                entry("pointwise", 3 * c * c, 3 * hw * c * c),
                entry("depthwise", c * k * k, hw * c * k * k),
            ])
        }
    };
    Ok(report)
}

/// How edge-preserving layers are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountMode {
    /// Each layer is a single 3x3 depth-wise conv (inference).
    #[default]
    Fused,
    /// Five 3x3 branches, four extra biases and three logits (training).
    Branched,
}

/// Per-layer costs of a whole network on an `lr_h x lr_w` input, counted in
/// inference (fused) form.
pub fn model_cost(cfg: &ModelConfig, lr_h: u64, lr_w: u64) -> CostReport {
    model_cost_with(cfg, lr_h, lr_w, CountMode::Fused)
}

pub fn model_cost_with(cfg: &ModelConfig, lr_h: u64, lr_w: u64, mode: CountMode) -> CostReport {
    let hw = lr_h as u128 * lr_w as u128;
    let c = cfg.channels as u128;
    let e = cfg.hidden_channels() as u128;
    let k1 = cfg.mixer_kernel as u128;
    let k2 = cfg.edc_kernel as u128;
    let out_c = 3 * (cfg.scale as u128).pow(2);

    // dense k x k conv cin -> cout with bias
    let conv = |name: String, cin: u128, cout: u128, k: u128| CostEntry {
        name,
        params: cout * cin * k * k + cout,
        flops: hw * cout * cin * k * k,
    };
    let dw = |name: String, ch: u128, k: u128| CostEntry {
        name,
        params: ch * k * k + ch,
        flops: hw * ch * k * k,
    };

    let mut rows = vec![conv("shallow".into(), 3, c, 3)];
    for b in 0..cfg.n_blocks {
        for l in 0..cfg.n_layers {
            let p = format!("body.{b}.layers.{l}");
            rows.push(conv(format!("{p}.mixer.value"), c, c, 1));
            rows.push(conv(format!("{p}.mixer.gate"), c, c, 1));
            rows.push(dw(format!("{p}.mixer.gate_dw"), c, k1));
            rows.push(conv(format!("{p}.mixer.proj"), c, c, 1));
            rows.push(conv(format!("{p}.efn.expand"), c, e, 1));
            let edc = dw(format!("{p}.efn.edc"), e, k2);
            rows.push(match mode {
                CountMode::Fused => edc,
                CountMode::Branched => CostEntry {
                    params: edc.params + 4 * e + 3,
                    flops: 5 * edc.flops,
                    ..edc
                },
            });
            rows.push(conv(format!("{p}.efn.project"), e, c, 1));
        }
        rows.push(conv(format!("body.{b}.tail"), c, c, 3));
    }
    rows.push(conv("head".into(), c, out_c, 3));
    CostReport::from_entries(rows)
}

/// Low-resolution input size for an HR target, cropped to a multiple of the
/// scale.
pub fn lr_size_for_hr(hr_h: u64, hr_w: u64, scale: u64) -> (u64, u64) {
    (hr_h / scale, hr_w / scale)
}
