use crate::model::store::WeightStore;
use crate::model::ModelError;
use crate::nn::DW_KERNEL_SIZES;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Feature channels `C`.
    pub channels: usize,
    /// Number of basic residual blocks.
    pub n_blocks: usize,
    /// ConvFormer layers per block.
    pub n_layers: usize,
    /// Large-kernel mixer depth-wise kernel size `k1`.
    pub mixer_kernel: usize,
    /// Edge-preserving depth-wise kernel size `k2`; always 3.
    pub edc_kernel: usize,
    /// Upscaling factor.
    pub scale: usize,
    /// Hidden width of the feed-forward network as a multiple of `channels`.
    pub efn_expansion: f64,
}

pub const EDC_KERNEL: usize = 3;

impl Default for ModelConfig {
    fn default() -> Self {
        Self::standard(4)
    }
}

impl ModelConfig {
    /// Reference configuration: 48 channels, 2 blocks of 6 layers,
    /// `k1 = 9`, `k2 = 3`.
    pub fn standard(scale: usize) -> Self {
        Self {
            channels: 48,
            n_blocks: 2,
            n_layers: 6,
            mixer_kernel: 9,
            edc_kernel: EDC_KERNEL,
            scale,
            efn_expansion: 2.0,
        }
    }

    /// Small configuration used by smoke tests.
    pub fn tiny(channels: usize, n_blocks: usize, n_layers: usize, mixer_kernel: usize, scale: usize) -> Self {
        Self {
            channels,
            n_blocks,
            n_layers,
            mixer_kernel,
            edc_kernel: EDC_KERNEL,
            scale,
            efn_expansion: 2.0,
        }
    }

    pub fn hidden_channels(&self) -> usize {
        (self.efn_expansion * self.channels as f64).round() as usize
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.channels == 0 {
            return bad("channels must be >= 1".into());
        }
        if self.n_blocks == 0 || self.n_layers == 0 {
            return bad("block and layer counts must be >= 1".into());
        }
        if !DW_KERNEL_SIZES.contains(&self.mixer_kernel) {
            return bad(format!(
                "mixer kernel {} not in {DW_KERNEL_SIZES:?}",
                self.mixer_kernel
            ));
        }
        if self.edc_kernel != EDC_KERNEL {
            return bad(format!("edc kernel must be 3, got {}", self.edc_kernel));
        }
        if !(2..=4).contains(&self.scale) {
            return bad(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        let hidden = self.efn_expansion * self.channels as f64;
        if !(self.efn_expansion > 0.0) || (hidden - hidden.round()).abs() > 1e-9 || hidden.round() < 1.0 {
            return bad(format!(
                "expansion {} times {} channels is not a positive integer",
                self.efn_expansion, self.channels
            ));
        }
        Ok(())
    }

    /// Recovers the architecture from the tensor shapes in a weight store.
    pub fn infer_from_store(store: &WeightStore) -> Result<Self, ModelError> {
        let dims = |name: &str| {
            store
                .get(name)
                .map(|t| t.shape())
                .ok_or_else(|| ModelError::MissingTensor(name.to_string()))
        };
        let shallow = dims("shallow.weight")?;
        let channels = shallow.n;
        let head = dims("head.weight")?;
        let scale = (1..=8usize)
            .find(|r| 3 * r * r == head.n)
            .ok_or_else(|| ModelError::InvalidConfig(format!("head has {} outputs, not 3*r^2", head.n)))?;
        let n_blocks = (0..)
            .take_while(|b| store.get(&format!("body.{b}.tail.weight")).is_some())
            .count();
        let n_layers = (0..)
            .take_while(|l| store.get(&format!("body.0.layers.{l}.mixer.value.weight")).is_some())
            .count();
        let mixer_kernel = dims("body.0.layers.0.mixer.gate_dw.weight")?.h;
        let hidden = dims("body.0.layers.0.efn.expand.weight")?.n;
        let cfg = Self {
            channels,
            n_blocks,
            n_layers,
            mixer_kernel,
            edc_kernel: EDC_KERNEL,
            scale,
            efn_expansion: hidden as f64 / channels as f64,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_defaults() {
        let c = ModelConfig::standard(4);
        assert_eq!((c.channels, c.n_blocks, c.n_layers, c.mixer_kernel, c.edc_kernel), (48, 2, 6, 9, 3));
        assert_eq!(c.hidden_channels(), 96);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::standard(4);
        c.mixer_kernel = 8;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::standard(5);
        assert!(c.validate().is_err());
        c.scale = 2;
        c.channels = 3;
        c.efn_expansion = 1.5;
        assert!(c.validate().is_err());
        c.channels = 4;
        c.validate().unwrap();
    }
}
