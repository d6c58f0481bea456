//! Network descriptors: layer specs, ResNet builders, compression-mode
//! layer selection and parameter/MAC accounting.

mod count;
mod mode;
mod resnet;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

pub use count::{count_macs, count_params, layer_cost, LayerCost, MacCount, ParamCount};
pub use mode::{glob_match, select_layers, CompressionMode, Selection};
pub use resnet::{build_resnet, SUPPORTED_DEPTHS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn pointwise(c_in: usize, c_out: usize, stride: usize, padding: usize) -> Self {
        Self {
            c_in,
            c_out,
            kernel_h: 1,
            kernel_w: 1,
            stride,
            padding,
        }
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1
    }

    pub fn kernel_area(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.c_out, self.c_in, self.kernel_h, self.kernel_w]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if self.stride == 0 || ph < self.kernel_h || pw < self.kernel_w {
            bail!(
                Argument,
                "input {h}x{w} too small for kernel {}x{} with padding {}",
                self.kernel_h,
                self.kernel_w,
                self.padding
            );
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub in_features: usize,
    pub out_features: usize,
    pub has_bias: bool,
}

impl DenseSpec {
    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_features, self.in_features]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolOp {
    Max,
    Avg,
}

/// What a layer computes. Only `Conv` and `Dense` carry compressible weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv(ConvSpec),
    Dense(DenseSpec),
    BatchNorm {
        channels: usize,
    },
    Pool {
        op: PoolOp,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    Stem,
    Pointwise,
    Spatial,
    Downsample,
    FinalDense,
}

/// One layer of a network with its position in the block structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    /// 0 = stem, 1..=4 = conv2_x..conv5_x, 5 = head.
    pub block: u8,
    pub role: Option<LayerRole>,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    /// Original layer this one was factored out of, if any.
    pub source: Option<String>,
}

impl LayerSpec {
    pub fn is_compressible(&self) -> bool {
        matches!(self.kind, LayerKind::Conv(_) | LayerKind::Dense(_))
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match &self.kind {
            LayerKind::Conv(c) => Some(c.weight_shape()),
            LayerKind::Dense(d) => Some(d.weight_shape()),
            _ => None,
        }
    }

    /// Name of the original layer this spec belongs to.
    pub fn origin(&self) -> &str {
        self.source.as_deref().unwrap_or(&self.name)
    }

    pub fn weight_key(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_key(&self) -> String {
        format!("{}.bias", self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub name: String,
    pub input_hw: usize,
    pub layers: Vec<LayerSpec>,
}

impl ArchDescriptor {
    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn compressible(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.is_compressible())
    }

    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Conv(_)))
            .count()
    }

    pub fn dense_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Dense(_)))
            .count()
    }

    /// Structural checks: unique names, role/kernel consistency and spatial
    /// dims that agree with each conv's stride and padding.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for l in &self.layers {
            if l.name.is_empty() {
                bail!(Argument, "layer with empty name");
            }
            if !seen.insert(l.name.as_str()) {
                bail!(Argument, "duplicate layer name {:?}", l.name);
            }
            match (&l.kind, l.role) {
                (LayerKind::Conv(c), role) => {
                    if c.c_in == 0 || c.c_out == 0 || c.kernel_h == 0 || c.kernel_w == 0 {
                        bail!(Argument, "layer {:?} has a zero dimension", l.name);
                    }
                    match role {
                        Some(LayerRole::Pointwise | LayerRole::Downsample) if !c.is_pointwise() => {
                            bail!(Argument, "layer {:?}: {:?} role needs a 1x1 kernel", l.name, role.unwrap())
                        }
                        Some(LayerRole::Spatial) if c.kernel_h < 2 || c.kernel_w < 2 => {
                            bail!(Argument, "layer {:?}: spatial role needs kernel >= 2", l.name)
                        }
                        Some(LayerRole::FinalDense) => {
                            bail!(Argument, "layer {:?}: conv cannot have final_dense role", l.name)
                        }
                        _ => {}
                    }
                    let (oh, ow) = c.output_hw(l.in_h, l.in_w)?;
                    if (oh, ow) != (l.out_h, l.out_w) {
                        bail!(
                            Argument,
                            "layer {:?}: output {}x{} inconsistent with input {}x{} (expected {oh}x{ow})",
                            l.name,
                            l.out_h,
                            l.out_w,
                            l.in_h,
                            l.in_w
                        );
                    }
                }
                (LayerKind::Dense(d), _) => {
                    if d.in_features == 0 || d.out_features == 0 {
                        bail!(Argument, "layer {:?} has a zero dimension", l.name);
                    }
                }
                (_, Some(role)) => {
                    bail!(Argument, "layer {:?}: role {role:?} on a non-parametric layer", l.name)
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_hw_formula() {
        let c = ConvSpec {
            c_in: 3,
            c_out: 64,
            kernel_h: 7,
            kernel_w: 7,
            stride: 2,
            padding: 3,
        };
        assert_eq!(c.output_hw(224, 224).unwrap(), (112, 112));
        assert!(ConvSpec::pointwise(1, 1, 1, 0).output_hw(1, 1).is_ok());
        let big = ConvSpec { kernel_h: 5, kernel_w: 5, ..ConvSpec::pointwise(1, 1, 1, 0) };
        assert!(big.output_hw(3, 3).is_err());
    }

    #[test]
    fn layer_json_is_flat() {
        let arch = build_resnet(18, 224).unwrap();
        let v = serde_json::to_value(&arch.layers[0]).unwrap();
        assert_eq!(v["kind"], "conv");
        assert_eq!(v["c_out"], 64);
        assert_eq!(v["role"], "stem");
        let back: LayerSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, arch.layers[0]);
    }

    #[test]
    fn validate_rejects_bad_roles_and_dims() {
        let mut arch = build_resnet(50, 224).unwrap();
        assert!(arch.validate().is_ok());
        let idx = arch.layers.iter().position(|l| l.name == "block1.unit1.conv2").unwrap();
        arch.layers[idx].role = Some(LayerRole::Pointwise);
        assert!(arch.validate().is_err());

        let mut arch = build_resnet(50, 224).unwrap();
        arch.layers[idx].out_h = 55;
        assert!(arch.validate().is_err());

        let mut arch = build_resnet(50, 224).unwrap();
        let dup = arch.layers[1].clone();
        arch.layers.push(dup);
        assert!(arch.validate().is_err());
    }
}
