use super::{ArchDescriptor, ConvSpec, DenseSpec, LayerKind, LayerRole, LayerSpec, PoolOp};
use crate::error::{bail, Result};

pub const SUPPORTED_DEPTHS: [usize; 5] = [18, 34, 50, 101, 152];

const NUM_CLASSES: usize = 1000;
const STAGE_WIDTHS: [usize; 4] = [64, 128, 256, 512];

struct Builder {
    layers: Vec<LayerSpec>,
    h: usize,
    w: usize,
}

impl Builder {
    fn conv(
        &mut self,
        name: String,
        spec: ConvSpec,
        block: u8,
        role: LayerRole,
        in_hw: (usize, usize),
    ) -> Result<(usize, usize)> {
        let (oh, ow) = spec.output_hw(in_hw.0, in_hw.1)?;
        self.layers.push(LayerSpec {
            name,
            kind: LayerKind::Conv(spec),
            block,
            role: Some(role),
            in_h: in_hw.0,
            in_w: in_hw.1,
            out_h: oh,
            out_w: ow,
            source: None,
        });
        Ok((oh, ow))
    }

    fn bn(&mut self, name: String, channels: usize, block: u8, hw: (usize, usize)) {
        self.layers.push(LayerSpec {
            name,
            kind: LayerKind::BatchNorm { channels },
            block,
            role: None,
            in_h: hw.0,
            in_w: hw.1,
            out_h: hw.0,
            out_w: hw.1,
            source: None,
        });
    }

    fn pool(&mut self, name: &str, op: PoolOp, kernel: usize, stride: usize, padding: usize, block: u8) {
        let oh = (self.h + 2 * padding - kernel) / stride + 1;
        let ow = (self.w + 2 * padding - kernel) / stride + 1;
        self.layers.push(LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Pool {
                op,
                kernel,
                stride,
                padding,
            },
            block,
            role: None,
            in_h: self.h,
            in_w: self.w,
            out_h: oh,
            out_w: ow,
            source: None,
        });
        self.h = oh;
        self.w = ow;
    }
}

fn stage_units(depth: usize) -> Option<([usize; 4], bool)> {
    match depth {
        18 => Some(([2, 2, 2, 2], false)),
        34 => Some(([3, 4, 6, 3], false)),
        50 => Some(([3, 4, 6, 3], true)),
        101 => Some(([3, 4, 23, 3], true)),
        152 => Some(([3, 8, 36, 3], true)),
        _ => None,
    }
}

/// Builds a torchvision-style ResNet (stride on the 3×3 conv of each
/// bottleneck) at `input_hw × input_hw` resolution.
pub fn build_resnet(depth: usize, input_hw: usize) -> Result<ArchDescriptor> {
    let Some((units, bottleneck)) = stage_units(depth) else {
        bail!(
            Argument,
            "unsupported ResNet depth {depth}; expected one of {SUPPORTED_DEPTHS:?}"
        );
    };
    if input_hw < 32 {
        bail!(Argument, "input resolution {input_hw} is below the minimum of 32");
    }
    let mut b = Builder {
        layers: Vec::new(),
        h: input_hw,
        w: input_hw,
    };
    let stem = ConvSpec {
        c_in: 3,
        c_out: 64,
        kernel_h: 7,
        kernel_w: 7,
        stride: 2,
        padding: 3,
    };
    let hw = b.conv("stem.conv".into(), stem, 0, LayerRole::Stem, (b.h, b.w))?;
    b.bn("stem.bn".into(), 64, 0, hw);
    (b.h, b.w) = hw;
    b.pool("stem.pool", PoolOp::Max, 3, 2, 1, 0);

    let expansion = if bottleneck { 4 } else { 1 };
    let mut c_in = 64;
    for (stage, (&n, &width)) in units.iter().zip(&STAGE_WIDTHS).enumerate() {
        let block = (stage + 1) as u8;
        for u in 1..=n {
            let stride = if u == 1 && stage > 0 { 2 } else { 1 };
            let prefix = format!("block{block}.unit{u}");
            let c_out = width * expansion;
            let input = (b.h, b.w);
            let out = if bottleneck {
                let hw = b.conv(
                    format!("{prefix}.conv1"),
                    ConvSpec::pointwise(c_in, width, 1, 0),
                    block,
                    LayerRole::Pointwise,
                    input,
                )?;
                b.bn(format!("{prefix}.bn1"), width, block, hw);
                let spatial = ConvSpec {
                    c_in: width,
                    c_out: width,
                    kernel_h: 3,
                    kernel_w: 3,
                    stride,
                    padding: 1,
                };
                let hw = b.conv(format!("{prefix}.conv2"), spatial, block, LayerRole::Spatial, hw)?;
                b.bn(format!("{prefix}.bn2"), width, block, hw);
                let hw = b.conv(
                    format!("{prefix}.conv3"),
                    ConvSpec::pointwise(width, c_out, 1, 0),
                    block,
                    LayerRole::Pointwise,
                    hw,
                )?;
                b.bn(format!("{prefix}.bn3"), c_out, block, hw);
                hw
            } else {
                let first = ConvSpec {
                    c_in,
                    c_out: width,
                    kernel_h: 3,
                    kernel_w: 3,
                    stride,
                    padding: 1,
                };
                let hw = b.conv(format!("{prefix}.conv1"), first, block, LayerRole::Spatial, input)?;
                b.bn(format!("{prefix}.bn1"), width, block, hw);
                let second = ConvSpec { c_in: width, stride: 1, ..first };
                let hw = b.conv(format!("{prefix}.conv2"), second, block, LayerRole::Spatial, hw)?;
                b.bn(format!("{prefix}.bn2"), width, block, hw);
                hw
            };
            if stride != 1 || c_in != c_out {
                let hw = b.conv(
                    format!("{prefix}.downsample"),
                    ConvSpec::pointwise(c_in, c_out, stride, 0),
                    block,
                    LayerRole::Downsample,
                    input,
                )?;
                b.bn(format!("{prefix}.downsample_bn"), c_out, block, hw);
            }
            (b.h, b.w) = out;
            c_in = c_out;
        }
    }

    let global = b.h;
    b.pool("head.pool", PoolOp::Avg, global, global, 0, 5);
    b.layers.push(LayerSpec {
        name: "fc".into(),
        kind: LayerKind::Dense(DenseSpec {
            in_features: c_in,
            out_features: NUM_CLASSES,
            has_bias: true,
        }),
        block: 5,
        role: Some(LayerRole::FinalDense),
        in_h: 1,
        in_w: 1,
        out_h: 1,
        out_w: 1,
        source: None,
    });

    let arch = ArchDescriptor {
        name: format!("resnet{depth}"),
        input_hw,
        layers: b.layers,
    };
    arch.validate()?;
    Ok(arch)
}
