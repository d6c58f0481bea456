use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ArchDescriptor, LayerRole, LayerSpec};

/// Named predicate over a network's compressible layers.
///
/// The built-in modes only ever touch the four residual stages and the final
/// dense layer; the stem conv is never selected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionMode {
    /// Every conv of the four stages plus the final dense layer.
    Vanilla,
    /// Vanilla without 1×1 convs.
    Mode1,
    /// Mode1 plus 1×1 convs, keeping the downsample convs of stages 3 and 4 intact.
    Mode2,
    /// Mode2 without the 1×1 convs of stage 4.
    Mode3,
    /// Vanilla without downsample convs.
    Mode4,
    /// All 1×1 convs (including downsamples) plus the final dense layer.
    Mode5,
    Custom {
        include: Vec<String>,
        exclude: Vec<String>,
    },
}

impl CompressionMode {
    pub const BUILT_IN: [CompressionMode; 6] = [
        CompressionMode::Vanilla,
        CompressionMode::Mode1,
        CompressionMode::Mode2,
        CompressionMode::Mode3,
        CompressionMode::Mode4,
        CompressionMode::Mode5,
    ];

    pub fn label(&self) -> String {
        match self {
            CompressionMode::Vanilla => "vanilla".into(),
            CompressionMode::Mode1 => "mode1".into(),
            CompressionMode::Mode2 => "mode2".into(),
            CompressionMode::Mode3 => "mode3".into(),
            CompressionMode::Mode4 => "mode4".into(),
            CompressionMode::Mode5 => "mode5".into(),
            CompressionMode::Custom { include, exclude } => {
                format!("custom[+{}|-{}]", include.join(","), exclude.join(","))
            }
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "vanilla" => CompressionMode::Vanilla,
            "mode1" => CompressionMode::Mode1,
            "mode2" => CompressionMode::Mode2,
            "mode3" => CompressionMode::Mode3,
            "mode4" => CompressionMode::Mode4,
            "mode5" => CompressionMode::Mode5,
            _ => return None,
        })
    }

    fn admits(&self, layer: &LayerSpec) -> bool {
        let role = match layer.role {
            Some(r) => r,
            None => return false,
        };
        let in_stages = (1..=4).contains(&layer.block);
        let conv_role = |r: LayerRole| in_stages && role == r;
        match self {
            CompressionMode::Vanilla => {
                role == LayerRole::FinalDense
                    || (in_stages
                        && matches!(
                            role,
                            LayerRole::Pointwise | LayerRole::Spatial | LayerRole::Downsample
                        ))
            }
            CompressionMode::Mode1 => role == LayerRole::FinalDense || conv_role(LayerRole::Spatial),
            CompressionMode::Mode2 => {
                CompressionMode::Mode1.admits(layer)
                    || conv_role(LayerRole::Pointwise)
                    || (conv_role(LayerRole::Downsample) && layer.block <= 2)
            }
            CompressionMode::Mode3 => {
                CompressionMode::Mode2.admits(layer)
                    && !(conv_role(LayerRole::Pointwise) && layer.block == 4)
            }
            CompressionMode::Mode4 => {
                CompressionMode::Vanilla.admits(layer) && role != LayerRole::Downsample
            }
            CompressionMode::Mode5 => {
                role == LayerRole::FinalDense
                    || conv_role(LayerRole::Pointwise)
                    || conv_role(LayerRole::Downsample)
            }
            CompressionMode::Custom { .. } => unreachable!("custom modes match by name"),
        }
    }
}

impl fmt::Display for CompressionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Selected layer names in network order, plus any non-fatal warnings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub layers: Vec<String>,
    pub warnings: Vec<String>,
}

impl Selection {
    pub fn contains(&self, name: &str) -> bool {
        self.layers.iter().any(|l| l == name)
    }

    pub fn as_set(&self) -> BTreeSet<&str> {
        self.layers.iter().map(String::as_str).collect()
    }
}

/// Shell-style glob with `*` (any run, including dots) and `?` (one char).
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

/// Layers of `arch` that `mode` compresses, in network order.
pub fn select_layers(arch: &ArchDescriptor, mode: &CompressionMode) -> Selection {
    let mut warnings = Vec::new();
    let layers = match mode {
        CompressionMode::Custom { include, exclude } => {
            for pat in include.iter().chain(exclude) {
                if !arch.compressible().any(|l| glob_match(pat, &l.name)) {
                    warnings.push(format!("pattern {pat:?} matches no compressible layer"));
                }
            }
            arch.compressible()
                .filter(|l| include.iter().any(|p| glob_match(p, &l.name)))
                .filter(|l| !exclude.iter().any(|p| glob_match(p, &l.name)))
                .map(|l| l.name.clone())
                .collect()
        }
        _ => arch
            .compressible()
            .filter(|l| mode.admits(l))
            .map(|l| l.name.clone())
            .collect(),
    };
    Selection { layers, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::build_resnet;

    #[test]
    fn glob_basics() {
        assert!(glob_match("block4.*", "block4.unit1.conv2"));
        assert!(glob_match("*.downsample", "block4.unit1.downsample"));
        assert!(!glob_match("*.downsample", "block4.unit1.downsample_bn"));
        assert!(glob_match("block?.unit1.*", "block3.unit1.conv1"));
        assert!(glob_match("*", ""));
        assert!(!glob_match("fc", "fc.first"));
        assert!(glob_match("a*b*c", "axxbyyc"));
    }

    #[test]
    fn resnet50_mode_counts() {
        let arch = build_resnet(50, 224).unwrap();
        let count = |m: CompressionMode| select_layers(&arch, &m).layers.len();
        assert_eq!(count(CompressionMode::Vanilla), 53);
        assert_eq!(count(CompressionMode::Mode1), 17);
        assert_eq!(count(CompressionMode::Mode2), 51);
        assert_eq!(count(CompressionMode::Mode3), 45);
        assert_eq!(count(CompressionMode::Mode4), 49);
        assert_eq!(count(CompressionMode::Mode5), 37);
    }

    #[test]
    fn mode_set_relations() {
        let arch = build_resnet(50, 224).unwrap();
        let sel = |m: CompressionMode| select_layers(&arch, &m);
        let (v, m1, m2, m3, m4, m5) = (
            sel(CompressionMode::Vanilla),
            sel(CompressionMode::Mode1),
            sel(CompressionMode::Mode2),
            sel(CompressionMode::Mode3),
            sel(CompressionMode::Mode4),
            sel(CompressionMode::Mode5),
        );
        assert!(m1.as_set().is_subset(&m2.as_set()));
        assert!(m2.as_set().is_subset(&v.as_set()));
        assert!(m3.as_set().is_subset(&m2.as_set()));
        assert!(m4.as_set().is_subset(&v.as_set()));
        let both: Vec<&str> = m5.as_set().intersection(&m1.as_set()).copied().collect();
        assert_eq!(both, vec!["fc"]);
        for s in [&v, &m1, &m2, &m3, &m4, &m5] {
            assert!(!s.contains("stem.conv"));
        }
        assert!(m2.contains("block2.unit1.downsample"));
        assert!(!m2.contains("block3.unit1.downsample"));
        assert!(!m3.contains("block4.unit2.conv1"));
        assert!(m3.contains("block4.unit2.conv2"));
    }

    #[test]
    fn custom_include_exclude() {
        let arch = build_resnet(50, 224).unwrap();
        let mode = CompressionMode::Custom {
            include: vec!["block4.*".into()],
            exclude: vec!["*.downsample".into()],
        };
        let s = select_layers(&arch, &mode);
        assert_eq!(s.layers.len(), 9);
        assert!(s.layers.iter().all(|n| n.starts_with("block4.") && !n.ends_with("downsample")));
        assert!(s.warnings.is_empty());

        let empty = CompressionMode::Custom {
            include: vec!["nothing*".into()],
            exclude: vec![],
        };
        let s = select_layers(&arch, &empty);
        assert!(s.layers.is_empty());
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn mode_json_forms() {
        assert_eq!(serde_json::to_string(&CompressionMode::Mode3).unwrap(), "\"mode3\"");
        let custom: CompressionMode =
            serde_json::from_str(r#"{"custom":{"include":["fc"],"exclude":[]}}"#).unwrap();
        assert!(matches!(custom, CompressionMode::Custom { .. }));
    }
}
