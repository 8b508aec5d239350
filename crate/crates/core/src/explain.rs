//! Gradient×input attribution of fusion predictions.
//!
//! `a_i = (∂logit/∂x_i)·x_i` on the raw fusion inputs. For a logistic head
//! `Σ a_i + logit(0) = logit(x)` holds exactly; with a hidden layer the
//! decomposition is first order only and the output says so.
//!
//! Cardiac channel attributions are spread uniformly over each channel's
//! voxel support to give a heat volume over the ROI, and reasoning indicator
//! attributions annotate the rationale of the scan's trace.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cardiac::{CardiacFeatureVector, D_CARD};
use crate::fusion::{forward_pass, FusionInput, ModelParams, ReasonBlock};
use crate::reasoning::{KnowledgeGraph, ReasoningTrace};
use crate::volume::{save_volume, CtVolume, IntensityState};
use crate::{Error, Result};

pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSums {
    pub cardiac: f64,
    pub reasoning: f64,
    pub lung: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputAttribution {
    pub scan_id: String,
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub block_dims: [usize; 3],
    pub blocks: BlockSums,
    pub logit: f64,
    /// Logit of the all-zero input.
    pub baseline_logit: f64,
    /// Set when the head has a hidden layer, so the attributions are a
    /// first-order decomposition of the logit rather than an exact one.
    pub first_order_only: bool,
    pub kb_version: String,
}

impl InputAttribution {
    fn block(&self, b: usize) -> &[f64] {
        let start: usize = self.block_dims[..b].iter().sum();
        &self.values[start..start + self.block_dims[b]]
    }

    pub fn cardiac(&self) -> &[f64] {
        self.block(0)
    }

    pub fn reasoning(&self) -> &[f64] {
        self.block(1)
    }

    pub fn lung(&self) -> &[f64] {
        self.block(2)
    }
}

/// Gradient of the logit with respect to the raw (unstandardized) input.
fn input_gradient(params: &ModelParams, raw: &[f64]) -> Vec<f64> {
    let pass = forward_pass(params, raw);
    let d = params.input_dim();
    let mut g = vec![0.0; d];
    if params.has_hidden_layer() {
        let (l1, l2) = (&params.layers[0], &params.layers[1]);
        for h in 0..l1.outputs {
            if pass.hidden_pre[h] <= 0.0 {
                continue;
            }
            let row = &l1.weights[h * d..(h + 1) * d];
            for (gi, w) in g.iter_mut().zip(row) {
                *gi += l2.weights[h] * w;
            }
        }
    } else {
        g.copy_from_slice(&params.layers[0].weights);
    }
    g.iter_mut()
        .zip(&params.standardizer.scale)
        .for_each(|(gi, s)| *gi /= s);
    g
}

pub fn attribute_input(params: &ModelParams, x: &FusionInput) -> Result<InputAttribution> {
    let logit = crate::fusion::logit(params, x)?;
    let raw = x.concat();
    let g = input_gradient(params, &raw);
    // `+ 0.0` turns a signed zero from an inactive input into a plain zero.
    let values: Vec<f64> = g.iter().zip(&raw).map(|(gi, xi)| gi * xi + 0.0).collect();
    let [dc, dr, _] = params.block_dims;
    let sum = |r: std::ops::Range<usize>| values[r].iter().sum::<f64>();
    let blocks = BlockSums {
        cardiac: sum(0..dc),
        reasoning: sum(dc..dc + dr),
        lung: sum(dc + dr..values.len()),
    };
    let baseline_logit = forward_pass(params, &vec![0.0; raw.len()]).logit;
    Ok(InputAttribution {
        scan_id: x.scan_id.clone(),
        names: params.input_names.clone(),
        values,
        block_dims: params.block_dims,
        blocks,
        logit,
        baseline_logit,
        first_order_only: params.has_hidden_layer(),
        kb_version: params.kb.version.clone(),
    })
}

/// Per-voxel attribution mass over the cardiac ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatVolume {
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub values: Vec<f64>,
}

impl HeatVolume {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Saves as float32 NIfTI (or raw+sidecar, by extension) for overlay.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let v = CtVolume::new(
            self.dims,
            self.spacing,
            self.values.iter().map(|&h| h as f32).collect(),
            IntensityState::RawHu,
            "",
            "",
        )?;
        save_volume(&v, path)
    }
}

/// `heat(v) = Σ_c attr_c / |support_c|` over the channels whose support
/// contains `v`. Channels with empty support contribute nothing.
pub fn project_cardiac_attribution(
    attr: &InputAttribution,
    features: &CardiacFeatureVector,
    roi: &CtVolume,
) -> Result<HeatVolume> {
    if attr.block_dims[0] != D_CARD {
        return Err(Error::InvalidArgument("attribution has no cardiac block".into()));
    }
    if features.voxel_support.len() != D_CARD {
        return Err(Error::InvalidArgument("cardiac features carry no voxel support".into()));
    }
    let mut values = vec![0.0; roi.len()];
    for (a, support) in attr.cardiac().iter().zip(&features.voxel_support) {
        if support.is_empty() || *a == 0.0 {
            continue;
        }
        if let Some(&bad) = support.iter().find(|&&i| i as usize >= values.len()) {
            return Err(Error::Dimension {
                expected: values.len(),
                actual: bad as usize + 1,
            });
        }
        let share = a / support.len() as f64;
        for &i in support {
            values[i as usize] += share;
        }
    }
    Ok(HeatVolume {
        dims: roi.dims(),
        spacing: roi.spacing(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismAttribution {
    pub name: String,
    pub attribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedRationale {
    pub rationale: String,
    /// Every indicator in knowledge-base order.
    pub mechanisms: Vec<MechanismAttribution>,
    /// Nonzero indicators with the largest absolute attribution.
    pub top: Vec<MechanismAttribution>,
    pub first_order_only: bool,
}

pub fn attribute_indicators(
    attr: &InputAttribution,
    trace: &ReasoningTrace,
    kb: &KnowledgeGraph,
    top_k: usize,
) -> Result<AnnotatedRationale> {
    if attr.kb_version != trace.kb_version || kb.version() != trace.kb_version {
        return Err(Error::VersionMismatch(format!(
            "attribution from KB '{}', trace from KB '{}'",
            attr.kb_version, trace.kb_version
        )));
    }
    let names = kb.indicator_names();
    if attr.block_dims[1] != names.len() || attr.names.iter().any(|n| n.starts_with("finding.")) {
        return Err(Error::Dimension {
            expected: names.len(),
            actual: attr.block_dims[1],
        });
    }
    let mechanisms: Vec<MechanismAttribution> = names
        .into_iter()
        .zip(attr.reasoning())
        .map(|(name, &attribution)| MechanismAttribution { name, attribution })
        .collect();
    let mut top: Vec<MechanismAttribution> = mechanisms.iter().filter(|m| m.attribution != 0.0).cloned().collect();
    top.sort_by(|a, b| b.attribution.abs().total_cmp(&a.attribution.abs()).then(a.name.cmp(&b.name)));
    top.truncate(top_k);

    let mut rationale = trace.rationale.clone();
    if !top.is_empty() {
        let parts: Vec<String> = top
            .iter()
            .map(|m| format!("{} {:+.3}", m.name.replace('_', " "), m.attribution))
            .collect();
        rationale.push_str(&format!(" [mechanism attribution (logit): {}]", parts.join("; ")));
    }
    Ok(AnnotatedRationale {
        rationale,
        mechanisms,
        top,
        first_order_only: attr.first_order_only,
    })
}

/// Whether the params can feed [`attribute_indicators`].
pub fn has_indicator_block(params: &ModelParams) -> bool {
    params.variant.reason_block() == ReasonBlock::Indicators
}
