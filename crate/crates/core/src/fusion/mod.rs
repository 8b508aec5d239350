//! The trainable fusion head.
//!
//! Inputs are the concatenation `[z_card; z_reason; z_lung]`, standardized
//! with per-dimension statistics frozen at training time, then passed through
//! an MLP with one ReLU hidden layer and a sigmoid output. A hidden width of
//! zero gives a plain logistic head, which the attribution tests rely on.

mod train;

use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cardiac::{CHANNEL_NAMES, D_CARD};
use crate::lungrisk::HORIZONS;
use crate::perception::Finding;
use crate::reasoning::KbStamp;
use crate::{Error, Result};

pub use train::{
    clip_global_norm, cosine_lr, train, EpochLog, TrainOutcome, TrainingConfig, ADAM_BETAS, ADAM_EPS,
};

pub const PARAMS_FORMAT: &str = "cardiopulm-fusion-1";
pub const BCE_EPS: f64 = 1e-7;
pub const DEFAULT_HIDDEN_WIDTH: usize = 64;

/// Which evidence streams feed the head.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    LungOnly,
    ReasoningOnly,
    CardiacOnly,
    CardiacLung,
    /// Raw finding scores take the place of the reasoning indicators.
    CardiacLungFindings,
    #[default]
    CardiacLungReasoning,
}

/// What occupies the middle block of the fusion input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonBlock {
    None,
    Indicators,
    FindingScores,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::LungOnly,
        Variant::ReasoningOnly,
        Variant::CardiacOnly,
        Variant::CardiacLung,
        Variant::CardiacLungFindings,
        Variant::CardiacLungReasoning,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::LungOnly => "lung_only",
            Variant::ReasoningOnly => "reasoning_only",
            Variant::CardiacOnly => "cardiac_only",
            Variant::CardiacLung => "cardiac_lung",
            Variant::CardiacLungFindings => "cardiac_lung_findings",
            Variant::CardiacLungReasoning => "cardiac_lung_reasoning",
        }
    }

    /// Row label in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::LungOnly => "lung risk only",
            Variant::ReasoningOnly => "reasoning only",
            Variant::CardiacOnly => "cardiac only",
            Variant::CardiacLung => "cardiac + lung risk",
            Variant::CardiacLungFindings => "cardiac + lung risk + findings",
            Variant::CardiacLungReasoning => "cardiac + lung risk + reasoning",
        }
    }

    pub fn uses_cardiac(self) -> bool {
        !matches!(self, Variant::LungOnly | Variant::ReasoningOnly)
    }

    pub fn uses_lung(self) -> bool {
        !matches!(self, Variant::ReasoningOnly | Variant::CardiacOnly)
    }

    pub fn reason_block(self) -> ReasonBlock {
        match self {
            Variant::ReasoningOnly | Variant::CardiacLungReasoning => ReasonBlock::Indicators,
            Variant::CardiacLungFindings => ReasonBlock::FindingScores,
            _ => ReasonBlock::None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant '{s}'")))
    }
}

/// Everything the three streams produced for one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanFeatures {
    pub subject_id: String,
    pub scan_id: String,
    pub cardiac: Vec<f64>,
    pub finding_scores: [f64; 5],
    pub indicators: Vec<f64>,
    pub lung: [f64; HORIZONS],
}

impl ScanFeatures {
    pub fn to_input(&self, variant: Variant, label: u8) -> FusionInput {
        let z_reason = match variant.reason_block() {
            ReasonBlock::None => Vec::new(),
            ReasonBlock::Indicators => self.indicators.clone(),
            ReasonBlock::FindingScores => self.finding_scores.to_vec(),
        };
        FusionInput {
            z_card: if variant.uses_cardiac() { self.cardiac.clone() } else { Vec::new() },
            z_reason,
            z_lung: if variant.uses_lung() { self.lung.to_vec() } else { Vec::new() },
            subject_id: self.subject_id.clone(),
            scan_id: self.scan_id.clone(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionInput {
    pub z_card: Vec<f64>,
    pub z_reason: Vec<f64>,
    pub z_lung: Vec<f64>,
    pub subject_id: String,
    pub scan_id: String,
    pub label: u8,
}

impl FusionInput {
    /// An input with only the given vector, placed in the cardiac block.
    pub fn from_vector(x: Vec<f64>, label: u8) -> Self {
        FusionInput {
            z_card: x,
            z_reason: Vec::new(),
            z_lung: Vec::new(),
            subject_id: String::new(),
            scan_id: String::new(),
            label,
        }
    }

    pub fn block_dims(&self) -> [usize; 3] {
        [self.z_card.len(), self.z_reason.len(), self.z_lung.len()]
    }

    pub fn concat(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.z_card.len() + self.z_reason.len() + self.z_lung.len());
        x.extend_from_slice(&self.z_card);
        x.extend_from_slice(&self.z_reason);
        x.extend_from_slice(&self.z_lung);
        x
    }
}

/// Dense layer, `weights` row-major `[outputs][inputs]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.biases[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

/// Per-dimension affine map applied before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(d: usize) -> Self {
        Standardizer {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    /// Mean and standard deviation per dimension; constant dimensions get
    /// scale 1.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub format: String,
    pub variant: Variant,
    pub kb: KbStamp,
    /// Dimensions of the cardiac, reasoning and lung blocks.
    pub block_dims: [usize; 3],
    pub input_names: Vec<String>,
    pub rng_seed: u64,
    pub standardizer: Standardizer,
    pub layers: Vec<Layer>,
}

impl ModelParams {
    /// Fresh head with uniform ±√(6/(fan_in+fan_out)) weights and zero
    /// biases. `hidden == 0` builds a single logistic layer.
    pub fn init(variant: Variant, kb: &KbStamp, block_dims: [usize; 3], hidden: usize, seed: u64) -> Self {
        let d_in: usize = block_dims.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes: Vec<usize> = if hidden == 0 { vec![d_in, 1] } else { vec![d_in, hidden, 1] };
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let mut layer = Layer::zeros(w[0], w[1]);
                for x in &mut layer.weights {
                    *x = rng.random_range(-bound..=bound);
                }
                layer
            })
            .collect();
        ModelParams {
            format: PARAMS_FORMAT.to_string(),
            variant,
            kb: kb.clone(),
            block_dims,
            input_names: input_names(variant, block_dims),
            rng_seed: seed,
            standardizer: Standardizer::identity(d_in),
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.block_dims.iter().sum()
    }

    pub fn has_hidden_layer(&self) -> bool {
        self.layers.len() > 1
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All weights and biases, layer by layer, weights before biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&values[at..at + nw]);
            at += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&values[at..at + nb]);
            at += nb;
        }
    }

    fn check_input(&self, x: &FusionInput) -> Result<Vec<f64>> {
        if x.block_dims() != self.block_dims {
            let got: usize = x.block_dims().iter().sum();
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: got,
            });
        }
        let v = x.concat();
        if v.iter().any(|e| !e.is_finite()) {
            return Err(Error::Numeric(format!("non-finite fusion input for scan '{}'", x.scan_id)));
        }
        Ok(v)
    }

    /// Checks the params against the knowledge base a caller is about to
    /// pair them with.
    pub fn check_kb(&self, expected: &KbStamp) -> Result<()> {
        if self.variant.reason_block() != ReasonBlock::Indicators {
            return Ok(());
        }
        if self.kb.version != expected.version {
            return Err(Error::VersionMismatch(format!(
                "params trained with KB '{}', current KB is '{}'",
                self.kb.version, expected.version
            )));
        }
        if self.block_dims[1] != expected.d_reason {
            return Err(Error::Dimension {
                expected: expected.d_reason,
                actual: self.block_dims[1],
            });
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.format != PARAMS_FORMAT {
            return Err(Error::VersionMismatch(format!(
                "params format '{}', expected '{PARAMS_FORMAT}'",
                self.format
            )));
        }
        let d_in = self.input_dim();
        let mut expect_in = d_in;
        for l in &self.layers {
            if l.inputs != expect_in || l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::Schema("inconsistent layer shapes".into()));
            }
            expect_in = l.outputs;
        }
        if self.layers.is_empty() || expect_in != 1 {
            return Err(Error::Schema("head must end in one output".into()));
        }
        if self.standardizer.mean.len() != d_in || self.standardizer.scale.len() != d_in {
            return Err(Error::Schema("standardizer dimension differs from input".into()));
        }
        if self.flat().iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(())
    }
}

fn input_names(variant: Variant, block_dims: [usize; 3]) -> Vec<String> {
    let mut names = Vec::new();
    if block_dims[0] == D_CARD && variant.uses_cardiac() {
        names.extend(CHANNEL_NAMES.iter().map(|c| format!("cardiac.{c}")));
    } else {
        names.extend((0..block_dims[0]).map(|i| format!("cardiac.{i}")));
    }
    match variant.reason_block() {
        ReasonBlock::FindingScores if block_dims[1] == Finding::ALL.len() => {
            names.extend(Finding::ALL.iter().map(|f| format!("finding.{f}")))
        }
        _ => names.extend((0..block_dims[1]).map(|i| format!("reason.{i}"))),
    }
    names.extend((0..block_dims[2]).map(|t| format!("lung.y{}", t + 1)));
    names
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediate values of one forward pass.
pub(crate) struct Pass {
    pub input: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logit: f64,
}

pub(crate) fn forward_pass(params: &ModelParams, raw: &[f64]) -> Pass {
    let input = params.standardizer.apply(raw);
    let mut out = Vec::new();
    if params.has_hidden_layer() {
        let mut pre = Vec::new();
        params.layers[0].apply(&input, &mut pre);
        let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        params.layers[1].apply(&hidden, &mut out);
        Pass { input, hidden_pre: pre, hidden, logit: out[0] }
    } else {
        params.layers[0].apply(&input, &mut out);
        Pass { input, hidden_pre: Vec::new(), hidden: Vec::new(), logit: out[0] }
    }
}

pub fn logit(params: &ModelParams, x: &FusionInput) -> Result<f64> {
    let raw = params.check_input(x)?;
    Ok(forward_pass(params, &raw).logit)
}

/// `σ(MLP(x))`.
pub fn forward(params: &ModelParams, x: &FusionInput) -> Result<f64> {
    logit(params, x).map(sigmoid)
}

pub fn predict_batch(params: &ModelParams, inputs: &[FusionInput]) -> Result<Vec<f64>> {
    inputs.iter().map(|x| forward(params, x)).collect()
}

/// Binary cross-entropy with `ŷ` clamped to `[ε, 1−ε]`.
pub fn bce_loss(y_hat: f64, y: u8) -> Result<f64> {
    let p = y_hat.clamp(BCE_EPS, 1.0 - BCE_EPS);
    match y {
        1 => Ok(-p.ln()),
        0 => Ok(-(1.0 - p).ln()),
        _ => Err(Error::InvalidArgument(format!("label {y} is not binary"))),
    }
}

/// Gradients of the mean BCE over `batch`, laid out like [`ModelParams::flat`].
pub fn gradient(params: &ModelParams, batch: &[FusionInput]) -> Result<Vec<f64>> {
    gradient_weighted(params, batch, 1.0).map(|(g, _)| g)
}

/// Gradient and mean loss, with positives weighted by `pos_weight`.
pub(crate) fn gradient_weighted(params: &ModelParams, batch: &[FusionInput], pos_weight: f64) -> Result<(Vec<f64>, f64)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut grads: Vec<Layer> = params.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for x in batch {
        let raw = params.check_input(x)?;
        let pass = forward_pass(params, &raw);
        let y_hat = sigmoid(pass.logit);
        let w = if x.label == 1 { pos_weight } else { 1.0 };
        loss += w * bce_loss(y_hat, x.label)? * scale;
        let d_logit = w * (y_hat - x.label as f64) * scale;
        let last = params.layers.len() - 1;
        let feed = if params.has_hidden_layer() { &pass.hidden } else { &pass.input };
        accumulate(&mut grads[last], feed, &[d_logit]);
        if params.has_hidden_layer() {
            let out = &params.layers[1];
            let d_hidden: Vec<f64> = (0..out.inputs)
                .map(|h| if pass.hidden_pre[h] > 0.0 { out.weights[h] * d_logit } else { 0.0 })
                .collect();
            accumulate(&mut grads[0], &pass.input, &d_hidden);
        }
    }
    let mut flat = Vec::with_capacity(params.parameter_count());
    for g in grads {
        flat.extend(g.weights);
        flat.extend(g.biases);
    }
    Ok((flat, loss))
}

fn accumulate(g: &mut Layer, input: &[f64], d_out: &[f64]) {
    for (o, &d) in d_out.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        g.biases[o] += d;
        let row = &mut g.weights[o * g.inputs..(o + 1) * g.inputs];
        for (w, x) in row.iter_mut().zip(input) {
            *w += d * x;
        }
    }
}

pub fn save_params(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(params)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads params and checks them against the current knowledge base.
pub fn load_params(path: impl AsRef<Path>, expected: &KbStamp) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let params: ModelParams = serde_json::from_str(&text)?;
    params.validate()?;
    params.check_kb(expected)?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoning::KnowledgeGraph;

    fn stamp() -> KbStamp {
        KnowledgeGraph::default_kb().stamp()
    }

    fn linear(w: &[f64], b: f64) -> ModelParams {
        let mut p = ModelParams::init(Variant::CardiacOnly, &stamp(), [w.len(), 0, 0], 0, 1);
        p.layers[0].weights = w.to_vec();
        p.layers[0].biases = vec![b];
        p
    }

    #[test]
    fn zero_net_outputs_half() {
        let mut p = ModelParams::init(Variant::CardiacOnly, &stamp(), [4, 0, 0], 8, 3);
        let zeros = vec![0.0; p.parameter_count()];
        p.set_flat(&zeros);
        let y = forward(&p, &FusionInput::from_vector(vec![1.0, -2.0, 3.0, 0.5], 1)).unwrap();
        assert_eq!(y, 0.5);
    }

    #[test]
    fn identity_hidden_layer_passes_logit() {
        let mut p = ModelParams::init(Variant::CardiacOnly, &stamp(), [1, 0, 0], 1, 3);
        p.layers[0].weights = vec![1.0];
        p.layers[0].biases = vec![0.0];
        p.layers[1].weights = vec![1.0];
        p.layers[1].biases = vec![0.0];
        let y = forward(&p, &FusionInput::from_vector(vec![1.0], 0)).unwrap();
        assert!((y - 0.7310585786300049).abs() < 1e-15);
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(0.5, 1).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(1.0 - BCE_EPS, 1).unwrap() - 1e-7).abs() < 1e-12);
        assert!((bce_loss(BCE_EPS, 1).unwrap() - 16.11809565095832).abs() < 1e-9);
        assert!((bce_loss(0.0, 1).unwrap() - 16.11809565095832).abs() < 1e-9);
        assert!(bce_loss(0.5, 2).is_err());
    }

    #[test]
    fn logistic_gradient_is_residual_times_input() {
        let p = linear(&[0.3, -0.2], 0.1);
        let x = FusionInput::from_vector(vec![2.0, 5.0], 1);
        let y_hat = sigmoid(0.1 + 0.6 - 1.0);
        let g = gradient(&p, &[x]).unwrap();
        assert!((g[0] - (y_hat - 1.0) * 2.0).abs() < 1e-15);
        assert!((g[1] - (y_hat - 1.0) * 5.0).abs() < 1e-15);
        assert!((g[2] - (y_hat - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn balanced_batch_has_zero_output_bias_gradient() {
        let mut p = ModelParams::init(Variant::CardiacOnly, &stamp(), [3, 0, 0], 4, 5);
        let zeros = vec![0.0; p.parameter_count()];
        p.set_flat(&zeros);
        let x = vec![0.4, 1.0, -1.0];
        let batch = [FusionInput::from_vector(x.clone(), 0), FusionInput::from_vector(x, 1)];
        let g = gradient(&p, &batch).unwrap();
        assert_eq!(*g.last().unwrap(), 0.0);
    }

    #[test]
    fn dimension_and_finiteness_checks() {
        let p = linear(&[1.0, 1.0], 0.0);
        assert!(matches!(
            forward(&p, &FusionInput::from_vector(vec![1.0], 0)),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            forward(&p, &FusionInput::from_vector(vec![1.0, f64::NAN], 0)),
            Err(Error::Numeric(_))
        ));
        assert!(predict_batch(&p, &[]).unwrap().is_empty());
        assert!(gradient(&p, &[]).is_err());
    }

    #[test]
    fn save_load_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let s = stamp();
        let mut p = ModelParams::init(Variant::CardiacLungReasoning, &s, [D_CARD, s.d_reason, HORIZONS], 16, 11);
        p.standardizer.mean[0] = 0.1 + 0.2;
        p.standardizer.scale[3] = 1.0 / 3.0;
        let x = FusionInput {
            z_card: (0..D_CARD).map(|i| i as f64 * 0.37).collect(),
            z_reason: vec![0.5; s.d_reason],
            z_lung: vec![0.01; HORIZONS],
            subject_id: "s".into(),
            scan_id: "s_0".into(),
            label: 0,
        };
        save_params(&p, &path).unwrap();
        let q = load_params(&path, &s).unwrap();
        assert_eq!(p, q);
        assert_eq!(forward(&p, &x).unwrap().to_bits(), forward(&q, &x).unwrap().to_bits());

        let other = KbStamp { version: s.version.clone(), d_reason: s.d_reason + 1 };
        assert!(matches!(load_params(&path, &other), Err(Error::Dimension { .. })));
        let renamed = KbStamp { version: "kb-x".into(), d_reason: s.d_reason };
        assert!(matches!(load_params(&path, &renamed), Err(Error::VersionMismatch(_))));
    }

    #[test]
    fn variants_select_blocks() {
        let f = ScanFeatures {
            subject_id: "s".into(),
            scan_id: "s_0".into(),
            cardiac: vec![1.0; D_CARD],
            finding_scores: [0.1; 5],
            indicators: vec![0.2; 10],
            lung: [0.3; HORIZONS],
        };
        let dims: Vec<[usize; 3]> = Variant::ALL.iter().map(|&v| f.to_input(v, 0).block_dims()).collect();
        assert_eq!(
            dims,
            vec![[0, 0, 6], [0, 10, 0], [32, 0, 0], [32, 0, 6], [32, 5, 6], [32, 10, 6]]
        );
        assert_eq!("cardiac_lung".parse::<Variant>().unwrap(), Variant::CardiacLung);
    }
}
