use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use super::adapt::adapt_weight_tensor;
use super::pretrained::load_pretrained;
use super::{BackboneFamily, BackboneSpec, FusionModelSpec, Strategy};
use crate::error::{Error, Result};
use crate::ingest::Modality;
use crate::nn::{join, Backbone, Linear, Mode, Module, Param, Relu, ResNet50, TinyCnn};
use crate::scalar::Scalar;
use crate::tensor::{softmax_rows, softmax_rows_backward, Tensor};

/// A backbone body followed by an affine head that replaces its final layer.
#[derive(Clone, Debug)]
pub struct Extractor<T> {
    pub body: Backbone<T>,
    pub fc: Linear<T>,
}

impl<T: Scalar> Extractor<T> {
    /// Builds a three-channel body, optionally loads pretrained weights into
    /// it, then adapts its first layer to `in_channels`.
    fn new<R: Rng + ?Sized>(
        spec: &BackboneSpec,
        in_channels: usize,
        out_features: usize,
        pretrained: Option<&Path>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut body = match spec.family {
            BackboneFamily::PaperResnet50 => Backbone::ResNet50(Box::new(ResNet50::new(rng))),
            BackboneFamily::TinyCnn => Backbone::Tiny(TinyCnn::new(spec.feature_dim, rng)),
        };
        if spec.pretrained {
            let path = pretrained.ok_or_else(|| {
                Error::Config("backbone.pretrained is set but no pretrained weights path was given".into())
            })?;
            load_pretrained(&mut body, path)?;
        }
        if in_channels != 3 {
            let adapted = adapt_weight_tensor(&body.first_conv().weight.value, in_channels)?;
            body.first_conv_mut().replace_weight(adapted)?;
        }
        let fc = Linear::new(body.feature_dim(), out_features, rng);
        Ok(Self { body, fc })
    }

    pub fn in_channels(&self) -> usize {
        self.body.in_channels()
    }
}

impl<T: Scalar> Module<T> for Extractor<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let features = self.body.forward(input, mode);
        self.fc.forward(&features, mode)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Tensor<T> {
        let g = self.fc.backward(grad_output);
        self.body.backward(&g)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.body.visit_params(prefix, f);
        self.fc.visit_params(&join(prefix, "fc"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.body.visit_params_mut(prefix, f);
        self.fc.visit_params_mut(&join(prefix, "fc"), f);
    }
}

/// Network input for one batch.
#[derive(Clone, Debug, PartialEq)]
pub enum FusionInput<T> {
    /// `(B, 5, S, S)`: thermal, red, green, blue, lidar at a common resolution.
    Stacked(Tensor<T>),
    /// Native-resolution tiles, `(B, 1, ·, ·)`, `(B, 3, ·, ·)` and `(B, 1, ·, ·)`.
    Modalities {
        thermal: Tensor<T>,
        rgb: Tensor<T>,
        lidar: Tensor<T>,
    },
}

impl<T: Scalar> FusionInput<T> {
    pub fn batch_size(&self) -> usize {
        match self {
            FusionInput::Stacked(x) => x.shape().first().copied().unwrap_or(0),
            FusionInput::Modalities { rgb, .. } => rgb.shape().first().copied().unwrap_or(0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreKind {
    Logits,
    Probabilities,
}

#[derive(Clone, Debug)]
pub struct ModelOutput<T> {
    /// `(B, num_classes)`: raw scores for early and late fusion, the mixture
    /// distribution for the mixture of experts.
    pub scores: Tensor<T>,
    pub kind: ScoreKind,
    /// Per-expert class distributions in thermal, rgb, lidar order.
    pub expert_probs: Option<Vec<Tensor<T>>>,
    /// `(B, 3)` gating weights.
    pub gates: Option<Tensor<T>>,
}

impl<T: Scalar> ModelOutput<T> {
    pub fn probabilities(&self) -> Tensor<T> {
        match self.kind {
            ScoreKind::Logits => softmax_rows(&self.scores),
            ScoreKind::Probabilities => self.scores.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct MoeCache<T> {
    probs: Vec<Tensor<T>>,
    gates: Tensor<T>,
}

#[derive(Clone, Debug)]
enum Net<T> {
    Early {
        backbone: Extractor<T>,
    },
    Late {
        extractors: Vec<Extractor<T>>,
        classifier: Linear<T>,
    },
    Moe {
        extractors: Vec<Extractor<T>>,
        experts: Vec<Linear<T>>,
        gate_in: Linear<T>,
        gate_relu: Relu,
        gate_out: Linear<T>,
        cache: Option<MoeCache<T>>,
    },
}

/// One of the three fusion models with hand-written backward passes.
#[derive(Clone, Debug)]
pub struct FusionModel<T> {
    spec: FusionModelSpec,
    net: Net<T>,
}

fn build_extractors<T: Scalar, R: Rng + ?Sized>(
    spec: &FusionModelSpec,
    pretrained: Option<&Path>,
    rng: &mut R,
) -> Result<Vec<Extractor<T>>> {
    Modality::ALL
        .iter()
        .map(|m| Extractor::new(&spec.backbone, m.bands(), spec.per_modality_feature_dim, pretrained, rng))
        .collect()
}

fn require(spec: &FusionModelSpec, strategy: Strategy) -> Result<()> {
    if spec.strategy != strategy {
        return Err(Error::Config(format!(
            "spec has strategy {}, expected {strategy}",
            spec.strategy
        )));
    }
    Ok(())
}

/// Single backbone over the five stacked bands.
pub fn build_early<T: Scalar, R: Rng + ?Sized>(
    spec: &FusionModelSpec,
    pretrained: Option<&Path>,
    rng: &mut R,
) -> Result<FusionModel<T>> {
    require(spec, Strategy::Early)?;
    spec.validate()?;
    let backbone = Extractor::new(&spec.backbone, 5, spec.num_classes, pretrained, rng)?;
    Ok(FusionModel {
        spec: spec.clone(),
        net: Net::Early { backbone },
    })
}

/// Three extractors whose concatenated features feed one affine classifier.
pub fn build_late<T: Scalar, R: Rng + ?Sized>(
    spec: &FusionModelSpec,
    pretrained: Option<&Path>,
    rng: &mut R,
) -> Result<FusionModel<T>> {
    require(spec, Strategy::Late)?;
    spec.validate()?;
    let extractors = build_extractors(spec, pretrained, rng)?;
    let classifier = Linear::new(3 * spec.per_modality_feature_dim, spec.num_classes, rng);
    Ok(FusionModel {
        spec: spec.clone(),
        net: Net::Late { extractors, classifier },
    })
}

/// Three extractors with per-modality expert heads mixed by a gating MLP.
pub fn build_moe<T: Scalar, R: Rng + ?Sized>(
    spec: &FusionModelSpec,
    pretrained: Option<&Path>,
    rng: &mut R,
) -> Result<FusionModel<T>> {
    require(spec, Strategy::Moe)?;
    spec.validate()?;
    let extractors = build_extractors(spec, pretrained, rng)?;
    let d = spec.per_modality_feature_dim;
    let experts = (0..3).map(|_| Linear::new(d, spec.num_classes, rng)).collect();
    let gate_in = Linear::new(3 * d, spec.gate_hidden_dim, rng);
    let gate_out = Linear::new(spec.gate_hidden_dim, 3, rng);
    Ok(FusionModel {
        spec: spec.clone(),
        net: Net::Moe {
            extractors,
            experts,
            gate_in,
            gate_relu: Relu::new(),
            gate_out,
            cache: None,
        },
    })
}

fn check_input<T: Scalar>(name: &str, x: &Tensor<T>, channels: usize, batch: Option<usize>, min_side: usize) -> Result<()> {
    let s = x.shape();
    let ok = s.len() == 4
        && s[0] > 0
        && s[1] == channels
        && s[2] >= min_side
        && s[3] >= min_side
        && batch.is_none_or(|b| b == s[0]);
    if ok {
        Ok(())
    } else {
        let b = batch.map_or("B".to_string(), |b| b.to_string());
        Err(Error::Shape(format!(
            "{name} input has shape {s:?}, expected ({b}, {channels}, H, W) with H, W >= {min_side}"
        )))
    }
}

fn mix<T: Scalar>(probs: &[Tensor<T>], gates: &Tensor<T>) -> Tensor<T> {
    let (batch, classes) = probs[0].dims2();
    let mut out = Tensor::zeros(&[batch, classes]);
    for b in 0..batch {
        let g = gates.row(b);
        let row = &mut out.data_mut()[b * classes..(b + 1) * classes];
        for (m, p) in probs.iter().enumerate() {
            for (o, &v) in row.iter_mut().zip(p.row(b)) {
                *o += g[m] * v;
            }
        }
    }
    out
}

impl<T: Scalar> FusionModel<T> {
    /// Builds the model named by `spec.strategy`.
    pub fn build<R: Rng + ?Sized>(spec: &FusionModelSpec, pretrained: Option<&Path>, rng: &mut R) -> Result<Self> {
        match spec.strategy {
            Strategy::Early => build_early(spec, pretrained, rng),
            Strategy::Late => build_late(spec, pretrained, rng),
            Strategy::Moe => build_moe(spec, pretrained, rng),
        }
    }

    pub fn spec(&self) -> &FusionModelSpec {
        &self.spec
    }

    pub(crate) fn set_spec(&mut self, spec: FusionModelSpec) {
        self.spec = spec;
    }

    pub fn strategy(&self) -> Strategy {
        self.spec.strategy
    }

    /// The per-modality extractors (one for early fusion).
    pub fn extractors(&self) -> Vec<&Extractor<T>> {
        match &self.net {
            Net::Early { backbone } => vec![backbone],
            Net::Late { extractors, .. } | Net::Moe { extractors, .. } => extractors.iter().collect(),
        }
    }

    fn min_side(&self) -> usize {
        self.extractors()[0].body.min_input_side()
    }

    pub fn forward(&mut self, input: &FusionInput<T>, mode: Mode) -> Result<ModelOutput<T>> {
        let min_side = self.min_side();
        let strategy = self.spec.strategy;
        match (&mut self.net, input) {
            (Net::Early { backbone }, FusionInput::Stacked(x)) => {
                check_input("stacked", x, 5, None, min_side)?;
                Ok(ModelOutput {
                    scores: backbone.forward(x, mode),
                    kind: ScoreKind::Logits,
                    expert_probs: None,
                    gates: None,
                })
            }
            (Net::Late { extractors, classifier }, FusionInput::Modalities { thermal, rgb, lidar }) => {
                let features = extract(extractors, [thermal, rgb, lidar], mode, min_side)?;
                let joined = Tensor::concat_cols(&features.iter().collect::<Vec<_>>());
                Ok(ModelOutput {
                    scores: classifier.forward(&joined, mode),
                    kind: ScoreKind::Logits,
                    expert_probs: None,
                    gates: None,
                })
            }
            (
                Net::Moe {
                    extractors,
                    experts,
                    gate_in,
                    gate_relu,
                    gate_out,
                    cache,
                },
                FusionInput::Modalities { thermal, rgb, lidar },
            ) => {
                let features = extract(extractors, [thermal, rgb, lidar], mode, min_side)?;
                let probs: Vec<Tensor<T>> = experts
                    .iter_mut()
                    .zip(&features)
                    .map(|(head, f)| softmax_rows(&head.forward(f, mode)))
                    .collect();
                let joined = Tensor::concat_cols(&features.iter().collect::<Vec<_>>());
                let hidden = gate_relu.forward(&gate_in.forward(&joined, mode), mode);
                let gates = softmax_rows(&gate_out.forward(&hidden, mode));
                let scores = mix(&probs, &gates);
                *cache = (mode == Mode::Train).then(|| MoeCache {
                    probs: probs.clone(),
                    gates: gates.clone(),
                });
                Ok(ModelOutput {
                    scores,
                    kind: ScoreKind::Probabilities,
                    expert_probs: Some(probs),
                    gates: Some(gates),
                })
            }
            (_, FusionInput::Stacked(_)) => Err(Error::Shape(format!(
                "{strategy} model expects per-modality inputs, got a stacked tensor"
            ))),
            (_, FusionInput::Modalities { .. }) => Err(Error::Shape(
                "early fusion expects a stacked (B, 5, H, W) tensor, got per-modality inputs".into(),
            )),
        }
    }

    /// Backpropagates the gradient of the loss with respect to
    /// [`ModelOutput::scores`] from the last training-mode forward.
    pub fn backward(&mut self, grad_scores: &Tensor<T>) -> Result<()> {
        let gate_grad = self.spec.gate_grad_to_extractors;
        let width = self.spec.per_modality_feature_dim;
        match &mut self.net {
            Net::Early { backbone } => {
                backbone.backward(grad_scores);
            }
            Net::Late { extractors, classifier } => {
                let g = classifier.backward(grad_scores);
                for (e, gm) in extractors.iter_mut().zip(g.split_cols(&[width; 3])) {
                    e.backward(&gm);
                }
            }
            Net::Moe {
                extractors,
                experts,
                gate_in,
                gate_relu,
                gate_out,
                cache,
            } => {
                let MoeCache { probs, gates } = cache
                    .take()
                    .ok_or_else(|| Error::Shape("backward called without a training forward".into()))?;
                let (batch, classes) = grad_scores.dims2();
                let mut grad_gates = Tensor::zeros(&[batch, 3]);
                let mut feature_grads = Vec::with_capacity(3);
                for (m, (p, head)) in probs.iter().zip(experts.iter_mut()).enumerate() {
                    let mut grad_p = Tensor::zeros(&[batch, classes]);
                    for b in 0..batch {
                        let dmix = grad_scores.row(b);
                        let g = gates.row(b)[m];
                        let mut dot = T::zero();
                        for c in 0..classes {
                            dot += dmix[c] * p.row(b)[c];
                            grad_p.data_mut()[b * classes + c] = g * dmix[c];
                        }
                        grad_gates.data_mut()[b * 3 + m] = dot;
                    }
                    let grad_logits = softmax_rows_backward(p, &grad_p);
                    feature_grads.push(head.backward(&grad_logits));
                }
                let grad_gate_logits = softmax_rows_backward(&gates, &grad_gates);
                let g = gate_out.backward(&grad_gate_logits);
                let g = Module::<T>::backward(gate_relu, &g);
                let g = gate_in.backward(&g);
                if gate_grad {
                    for (fg, gm) in feature_grads.iter_mut().zip(g.split_cols(&[width; 3])) {
                        fg.add_assign(&gm);
                    }
                }
                for (e, fg) in extractors.iter_mut().zip(&feature_grads) {
                    e.backward(fg);
                }
            }
        }
        Ok(())
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        match &self.net {
            Net::Early { backbone } => backbone.visit_params("backbone", f),
            Net::Late { extractors, classifier } => {
                for (e, m) in extractors.iter().zip(Modality::ALL) {
                    e.visit_params(m.name(), f);
                }
                classifier.visit_params("classifier", f);
            }
            Net::Moe {
                extractors,
                experts,
                gate_in,
                gate_out,
                ..
            } => {
                for (e, m) in extractors.iter().zip(Modality::ALL) {
                    e.visit_params(m.name(), f);
                }
                for (h, m) in experts.iter().zip(Modality::ALL) {
                    h.visit_params(&join("experts", m.name()), f);
                }
                gate_in.visit_params("gate.0", f);
                gate_out.visit_params("gate.2", f);
            }
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        match &mut self.net {
            Net::Early { backbone } => backbone.visit_params_mut("backbone", f),
            Net::Late { extractors, classifier } => {
                for (e, m) in extractors.iter_mut().zip(Modality::ALL) {
                    e.visit_params_mut(m.name(), f);
                }
                classifier.visit_params_mut("classifier", f);
            }
            Net::Moe {
                extractors,
                experts,
                gate_in,
                gate_out,
                ..
            } => {
                for (e, m) in extractors.iter_mut().zip(Modality::ALL) {
                    e.visit_params_mut(m.name(), f);
                }
                for (h, m) in experts.iter_mut().zip(Modality::ALL) {
                    h.visit_params_mut(&join("experts", m.name()), f);
                }
                gate_in.visit_params_mut("gate.0", f);
                gate_out.visit_params_mut("gate.2", f);
            }
        }
    }

    /// Number of trainable scalars.
    pub fn num_params(&self) -> usize {
        let mut total = 0;
        self.visit_params(&mut |_, p| {
            if p.is_trainable() {
                total += p.value.len();
            }
        });
        total
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    /// Every tensor (trainable or not) by name.
    pub fn state(&self) -> BTreeMap<String, Tensor<T>> {
        let mut out = BTreeMap::new();
        self.visit_params(&mut |name, p| {
            out.insert(name.to_string(), p.value.clone());
        });
        out
    }

    /// Overwrites every tensor from `state`; names and shapes must match exactly.
    pub fn load_state(&mut self, state: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        let mut problem = None;
        let mut seen = 0;
        self.visit_params_mut(&mut |name, p| {
            if problem.is_some() {
                return;
            }
            match state.get(name) {
                Some(t) if t.shape() == p.value.shape() => {
                    p.set_value(t.clone());
                    seen += 1;
                }
                Some(t) => {
                    problem = Some(format!("{name}: shape {:?}, model has {:?}", t.shape(), p.value.shape()))
                }
                None => problem = Some(format!("missing tensor {name}")),
            }
        });
        if let Some(msg) = problem {
            return Err(Error::Checkpoint(msg));
        }
        if seen != state.len() {
            return Err(Error::Checkpoint(format!(
                "state has {} tensors, model uses {seen}",
                state.len()
            )));
        }
        Ok(())
    }
}

fn extract<T: Scalar>(
    extractors: &mut [Extractor<T>],
    inputs: [&Tensor<T>; 3],
    mode: Mode,
    min_side: usize,
) -> Result<Vec<Tensor<T>>> {
    let batch = inputs[1].shape().first().copied();
    for (m, x) in Modality::ALL.iter().zip(inputs) {
        check_input(m.name(), x, m.bands(), batch, min_side)?;
    }
    Ok(extractors
        .iter_mut()
        .zip(inputs)
        .map(|(e, x)| e.forward(x, mode))
        .collect())
}
