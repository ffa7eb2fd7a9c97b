use rand::Rng;

use super::{ParamSet, Stream, TrainConfig, TrainError};
use crate::angle::{
    angle_graph, bone_features, coord_features, default_fixed_pair_names, featurize_sequence,
    fixed_anchor_pairs, FeatureTensor,
};
use crate::autodiff::{Bindings, Graph, NodeId, Tensor};
use crate::sap::{build_sap_graph, sap_forward, SapConfig, SapParams};
use crate::skeleton::{normalize_sequence, SkeletonLayout, SkeletonSequence};

/// Everything that fixes the model's shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub frames: usize,
    pub classes: usize,
    pub layout: SkeletonLayout,
    pub streams: Vec<Stream>,
    pub hidden: [usize; 2],
    pub sap: SapConfig,
    /// Flat `(w1, w2)` joint-name pairs for [`Stream::AnglesFixed`].
    pub fixed_pairs: Vec<String>,
    pub center: bool,
    pub standardize_angles: bool,
}

/// Variance floor for angle-channel standardization.
pub const STANDARDIZE_EPS: f64 = 1e-6;

impl ModelSpec {
    pub fn new(
        frames: usize,
        classes: usize,
        layout: SkeletonLayout,
        train: &TrainConfig,
        sap: &SapConfig,
    ) -> Result<Self, TrainError> {
        train.validate()?;
        if train.streams.contains(&Stream::AnglesSap) {
            sap.validate()?;
        }
        if frames == 0 || classes == 0 {
            return Err(TrainError::InvalidConfig(
                "model needs at least one frame and one class".into(),
            ));
        }
        let fixed_pairs = train
            .fixed_anchors
            .clone()
            .unwrap_or_else(|| default_fixed_pair_names(&layout));
        Ok(Self {
            frames,
            classes,
            layout,
            streams: train.streams.clone(),
            hidden: train.hidden,
            sap: sap.clone(),
            fixed_pairs,
            center: train.center,
            standardize_angles: train.standardize_angles,
        })
    }

    pub fn joints(&self) -> usize {
        self.layout.len()
    }

    pub fn stream_channels(&self, stream: Stream) -> usize {
        match stream {
            Stream::Coords | Stream::Bones => 3,
            Stream::AnglesFixed => self.fixed_pairs.len() / 2,
            Stream::AnglesSap => self.sap.heads,
        }
    }

    pub fn channels(&self) -> usize {
        self.streams.iter().map(|&s| self.stream_channels(s)).sum()
    }

    fn fixed_pair_indices(&self) -> Result<Vec<usize>, TrainError> {
        if self.fixed_pairs.len() % 2 != 0 || self.fixed_pairs.is_empty() {
            return Err(crate::angle::AngleError::OddNameCount(self.fixed_pairs.len()).into());
        }
        self.fixed_pairs
            .iter()
            .map(|n| {
                self.layout
                    .index_of(n)
                    .ok_or_else(|| crate::angle::AngleError::UnknownJointName(n.clone()).into())
            })
            .collect()
    }

    /// Checks the sample's shape and applies the configured centering.
    pub fn prepare(&self, seq: &SkeletonSequence) -> Result<SkeletonSequence, TrainError> {
        if seq.frames() != self.frames {
            return Err(TrainError::InputMismatch {
                what: "frames",
                expected: self.frames,
                found: seq.frames(),
            });
        }
        if seq.joints() != self.joints() {
            return Err(TrainError::InputMismatch {
                what: "joints",
                expected: self.joints(),
                found: seq.joints(),
            });
        }
        if self.center {
            normalize_sequence(seq, &self.layout)
                .map_err(|e| TrainError::InvalidConfig(format!("cannot center sample: {e}")))
        } else {
            Ok(seq.clone())
        }
    }

    /// Fresh parameters: SAP tensors first, then the backbone, each drawn
    /// from `rng` in name order.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Result<ParamSet, TrainError> {
        let mut params = ParamSet::new();
        if self.streams.contains(&Stream::AnglesSap) {
            let sap = SapParams::init(&self.sap, rng)?;
            for (name, t) in sap.named() {
                params.insert(name, t.clone());
            }
        }
        let sizes = [
            self.joints() * self.channels(),
            self.hidden[0],
            self.hidden[1],
            self.classes,
        ];
        for layer in 0..3 {
            let (fan_in, fan_out) = (sizes[layer], sizes[layer + 1]);
            let r = 1.0 / (fan_in as f64).sqrt();
            let mut draw =
                |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-r..=r)).collect() };
            let w = Tensor::from_shape_vec(vec![fan_in, fan_out], draw(fan_in * fan_out))?;
            let b = Tensor::from_shape_vec(vec![fan_out], draw(fan_out))?;
            params.insert(format!("backbone.w{}", layer + 1), w);
            params.insert(format!("backbone.b{}", layer + 1), b);
        }
        Ok(params)
    }
}

/// A built per-sample graph: joints in, class logits and loss out.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    graph: Graph,
    joints: NodeId,
    target: NodeId,
    features: NodeId,
    logits: NodeId,
    loss: NodeId,
    params: Vec<(String, NodeId)>,
}

/// Forward results for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub logits: Vec<f64>,
    pub loss: f64,
}

impl Model {
    pub fn build(spec: &ModelSpec) -> Result<Self, TrainError> {
        let (t, v, k) = (spec.frames, spec.joints(), spec.classes);
        let mut g = Graph::new();
        let joints = g.input("joints", &[t, v, 3]);
        let target = g.input("target", &[k]);
        let mut params = Vec::new();
        let mut parts = Vec::new();
        for &stream in &spec.streams {
            let node = match stream {
                Stream::Coords => joints,
                Stream::Bones => {
                    let mut idx = Vec::with_capacity(t * v * 3);
                    for ti in 0..t {
                        for vi in 0..v {
                            let p = spec.layout.parent(vi).unwrap_or(vi);
                            idx.extend((0..3).map(|c| (ti * v + p) * 3 + c));
                        }
                    }
                    let parents = g.gather(joints, idx, &[t, v, 3])?;
                    g.sub(joints, parents)?
                }
                Stream::AnglesFixed => {
                    let pairs = spec.fixed_pair_indices()?;
                    let h = pairs.len() / 2;
                    let mut idx = [Vec::new(), Vec::new()];
                    for ti in 0..t {
                        for pair in pairs.chunks_exact(2) {
                            for (side, &j) in pair.iter().enumerate() {
                                idx[side].extend((0..3).map(|c| (ti * v + j) * 3 + c));
                            }
                        }
                    }
                    let [i1, i2] = idx;
                    let w1 = g.gather(joints, i1, &[t, h, 3])?;
                    let w2 = g.gather(joints, i2, &[t, h, 3])?;
                    angle_graph(&mut g, joints, w1, w2)?
                }
                Stream::AnglesSap => {
                    let nodes = build_sap_graph(&mut g, joints, &spec.sap)?;
                    params.extend(nodes.params.iter().cloned());
                    nodes.angles
                }
            };
            let angular = matches!(stream, Stream::AnglesFixed | Stream::AnglesSap);
            let node = if angular && spec.standardize_angles {
                standardize_graph(&mut g, node)?
            } else {
                node
            };
            parts.push(node);
        }
        let features = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat(&parts, 2)?
        };
        let c = spec.channels();
        let [h1, h2] = spec.hidden;
        let mut param = |g: &mut Graph, name: &str, shape: &[usize]| {
            let id = g.parameter(name, shape);
            params.push((name.to_string(), id));
            id
        };
        let w1 = param(&mut g, "backbone.w1", &[v * c, h1]);
        let b1 = param(&mut g, "backbone.b1", &[h1]);
        let w2 = param(&mut g, "backbone.w2", &[h1, h2]);
        let b2 = param(&mut g, "backbone.b2", &[h2]);
        let w3 = param(&mut g, "backbone.w3", &[h2, k]);
        let b3 = param(&mut g, "backbone.b3", &[k]);

        let flat = g.reshape(features, &[t, v * c])?;
        let z1 = g.matmul(flat, w1)?;
        let b1 = g.gather(b1, (0..t).flat_map(|_| 0..h1).collect(), &[t, h1])?;
        let z1 = g.add(z1, b1)?;
        let a1 = g.relu(z1)?;
        let pooled = g.mean_axis(a1, 0)?;
        let pooled = g.reshape(pooled, &[1, h1])?;
        let z2 = g.matmul(pooled, w2)?;
        let b2 = g.reshape(b2, &[1, h2])?;
        let z2 = g.add(z2, b2)?;
        let a2 = g.relu(z2)?;
        let z3 = g.matmul(a2, w3)?;
        let b3 = g.reshape(b3, &[1, k])?;
        let z3 = g.add(z3, b3)?;
        let logits = g.reshape(z3, &[k])?;
        let loss = g.softmax_cross_entropy(logits, target)?;
        Ok(Self {
            spec: spec.clone(),
            graph: g,
            joints,
            target,
            features,
            logits,
            loss,
            params,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn loss_node(&self) -> NodeId {
        self.loss
    }

    /// `(name, node)` for every parameter in the graph.
    pub fn param_nodes(&self) -> &[(String, NodeId)] {
        &self.params
    }

    /// Joints tensor and one-hot target for an already prepared sample.
    pub fn inputs(
        &self,
        seq: &SkeletonSequence,
        label: Option<u32>,
    ) -> Result<(Tensor, Tensor), TrainError> {
        let k = self.spec.classes;
        let joints = Tensor::from_shape_vec(
            vec![self.spec.frames, self.spec.joints(), 3],
            seq.coords().to_vec(),
        )?;
        let mut target = Tensor::zeros(&[k]);
        if let Some(l) = label {
            if l as usize >= k {
                return Err(TrainError::LabelOutOfRange {
                    label: l,
                    classes: k,
                });
            }
            target.data_mut()[l as usize] = 1.0;
        }
        Ok((joints, target))
    }

    /// Binds inputs and parameters.
    pub fn bindings<'a>(
        &self,
        params: &'a ParamSet,
        joints: &'a Tensor,
        target: &'a Tensor,
    ) -> Result<Bindings<'a>, TrainError> {
        let mut b = Bindings::new();
        b.bind(self.joints, joints).bind(self.target, target);
        for (name, id) in &self.params {
            let t = params
                .get(name)
                .ok_or_else(|| TrainError::MissingTensor(name.clone()))?;
            b.bind(*id, t);
        }
        Ok(b)
    }

    /// Logits and loss; the loss is zero when `label` is `None`.
    pub fn forward(
        &self,
        params: &ParamSet,
        seq: &SkeletonSequence,
        label: Option<u32>,
    ) -> Result<SampleOutput, TrainError> {
        let seq = self.spec.prepare(seq)?;
        let (joints, target) = self.inputs(&seq, label)?;
        let values = self
            .graph
            .evaluate(&self.bindings(params, &joints, &target)?)?;
        Ok(SampleOutput {
            logits: values.get(self.logits).data().to_vec(),
            loss: values.scalar(self.loss),
        })
    }

    /// Forward pass plus parameter gradients of the loss.
    pub fn forward_backward(
        &self,
        params: &ParamSet,
        seq: &SkeletonSequence,
        label: u32,
    ) -> Result<(SampleOutput, ParamSet), TrainError> {
        let seq = self.spec.prepare(seq)?;
        let (joints, target) = self.inputs(&seq, Some(label))?;
        let values = self
            .graph
            .evaluate(&self.bindings(params, &joints, &target)?)?;
        let ids: Vec<NodeId> = self.params.iter().map(|p| p.1).collect();
        let grads = self.graph.backward(&values, self.loss, &ids)?;
        let mut out = ParamSet::new();
        for (name, id) in &self.params {
            let g = grads
                .get(*id)
                .expect("every listed parameter has a gradient");
            out.insert(name.clone(), g.clone());
        }
        Ok((
            SampleOutput {
                logits: values.get(self.logits).data().to_vec(),
                loss: values.scalar(self.loss),
            },
            out,
        ))
    }

    /// The `[T, V, C]` features the backbone sees.
    pub fn features(
        &self,
        params: &ParamSet,
        seq: &SkeletonSequence,
    ) -> Result<Tensor, TrainError> {
        let seq = self.spec.prepare(seq)?;
        let (joints, target) = self.inputs(&seq, None)?;
        let values = self
            .graph
            .evaluate(&self.bindings(params, &joints, &target)?)?;
        Ok(values.get(self.features).clone())
    }
}

/// `(x - mean) / sqrt(var + eps)` per channel of a `[T, V, C]` node, with
/// mean and variance taken over frames and joints.
fn standardize_graph(g: &mut Graph, x: NodeId) -> Result<NodeId, TrainError> {
    let shape = g.shape(x).to_vec();
    let (n, c) = (shape[0] * shape[1], shape[2]);
    let flat = g.reshape(x, &[n, c])?;
    let broadcast: Vec<usize> = (0..n).flat_map(|_| 0..c).collect();
    let mean = g.mean_axis(flat, 0)?;
    let mean = g.gather(mean, broadcast.clone(), &[n, c])?;
    let centered = g.sub(flat, mean)?;
    // sqrt(Σ d² + n·eps) as the norm of each channel with one padding entry
    let by_channel = g.gather(
        centered,
        (0..c)
            .flat_map(|ch| (0..n).map(move |i| i * c + ch))
            .collect(),
        &[c, n],
    )?;
    let pad = g.constant(Tensor::filled(&[c, 1], (n as f64 * STANDARDIZE_EPS).sqrt()));
    let padded = g.concat(&[by_channel, pad], 1)?;
    let norm = g.norm(padded)?;
    let sd = g.scale(norm, 1.0 / (n as f64).sqrt())?;
    let sd = g.gather(sd, broadcast, &[n, c])?;
    let out = g.div(centered, sd)?;
    Ok(g.reshape(out, &shape)?)
}

/// Scalar counterpart of the graph standardization.
fn standardize_features(f: FeatureTensor) -> Result<FeatureTensor, TrainError> {
    let (t, v, c) = (f.frames(), f.joints(), f.num_channels());
    let channels = f.channels().to_vec();
    let n = t * v;
    let mut x = f.into_values();
    for ch in 0..c {
        let mean = (0..n).map(|i| x[i * c + ch]).sum::<f64>() / n as f64;
        let ss: f64 = (0..n).map(|i| (x[i * c + ch] - mean).powi(2)).sum();
        let sd = ((ss + n as f64 * STANDARDIZE_EPS) / n as f64).sqrt();
        for i in 0..n {
            x[i * c + ch] = (x[i * c + ch] - mean) / sd;
        }
    }
    Ok(FeatureTensor::new(t, v, x, channels)?)
}

/// Backbone weights as plain tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    /// `[V·C, h1]`, `[h1]`, `[h1, h2]`, `[h2]`, `[h2, K]`, `[K]`.
    pub layers: [(Tensor, Tensor); 3],
}

impl BackboneParams {
    pub fn from_params(params: &ParamSet) -> Result<Self, TrainError> {
        let get = |n: &str| {
            params
                .get(n)
                .cloned()
                .ok_or_else(|| TrainError::MissingTensor(n.to_string()))
        };
        Ok(Self {
            layers: [
                (get("backbone.w1")?, get("backbone.b1")?),
                (get("backbone.w2")?, get("backbone.b2")?),
                (get("backbone.w3")?, get("backbone.b3")?),
            ],
        })
    }
}

fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let cols = w.shape()[1];
    let mut out = b.data().to_vec();
    for (i, xi) in x.iter().enumerate() {
        for (o, wij) in out.iter_mut().zip(&w.data()[i * cols..(i + 1) * cols]) {
            *o += xi * wij;
        }
    }
    out
}

/// Per-frame linear + rectifier, mean over frames, linear + rectifier,
/// linear to class logits.
pub fn backbone_forward(
    features: &FeatureTensor,
    params: &BackboneParams,
) -> Result<Vec<f64>, TrainError> {
    let [(w1, b1), (w2, b2), (w3, b3)] = &params.layers;
    let width = features.joints() * features.num_channels();
    let shapes_ok = w1.shape() == [width, b1.numel()]
        && w2.shape() == [b1.numel(), b2.numel()]
        && w3.shape() == [b2.numel(), b3.numel()];
    if !shapes_ok {
        return Err(TrainError::ShapeMismatch {
            name: "backbone".into(),
            expected: vec![width],
            found: w1.shape().to_vec(),
        });
    }
    let t = features.frames();
    let mut pooled = vec![0.0; b1.numel()];
    for frame in features.values().chunks_exact(width) {
        let h = affine(frame, w1, b1);
        for (p, x) in pooled.iter_mut().zip(h) {
            *p += x.max(0.0);
        }
    }
    for p in &mut pooled {
        *p /= t as f64;
    }
    let h2: Vec<f64> = affine(&pooled, w2, b2)
        .into_iter()
        .map(|x| x.max(0.0))
        .collect();
    Ok(affine(&h2, w3, b3))
}

/// The feature streams of `spec`, computed without the graph.
pub fn extract_features(
    spec: &ModelSpec,
    params: &ParamSet,
    seq: &SkeletonSequence,
) -> Result<FeatureTensor, TrainError> {
    let seq = spec.prepare(seq)?;
    let mut out: Option<FeatureTensor> = None;
    for &stream in &spec.streams {
        let f = match stream {
            Stream::Coords => coord_features(&seq),
            Stream::Bones => bone_features(&seq, &spec.layout),
            Stream::AnglesFixed => {
                let anchors = fixed_anchor_pairs(&spec.layout, &seq, &spec.fixed_pairs)?;
                featurize_sequence(&seq, &anchors)?
            }
            Stream::AnglesSap => {
                let sap = SapParams::from_named(&spec.sap, |n| params.get(n).cloned())?;
                sap_forward(&seq, &sap)?
            }
        };
        let f = match stream {
            Stream::AnglesFixed | Stream::AnglesSap if spec.standardize_angles => {
                standardize_features(f)?
            }
            _ => f,
        };
        out = Some(match out {
            None => f,
            Some(acc) => acc.concat_channels(&f)?,
        });
    }
    out.ok_or_else(|| TrainError::InvalidConfig("no feature streams".into()))
}
