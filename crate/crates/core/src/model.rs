//! The Teacher/Decoder/Student network and its multitask loss.
//!
//! The Teacher is a micro-VGG: per block two 3x3 same-padding convs + relu,
//! with the pre-pool activation recorded as a skip, then a 2x2 maxpool; the
//! head is two relu FC layers and a linear class layer. The Decoder runs the
//! head in reverse (two FC layers, with the first fc activation added back
//! in), then one deconvolution block per encoder block in reverse order
//! (upsample, conv, concat skip, conv, conv), then a 2-channel squeeze and a
//! 3-channel sigmoid layer producing the visualization V. The Student is a
//! second, independently parameterized copy of the Teacher that classifies V.

use crate::autodiff::{AutodiffError, Gradients, Graph, NodeId, Parameter};
use crate::gradcheck::DiffLoss;
use crate::tensor::{self, Padding, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("input image must be {expected:?}, got {got:?}")]
    BadImageShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("{path}: {source}")]
    Layer {
        path: String,
        #[source]
        source: AutodiffError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub image_size: usize,
    pub channels: Vec<usize>,
    pub fc_width: usize,
    pub num_classes: usize,
    pub alpha: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            image_size: 32,
            channels: vec![16, 32, 64],
            fc_width: 64,
            num_classes: 4,
            alpha: 0.4,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let b = self.channels.len();
        if b == 0 {
            return Err(ModelError::InvalidConfig("needs at least one block".into()));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(ModelError::InvalidConfig("zero-channel block".into()));
        }
        if self.image_size == 0 || self.image_size % (1 << b) != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "image size {} not divisible by 2^{b}",
                self.image_size
            )));
        }
        if self.fc_width == 0 {
            return Err(ModelError::InvalidConfig("zero fc width".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::InvalidConfig(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ModelError::InvalidConfig(format!(
                "alpha {} outside [0,1]",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Spatial extent after all encoder pools.
    pub fn bottom_size(&self) -> usize {
        self.image_size >> self.channels.len()
    }

    /// Flattened length of the deepest pooled volume.
    pub fn bottom_len(&self) -> usize {
        let s = self.bottom_size();
        s * s * self.channels[self.channels.len() - 1]
    }
}

/// Value outputs of one full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    /// Teacher class probabilities.
    pub yt: Tensor,
    /// Student class probabilities.
    pub ys: Tensor,
    /// Reconstructed visualization in [0,1], same shape as the input.
    pub v: Tensor,
    /// Per-block pre-pool Teacher activations, shallowest first.
    pub teacher_skips: Vec<Tensor>,
    pub teacher_fc1: Tensor,
}

/// Node handles into a full Teacher+Decoder+Student graph.
pub struct FullGraph {
    pub graph: Graph,
    pub image: NodeId,
    pub teacher_logits: NodeId,
    pub student_logits: NodeId,
    pub v: NodeId,
    pub teacher_skips: Vec<NodeId>,
    pub teacher_fc1: NodeId,
    pub teacher_fc2: NodeId,
    /// Output of each deconvolution block in processing order (deepest first).
    pub decoder_blocks: Vec<NodeId>,
}

/// Node handles into a Teacher-only graph.
pub struct TeacherGraph {
    pub graph: Graph,
    pub image: NodeId,
    pub logits: NodeId,
    /// Pre-pool activations, shallowest first.
    pub skips: Vec<NodeId>,
}

/// Node handles into a loss graph, plus cached per-head probabilities.
pub struct LossGraph {
    pub graph: Graph,
    pub total: NodeId,
    pub loss_teacher: NodeId,
    pub loss_student: NodeId,
    pub v: NodeId,
    pub yt: Tensor,
    pub ys: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub teacher: f64,
    pub student: f64,
}

/// One training sample evaluated: losses, both heads' probabilities, and
/// parameter gradients.
pub struct SampleResult {
    pub loss: LossParts,
    pub yt: Tensor,
    pub ys: Tensor,
    pub grads: Gradients,
}

#[derive(Clone)]
pub struct TeacherStudentModel {
    pub config: NetworkConfig,
    params: Vec<Parameter>,
    teacher_len: usize,
    decoder_len: usize,
}

impl TeacherStudentModel {
    /// Fresh model with seeded uniform Glorot weights and zero biases.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<TeacherStudentModel, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();

        build_classifier_params(&mut params, &mut rng, &config, "teacher");
        let teacher_len = params.len();
        build_decoder_params(&mut params, &mut rng, &config);
        let decoder_len = params.len() - teacher_len;
        build_classifier_params(&mut params, &mut rng, &config, "student");

        Ok(TeacherStudentModel {
            config,
            params,
            teacher_len,
            decoder_len,
        })
    }

    /// Rebuild from explicit parameters (checkpoint loading). The parameter
    /// list must match the construction order and shapes for the config.
    pub(crate) fn from_parts(
        config: NetworkConfig,
        params: Vec<Parameter>,
    ) -> Result<TeacherStudentModel, ModelError> {
        let reference = TeacherStudentModel::new(config, 0)?;
        if params.len() != reference.params.len() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (have, want) in params.iter().zip(reference.params.iter()) {
            if have.name != want.name || have.value.shape() != want.value.shape() {
                return Err(ModelError::InvalidConfig(format!(
                    "parameter {} has shape {:?}, expected {} {:?}",
                    have.name,
                    have.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        Ok(TeacherStudentModel {
            config: reference.config,
            params,
            teacher_len: reference.teacher_len,
            decoder_len: reference.decoder_len,
        })
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn teacher_params(&self) -> &[Parameter] {
        &self.params[..self.teacher_len]
    }

    pub fn decoder_params(&self) -> &[Parameter] {
        &self.params[self.teacher_len..self.teacher_len + self.decoder_len]
    }

    pub fn student_params(&self) -> &[Parameter] {
        &self.params[self.teacher_len + self.decoder_len..]
    }

    fn check_image(&self, image: &Tensor) -> Result<(), ModelError> {
        let s = self.config.image_size;
        if image.shape() != [s, s, 3] {
            return Err(ModelError::BadImageShape {
                expected: vec![s, s, 3],
                got: image.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Build the complete three-network graph on a fresh `Graph`.
    pub fn full_graph(&self, image: &Tensor) -> Result<FullGraph, ModelError> {
        self.check_image(image)?;
        let mut g = Graph::new();
        let image_node = g.input(image.clone());
        let mut cur = Cursor::new(&self.params);

        let teacher = classifier_tower(&mut g, &mut cur, image_node, &self.config, "teacher")?;
        let decoder = decoder_tower(
            &mut g,
            &mut cur,
            teacher.fc2,
            teacher.fc1,
            &teacher.skips,
            &self.config,
        )?;
        let student = classifier_tower(&mut g, &mut cur, decoder.v, &self.config, "student")?;
        debug_assert_eq!(cur.next, self.params.len());

        Ok(FullGraph {
            graph: g,
            image: image_node,
            teacher_logits: teacher.logits,
            student_logits: student.logits,
            v: decoder.v,
            teacher_skips: teacher.skips,
            teacher_fc1: teacher.fc1,
            teacher_fc2: teacher.fc2,
            decoder_blocks: decoder.blocks,
        })
    }

    /// Build only the Teacher classifier graph.
    pub fn teacher_graph(&self, image: &Tensor) -> Result<TeacherGraph, ModelError> {
        self.check_image(image)?;
        let mut g = Graph::new();
        let image_node = g.input(image.clone());
        let mut cur = Cursor::new(&self.params);
        let teacher = classifier_tower(&mut g, &mut cur, image_node, &self.config, "teacher")?;
        Ok(TeacherGraph {
            graph: g,
            image: image_node,
            logits: teacher.logits,
            skips: teacher.skips,
        })
    }

    pub fn forward(&self, image: &Tensor) -> Result<ForwardOutputs, ModelError> {
        let fg = self.full_graph(image)?;
        let yt = tensor::softmax(fg.graph.value(fg.teacher_logits))
            .map_err(|e| at("teacher/softmax")(e.into()))?;
        let ys = tensor::softmax(fg.graph.value(fg.student_logits))
            .map_err(|e| at("student/softmax")(e.into()))?;
        Ok(ForwardOutputs {
            yt,
            ys,
            v: fg.graph.value(fg.v).clone(),
            teacher_skips: fg
                .teacher_skips
                .iter()
                .map(|&id| fg.graph.value(id).clone())
                .collect(),
            teacher_fc1: fg.graph.value(fg.teacher_fc1).clone(),
        })
    }

    /// Full graph extended with both cross-entropy heads and the alpha blend.
    pub fn loss_graph(&self, image: &Tensor, label: usize) -> Result<LossGraph, ModelError> {
        if label >= self.config.num_classes {
            return Err(ModelError::LabelOutOfRange {
                label,
                classes: self.config.num_classes,
            });
        }
        let fg = self.full_graph(image)?;
        let mut g = fg.graph;
        let loss_teacher = g
            .softmax_cross_entropy(fg.teacher_logits, label)
            .map_err(at("loss/teacher"))?;
        let loss_student = g
            .softmax_cross_entropy(fg.student_logits, label)
            .map_err(at("loss/student"))?;
        let alpha = self.config.alpha;
        let wt = g.scale(loss_teacher, alpha);
        let ws = g.scale(loss_student, 1.0 - alpha);
        let total = g.add(wt, ws).map_err(at("loss/blend"))?;
        let yt = g.cross_entropy_probs(loss_teacher).unwrap().clone();
        let ys = g.cross_entropy_probs(loss_student).unwrap().clone();
        Ok(LossGraph {
            graph: g,
            total,
            loss_teacher,
            loss_student,
            v: fg.v,
            yt,
            ys,
        })
    }

    /// Losses for one sample, forward only.
    pub fn sample_loss(&self, image: &Tensor, label: usize) -> Result<LossParts, ModelError> {
        let lg = self.loss_graph(image, label)?;
        Ok(LossParts {
            total: lg.graph.value(lg.total).data()[0],
            teacher: lg.graph.value(lg.loss_teacher).data()[0],
            student: lg.graph.value(lg.loss_student).data()[0],
        })
    }

    /// Losses, head probabilities, and parameter gradients for one sample.
    pub fn sample_loss_and_gradients(
        &self,
        image: &Tensor,
        label: usize,
    ) -> Result<SampleResult, ModelError> {
        let mut lg = self.loss_graph(image, label)?;
        let loss = LossParts {
            total: lg.graph.value(lg.total).data()[0],
            teacher: lg.graph.value(lg.loss_teacher).data()[0],
            student: lg.graph.value(lg.loss_student).data()[0],
        };
        let bw = lg.graph.backward(lg.total).map_err(at("loss/backward"))?;
        let grads = bw.into_param_gradients(&lg.graph, self.params.len());
        Ok(SampleResult {
            loss,
            yt: lg.yt,
            ys: lg.ys,
            grads,
        })
    }
}

/// Eq-style multitask blend on explicit probability vectors. Probabilities
/// are floored at 1e-300 before the log so a hard zero cannot produce NaN.
pub fn multitask_loss(
    yt: &Tensor,
    ys: &Tensor,
    label: usize,
    alpha: f64,
) -> Result<LossParts, ModelError> {
    if yt.rank() != 1 || ys.rank() != 1 || yt.len() != ys.len() {
        return Err(ModelError::InvalidConfig(format!(
            "probability vectors must be rank 1 and equal length, got {:?} and {:?}",
            yt.shape(),
            ys.shape()
        )));
    }
    if label >= yt.len() {
        return Err(ModelError::LabelOutOfRange {
            label,
            classes: yt.len(),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ModelError::InvalidConfig(format!(
            "alpha {alpha} outside [0,1]"
        )));
    }
    let floor = 1e-300;
    let teacher = -yt.data()[label].max(floor).ln();
    let student = -ys.data()[label].max(floor).ln();
    Ok(LossParts {
        total: alpha * teacher + (1.0 - alpha) * student,
        teacher,
        student,
    })
}

/// Mean-loss wrapper over a fixed batch, for gradient checking.
pub struct BatchLoss<'a> {
    model: &'a mut TeacherStudentModel,
    batch: &'a [(Tensor, usize)],
}

impl<'a> BatchLoss<'a> {
    pub fn new(
        model: &'a mut TeacherStudentModel,
        batch: &'a [(Tensor, usize)],
    ) -> Result<BatchLoss<'a>, ModelError> {
        assert!(!batch.is_empty(), "gradient check needs a nonempty batch");
        for (image, label) in batch {
            model.check_image(image)?;
            if *label >= model.config.num_classes {
                return Err(ModelError::LabelOutOfRange {
                    label: *label,
                    classes: model.config.num_classes,
                });
            }
        }
        Ok(BatchLoss { model, batch })
    }
}

impl DiffLoss for BatchLoss<'_> {
    fn n_params(&self) -> usize {
        self.model.n_params()
    }
    fn param_name(&self, i: usize) -> &str {
        &self.model.params[i].name
    }
    fn param_value(&self, i: usize) -> &Tensor {
        &self.model.params[i].value
    }
    fn param_value_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.model.params[i].value
    }
    fn loss(&self) -> f64 {
        let total: f64 = self
            .batch
            .iter()
            .map(|(image, label)| {
                self.model
                    .sample_loss(image, *label)
                    .expect("batch validated at construction")
                    .total
            })
            .sum();
        total / self.batch.len() as f64
    }
    fn loss_and_gradients(&self) -> (f64, Gradients) {
        let mut grads = Gradients::none(self.model.n_params());
        let mut total = 0.0;
        let inv = 1.0 / self.batch.len() as f64;
        for (image, label) in self.batch {
            let sr = self
                .model
                .sample_loss_and_gradients(image, *label)
                .expect("batch validated at construction");
            total += sr.loss.total;
            grads.add_scaled(&sr.grads, inv);
        }
        (total * inv, grads)
    }
}

fn at(path: &str) -> impl Fn(AutodiffError) -> ModelError + '_ {
    move |source| ModelError::Layer {
        path: path.to_string(),
        source,
    }
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

fn push_conv(
    params: &mut Vec<Parameter>,
    rng: &mut ChaCha8Rng,
    name: &str,
    cin: usize,
    cout: usize,
) {
    let w = glorot(rng, &[3, 3, cin, cout], 9 * cin, 9 * cout);
    params.push(Parameter::new(format!("{name}/w"), w));
    params.push(Parameter::new(format!("{name}/b"), Tensor::zeros(&[cout])));
}

fn push_dense(
    params: &mut Vec<Parameter>,
    rng: &mut ChaCha8Rng,
    name: &str,
    nin: usize,
    nout: usize,
) {
    let w = glorot(rng, &[nin, nout], nin, nout);
    params.push(Parameter::new(format!("{name}/w"), w));
    params.push(Parameter::new(format!("{name}/b"), Tensor::zeros(&[nout])));
}

fn build_classifier_params(
    params: &mut Vec<Parameter>,
    rng: &mut ChaCha8Rng,
    cfg: &NetworkConfig,
    section: &str,
) {
    let mut cin = 3;
    for (k, &ch) in cfg.channels.iter().enumerate() {
        push_conv(params, rng, &format!("{section}/block{}/conv1", k + 1), cin, ch);
        push_conv(params, rng, &format!("{section}/block{}/conv2", k + 1), ch, ch);
        cin = ch;
    }
    push_dense(params, rng, &format!("{section}/fc1"), cfg.bottom_len(), cfg.fc_width);
    push_dense(params, rng, &format!("{section}/fc2"), cfg.fc_width, cfg.fc_width);
    push_dense(params, rng, &format!("{section}/head"), cfg.fc_width, cfg.num_classes);
}

fn build_decoder_params(params: &mut Vec<Parameter>, rng: &mut ChaCha8Rng, cfg: &NetworkConfig) {
    push_dense(params, rng, "decoder/rfc1", cfg.fc_width, cfg.fc_width);
    push_dense(params, rng, "decoder/rfc2", cfg.fc_width, cfg.bottom_len());
    let b = cfg.channels.len();
    let mut cin = cfg.channels[b - 1];
    for k in (0..b).rev() {
        let z1 = cfg.channels[k];
        let name = format!("decoder/deconv{}", k + 1);
        push_conv(params, rng, &format!("{name}/conv1"), cin, z1);
        push_conv(params, rng, &format!("{name}/conv2"), 2 * z1, z1);
        push_conv(params, rng, &format!("{name}/conv3"), z1, z1);
        cin = z1;
    }
    push_conv(params, rng, "decoder/refine1", cfg.channels[0], 2);
    push_conv(params, rng, "decoder/refine2", 2, 3);
}

/// Hands out parameter graph nodes in construction order.
struct Cursor<'a> {
    params: &'a [Parameter],
    next: usize,
}

impl<'a> Cursor<'a> {
    fn new(params: &'a [Parameter]) -> Cursor<'a> {
        Cursor { params, next: 0 }
    }

    /// Next weight/bias pair as graph nodes.
    fn pair(&mut self, g: &mut Graph) -> (NodeId, NodeId) {
        let w = g.param(self.next, &self.params[self.next].value);
        let b = g.param(self.next + 1, &self.params[self.next + 1].value);
        self.next += 2;
        (w, b)
    }
}

struct Tower {
    logits: NodeId,
    skips: Vec<NodeId>,
    fc1: NodeId,
    fc2: NodeId,
}

fn classifier_tower(
    g: &mut Graph,
    cur: &mut Cursor,
    input: NodeId,
    cfg: &NetworkConfig,
    section: &str,
) -> Result<Tower, ModelError> {
    let mut x = input;
    let mut skips = Vec::with_capacity(cfg.channels.len());
    for k in 0..cfg.channels.len() {
        let block = format!("{section}/block{}", k + 1);
        let (w1, b1) = cur.pair(g);
        x = g
            .conv2d(x, w1, b1, Padding::Same)
            .map_err(at(&format!("{block}/conv1")))?;
        x = g.relu(x);
        let (w2, b2) = cur.pair(g);
        x = g
            .conv2d(x, w2, b2, Padding::Same)
            .map_err(at(&format!("{block}/conv2")))?;
        x = g.relu(x);
        skips.push(x);
        x = g.maxpool2x2(x).map_err(at(&format!("{block}/pool")))?;
    }
    let flat = g.flatten(x);
    let (w, b) = cur.pair(g);
    let fc1 = g.dense(flat, w, b).map_err(at(&format!("{section}/fc1")))?;
    let fc1 = g.relu(fc1);
    let (w, b) = cur.pair(g);
    let fc2 = g.dense(fc1, w, b).map_err(at(&format!("{section}/fc2")))?;
    let fc2 = g.relu(fc2);
    let (w, b) = cur.pair(g);
    let logits = g.dense(fc2, w, b).map_err(at(&format!("{section}/head")))?;
    Ok(Tower {
        logits,
        skips,
        fc1,
        fc2,
    })
}

struct DecoderNodes {
    v: NodeId,
    blocks: Vec<NodeId>,
}

fn decoder_tower(
    g: &mut Graph,
    cur: &mut Cursor,
    fc2: NodeId,
    fc1: NodeId,
    skips: &[NodeId],
    cfg: &NetworkConfig,
) -> Result<DecoderNodes, ModelError> {
    let (w, b) = cur.pair(g);
    let r1 = g.dense(fc2, w, b).map_err(at("decoder/rfc1"))?;
    let r1 = g.relu(r1);
    let r1 = g.add(r1, fc1).map_err(at("decoder/rfc1/skip"))?;
    let (w, b) = cur.pair(g);
    let r2 = g.dense(r1, w, b).map_err(at("decoder/rfc2"))?;
    let s = cfg.bottom_size();
    let deep = cfg.channels[cfg.channels.len() - 1];
    let mut x = g
        .reshape(r2, &[s, s, deep])
        .map_err(at("decoder/rfc2/reshape"))?;

    let mut blocks = Vec::with_capacity(cfg.channels.len());
    for k in (0..cfg.channels.len()).rev() {
        let name = format!("decoder/deconv{}", k + 1);
        x = g.upsample2x(x).map_err(at(&format!("{name}/upsample")))?;
        let (w, b) = cur.pair(g);
        x = g
            .conv2d(x, w, b, Padding::Same)
            .map_err(at(&format!("{name}/conv1")))?;
        x = g.relu(x);
        x = g
            .concat_channels(x, skips[k])
            .map_err(at(&format!("{name}/concat")))?;
        let (w, b) = cur.pair(g);
        x = g
            .conv2d(x, w, b, Padding::Same)
            .map_err(at(&format!("{name}/conv2")))?;
        x = g.relu(x);
        let (w, b) = cur.pair(g);
        x = g
            .conv2d(x, w, b, Padding::Same)
            .map_err(at(&format!("{name}/conv3")))?;
        x = g.relu(x);
        blocks.push(x);
    }

    let (w, b) = cur.pair(g);
    x = g
        .conv2d(x, w, b, Padding::Same)
        .map_err(at("decoder/refine1"))?;
    x = g.relu(x);
    let (w, b) = cur.pair(g);
    x = g
        .conv2d(x, w, b, Padding::Same)
        .map_err(at("decoder/refine2"))?;
    let v = g.sigmoid(x);
    Ok(DecoderNodes { v, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(size: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..size * size * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(vec![size, size, 3], data).unwrap()
    }

    #[test]
    fn default_forward_shape_contract() {
        let model = TeacherStudentModel::new(NetworkConfig::default(), 7).unwrap();
        let out = model.forward(&test_image(32, 1)).unwrap();
        assert_eq!(out.v.shape(), &[32, 32, 3]);
        assert_eq!(out.yt.shape(), &[4]);
        assert_eq!(out.ys.shape(), &[4]);
        assert!((out.yt.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((out.ys.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(out.v.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let skip_shapes: Vec<_> = out.teacher_skips.iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(
            skip_shapes,
            vec![vec![32, 32, 16], vec![16, 16, 32], vec![8, 8, 64]]
        );
        assert_eq!(out.teacher_fc1.shape(), &[64]);
    }

    #[test]
    fn first_deconv_block_restores_skip_resolution() {
        // Deepest volume (4,4,64) with skip (8,8,64) must come out (8,8,64).
        let model = TeacherStudentModel::new(NetworkConfig::default(), 7).unwrap();
        let fg = model.full_graph(&test_image(32, 2)).unwrap();
        assert_eq!(fg.graph.value(fg.decoder_blocks[0]).shape(), &[8, 8, 64]);
        assert_eq!(fg.graph.value(fg.teacher_skips[2]).shape(), &[8, 8, 64]);
    }

    #[test]
    fn decoder_matches_input_size_across_configs() {
        let configs = [
            NetworkConfig {
                image_size: 16,
                channels: vec![8, 16],
                fc_width: 32,
                num_classes: 3,
                alpha: 0.4,
            },
            NetworkConfig {
                image_size: 8,
                channels: vec![4],
                fc_width: 16,
                num_classes: 2,
                alpha: 0.7,
            },
        ];
        for cfg in configs {
            let size = cfg.image_size;
            let model = TeacherStudentModel::new(cfg, 3).unwrap();
            let out = model.forward(&test_image(size, 4)).unwrap();
            assert_eq!(out.v.shape(), &[size, size, 3]);
        }
    }

    #[test]
    fn zeroed_model_outputs_uniform_probabilities() {
        let mut model = TeacherStudentModel::new(NetworkConfig::default(), 7).unwrap();
        for p in model.params_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        let out = model.forward(&Tensor::zeros(&[32, 32, 3])).unwrap();
        assert_eq!(out.yt.data(), &[0.25; 4]);
        assert_eq!(out.ys.data(), &[0.25; 4]);
    }

    #[test]
    fn multitask_blend_spot_values() {
        // lossT=1 and lossS=2 at alpha 0.4 blend to 1.6.
        let c = 4;
        let mut yt = vec![0.0; c];
        yt[1] = (-1.0f64).exp();
        let mut ys = vec![0.0; c];
        ys[1] = (-2.0f64).exp();
        let yt = Tensor::from_vec(vec![c], yt).unwrap();
        let ys = Tensor::from_vec(vec![c], ys).unwrap();
        let parts = multitask_loss(&yt, &ys, 1, 0.4).unwrap();
        assert!((parts.teacher - 1.0).abs() < 1e-12);
        assert!((parts.student - 2.0).abs() < 1e-12);
        assert!((parts.total - 1.6).abs() < 1e-12);

        let uniform = Tensor::filled(&[4], 0.25);
        let parts = multitask_loss(&uniform, &uniform, 0, 0.4).unwrap();
        assert!((parts.teacher - 4.0f64.ln()).abs() < 1e-12);

        let mut sure = vec![0.0; 4];
        sure[2] = 1.0;
        let sure = Tensor::from_vec(vec![4], sure).unwrap();
        let parts = multitask_loss(&sure, &uniform, 2, 0.4).unwrap();
        assert_eq!(parts.teacher, 0.0);
    }

    #[test]
    fn multitask_loss_floors_zero_probability() {
        let zero_at_label = Tensor::from_vec(vec![2], vec![0.0, 1.0]).unwrap();
        let parts = multitask_loss(&zero_at_label, &zero_at_label, 0, 0.5).unwrap();
        assert!(parts.total.is_finite());
    }

    fn small_config() -> NetworkConfig {
        NetworkConfig {
            image_size: 8,
            channels: vec![4, 6],
            fc_width: 10,
            num_classes: 3,
            alpha: 0.4,
        }
    }

    #[test]
    fn alpha_one_blocks_student_gradients() {
        let mut cfg = small_config();
        cfg.alpha = 1.0;
        let model = TeacherStudentModel::new(cfg, 5).unwrap();
        let sr = model
            .sample_loss_and_gradients(&test_image(8, 6), 1)
            .unwrap();
        for (i, p) in model.params().iter().enumerate() {
            let g = sr.grads.get(i).unwrap();
            if p.name.starts_with("student/") {
                assert!(
                    g.data().iter().all(|&v| v == 0.0),
                    "{} should be blocked",
                    p.name
                );
            }
        }
        // The teacher head still learns.
        let head = model.params().iter().position(|p| p.name == "teacher/head/w").unwrap();
        assert!(sr.grads.get(head).unwrap().data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn alpha_zero_blocks_only_teacher_head() {
        let mut cfg = small_config();
        cfg.alpha = 0.0;
        let model = TeacherStudentModel::new(cfg, 5).unwrap();
        let sr = model
            .sample_loss_and_gradients(&test_image(8, 6), 1)
            .unwrap();
        let grad_norm = |name: &str| {
            let i = model.params().iter().position(|p| p.name == name).unwrap();
            sr.grads
                .get(i)
                .unwrap()
                .data()
                .iter()
                .map(|v| v.abs())
                .sum::<f64>()
        };
        assert_eq!(grad_norm("teacher/head/w"), 0.0);
        assert_eq!(grad_norm("teacher/head/b"), 0.0);
        // Encoder features feed the decoder, so these still receive gradient.
        assert!(grad_norm("teacher/fc1/w") > 0.0);
        assert!(grad_norm("teacher/fc2/w") > 0.0);
        assert!(grad_norm("decoder/refine2/w") > 0.0);
        assert!(grad_norm("student/head/w") > 0.0);
    }

    #[test]
    fn gradient_is_linear_in_alpha() {
        let image = test_image(8, 9);
        let grads_at = |alpha: f64| {
            let mut cfg = small_config();
            cfg.alpha = alpha;
            let model = TeacherStudentModel::new(cfg, 5).unwrap();
            model.sample_loss_and_gradients(&image, 2).unwrap().grads
        };
        let g0 = grads_at(0.0);
        let g1 = grads_at(1.0);
        let gb = grads_at(0.4);
        for i in 0..gb.len() {
            let blended = gb.get(i).unwrap();
            let a = g1.get(i).unwrap();
            let b = g0.get(i).unwrap();
            for k in 0..blended.len() {
                let want = 0.4 * a.data()[k] + 0.6 * b.data()[k];
                assert!(
                    (blended.data()[k] - want).abs() <= 1e-12,
                    "param {i} component {k}"
                );
            }
        }
    }

    #[test]
    fn student_with_teacher_weights_is_the_same_function() {
        let mut model = TeacherStudentModel::new(small_config(), 11).unwrap();
        let teacher: Vec<Tensor> = model
            .teacher_params()
            .iter()
            .map(|p| p.value.clone())
            .collect();
        let offset = model.teacher_len + model.decoder_len;
        for (i, value) in teacher.into_iter().enumerate() {
            model.params_mut()[offset + i].value = value;
        }
        let out = model.forward(&test_image(8, 12)).unwrap();
        // The student saw V, so the teacher run on V must agree exactly.
        let tg = model.teacher_graph(&out.v).unwrap();
        let yt_on_v = tensor::softmax(tg.graph.value(tg.logits)).unwrap();
        assert_eq!(yt_on_v.data(), out.ys.data());
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let bad_size = NetworkConfig {
            image_size: 30,
            ..NetworkConfig::default()
        };
        assert!(bad_size.validate().is_err());
        let bad_alpha = NetworkConfig {
            alpha: 1.5,
            ..NetworkConfig::default()
        };
        assert!(bad_alpha.validate().is_err());
        let bad_classes = NetworkConfig {
            num_classes: 1,
            ..NetworkConfig::default()
        };
        assert!(bad_classes.validate().is_err());
    }

    #[test]
    fn forward_rejects_wrong_image_shape() {
        let model = TeacherStudentModel::new(NetworkConfig::default(), 7).unwrap();
        let err = model.forward(&test_image(16, 1)).unwrap_err();
        assert!(matches!(err, ModelError::BadImageShape { .. }));
    }

    #[test]
    fn seeding_is_reproducible_and_seed_sensitive() {
        let cfg = small_config();
        let a = TeacherStudentModel::new(cfg.clone(), 1).unwrap();
        let b = TeacherStudentModel::new(cfg.clone(), 1).unwrap();
        let c = TeacherStudentModel::new(cfg, 2).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(pa.value.data(), pb.value.data());
        }
        assert!(a
            .params()
            .iter()
            .zip(c.params().iter())
            .any(|(pa, pc)| pa.value.data() != pc.value.data()));
    }

    #[test]
    fn parameter_names_and_counts_line_up() {
        let model = TeacherStudentModel::new(NetworkConfig::default(), 7).unwrap();
        assert_eq!(model.n_params(), 62);
        assert_eq!(model.teacher_params().len(), 18);
        assert_eq!(model.decoder_params().len(), 26);
        assert_eq!(model.student_params().len(), 18);
        assert!(model.params().iter().all(|p| !p.name.is_empty()));
        // Biases start at zero, weights do not.
        for p in model.params() {
            if p.name.ends_with("/b") {
                assert!(p.value.data().iter().all(|&v| v == 0.0), "{}", p.name);
            } else {
                assert!(p.value.data().iter().any(|&v| v != 0.0), "{}", p.name);
            }
        }
    }
}
