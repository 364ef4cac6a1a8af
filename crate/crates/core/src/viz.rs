//! Explanation heatmaps. The reconstruction method reads the decoder output
//! V directly: per-pixel channel magnitude, then min-max rescaling. Gradient
//! saliency and grad-cam are the usual input-gradient baselines, built on the
//! same graphs so every method is exactly differentiable-model-consistent.
//!
//! All heatmaps leave here min-max normalized to [0, 1] (an all-constant map
//! normalizes to zeros), so downstream thresholding and perturbation can
//! treat the three methods interchangeably.

use crate::autodiff::{AutodiffError, Graph, NodeId};
use crate::mask::Mask;
use crate::model::{ModelError, TeacherStudentModel};
use crate::pnm::{self, PnmError};
use crate::tensor::{ShapeError, Tensor};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VizError {
    #[error("invalid parameter: {0}")]
    BadParam(String),
    #[error("model exposes no convolutional feature map, grad-cam needs one")]
    NoConvFeatures,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Pnm(#[from] PnmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Proposed,
    Gradient,
    GradCam,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Proposed, Method::Gradient, Method::GradCam];

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Gradient => "gradient",
            Method::GradCam => "gradcam",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Method, String> {
        match s {
            "proposed" => Ok(Method::Proposed),
            "gradient" => Ok(Method::Gradient),
            "gradcam" => Ok(Method::GradCam),
            other => Err(format!(
                "unknown method {other:?} (expected proposed, gradient, or gradcam)"
            )),
        }
    }
}

/// Handles into a forward graph of any classifier that saliency methods can
/// differentiate: image in, one logit vector out.
pub struct ClassifierGraph {
    pub graph: Graph,
    pub image: NodeId,
    pub logits: NodeId,
    /// Deepest pre-downsampling convolutional activation, for grad-cam.
    pub last_conv: Option<NodeId>,
}

pub trait ConvClassifier {
    fn classifier_graph(&self, image: &Tensor) -> Result<ClassifierGraph, ModelError>;
}

impl ConvClassifier for TeacherStudentModel {
    fn classifier_graph(&self, image: &Tensor) -> Result<ClassifierGraph, ModelError> {
        let tg = self.teacher_graph(image)?;
        Ok(ClassifierGraph {
            graph: tg.graph,
            image: tg.image,
            logits: tg.logits,
            last_conv: tg.skips.last().copied(),
        })
    }
}

/// Per-pixel channel magnitude of a reconstruction: out[i][j] is the
/// euclidean norm of the channel vector at (i, j).
pub fn channel_magnitude(v: &Tensor) -> Result<Tensor, VizError> {
    if v.rank() != 3 {
        return Err(ShapeError::RankMismatch {
            op: "channel_magnitude",
            expected: 3,
            got: v.rank(),
        }
        .into());
    }
    let (h, w, c) = (v.shape()[0], v.shape()[1], v.shape()[2]);
    let mut out = Tensor::zeros(&[h, w]);
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for k in 0..c {
                let x = v.at3(i, j, k);
                acc += x * x;
            }
            out.data_mut()[i * w + j] = acc.sqrt();
        }
    }
    Ok(out)
}

/// Min-max rescale to [0, 1]. A constant map has nothing to contrast, so it
/// collapses to zeros; the map is idempotent and order preserving.
pub fn normalize(h: &Tensor) -> Tensor {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in h.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        return Tensor::zeros(h.shape());
    }
    let span = hi - lo;
    h.map(|v| (v - lo) / span)
}

/// Pixels strictly above `t`. The threshold lives on the normalized scale.
pub fn threshold_mask(h: &Tensor, t: f64) -> Result<Mask, VizError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(VizError::BadParam(format!(
            "threshold {t} outside [0, 1]"
        )));
    }
    if h.rank() != 2 {
        return Err(ShapeError::RankMismatch {
            op: "threshold_mask",
            expected: 2,
            got: h.rank(),
        }
        .into());
    }
    let (rows, cols) = (h.shape()[0], h.shape()[1]);
    let mut m = Mask::new(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m.set(i, j, h.data()[i * cols + j] > t);
        }
    }
    Ok(m)
}

/// The trainable-visualization explanation: magnitude of the decoder
/// reconstruction, normalized.
pub fn reconstruction_heatmap(
    model: &TeacherStudentModel,
    image: &Tensor,
) -> Result<Tensor, VizError> {
    let out = model.forward(image)?;
    Ok(normalize(&channel_magnitude(&out.v)?))
}

fn class_or_argmax(graph: &ClassifierGraph, class: Option<usize>) -> usize {
    class.unwrap_or_else(|| graph.graph.value(graph.logits).argmax())
}

/// Input-gradient saliency: per-pixel euclidean norm over channels of the
/// selected logit's gradient with respect to the image, normalized.
pub fn gradient_saliency<M: ConvClassifier>(
    model: &M,
    image: &Tensor,
    class: Option<usize>,
) -> Result<Tensor, VizError> {
    let mut cg = model.classifier_graph(image)?;
    let class = class_or_argmax(&cg, class);
    let root = cg.graph.select(cg.logits, class)?;
    let back = cg.graph.backward(root)?;
    let grad = back
        .adjoint(cg.image)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(image.shape()));
    Ok(normalize(&channel_magnitude(&grad)?))
}

/// Grad-cam on the deepest pre-downsampling feature map: channel weights are
/// the spatial means of the logit gradient, the weighted sum is rectified,
/// bilinearly upsampled to image resolution, and normalized.
pub fn gradcam<M: ConvClassifier>(
    model: &M,
    image: &Tensor,
    class: Option<usize>,
) -> Result<Tensor, VizError> {
    let mut cg = model.classifier_graph(image)?;
    let conv = cg.last_conv.ok_or(VizError::NoConvFeatures)?;
    let class = class_or_argmax(&cg, class);
    let root = cg.graph.select(cg.logits, class)?;
    let activations = cg.graph.value(conv).clone();
    let back = cg.graph.backward(root)?;
    let grad = back
        .adjoint(conv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(activations.shape()));

    let (h, w, k) = (
        activations.shape()[0],
        activations.shape()[1],
        activations.shape()[2],
    );
    let mut weights = vec![0.0; k];
    for i in 0..h {
        for j in 0..w {
            for f in 0..k {
                weights[f] += grad.at3(i, j, f);
            }
        }
    }
    let cells = (h * w) as f64;
    for wk in weights.iter_mut() {
        *wk /= cells;
    }

    let mut cam = Tensor::zeros(&[h, w]);
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for f in 0..k {
                acc += weights[f] * activations.at3(i, j, f);
            }
            cam.data_mut()[i * w + j] = acc.max(0.0);
        }
    }
    let (out_h, out_w) = (image.shape()[0], image.shape()[1]);
    Ok(normalize(&bilinear_upsample(&cam, out_h, out_w)?))
}

/// Align-corners bilinear resampling of a rank-2 map.
pub fn bilinear_upsample(src: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor, VizError> {
    if src.rank() != 2 {
        return Err(ShapeError::RankMismatch {
            op: "bilinear_upsample",
            expected: 2,
            got: src.rank(),
        }
        .into());
    }
    if out_h == 0 || out_w == 0 {
        return Err(VizError::BadParam("empty upsample target".into()));
    }
    let (h, w) = (src.shape()[0], src.shape()[1]);
    let scale_i = if out_h > 1 {
        (h - 1) as f64 / (out_h - 1) as f64
    } else {
        0.0
    };
    let scale_j = if out_w > 1 {
        (w - 1) as f64 / (out_w - 1) as f64
    } else {
        0.0
    };
    let at = |i: usize, j: usize| src.data()[i * w + j];
    let mut out = Tensor::zeros(&[out_h, out_w]);
    for oi in 0..out_h {
        let fi = oi as f64 * scale_i;
        let i0 = (fi.floor() as usize).min(h - 1);
        let i1 = (i0 + 1).min(h - 1);
        let di = fi - i0 as f64;
        for oj in 0..out_w {
            let fj = oj as f64 * scale_j;
            let j0 = (fj.floor() as usize).min(w - 1);
            let j1 = (j0 + 1).min(w - 1);
            let dj = fj - j0 as f64;
            let top = (1.0 - dj) * at(i0, j0) + dj * at(i0, j1);
            let bot = (1.0 - dj) * at(i1, j0) + dj * at(i1, j1);
            out.data_mut()[oi * out_w + oj] = (1.0 - di) * top + di * bot;
        }
    }
    Ok(out)
}

/// One entry point for all three methods. `class` picks the logit the
/// gradient methods differentiate; `None` means the predicted class. The
/// reconstruction method has no class dependence.
pub fn explain(
    model: &TeacherStudentModel,
    image: &Tensor,
    method: Method,
    class: Option<usize>,
) -> Result<Tensor, VizError> {
    match method {
        Method::Proposed => reconstruction_heatmap(model, image),
        Method::Gradient => gradient_saliency(model, image, class),
        Method::GradCam => gradcam(model, image, class),
    }
}

pub fn heatmap_csv(h: &Tensor) -> Result<String, VizError> {
    if h.rank() != 2 {
        return Err(ShapeError::RankMismatch {
            op: "heatmap_csv",
            expected: 2,
            got: h.rank(),
        }
        .into());
    }
    let (rows, cols) = (h.shape()[0], h.shape()[1]);
    let mut out = String::new();
    for i in 0..rows {
        for j in 0..cols {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&h.data()[i * cols + j].to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_heatmap_csv(h: &Tensor, path: &Path) -> Result<(), VizError> {
    let body = heatmap_csv(h)?;
    std::fs::write(path, body).map_err(PnmError::from)?;
    Ok(())
}

pub fn write_heatmap_pgm(h: &Tensor, path: &Path) -> Result<(), VizError> {
    pnm::write_pgm(h, path)?;
    Ok(())
}
