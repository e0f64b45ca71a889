//! Small CNN inference engine for 7-class expression classification.
//!
//! Networks are plain layer lists (convolution, ReLU, max pooling, flatten,
//! dense, softmax) over `f32` tensors in channel-major (CHW) layout. Weights
//! load from the `FERW` binary format described on [`load_weights`].

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{GrayImage, Rect};

/// Expression classes in canonical index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Anger,
    Disgust,
    Fear,
    Happiness,
    Sadness,
    Surprise,
    Neutrality,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 7] = [
        EmotionLabel::Anger,
        EmotionLabel::Disgust,
        EmotionLabel::Fear,
        EmotionLabel::Happiness,
        EmotionLabel::Sadness,
        EmotionLabel::Surprise,
        EmotionLabel::Neutrality,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Anger => "anger",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Happiness => "happiness",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Neutrality => "neutrality",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-label probabilities, indexed by canonical label order. Serializes as
/// an object keyed by label name, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmotionScores(pub [f32; 7]);

impl Serialize for EmotionScores {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(7))?;
        for (label, p) in self.iter() {
            map.serialize_entry(label.name(), &p)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for EmotionScores {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let map = std::collections::BTreeMap::<EmotionLabel, f32>::deserialize(deserializer)?;
        let mut scores = [0.0; 7];
        for label in EmotionLabel::ALL {
            scores[label.index()] = *map
                .get(&label)
                .ok_or_else(|| serde::de::Error::custom(format_args!("missing score for {label}")))?;
        }
        if map.len() != 7 {
            return Err(serde::de::Error::custom("unexpected score labels"));
        }
        Ok(EmotionScores(scores))
    }
}

impl EmotionScores {
    pub fn get(&self, label: EmotionLabel) -> f32 {
        self.0[label.index()]
    }

    /// Highest-scoring label; ties go to the lowest canonical index.
    pub fn argmax(&self) -> EmotionLabel {
        let mut best = 0;
        for i in 1..7 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        EmotionLabel::ALL[best]
    }

    pub fn iter(&self) -> impl Iterator<Item = (EmotionLabel, f32)> + '_ {
        EmotionLabel::ALL.iter().map(|&l| (l, self.get(l)))
    }
}

/// Shape of an activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Chw { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(self) -> usize {
        match self {
            Shape::Chw { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Chw { c, h, w } => write!(f, "{c}x{h}x{w}"),
            Shape::Flat(n) => write!(f, "[{n}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Option<Self> {
        (shape.len() == data.len()).then_some(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Weights are `[out_channels][in_channels][kernel_h][kernel_w]`, row-major.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    },
    Relu,
    /// Floor-mode pooling without padding.
    MaxPool2d { size: usize, stride: usize },
    Flatten,
    /// Weights are `[outputs][inputs]`, row-major.
    Dense {
        inputs: usize,
        outputs: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    },
    Softmax,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
            Layer::Softmax => "softmax",
        }
    }

    fn tag(&self) -> u32 {
        match self {
            Layer::Conv2d { .. } => 1,
            Layer::Relu => 2,
            Layer::MaxPool2d { .. } => 3,
            Layer::Flatten => 4,
            Layer::Dense { .. } => 5,
            Layer::Softmax => 6,
        }
    }

    /// Output shape for `input`, or `None` if the layer cannot accept it.
    pub fn output_shape(&self, input: Shape) -> Option<Shape> {
        match (self, input) {
            (
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                    ..
                },
                Shape::Chw { c, h, w },
            ) => {
                if c != *in_channels || *stride == 0 || h + 2 * padding < *kernel_h || w + 2 * padding < *kernel_w {
                    return None;
                }
                Some(Shape::Chw {
                    c: *out_channels,
                    h: (h + 2 * padding - kernel_h) / stride + 1,
                    w: (w + 2 * padding - kernel_w) / stride + 1,
                })
            }
            (Layer::Relu, s) | (Layer::Softmax, s @ Shape::Flat(_)) => Some(s),
            (Layer::MaxPool2d { size, stride }, Shape::Chw { c, h, w }) => {
                if *size == 0 || *stride == 0 || h < *size || w < *size {
                    return None;
                }
                Some(Shape::Chw {
                    c,
                    h: (h - size) / stride + 1,
                    w: (w - size) / stride + 1,
                })
            }
            (Layer::Flatten, s) => Some(Shape::Flat(s.len())),
            (Layer::Dense { inputs, outputs, .. }, Shape::Flat(n)) if n == *inputs => Some(Shape::Flat(*outputs)),
            _ => None,
        }
    }

    fn tensors(&self) -> Vec<(&'static str, &[f32], usize)> {
        match self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                weights,
                bias,
                ..
            } => vec![
                ("weights", weights.as_slice(), out_channels * in_channels * kernel_h * kernel_w),
                ("bias", bias.as_slice(), *out_channels),
            ],
            Layer::Dense {
                inputs,
                outputs,
                weights,
                bias,
            } => vec![("weights", weights.as_slice(), inputs * outputs), ("bias", bias.as_slice(), *outputs)],
            _ => Vec::new(),
        }
    }

    /// Applies the layer. The input shape must already be known to be valid.
    fn apply(&self, input: &Tensor, out_shape: Shape) -> Tensor {
        match self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
                weights,
                bias,
            } => {
                let Shape::Chw { h, w, .. } = input.shape else { unreachable!() };
                let Shape::Chw { h: oh, w: ow, .. } = out_shape else { unreachable!() };
                let mut out = Vec::with_capacity(out_shape.len());
                for oc in 0..*out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = bias[oc] as f64;
                            for ic in 0..*in_channels {
                                let plane = &input.data[ic * h * w..(ic + 1) * h * w];
                                let kernel = &weights[((oc * in_channels + ic) * kernel_h) * kernel_w..][..kernel_h * kernel_w];
                                for ky in 0..*kernel_h {
                                    let iy = (oy * stride + ky) as isize - *padding as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let row = &plane[iy as usize * w..][..w];
                                    for kx in 0..*kernel_w {
                                        let ix = (ox * stride + kx) as isize - *padding as isize;
                                        if ix >= 0 && ix < w as isize {
                                            acc += kernel[ky * kernel_w + kx] as f64 * row[ix as usize] as f64;
                                        }
                                    }
                                }
                            }
                            out.push(acc as f32);
                        }
                    }
                }
                Tensor {
                    shape: out_shape,
                    data: out,
                }
            }
            Layer::Relu => Tensor {
                shape: out_shape,
                data: input.data.iter().map(|&v| v.max(0.0)).collect(),
            },
            Layer::MaxPool2d { size, stride } => {
                let Shape::Chw { h, w, .. } = input.shape else { unreachable!() };
                let Shape::Chw { c, h: oh, w: ow } = out_shape else { unreachable!() };
                let mut out = Vec::with_capacity(out_shape.len());
                for ch in 0..c {
                    let plane = &input.data[ch * h * w..(ch + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut m = f32::NEG_INFINITY;
                            for ky in 0..*size {
                                for kx in 0..*size {
                                    m = m.max(plane[(oy * stride + ky) * w + ox * stride + kx]);
                                }
                            }
                            out.push(m);
                        }
                    }
                }
                Tensor {
                    shape: out_shape,
                    data: out,
                }
            }
            Layer::Flatten => Tensor {
                shape: out_shape,
                data: input.data.clone(),
            },
            Layer::Dense {
                inputs,
                outputs,
                weights,
                bias,
            } => {
                let data = (0..*outputs)
                    .map(|o| {
                        let row = &weights[o * inputs..(o + 1) * inputs];
                        let dot: f64 = row.iter().zip(&input.data).map(|(&a, &b)| a as f64 * b as f64).sum();
                        (dot + bias[o] as f64) as f32
                    })
                    .collect();
                Tensor { shape: out_shape, data }
            }
            Layer::Softmax => Tensor {
                shape: out_shape,
                data: softmax(&input.data),
            },
        }
    }
}

/// Softmax with the maximum logit subtracted first.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&v| ((v - max) as f64).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| (e / total) as f32).collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmotionError {
    #[error("not a FERW weights file (bad magic)")]
    BadMagic,
    #[error("unsupported weights version {found}, expected {expected}")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("weights file truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("unknown layer tag {tag} at byte {offset}")]
    UnknownLayer { tag: u32, offset: usize },
    #[error("layer {layer} {tensor}: expected {expected} values, found {found}")]
    SizeMismatch {
        layer: usize,
        tensor: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer} ({kind}) cannot accept input of shape {input}")]
    ShapeMismatch { layer: usize, kind: &'static str, input: Shape },
    #[error("layer {layer} {tensor} contains a non-finite value")]
    NonFinite { layer: usize, tensor: &'static str },
    #[error("network must end in softmax over 7 units, ends in {0}")]
    BadOutput(String),
    #[error("label map must be a permutation of the 7 labels")]
    BadLabelMap,
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("input shape {found} does not match declared {expected}")]
    InputShape { expected: Shape, found: Shape },
    #[error("face box {0} is degenerate or outside the image")]
    BadBox(Rect),
}

/// A validated network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    input: Shape,
    layers: Vec<Layer>,
    /// `label_map[i]` is the label of output unit `i`.
    label_map: [EmotionLabel; 7],
}

impl NetworkModel {
    /// Checks that every tensor has its declared size and is finite, that
    /// consecutive shapes compose, and that the network ends in a 7-way softmax.
    pub fn new(
        input_channels: usize,
        input_height: usize,
        input_width: usize,
        layers: Vec<Layer>,
        label_map: [EmotionLabel; 7],
    ) -> Result<Self, EmotionError> {
        let input = Shape::Chw {
            c: input_channels,
            h: input_height,
            w: input_width,
        };
        let model = NetworkModel {
            input,
            layers,
            label_map,
        };
        match (model.layers.last(), model.output_shape_checked()?) {
            (Some(Layer::Softmax), Shape::Flat(7)) => {}
            (last, shape) => {
                return Err(EmotionError::BadOutput(format!(
                    "{} with shape {shape}",
                    last.map_or("nothing", Layer::kind)
                )))
            }
        }
        let mut seen = [false; 7];
        for l in label_map {
            seen[l.index()] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(EmotionError::BadLabelMap);
        }
        Ok(model)
    }

    fn output_shape_checked(&self) -> Result<Shape, EmotionError> {
        let mut shape = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, values, expected) in layer.tensors() {
                if values.len() != expected {
                    return Err(EmotionError::SizeMismatch {
                        layer: i,
                        tensor: name,
                        expected,
                        found: values.len(),
                    });
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(EmotionError::NonFinite { layer: i, tensor: name });
                }
            }
            shape = layer.output_shape(shape).ok_or(EmotionError::ShapeMismatch {
                layer: i,
                kind: layer.kind(),
                input: shape,
            })?;
        }
        Ok(shape)
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn label_map(&self) -> [EmotionLabel; 7] {
        self.label_map
    }

    /// Runs every layer in order and returns the final activation.
    pub fn forward_tensor(&self, input: &Tensor) -> Result<Tensor, EmotionError> {
        if input.shape != self.input {
            return Err(EmotionError::InputShape {
                expected: self.input,
                found: input.shape,
            });
        }
        let mut x = input.clone();
        for layer in &self.layers {
            // Shapes were validated at construction.
            let out_shape = layer.output_shape(x.shape).expect("validated shape");
            x = layer.apply(&x, out_shape);
        }
        Ok(x)
    }

    /// Probabilities per label, in canonical order.
    pub fn forward(&self, input: &Tensor) -> Result<EmotionScores, EmotionError> {
        let out = self.forward_tensor(input)?;
        let mut scores = [0.0; 7];
        for (unit, label) in self.label_map.iter().enumerate() {
            scores[label.index()] = out.data[unit];
        }
        Ok(EmotionScores(scores))
    }

    /// Crops `face`, resizes it to the input size and returns the argmax label.
    /// Grayscale is replicated across input channels.
    pub fn classify(&self, img: &GrayImage, face: Rect) -> Result<(EmotionLabel, EmotionScores), EmotionError> {
        let Shape::Chw { c, h, w } = self.input else { unreachable!() };
        let gray = preprocess_to(img, face, w, h)?;
        let mut data = Vec::with_capacity(c * h * w);
        for _ in 0..c {
            data.extend_from_slice(&gray.data);
        }
        let scores = self.forward(&Tensor {
            shape: self.input,
            data,
        })?;
        Ok((scores.argmax(), scores))
    }
}

/// Anything that maps a face region to expression scores.
pub trait EmotionClassifier: Send + Sync {
    fn classify(&self, img: &GrayImage, face: Rect) -> Result<(EmotionLabel, EmotionScores), EmotionError>;
}

impl EmotionClassifier for NetworkModel {
    fn classify(&self, img: &GrayImage, face: Rect) -> Result<(EmotionLabel, EmotionScores), EmotionError> {
        NetworkModel::classify(self, img, face)
    }
}

/// Crops `face` and bilinearly resizes it to `target x target`, scaling
/// intensities to `[0, 1]`. Returns a 1-channel tensor.
pub fn preprocess_face(img: &GrayImage, face: Rect, target: usize) -> Result<Tensor, EmotionError> {
    preprocess_to(img, face, target, target)
}

fn preprocess_to(img: &GrayImage, face: Rect, out_w: usize, out_h: usize) -> Result<Tensor, EmotionError> {
    if face.w == 0 || face.h == 0 || out_w == 0 || out_h == 0 {
        return Err(EmotionError::BadBox(face));
    }
    let crop = img.crop(face).map_err(|_| EmotionError::BadBox(face))?;
    let resized = resize_bilinear(&crop, out_w, out_h);
    Ok(Tensor {
        shape: Shape::Chw { c: 1, h: out_h, w: out_w },
        data: resized.into_iter().map(|v| v / 255.0).collect(),
    })
}

/// Half-pixel-centre bilinear resampling with edge clamping. Equal sizes
/// reproduce the input exactly.
pub fn resize_bilinear(src: &GrayImage, out_w: usize, out_h: usize) -> Vec<f32> {
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(out_w, src.width());
    let ys = axis(out_h, src.height());
    let mut out = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p = |x, y| src.get(x, y) as f64;
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}

pub const WEIGHTS_MAGIC: &[u8; 4] = b"FERW";
pub const WEIGHTS_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], EmotionError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(EmotionError::Truncated { offset: self.pos })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, EmotionError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, EmotionError> {
        self.u32().map(|v| v as usize)
    }

    fn tensor(&mut self, layer: usize, name: &'static str, expected: usize) -> Result<Vec<f32>, EmotionError> {
        let declared = self.usize()?;
        let available = (self.bytes.len() - self.pos) / 4;
        let mismatch = |found| EmotionError::SizeMismatch {
            layer,
            tensor: name,
            expected,
            found,
        };
        if declared != expected {
            return Err(mismatch(declared));
        }
        if available < declared {
            return Err(mismatch(available));
        }
        let values: Vec<f32> = self
            .take(declared * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmotionError::NonFinite { layer, tensor: name });
        }
        Ok(values)
    }
}

/// Parses a `FERW` weights file. All integers are little-endian `u32`,
/// all tensors little-endian `f32`.
///
/// | field | encoding |
/// |---|---|
/// | magic | `b"FERW"` |
/// | version | `u32`, currently 1 |
/// | input channels, height, width | 3 × `u32` |
/// | layer count | `u32` |
/// | layers | tag `u32` then the layer body |
/// | label map | `u32` count (7), then one `u8` canonical label index per output unit |
///
/// Layer bodies by tag:
///
/// | tag | layer | body |
/// |---|---|---|
/// | 1 | conv2d | in, out, kernel_h, kernel_w, stride, padding (6 × `u32`), weights tensor, bias tensor |
/// | 2 | relu | empty |
/// | 3 | maxpool2d | size, stride (2 × `u32`) |
/// | 4 | flatten | empty |
/// | 5 | dense | inputs, outputs (2 × `u32`), weights tensor, bias tensor |
/// | 6 | softmax | empty |
///
/// A tensor is a `u32` element count followed by that many `f32` values.
/// The file must end right after the label map.
pub fn load_weights(bytes: &[u8]) -> Result<NetworkModel, EmotionError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(WEIGHTS_MAGIC.as_slice()) {
        return Err(EmotionError::BadMagic);
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(EmotionError::UnsupportedVersion {
            found: version,
            expected: WEIGHTS_VERSION,
        });
    }
    let (c, h, w) = (r.usize()?, r.usize()?, r.usize()?);
    let n_layers = r.usize()?;
    let mut layers = Vec::new();
    for i in 0..n_layers {
        let offset = r.pos;
        let layer = match r.u32()? {
            1 => {
                let (in_channels, out_channels) = (r.usize()?, r.usize()?);
                let (kernel_h, kernel_w) = (r.usize()?, r.usize()?);
                let (stride, padding) = (r.usize()?, r.usize()?);
                let n_weights = out_channels
                    .checked_mul(in_channels)
                    .and_then(|v| v.checked_mul(kernel_h))
                    .and_then(|v| v.checked_mul(kernel_w))
                    .ok_or(EmotionError::Truncated { offset: r.pos })?;
                let weights = r.tensor(i, "weights", n_weights)?;
                let bias = r.tensor(i, "bias", out_channels)?;
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                    weights,
                    bias,
                }
            }
            2 => Layer::Relu,
            3 => Layer::MaxPool2d {
                size: r.usize()?,
                stride: r.usize()?,
            },
            4 => Layer::Flatten,
            5 => {
                let (inputs, outputs) = (r.usize()?, r.usize()?);
                let n_weights = inputs.checked_mul(outputs).ok_or(EmotionError::Truncated { offset: r.pos })?;
                let weights = r.tensor(i, "weights", n_weights)?;
                let bias = r.tensor(i, "bias", outputs)?;
                Layer::Dense {
                    inputs,
                    outputs,
                    weights,
                    bias,
                }
            }
            6 => Layer::Softmax,
            tag => return Err(EmotionError::UnknownLayer { tag, offset }),
        };
        layers.push(layer);
    }
    if r.usize()? != 7 {
        return Err(EmotionError::BadLabelMap);
    }
    let mut label_map = [EmotionLabel::Anger; 7];
    for slot in label_map.iter_mut() {
        *slot = EmotionLabel::from_index(r.take(1)?[0] as usize).ok_or(EmotionError::BadLabelMap)?;
    }
    if r.pos != bytes.len() {
        return Err(EmotionError::TrailingBytes(bytes.len() - r.pos));
    }
    NetworkModel::new(c, h, w, layers, label_map)
}

/// Serializes a model in the format read by [`load_weights`].
pub fn save_weights(model: &NetworkModel) -> Vec<u8> {
    let mut out = Vec::new();
    let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(WEIGHTS_MAGIC);
    put(&mut out, WEIGHTS_VERSION as usize);
    let Shape::Chw { c, h, w } = model.input else { unreachable!() };
    for v in [c, h, w, model.layers.len()] {
        put(&mut out, v);
    }
    for layer in &model.layers {
        put(&mut out, layer.tag() as usize);
        match layer {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
                ..
            } => {
                for v in [*in_channels, *out_channels, *kernel_h, *kernel_w, *stride, *padding] {
                    put(&mut out, v);
                }
            }
            Layer::MaxPool2d { size, stride } => {
                put(&mut out, *size);
                put(&mut out, *stride);
            }
            Layer::Dense { inputs, outputs, .. } => {
                put(&mut out, *inputs);
                put(&mut out, *outputs);
            }
            Layer::Relu | Layer::Flatten | Layer::Softmax => {}
        }
        for (_, values, _) in layer.tensors() {
            put(&mut out, values.len());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    put(&mut out, 7);
    out.extend(model.label_map.iter().map(|l| l.index() as u8));
    out
}

/// Seed of the bundled reference weights.
pub const REFERENCE_SEED: u64 = 48;

/// Side of the reference network's square input.
pub const REFERENCE_INPUT: usize = 48;

fn uniform_tensor(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<f32> {
    let bound = (6.0 / fan_in as f32).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// The bundled reference network with weights drawn from `seed`:
/// conv 1→4 (3×3, pad 1), ReLU, 2×2 pool, conv 4→8 (3×3, pad 1), ReLU,
/// 2×2 pool, flatten, dense 1152→7, softmax.
///
/// The weights are random; its outputs are meaningful only as goldens.
pub fn reference_model(seed: u64) -> NetworkModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv = |rng: &mut ChaCha8Rng, inc: usize, outc: usize| Layer::Conv2d {
        in_channels: inc,
        out_channels: outc,
        kernel_h: 3,
        kernel_w: 3,
        stride: 1,
        padding: 1,
        weights: uniform_tensor(rng, outc * inc * 9, inc * 9),
        bias: uniform_tensor(rng, outc, inc * 9),
    };
    let pool = Layer::MaxPool2d { size: 2, stride: 2 };
    let flat = 8 * (REFERENCE_INPUT / 4) * (REFERENCE_INPUT / 4);
    let layers = vec![
        conv(&mut rng, 1, 4),
        Layer::Relu,
        pool.clone(),
        conv(&mut rng, 4, 8),
        Layer::Relu,
        pool,
        Layer::Flatten,
        Layer::Dense {
            inputs: flat,
            outputs: 7,
            weights: uniform_tensor(&mut rng, flat * 7, flat),
            bias: uniform_tensor(&mut rng, 7, flat),
        },
        Layer::Softmax,
    ];
    NetworkModel::new(1, REFERENCE_INPUT, REFERENCE_INPUT, layers, EmotionLabel::ALL).expect("reference network is well formed")
}
