use emoface::emotion::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Plain nested loops over an explicitly zero-padded copy of the input.
pub fn conv_oracle(x: &[f64], (c, h, w): (usize, usize, usize), layer: &Layer) -> (Vec<f64>, (usize, usize, usize)) {
    let Layer::Conv2d {
        out_channels,
        kernel_h,
        kernel_w,
        stride,
        padding,
        weights,
        bias,
        ..
    } = layer
    else {
        panic!("not a conv")
    };
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    let mut padded = vec![0.0; c * ph * pw];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                padded[(ch * ph + y + padding) * pw + xx + padding] = x[(ch * h + y) * w + xx];
            }
        }
    }
    let oh = (ph - kernel_h) / stride + 1;
    let ow = (pw - kernel_w) / stride + 1;
    let mut out = vec![0.0; out_channels * oh * ow];
    for o in 0..*out_channels {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = bias[o] as f64;
                for ch in 0..c {
                    for ky in 0..*kernel_h {
                        for kx in 0..*kernel_w {
                            let wgt = weights[((o * c + ch) * kernel_h + ky) * kernel_w + kx] as f64;
                            acc += wgt * padded[(ch * ph + y * stride + ky) * pw + xx * stride + kx];
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = acc;
            }
        }
    }
    (out, (*out_channels, oh, ow))
}

pub fn pool_oracle(x: &[f64], (c, h, w): (usize, usize, usize), size: usize, stride: usize) -> (Vec<f64>, (usize, usize, usize)) {
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let mut out = Vec::new();
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..size {
                    for dx in 0..size {
                        m = m.max(x[(ch * h + y * stride + dy) * w + xx * stride + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    (out, (c, oh, ow))
}

pub fn dense_oracle(x: &[f64], layer: &Layer) -> Vec<f64> {
    let Layer::Dense {
        inputs,
        outputs,
        weights,
        bias,
    } = layer
    else {
        panic!("not dense")
    };
    (0..*outputs)
        .map(|o| bias[o] as f64 + (0..*inputs).map(|i| weights[o * inputs + i] as f64 * x[i]).sum::<f64>())
        .collect()
}

pub fn softmax_oracle(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn forward_oracle(model: &NetworkModel, input: &[f32]) -> Vec<f64> {
    let Shape::Chw { c, h, w } = model.input_shape() else { unreachable!() };
    let mut x: Vec<f64> = input.iter().map(|&v| v as f64).collect();
    let mut dims = (c, h, w);
    for layer in model.layers() {
        match layer {
            Layer::Conv2d { .. } => (x, dims) = conv_oracle(&x, dims, layer),
            Layer::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            Layer::MaxPool2d { size, stride } => (x, dims) = pool_oracle(&x, dims, *size, *stride),
            Layer::Flatten => {}
            Layer::Dense { .. } => x = dense_oracle(&x, layer),
            Layer::Softmax => x = softmax_oracle(&x),
        }
    }
    x
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// conv -> relu -> (optional pool) -> flatten -> dense(7) -> softmax with
/// random geometry.
pub fn random_network(rng: &mut ChaCha8Rng) -> NetworkModel {
    let c = rng.random_range(1..4);
    let (h, w) = (rng.random_range(6..14), rng.random_range(6..14));
    let oc = rng.random_range(1..6);
    let (kh, kw) = (rng.random_range(1..4), rng.random_range(1..4));
    let stride = rng.random_range(1..3);
    let padding = rng.random_range(0..2);
    let conv = Layer::Conv2d {
        in_channels: c,
        out_channels: oc,
        kernel_h: kh,
        kernel_w: kw,
        stride,
        padding,
        weights: random_vec(rng, oc * c * kh * kw),
        bias: random_vec(rng, oc),
    };
    let mut shape = conv.output_shape(Shape::Chw { c, h, w }).unwrap();
    let mut layers = vec![conv, Layer::Relu];
    if rng.random() {
        let pool = Layer::MaxPool2d { size: 2, stride: 2 };
        shape = pool.output_shape(shape).unwrap();
        layers.push(pool);
    }
    let n = shape.len();
    layers.push(Layer::Flatten);
    layers.push(Layer::Dense {
        inputs: n,
        outputs: 7,
        weights: random_vec(rng, 7 * n),
        bias: random_vec(rng, 7),
    });
    layers.push(Layer::Softmax);
    NetworkModel::new(c, h, w, layers, EmotionLabel::ALL).unwrap()
}
