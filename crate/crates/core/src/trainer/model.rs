//! Classifiers with hand-written forward and backward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// A differentiable classifier over CHW `f32` inputs with flat parameters.
pub trait Classifier: Send + Sync {
    fn num_classes(&self) -> usize;
    fn params(&self) -> &[f32];
    fn params_mut(&mut self) -> &mut [f32];
    fn forward(&self, input: &[f32]) -> Vec<f32>;
    /// Adds the cross-entropy gradient for one example to `grad` and returns its loss.
    fn accumulate_grad(&self, input: &[f32], label: usize, grad: &mut [f32]) -> f32;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Multinomial logistic regression on raw pixels.
    Linear,
    /// Blocks of 3x3 conv, ReLU and 2x2 max-pool, then global average pooling
    /// and a linear head. `widths` gives the channels of each block.
    ConvNet { widths: Vec<usize> },
}

impl Default for ClassifierKind {
    fn default() -> Self {
        ClassifierKind::ConvNet {
            widths: vec![32, 64, 128],
        }
    }
}

impl ClassifierKind {
    pub fn build(&self, num_classes: usize, width: usize, height: usize, seed: u64) -> Box<dyn Classifier> {
        match self {
            ClassifierKind::Linear => Box::new(Linear::new(num_classes, 3 * width * height, seed)),
            ClassifierKind::ConvNet { widths } => Box::new(ConvNet::new(num_classes, width, height, widths, seed)),
        }
    }

    /// Rebuilds a classifier around saved parameters.
    pub fn restore(&self, num_classes: usize, width: usize, height: usize, params: &[f32]) -> Option<Box<dyn Classifier>> {
        let mut model = self.build(num_classes, width, height, 0);
        if model.params().len() != params.len() {
            return None;
        }
        model.params_mut().copy_from_slice(params);
        Some(model)
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            ClassifierKind::Linear => Ok(()),
            ClassifierKind::ConvNet { widths } if widths.is_empty() || widths.contains(&0) => {
                Err("convnet widths must be non-empty and positive".into())
            }
            ClassifierKind::ConvNet { .. } => Ok(()),
        }
    }
}

/// Softmax cross-entropy; overwrites `logits` with `softmax - onehot`.
fn softmax_xent_grad(logits: &mut [f32], label: usize) -> f32 {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0f32;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    let loss = -(logits[label] / sum).ln();
    for z in logits.iter_mut() {
        *z /= sum;
    }
    logits[label] -= 1.0;
    loss
}

fn init_normal(rng: &mut ChaCha8Rng, out: &mut [f32], std: f32) {
    let dist = Normal::new(0.0f32, std).expect("finite std");
    out.iter_mut().for_each(|w| *w = dist.sample(rng));
}

pub struct Linear {
    classes: usize,
    inputs: usize,
    params: Vec<f32>,
}

impl Linear {
    pub fn new(classes: usize, inputs: usize, seed: u64) -> Self {
        let mut params = vec![0f32; classes * inputs + classes];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_normal(&mut rng, &mut params[..classes * inputs], (1.0 / inputs as f32).sqrt());
        Self { classes, inputs, params }
    }
}

impl Classifier for Linear {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn params(&self) -> &[f32] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    fn forward(&self, input: &[f32]) -> Vec<f32> {
        let (w, b) = self.params.split_at(self.classes * self.inputs);
        (0..self.classes)
            .map(|k| b[k] + w[k * self.inputs..(k + 1) * self.inputs].iter().zip(input).map(|(a, x)| a * x).sum::<f32>())
            .collect()
    }

    fn accumulate_grad(&self, input: &[f32], label: usize, grad: &mut [f32]) -> f32 {
        let mut d = self.forward(input);
        let loss = softmax_xent_grad(&mut d, label);
        let (gw, gb) = grad.split_at_mut(self.classes * self.inputs);
        for k in 0..self.classes {
            for (g, x) in gw[k * self.inputs..(k + 1) * self.inputs].iter_mut().zip(input) {
                *g += d[k] * x;
            }
            gb[k] += d[k];
        }
        loss
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    w_off: usize,
    b_off: usize,
}

impl Block {
    fn pooled(&self) -> (usize, usize) {
        ((self.h / 2).max(1), (self.w / 2).max(1))
    }
}

pub struct ConvNet {
    classes: usize,
    blocks: Vec<Block>,
    head_w: usize,
    head_b: usize,
    features: usize,
    params: Vec<f32>,
}

/// Intermediate values of one block, kept for the backward pass.
struct BlockTrace {
    pre: Vec<f32>,
    argmax: Vec<usize>,
    out: Vec<f32>,
}

impl ConvNet {
    pub fn new(classes: usize, width: usize, height: usize, widths: &[usize], seed: u64) -> Self {
        let mut blocks = Vec::new();
        let (mut c, mut h, mut w, mut off) = (3, height, width, 0);
        for &c_out in widths {
            let b = Block {
                c_in: c,
                c_out,
                h,
                w,
                w_off: off,
                b_off: off + c_out * c * 9,
            };
            off = b.b_off + c_out;
            (h, w) = b.pooled();
            c = c_out;
            blocks.push(b);
        }
        let head_w = off;
        let head_b = head_w + classes * c;
        let mut params = vec![0f32; head_b + classes];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in &blocks {
            let fan_in = (b.c_in * 9) as f32;
            init_normal(&mut rng, &mut params[b.w_off..b.b_off], (2.0 / fan_in).sqrt());
        }
        init_normal(&mut rng, &mut params[head_w..head_b], (1.0 / c as f32).sqrt());
        Self {
            classes,
            blocks,
            head_w,
            head_b,
            features: c,
            params,
        }
    }

    fn conv_forward(&self, b: &Block, input: &[f32]) -> Vec<f32> {
        let (h, w) = (b.h, b.w);
        let plane = h * w;
        let weights = &self.params[b.w_off..b.b_off];
        let bias = &self.params[b.b_off..b.b_off + b.c_out];
        let mut out = vec![0f32; b.c_out * plane];
        for o in 0..b.c_out {
            let dst = &mut out[o * plane..(o + 1) * plane];
            dst.iter_mut().for_each(|v| *v = bias[o]);
            for i in 0..b.c_in {
                let src = &input[i * plane..(i + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = weights[((o * b.c_in + i) * 3 + ky) * 3 + kx];
                        let (y0, y1) = span(ky, h);
                        let (x0, x1) = span(kx, w);
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let d = &mut dst[y * w + x0..y * w + x1];
                            let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                            for (dv, sv) in d.iter_mut().zip(s) {
                                *dv += k * sv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn block_forward(&self, b: &Block, input: &[f32]) -> BlockTrace {
        let pre = self.conv_forward(b, input);
        let (ph, pw) = b.pooled();
        let mut out = vec![0f32; b.c_out * ph * pw];
        let mut argmax = vec![0usize; out.len()];
        for c in 0..b.c_out {
            for py in 0..ph {
                for px in 0..pw {
                    let mut best = (f32::NEG_INFINITY, 0);
                    for dy in 0..2.min(b.h) {
                        for dx in 0..2.min(b.w) {
                            let idx = c * b.h * b.w + (2 * py + dy) * b.w + 2 * px + dx;
                            let v = pre[idx].max(0.0);
                            if v > best.0 {
                                best = (v, idx);
                            }
                        }
                    }
                    let o = (c * ph + py) * pw + px;
                    out[o] = best.0;
                    argmax[o] = best.1;
                }
            }
        }
        BlockTrace { pre, argmax, out }
    }

    fn trace(&self, input: &[f32]) -> (Vec<BlockTrace>, Vec<f32>, Vec<f32>) {
        let mut traces: Vec<BlockTrace> = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let x = traces.last().map_or(input, |t| t.out.as_slice());
            let t = self.block_forward(b, x);
            traces.push(t);
        }
        let last = traces.last().expect("at least one block");
        let area = last.out.len() / self.features;
        let feat: Vec<f32> = last.out.chunks(area).map(|c| c.iter().sum::<f32>() / area as f32).collect();
        let hw = &self.params[self.head_w..self.head_b];
        let hb = &self.params[self.head_b..];
        let logits = (0..self.classes)
            .map(|k| hb[k] + hw[k * self.features..(k + 1) * self.features].iter().zip(&feat).map(|(a, x)| a * x).sum::<f32>())
            .collect();
        (traces, feat, logits)
    }
}

/// Output rows/cols for which kernel offset `k` stays inside the input.
fn span(k: usize, n: usize) -> (usize, usize) {
    match k {
        0 => (1.min(n), n),
        1 => (0, n),
        _ => (0, n.saturating_sub(1)),
    }
}

impl Classifier for ConvNet {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn params(&self) -> &[f32] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    fn forward(&self, input: &[f32]) -> Vec<f32> {
        self.trace(input).2
    }

    fn accumulate_grad(&self, input: &[f32], label: usize, grad: &mut [f32]) -> f32 {
        let (traces, feat, mut d) = self.trace(input);
        let loss = softmax_xent_grad(&mut d, label);
        let f = self.features;
        let mut dfeat = vec![0f32; f];
        {
            let hw = &self.params[self.head_w..self.head_b];
            for k in 0..self.classes {
                for j in 0..f {
                    grad[self.head_w + k * f + j] += d[k] * feat[j];
                    dfeat[j] += d[k] * hw[k * f + j];
                }
                grad[self.head_b + k] += d[k];
            }
        }
        let last = traces.last().expect("at least one block");
        let area = last.out.len() / f;
        let mut dout: Vec<f32> = (0..last.out.len()).map(|i| dfeat[i / area] / area as f32).collect();
        for (bi, b) in self.blocks.iter().enumerate().rev() {
            let t = &traces[bi];
            let plane = b.h * b.w;
            let mut dpre = vec![0f32; b.c_out * plane];
            for (o, &src) in t.argmax.iter().enumerate() {
                if t.pre[src] > 0.0 {
                    dpre[src] += dout[o];
                }
            }
            let input = if bi == 0 { input } else { traces[bi - 1].out.as_slice() };
            let need_din = bi > 0;
            let mut din = if need_din { vec![0f32; b.c_in * plane] } else { Vec::new() };
            let weights = &self.params[b.w_off..b.b_off];
            for o in 0..b.c_out {
                let dz = &dpre[o * plane..(o + 1) * plane];
                grad[b.b_off + o] += dz.iter().sum::<f32>();
                for i in 0..b.c_in {
                    let src = &input[i * plane..(i + 1) * plane];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let widx = ((o * b.c_in + i) * 3 + ky) * 3 + kx;
                            let k = weights[widx];
                            let (y0, y1) = span(ky, b.h);
                            let (x0, x1) = span(kx, b.w);
                            let mut acc = 0f32;
                            for y in y0..y1 {
                                let sy = y + ky - 1;
                                let dzr = &dz[y * b.w + x0..y * b.w + x1];
                                let s = sy * b.w + x0 + kx - 1;
                                let sr = &src[s..s + (x1 - x0)];
                                for (a, x) in dzr.iter().zip(sr) {
                                    acc += a * x;
                                }
                                if need_din {
                                    let dr = &mut din[i * plane + s..i * plane + s + (x1 - x0)];
                                    for (dv, a) in dr.iter_mut().zip(dzr) {
                                        *dv += a * k;
                                    }
                                }
                            }
                            grad[b.w_off + widx] += acc;
                        }
                    }
                }
            }
            dout = din;
        }
        loss
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_difference_check(model: &mut dyn Classifier, input: &[f32], label: usize) {
        let mut grad = vec![0f32; model.params().len()];
        model.accumulate_grad(input, label, &mut grad);
        let loss = |m: &dyn Classifier| {
            let mut l = m.forward(input);
            softmax_xent_grad(&mut l, label) as f64
        };
        let n = model.params().len();
        let step = (n / 40).max(1);
        for p in (0..n).step_by(step) {
            let orig = model.params()[p];
            let eps = 1e-2f32;
            model.params_mut()[p] = orig + eps;
            let up = loss(model);
            model.params_mut()[p] = orig - eps;
            let down = loss(model);
            model.params_mut()[p] = orig;
            let numeric = (up - down) / (2.0 * eps as f64);
            let analytic = grad[p] as f64;
            assert!(
                (numeric - analytic).abs() <= 2e-2 * (1.0 + numeric.abs().max(analytic.abs())),
                "param {p}: numeric {numeric} analytic {analytic}"
            );
        }
    }

    fn input(len: usize) -> Vec<f32> {
        (0..len).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect()
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let mut m = Linear::new(3, 12, 1);
        finite_difference_check(&mut m, &input(12), 2);
    }

    #[test]
    fn convnet_gradient_matches_finite_differences() {
        let mut m = ConvNet::new(3, 6, 5, &[4, 5], 3);
        finite_difference_check(&mut m, &input(3 * 30), 1);
    }

    #[test]
    fn default_convnet_is_about_100k_params() {
        let m = ClassifierKind::default().build(100, 32, 32, 0);
        let n = m.params().len();
        assert!((80_000..120_000).contains(&n), "{n}");
    }

    #[test]
    fn same_seed_same_init() {
        let k = ClassifierKind::default();
        assert_eq!(k.build(2, 8, 8, 5).params(), k.build(2, 8, 8, 5).params());
        assert_ne!(k.build(2, 8, 8, 5).params(), k.build(2, 8, 8, 6).params());
    }

    #[test]
    fn restore_round_trip() {
        let k = ClassifierKind::ConvNet { widths: vec![4] };
        let m = k.build(2, 8, 8, 9);
        let r = k.restore(2, 8, 8, m.params()).unwrap();
        let x = input(3 * 64);
        assert_eq!(m.forward(&x), r.forward(&x));
        assert!(k.restore(3, 8, 8, m.params()).is_none());
    }
}
