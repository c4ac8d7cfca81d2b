//! Neural building blocks: valid-padding convolution, transposed
//! convolution, fully connected layer, LSTM cell, Adam.
//!
//! Convolution and its transpose are recorded on the tape as single fused
//! operations with hand-written backward rules; everything else composes
//! from tensor primitives. Weights initialize uniform in
//! ±√(1/fan_in); LSTM forget-gate bias starts at 1.

use crate::error::{Result, SpanError};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};

/// Spatial size of a valid-padding convolution output, if positive.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize) -> Result<usize> {
    if input < kernel {
        return Err(SpanError::ShapeMismatch {
            op: "conv2d_valid",
            lhs: vec![input],
            rhs: vec![kernel],
        });
    }
    Ok((input - kernel) / stride + 1)
}

/// Spatial size of a transposed convolution output.
pub fn deconv_out_size(input: usize, kernel: usize, stride: usize) -> usize {
    (input - 1) * stride + kernel
}

/// 2D convolution, valid padding (no border), cross-correlation convention.
pub struct Conv2d {
    pub weight: Tensor, // [out_ch, in_ch, k, k]
    pub bias: Tensor,   // [out_ch]
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut Rng) -> Conv2d {
        let bound = (1.0 / (in_ch * kernel * kernel) as f64).sqrt();
        Conv2d {
            weight: Tensor::param_uniform(&[out_ch, in_ch, kernel, kernel], bound, rng),
            bias: Tensor::param_uniform(&[out_ch], bound, rng),
            in_ch,
            out_ch,
            kernel,
            stride,
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    /// x: [in_ch, H, W] → [out_ch, H', W'].
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let xs = x.shape();
        if xs.len() != 3 || xs[0] != self.in_ch {
            return Err(SpanError::ShapeMismatch {
                op: "conv2d_valid",
                lhs: xs,
                rhs: vec![self.in_ch, 0, 0],
            });
        }
        let (h, w) = (xs[1], xs[2]);
        let oh = conv_out_size(h, self.kernel, self.stride)?;
        let ow = conv_out_size(w, self.kernel, self.stride)?;
        let (c_in, c_out, k, s) = (self.in_ch, self.out_ch, self.kernel, self.stride);

        let out_data = x.with_data(|xd| {
            self.weight.with_data(|wd| {
                self.bias.with_data(|bd| {
                    conv2d_forward(xd, wd, bd, c_in, c_out, h, w, k, s, oh, ow)
                })
            })
        });
        let out = Tensor::from_vec(out_data, &[c_out, oh, ow])?;

        let inputs = [&self.weight, &self.bias, x];
        if tape_wants(tape, &inputs) {
            let (xc, wc, bc, oc) = (x.clone(), self.weight.clone(), self.bias.clone(), out.clone());
            tape.record(&out, move || {
                let Some(g) = oc.grad() else { return };
                if xc.requires_grad() {
                    let dx = wc.with_data(|wd| {
                        conv2d_backward_input(&g, wd, c_in, c_out, h, w, k, s, oh, ow)
                    });
                    xc.accumulate_grad(&dx);
                }
                if wc.requires_grad() {
                    let dw = xc.with_data(|xd| {
                        conv2d_backward_weight(&g, xd, c_in, c_out, h, w, k, s, oh, ow)
                    });
                    wc.accumulate_grad(&dw);
                }
                if bc.requires_grad() {
                    let mut db = vec![0.0; c_out];
                    for o in 0..c_out {
                        db[o] = g[o * oh * ow..(o + 1) * oh * ow].iter().sum();
                    }
                    bc.accumulate_grad(&db);
                }
            });
        }
        Ok(out)
    }
}

/// Transposed 2D convolution. Weight layout [in_ch, out_ch, k, k]: the
/// forward pass is the adjoint of a valid convolution with the same kernel,
/// so ⟨conv(x), y⟩ = ⟨x, deconv(y)⟩ when weights are shared.
pub struct Deconv2d {
    pub weight: Tensor, // [in_ch, out_ch, k, k]
    pub bias: Tensor,   // [out_ch]
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Deconv2d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut Rng) -> Deconv2d {
        let bound = (1.0 / (in_ch * kernel * kernel) as f64).sqrt();
        Deconv2d {
            weight: Tensor::param_uniform(&[in_ch, out_ch, kernel, kernel], bound, rng),
            bias: Tensor::param_uniform(&[out_ch], bound, rng),
            in_ch,
            out_ch,
            kernel,
            stride,
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    /// x: [in_ch, H, W] → [out_ch, (H−1)·s + k, (W−1)·s + k].
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let xs = x.shape();
        if xs.len() != 3 || xs[0] != self.in_ch || xs[1] == 0 || xs[2] == 0 {
            return Err(SpanError::ShapeMismatch {
                op: "deconv2d",
                lhs: xs,
                rhs: vec![self.in_ch, 0, 0],
            });
        }
        if self.stride == 0 {
            return Err(SpanError::Parameter("deconv2d stride must be ≥ 1".into()));
        }
        let (h, w) = (xs[1], xs[2]);
        let oh = deconv_out_size(h, self.kernel, self.stride);
        let ow = deconv_out_size(w, self.kernel, self.stride);
        let (c_in, c_out, k, s) = (self.in_ch, self.out_ch, self.kernel, self.stride);

        let out_data = x.with_data(|xd| {
            self.weight.with_data(|wd| {
                self.bias.with_data(|bd| {
                    deconv2d_forward(xd, wd, bd, c_in, c_out, h, w, k, s, oh, ow)
                })
            })
        });
        let out = Tensor::from_vec(out_data, &[c_out, oh, ow])?;

        let inputs = [&self.weight, &self.bias, x];
        if tape_wants(tape, &inputs) {
            let (xc, wc, bc, oc) = (x.clone(), self.weight.clone(), self.bias.clone(), out.clone());
            tape.record(&out, move || {
                let Some(g) = oc.grad() else { return };
                if xc.requires_grad() {
                    // adjoint of scatter = gather: a valid conv of g
                    let dx = wc.with_data(|wd| {
                        deconv2d_backward_input(&g, wd, c_in, c_out, h, w, k, s, oh, ow)
                    });
                    xc.accumulate_grad(&dx);
                }
                if wc.requires_grad() {
                    let dw = xc.with_data(|xd| {
                        deconv2d_backward_weight(&g, xd, c_in, c_out, h, w, k, s, oh, ow)
                    });
                    wc.accumulate_grad(&dw);
                }
                if bc.requires_grad() {
                    let mut db = vec![0.0; c_out];
                    for o in 0..c_out {
                        db[o] = g[o * oh * ow..(o + 1) * oh * ow].iter().sum();
                    }
                    bc.accumulate_grad(&db);
                }
            });
        }
        Ok(out)
    }
}

fn tape_wants(tape: &Tape, inputs: &[&Tensor]) -> bool {
    tape.is_recording() && inputs.iter().any(|t| t.requires_grad())
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    wid: usize,
    k: usize,
    s: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        let obase = o * oh * ow;
        out[obase..obase + oh * ow].fill(b[o]);
        for c in 0..c_in {
            let xbase = c * h * wid;
            let wbase = (o * c_in + c) * k * k;
            for oy in 0..oh {
                let orow = obase + oy * ow;
                for i in 0..k {
                    let xrow = xbase + (oy * s + i) * wid;
                    for j in 0..k {
                        let wv = w[wbase + i * k + j];
                        let xr = &x[xrow + j..];
                        let or = &mut out[orow..orow + ow];
                        for ox in 0..ow {
                            or[ox] += wv * xr[ox * s];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_input(
    g: &[f64],
    w: &[f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    wid: usize,
    k: usize,
    s: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; c_in * h * wid];
    for o in 0..c_out {
        let obase = o * oh * ow;
        for c in 0..c_in {
            let xbase = c * h * wid;
            let wbase = (o * c_in + c) * k * k;
            for oy in 0..oh {
                let grow = obase + oy * ow;
                for i in 0..k {
                    let xrow = xbase + (oy * s + i) * wid;
                    for j in 0..k {
                        let wv = w[wbase + i * k + j];
                        for ox in 0..ow {
                            dx[xrow + ox * s + j] += wv * g[grow + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_weight(
    g: &[f64],
    x: &[f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    wid: usize,
    k: usize,
    s: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut dw = vec![0.0; c_out * c_in * k * k];
    for o in 0..c_out {
        let obase = o * oh * ow;
        for c in 0..c_in {
            let xbase = c * h * wid;
            let wbase = (o * c_in + c) * k * k;
            for i in 0..k {
                for j in 0..k {
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let grow = obase + oy * ow;
                        let xrow = xbase + (oy * s + i) * wid + j;
                        for ox in 0..ow {
                            acc += g[grow + ox] * x[xrow + ox * s];
                        }
                    }
                    dw[wbase + i * k + j] += acc;
                }
            }
        }
    }
    dw
}

#[allow(clippy::too_many_arguments)]
fn deconv2d_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    wid: usize,
    k: usize,
    s: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        let obase = o * oh * ow;
        out[obase..obase + oh * ow].fill(b[o]);
    }
    for c in 0..c_in {
        let xbase = c * h * wid;
        for o in 0..c_out {
            let obase = o * oh * ow;
            let wbase = (c * c_out + o) * k * k;
            for y in 0..h {
                let xrow = xbase + y * wid;
                for i in 0..k {
                    let orow = obase + (y * s + i) * ow;
                    for j in 0..k {
                        let wv = w[wbase + i * k + j];
                        for xi in 0..wid {
                            out[orow + xi * s + j] += wv * x[xrow + xi];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn deconv2d_backward_input(
    g: &[f64],
    w: &[f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    wid: usize,
    k: usize,
    s: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; c_in * h * wid];
    for c in 0..c_in {
        let xbase = c * h * wid;
        for o in 0..c_out {
            let obase = o * oh * ow;
            let wbase = (c * c_out + o) * k * k;
            for y in 0..h {
                let xrow = xbase + y * wid;
                for i in 0..k {
                    let grow = obase + (y * s + i) * ow;
                    for j in 0..k {
                        let wv = w[wbase + i * k + j];
                        for xi in 0..wid {
                            dx[xrow + xi] += wv * g[grow + xi * s + j];
                        }
                    }
                }
            }
        }
    }
    dx
}

#[allow(clippy::too_many_arguments)]
fn deconv2d_backward_weight(
    g: &[f64],
    x: &[f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    wid: usize,
    k: usize,
    s: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut dw = vec![0.0; c_in * c_out * k * k];
    for c in 0..c_in {
        let xbase = c * h * wid;
        for o in 0..c_out {
            let obase = o * oh * ow;
            let wbase = (c * c_out + o) * k * k;
            for i in 0..k {
                for j in 0..k {
                    let mut acc = 0.0;
                    for y in 0..h {
                        let xrow = xbase + y * wid;
                        let grow = obase + (y * s + i) * ow + j;
                        for xi in 0..wid {
                            acc += x[xrow + xi] * g[grow + xi * s];
                        }
                    }
                    dw[wbase + i * k + j] += acc;
                }
            }
        }
    }
    dw
}

/// Resize a [C, H, W] map to an exact [C, th, tw] target: center-crop on
/// axes that are too large, replicate-pad edges on axes that are too small.
/// Each output cell reads exactly one input cell, so the backward rule is a
/// plain scatter-add through the same index map.
pub fn fit2d(tape: &Tape, x: &Tensor, th: usize, tw: usize) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 3 || th == 0 || tw == 0 {
        return Err(SpanError::ShapeMismatch {
            op: "fit2d",
            lhs: xs,
            rhs: vec![0, th, tw],
        });
    }
    let (ch, h, w) = (xs[0], xs[1], xs[2]);
    let map_axis = |target: usize, source: usize| -> Vec<usize> {
        if target <= source {
            let off = (source - target) / 2;
            (0..target).map(|i| i + off).collect()
        } else {
            let pad_lo = (target - source) / 2;
            (0..target)
                .map(|i| i.saturating_sub(pad_lo).min(source - 1))
                .collect()
        }
    };
    let rows = map_axis(th, h);
    let cols = map_axis(tw, w);
    let data = x.with_data(|xd| {
        let mut out = vec![0.0; ch * th * tw];
        for c in 0..ch {
            for (oy, &sy) in rows.iter().enumerate() {
                let src = &xd[c * h * w + sy * w..];
                let dst = &mut out[c * th * tw + oy * tw..c * th * tw + (oy + 1) * tw];
                for (ox, &sx) in cols.iter().enumerate() {
                    dst[ox] = src[sx];
                }
            }
        }
        out
    });
    let out = Tensor::from_vec(data, &[ch, th, tw])?;
    if tape_wants(tape, &[x]) {
        let (xc, oc) = (x.clone(), out.clone());
        tape.record(&out, move || {
            let Some(g) = oc.grad() else { return };
            let mut dx = vec![0.0; ch * h * w];
            for c in 0..ch {
                for (oy, &sy) in rows.iter().enumerate() {
                    for (ox, &sx) in cols.iter().enumerate() {
                        dx[c * h * w + sy * w + sx] += g[c * th * tw + oy * tw + ox];
                    }
                }
            }
            xc.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// Fully connected layer y = W·x + b on 1-D inputs.
pub struct Linear {
    pub weight: Tensor, // [out, in]
    pub bias: Tensor,   // [out]
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Linear {
        let bound = (1.0 / in_dim as f64).sqrt();
        Linear {
            weight: Tensor::param_uniform(&[out_dim, in_dim], bound, rng),
            bias: Tensor::param_uniform(&[out_dim], bound, rng),
            in_dim,
            out_dim,
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let y = tape.matvec(&self.weight, x)?;
        tape.add(&y, &self.bias)
    }
}

/// LSTM cell. Gate order in the stacked weights/bias is
/// (input, forget, cell-candidate, output).
pub struct LstmCell {
    pub w: Tensor, // [4H, D] input-to-gate
    pub u: Tensor, // [4H, H] hidden-to-gate
    pub b: Tensor, // [4H]
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> LstmCell {
        let wb = (1.0 / input_dim as f64).sqrt();
        let ub = (1.0 / hidden_dim as f64).sqrt();
        let b = Tensor::param_uniform(&[4 * hidden_dim], ub, rng);
        // forget-gate bias 1: keeps memory open early in training
        let mut bias = b.to_vec();
        for v in bias[hidden_dim..2 * hidden_dim].iter_mut() {
            *v = 1.0;
        }
        b.set_data(&bias).expect("bias shape");
        LstmCell {
            w: Tensor::param_uniform(&[4 * hidden_dim, input_dim], wb, rng),
            u: Tensor::param_uniform(&[4 * hidden_dim, hidden_dim], ub, rng),
            b,
            input_dim,
            hidden_dim,
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.w.clone(), self.u.clone(), self.b.clone()]
    }

    pub fn zero_state(&self) -> (Tensor, Tensor) {
        (
            Tensor::zeros(&[self.hidden_dim]),
            Tensor::zeros(&[self.hidden_dim]),
        )
    }

    /// One step: (x, h, c) → (h′, c′).
    pub fn step(&self, tape: &Tape, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let hd = self.hidden_dim;
        if x.shape() != [self.input_dim] || h.shape() != [hd] || c.shape() != [hd] {
            return Err(SpanError::ShapeMismatch {
                op: "lstm_step",
                lhs: x.shape(),
                rhs: vec![self.input_dim],
            });
        }
        let wx = tape.matvec(&self.w, x)?;
        let uh = tape.matvec(&self.u, h)?;
        let pre = tape.add(&tape.add(&wx, &uh)?, &self.b)?;
        let i = tape.sigmoid(&tape.slice(&pre, 0, hd)?)?;
        let f = tape.sigmoid(&tape.slice(&pre, hd, hd)?)?;
        let g = tape.tanh(&tape.slice(&pre, 2 * hd, hd)?)?;
        let o = tape.sigmoid(&tape.slice(&pre, 3 * hd, hd)?)?;
        let c_next = tape.add(&tape.mul(&f, c)?, &tape.mul(&i, &g)?)?;
        let h_next = tape.mul(&o, &tape.tanh(&c_next)?)?;
        Ok((h_next, c_next))
    }
}

/// Adam with bias correction, bound to a fixed parameter list.
pub struct Adam {
    params: Vec<Tensor>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
}

impl Adam {
    pub fn new(params: Vec<Tensor>, lr: f64) -> Adam {
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Adam {
            params,
            m,
            v,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
        }
    }

    /// Apply one update from the gradients currently stored on the
    /// parameters. Gradients are left untouched.
    pub fn step(&mut self) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (idx, p) in self.params.iter().enumerate() {
            let g = p.grad().ok_or_else(|| {
                SpanError::Contract(format!("adam_step: parameter {idx} has no gradient"))
            })?;
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            p.update_data(|data| {
                for j in 0..data.len() {
                    m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                    v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    data[j] -= lr * mhat / (vhat.sqrt() + eps);
                }
            });
        }
        Ok(())
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}
