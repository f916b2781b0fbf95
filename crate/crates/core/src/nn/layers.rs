//! Layer implementations: forward, backward, parameter access.

use ndarray::{Array4, Axis, Zip};
use rayon::prelude::*;

use crate::error::{HsiError, Result};

pub type Tensor = Array4<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// A network layer with its parameter state.
///
/// Weight layouts are flat row-major vectors:
/// compress `w[oc * ic_total + ic]`, conv `w[((oc*k + ky)*k + kx)*ic_total + ic]`,
/// dense `w[oc * in_features + i]`.
#[derive(Debug, Clone)]
pub enum Layer {
    /// 1x1 learnable linear map across channels (meta-channels).
    ChannelCompress {
        in_ch: usize,
        out_ch: usize,
        w: Vec<f64>,
        b: Vec<f64>,
    },
    /// Stride-1 same-padding 2-D convolution with odd square kernel.
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        w: Vec<f64>,
        b: Vec<f64>,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    BatchNorm {
        channels: usize,
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    GlobalAvgPool,
    Dense {
        in_features: usize,
        out_features: usize,
        w: Vec<f64>,
        b: Vec<f64>,
    },
    Softmax,
}

/// Per-layer gradients, one flat vector per parameter array, in the same
/// order as [`Layer::params`].
pub type LayerGrads = Vec<Vec<f64>>;

fn check_finite(name: &str, t: &Tensor) -> Result<()> {
    if cfg!(debug_assertions) && t.iter().any(|v| !v.is_finite()) {
        return Err(HsiError::numeric(format!("non-finite values after {name}")));
    }
    Ok(())
}

impl Layer {
    pub fn params(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::ChannelCompress { w, b, .. }
            | Layer::Conv2d { w, b, .. }
            | Layer::Dense { w, b, .. } => vec![w, b],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::ChannelCompress { w, b, .. }
            | Layer::Conv2d { w, b, .. }
            | Layer::Dense { w, b, .. } => vec![w, b],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => vec![],
        }
    }

    /// Forward pass. In train mode batchnorm uses batch statistics and
    /// returns them so the caller can fold them into the running state.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<(Vec<f64>, Vec<f64>)>)> {
        let y = match self {
            Layer::ChannelCompress {
                in_ch,
                out_ch,
                w,
                b,
            } => {
                let (bs, h, wd, c) = x.dim();
                if c != *in_ch {
                    return Err(HsiError::shape(format!(
                        "compress expects {in_ch} channels, got {c}"
                    )));
                }
                let mut out = Tensor::zeros((bs, h, wd, *out_ch));
                Zip::from(out.outer_iter_mut())
                    .and(x.outer_iter())
                    .par_for_each(|mut ob, xb| {
                        let xs = xb.as_slice().unwrap();
                        let os = ob.as_slice_mut().unwrap();
                        let pixels = h * wd;
                        for p in 0..pixels {
                            let xi = &xs[p * in_ch..(p + 1) * in_ch];
                            let oi = &mut os[p * out_ch..(p + 1) * out_ch];
                            for oc in 0..*out_ch {
                                let wrow = &w[oc * in_ch..(oc + 1) * in_ch];
                                let mut acc = b[oc];
                                for ic in 0..*in_ch {
                                    acc += wrow[ic] * xi[ic];
                                }
                                oi[oc] = acc;
                            }
                        }
                    });
                out
            }
            Layer::Conv2d {
                in_ch,
                out_ch,
                kernel,
                w,
                b,
            } => {
                let (bs, h, wd, c) = x.dim();
                if c != *in_ch {
                    return Err(HsiError::shape(format!(
                        "conv expects {in_ch} channels, got {c}"
                    )));
                }
                let k = *kernel;
                let pad = k / 2;
                let mut out = Tensor::zeros((bs, h, wd, *out_ch));
                Zip::from(out.outer_iter_mut())
                    .and(x.outer_iter())
                    .par_for_each(|mut ob, xb| {
                        let xs = xb.as_slice().unwrap();
                        let os = ob.as_slice_mut().unwrap();
                        for y0 in 0..h {
                            for x0 in 0..wd {
                                let oi = &mut os[(y0 * wd + x0) * out_ch..];
                                for oc in 0..*out_ch {
                                    let mut acc = b[oc];
                                    for ky in 0..k {
                                        let iy = y0 + ky;
                                        if iy < pad || iy - pad >= h {
                                            continue;
                                        }
                                        let iy = iy - pad;
                                        for kx in 0..k {
                                            let ix = x0 + kx;
                                            if ix < pad || ix - pad >= wd {
                                                continue;
                                            }
                                            let ix = ix - pad;
                                            let wrow =
                                                &w[((oc * k + ky) * k + kx) * in_ch..][..*in_ch];
                                            let xrow = &xs[(iy * wd + ix) * in_ch..][..*in_ch];
                                            let mut dot = 0.0;
                                            for ic in 0..*in_ch {
                                                dot += wrow[ic] * xrow[ic];
                                            }
                                            acc += dot;
                                        }
                                    }
                                    oi[oc] = acc;
                                }
                            }
                        }
                    });
                out
            }
            Layer::Relu => x.mapv(|v| v.max(0.0)),
            Layer::MaxPool { size } => {
                let (bs, h, wd, c) = x.dim();
                let s = *size;
                let (oh, ow) = (h / s, wd / s);
                if oh == 0 || ow == 0 {
                    return Err(HsiError::shape("maxpool input smaller than window"));
                }
                let mut out = Tensor::zeros((bs, oh, ow, c));
                Zip::from(out.outer_iter_mut())
                    .and(x.outer_iter())
                    .par_for_each(|mut ob, xb| {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                for ch in 0..c {
                                    let mut m = f64::NEG_INFINITY;
                                    for dy in 0..s {
                                        for dx in 0..s {
                                            m = m.max(xb[[oy * s + dy, ox * s + dx, ch]]);
                                        }
                                    }
                                    ob[[oy, ox, ch]] = m;
                                }
                            }
                        }
                    });
                out
            }
            Layer::BatchNorm {
                channels,
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                let (bs, h, wd, c) = x.dim();
                if c != *channels {
                    return Err(HsiError::shape("batchnorm channel mismatch"));
                }
                match mode {
                    Mode::Train => {
                        if bs < 2 {
                            return Err(HsiError::invalid(
                                "batchnorm requires batch size >= 2 in training mode",
                            ));
                        }
                        let n = (bs * h * wd) as f64;
                        let mut mu = vec![0.0f64; c];
                        let mut var = vec![0.0f64; c];
                        for v in x.iter().zip(0..) {
                            mu[v.1 % c] += *v.0;
                        }
                        for m in &mut mu {
                            *m /= n;
                        }
                        for v in x.iter().zip(0..) {
                            let d = *v.0 - mu[v.1 % c];
                            var[v.1 % c] += d * d;
                        }
                        for v in &mut var {
                            *v /= n;
                        }
                        let mut out = x.clone();
                        for v in out.iter_mut().zip(0..) {
                            let ch = v.1 % c;
                            *v.0 = gamma[ch] * (*v.0 - mu[ch]) / (var[ch] + BN_EPS).sqrt()
                                + beta[ch];
                        }
                        check_finite("batchnorm", &out)?;
                        return Ok((out, Some((mu, var))));
                    }
                    Mode::Eval => {
                        let mut out = x.clone();
                        for v in out.iter_mut().zip(0..) {
                            let ch = v.1 % c;
                            *v.0 = gamma[ch] * (*v.0 - running_mean[ch])
                                / (running_var[ch] + BN_EPS).sqrt()
                                + beta[ch];
                        }
                        out
                    }
                }
            }
            Layer::GlobalAvgPool => {
                let (bs, h, wd, c) = x.dim();
                let mut out = Tensor::zeros((bs, 1, 1, c));
                let inv = 1.0 / (h * wd) as f64;
                for bi in 0..bs {
                    for ch in 0..c {
                        let mut acc = 0.0;
                        for y in 0..h {
                            for x0 in 0..wd {
                                acc += x[[bi, y, x0, ch]];
                            }
                        }
                        out[[bi, 0, 0, ch]] = acc * inv;
                    }
                }
                out
            }
            Layer::Dense {
                in_features,
                out_features,
                w,
                b,
            } => {
                let (bs, h, wd, c) = x.dim();
                if h * wd * c != *in_features {
                    return Err(HsiError::shape(format!(
                        "dense expects {in_features} features, got {}",
                        h * wd * c
                    )));
                }
                let mut out = Tensor::zeros((bs, 1, 1, *out_features));
                let xs = x.as_slice().unwrap();
                for bi in 0..bs {
                    let xi = &xs[bi * in_features..(bi + 1) * in_features];
                    for o in 0..*out_features {
                        let wrow = &w[o * in_features..(o + 1) * in_features];
                        let mut acc = b[o];
                        for i in 0..*in_features {
                            acc += wrow[i] * xi[i];
                        }
                        out[[bi, 0, 0, o]] = acc;
                    }
                }
                out
            }
            Layer::Softmax => {
                let (bs, h, wd, c) = x.dim();
                if h != 1 || wd != 1 {
                    return Err(HsiError::shape("softmax expects 1x1 spatial dims"));
                }
                let mut out = x.clone();
                for bi in 0..bs {
                    let mut row = out.index_axis_mut(Axis(0), bi);
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - m).exp();
                        sum += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= sum;
                    }
                    let _ = c;
                }
                out
            }
        };
        check_finite(self.name(), &y)?;
        Ok((y, None))
    }

    /// Backward pass: gradients with respect to the input and to the
    /// layer parameters. `x` is the input that produced the forward
    /// output; pooling/normalization internals are recomputed from it.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, mode: Mode) -> Result<(Tensor, LayerGrads)> {
        match self {
            Layer::ChannelCompress {
                in_ch,
                out_ch,
                w,
                ..
            } => {
                let (bs, h, wd, _) = x.dim();
                let pixels = h * wd;
                let per_example: Vec<(ndarray::Array3<f64>, Vec<f64>, Vec<f64>)> = (0..bs)
                    .into_par_iter()
                    .map(|bi| {
                        let xb = x.index_axis(Axis(0), bi);
                        let dyb = dy.index_axis(Axis(0), bi);
                        let xs = xb.as_slice().unwrap();
                        let ds = dyb.as_slice().unwrap();
                        let mut dx = vec![0.0f64; pixels * in_ch];
                        let mut dw = vec![0.0f64; w.len()];
                        let mut db = vec![0.0f64; *out_ch];
                        for p in 0..pixels {
                            let xi = &xs[p * in_ch..(p + 1) * in_ch];
                            let gi = &ds[p * out_ch..(p + 1) * out_ch];
                            let dxi = &mut dx[p * in_ch..(p + 1) * in_ch];
                            for oc in 0..*out_ch {
                                let g = gi[oc];
                                db[oc] += g;
                                let wrow = &w[oc * in_ch..(oc + 1) * in_ch];
                                let dwrow = &mut dw[oc * in_ch..(oc + 1) * in_ch];
                                for ic in 0..*in_ch {
                                    dwrow[ic] += g * xi[ic];
                                    dxi[ic] += g * wrow[ic];
                                }
                            }
                        }
                        (
                            ndarray::Array3::from_shape_vec((h, wd, *in_ch), dx).unwrap(),
                            dw,
                            db,
                        )
                    })
                    .collect();
                assemble(bs, h, wd, *in_ch, w.len(), *out_ch, per_example)
            }
            Layer::Conv2d {
                in_ch,
                out_ch,
                kernel,
                w,
                ..
            } => {
                let (bs, h, wd, _) = x.dim();
                let k = *kernel;
                let pad = k / 2;
                let per_example: Vec<(ndarray::Array3<f64>, Vec<f64>, Vec<f64>)> = (0..bs)
                    .into_par_iter()
                    .map(|bi| {
                        let xb = x.index_axis(Axis(0), bi);
                        let dyb = dy.index_axis(Axis(0), bi);
                        let xs = xb.as_slice().unwrap();
                        let ds = dyb.as_slice().unwrap();
                        let mut dx = vec![0.0f64; h * wd * in_ch];
                        let mut dw = vec![0.0f64; w.len()];
                        let mut db = vec![0.0f64; *out_ch];
                        for y0 in 0..h {
                            for x0 in 0..wd {
                                let gi = &ds[(y0 * wd + x0) * out_ch..][..*out_ch];
                                for oc in 0..*out_ch {
                                    let g = gi[oc];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    db[oc] += g;
                                    for ky in 0..k {
                                        let iy = y0 + ky;
                                        if iy < pad || iy - pad >= h {
                                            continue;
                                        }
                                        let iy = iy - pad;
                                        for kx in 0..k {
                                            let ix = x0 + kx;
                                            if ix < pad || ix - pad >= wd {
                                                continue;
                                            }
                                            let ix = ix - pad;
                                            let base = ((oc * k + ky) * k + kx) * in_ch;
                                            let wrow = &w[base..base + in_ch];
                                            let dwrow = &mut dw[base..base + in_ch];
                                            let xrow = &xs[(iy * wd + ix) * in_ch..][..*in_ch];
                                            let dxrow =
                                                &mut dx[(iy * wd + ix) * in_ch..][..*in_ch];
                                            for ic in 0..*in_ch {
                                                dwrow[ic] += g * xrow[ic];
                                                dxrow[ic] += g * wrow[ic];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                        (
                            ndarray::Array3::from_shape_vec((h, wd, *in_ch), dx).unwrap(),
                            dw,
                            db,
                        )
                    })
                    .collect();
                assemble(bs, h, wd, *in_ch, w.len(), *out_ch, per_example)
            }
            Layer::Relu => {
                let mut dx = dy.clone();
                Zip::from(&mut dx).and(x).for_each(|d, &xi| {
                    if xi <= 0.0 {
                        *d = 0.0;
                    }
                });
                Ok((dx, vec![]))
            }
            Layer::MaxPool { size } => {
                let (_bs, h, wd, c) = x.dim();
                let s = *size;
                let (oh, ow) = (h / s, wd / s);
                let mut dx = Tensor::zeros(x.dim());
                Zip::from(dx.outer_iter_mut())
                    .and(x.outer_iter())
                    .and(dy.outer_iter())
                    .par_for_each(|mut dxb, xb, dyb| {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                for ch in 0..c {
                                    // route to the first argmax position
                                    let mut best = (0usize, 0usize);
                                    let mut m = f64::NEG_INFINITY;
                                    for dy0 in 0..s {
                                        for dx0 in 0..s {
                                            let v = xb[[oy * s + dy0, ox * s + dx0, ch]];
                                            if v > m {
                                                m = v;
                                                best = (oy * s + dy0, ox * s + dx0);
                                            }
                                        }
                                    }
                                    dxb[[best.0, best.1, ch]] += dyb[[oy, ox, ch]];
                                }
                            }
                        }
                    });
                Ok((dx, vec![]))
            }
            Layer::BatchNorm {
                gamma,
                running_var,
                ..
            } => {
                let (bs, h, wd, c) = x.dim();
                match mode {
                    Mode::Eval => {
                        // deterministic affine map
                        let mut dx = dy.clone();
                        for v in dx.iter_mut().zip(0..) {
                            let ch = v.1 % c;
                            *v.0 *= gamma[ch] / (running_var[ch] + BN_EPS).sqrt();
                        }
                        // eval-mode gradients wrt gamma/beta are rarely
                        // needed; report zeros of the right shape
                        Ok((dx, vec![vec![0.0; c], vec![0.0; c]]))
                    }
                    Mode::Train => {
                        let n = (bs * h * wd) as f64;
                        let mut mu = vec![0.0f64; c];
                        let mut var = vec![0.0f64; c];
                        for v in x.iter().zip(0..) {
                            mu[v.1 % c] += *v.0;
                        }
                        for m in &mut mu {
                            *m /= n;
                        }
                        for v in x.iter().zip(0..) {
                            let d = *v.0 - mu[v.1 % c];
                            var[v.1 % c] += d * d;
                        }
                        for v in &mut var {
                            *v /= n;
                        }
                        let inv_std: Vec<f64> =
                            var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
                        let mut dgamma = vec![0.0f64; c];
                        let mut dbeta = vec![0.0f64; c];
                        let mut sum_dy = vec![0.0f64; c];
                        let mut sum_dy_xhat = vec![0.0f64; c];
                        for ((xv, dv), i) in x.iter().zip(dy.iter()).zip(0..) {
                            let ch = i % c;
                            let xhat = (*xv - mu[ch]) * inv_std[ch];
                            dbeta[ch] += *dv;
                            dgamma[ch] += *dv * xhat;
                            sum_dy[ch] += *dv;
                            sum_dy_xhat[ch] += *dv * xhat;
                        }
                        let mut dx = Tensor::zeros(x.dim());
                        for ((dxv, (xv, dv)), i) in
                            dx.iter_mut().zip(x.iter().zip(dy.iter())).zip(0..)
                        {
                            let ch = i % c;
                            let xhat = (*xv - mu[ch]) * inv_std[ch];
                            *dxv = gamma[ch] * inv_std[ch]
                                * (*dv - sum_dy[ch] / n - xhat * sum_dy_xhat[ch] / n);
                        }
                        Ok((dx, vec![dgamma, dbeta]))
                    }
                }
            }
            Layer::GlobalAvgPool => {
                let (bs, h, wd, c) = x.dim();
                let inv = 1.0 / (h * wd) as f64;
                let mut dx = Tensor::zeros(x.dim());
                for bi in 0..bs {
                    for ch in 0..c {
                        let g = dy[[bi, 0, 0, ch]] * inv;
                        for y in 0..h {
                            for x0 in 0..wd {
                                dx[[bi, y, x0, ch]] = g;
                            }
                        }
                    }
                }
                Ok((dx, vec![]))
            }
            Layer::Dense {
                in_features,
                out_features,
                w,
                ..
            } => {
                let (bs, h, wd, c) = x.dim();
                let xs = x.as_slice().unwrap();
                let mut dw = vec![0.0f64; w.len()];
                let mut db = vec![0.0f64; *out_features];
                let mut dx = Tensor::zeros(x.dim());
                let dxs = dx.as_slice_mut().unwrap();
                for bi in 0..bs {
                    let xi = &xs[bi * in_features..(bi + 1) * in_features];
                    let dxi = &mut dxs[bi * in_features..(bi + 1) * in_features];
                    for o in 0..*out_features {
                        let g = dy[[bi, 0, 0, o]];
                        if g == 0.0 {
                            continue;
                        }
                        db[o] += g;
                        let wrow = &w[o * in_features..(o + 1) * in_features];
                        let dwrow = &mut dw[o * in_features..(o + 1) * in_features];
                        for i in 0..*in_features {
                            dwrow[i] += g * xi[i];
                            dxi[i] += g * wrow[i];
                        }
                    }
                }
                let _ = (h, wd, c);
                Ok((dx, vec![dw, db]))
            }
            Layer::Softmax => {
                // dx = y * (dy - sum(dy * y)), with y recomputed from x
                let (y, _) = self.forward(x, Mode::Eval)?;
                let (bs, _, _, c) = x.dim();
                let mut dx = Tensor::zeros(x.dim());
                for bi in 0..bs {
                    let mut dot = 0.0;
                    for ch in 0..c {
                        dot += dy[[bi, 0, 0, ch]] * y[[bi, 0, 0, ch]];
                    }
                    for ch in 0..c {
                        dx[[bi, 0, 0, ch]] = y[[bi, 0, 0, ch]] * (dy[[bi, 0, 0, ch]] - dot);
                    }
                }
                Ok((dx, vec![]))
            }
        }
    }

    /// Fold freshly computed batch statistics into the running state.
    pub fn update_running_stats(&mut self, mu: &[f64], var: &[f64]) {
        if let Layer::BatchNorm {
            running_mean,
            running_var,
            ..
        } = self
        {
            for (rm, &m) in running_mean.iter_mut().zip(mu) {
                *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * m;
            }
            for (rv, &v) in running_var.iter_mut().zip(var) {
                *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * v;
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::ChannelCompress { .. } => "channel-compress",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::BatchNorm { .. } => "batchnorm",
            Layer::GlobalAvgPool => "global-avg-pool",
            Layer::Dense { .. } => "dense",
            Layer::Softmax => "softmax",
        }
    }
}

#[allow(clippy::type_complexity)]
fn assemble(
    bs: usize,
    h: usize,
    wd: usize,
    in_ch: usize,
    w_len: usize,
    out_ch: usize,
    per_example: Vec<(ndarray::Array3<f64>, Vec<f64>, Vec<f64>)>,
) -> Result<(Tensor, LayerGrads)> {
    let mut dx = Tensor::zeros((bs, h, wd, in_ch));
    let mut dw = vec![0.0f64; w_len];
    let mut db = vec![0.0f64; out_ch];
    // fixed example-order reduction keeps training bit-deterministic
    for (bi, (dxb, dwb, dbb)) in per_example.into_iter().enumerate() {
        dx.index_axis_mut(Axis(0), bi).assign(&dxb);
        for (a, v) in dw.iter_mut().zip(dwb) {
            *a += v;
        }
        for (a, v) in db.iter_mut().zip(dbb) {
            *a += v;
        }
    }
    Ok((dx, vec![dw, db]))
}
