//! Differentiable operations.
//!
//! Every op computes its forward value eagerly (accumulating in `f64` where
//! values are summed) and, when any input requires gradients, records a
//! backward rule on the output tensor. Backward rules accumulate into `f64`
//! scratch buffers and fold into the inputs' `f32` gradient slots once.

use super::{element_count, Result, Tensor, TensorError};

fn accumulate_f64(target: &Tensor, buf: &[f64]) {
    let delta: Vec<f32> = buf.iter().map(|&v| v as f32).collect();
    target.accumulate_grad(&delta);
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

fn zip_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same_shape("add", a, b)?;
    let data: Vec<f32> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x + y)
        .collect();
    Ok(Tensor::from_op(
        data,
        a.shape().to_vec(),
        vec![a.clone(), b.clone()],
        Box::new(|grad_out, _out, inputs| {
            for input in inputs {
                if input.requires_grad() {
                    input.accumulate_grad(grad_out);
                }
            }
        }),
    ))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same_shape("sub", a, b)?;
    let data: Vec<f32> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x - y)
        .collect();
    Ok(Tensor::from_op(
        data,
        a.shape().to_vec(),
        vec![a.clone(), b.clone()],
        Box::new(|grad_out, _out, inputs| {
            if inputs[0].requires_grad() {
                inputs[0].accumulate_grad(grad_out);
            }
            if inputs[1].requires_grad() {
                let neg: Vec<f32> = grad_out.iter().map(|g| -g).collect();
                inputs[1].accumulate_grad(&neg);
            }
        }),
    ))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same_shape("mul", a, b)?;
    let data: Vec<f32> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x * y)
        .collect();
    Ok(Tensor::from_op(
        data,
        a.shape().to_vec(),
        vec![a.clone(), b.clone()],
        Box::new(|grad_out, _out, inputs| {
            if inputs[0].requires_grad() {
                let bd = inputs[1].data();
                let da: Vec<f32> = grad_out.iter().zip(bd.iter()).map(|(g, y)| g * y).collect();
                inputs[0].accumulate_grad(&da);
            }
            if inputs[1].requires_grad() {
                let ad = inputs[0].data();
                let db: Vec<f32> = grad_out.iter().zip(ad.iter()).map(|(g, x)| g * x).collect();
                inputs[1].accumulate_grad(&db);
            }
        }),
    ))
}

pub fn add_scalar(a: &Tensor, c: f32) -> Tensor {
    let data: Vec<f32> = a.data().iter().map(|x| x + c).collect();
    Tensor::from_op(
        data,
        a.shape().to_vec(),
        vec![a.clone()],
        Box::new(|grad_out, _out, inputs| {
            if inputs[0].requires_grad() {
                inputs[0].accumulate_grad(grad_out);
            }
        }),
    )
}

pub fn mul_scalar(a: &Tensor, c: f32) -> Tensor {
    let data: Vec<f32> = a.data().iter().map(|x| x * c).collect();
    Tensor::from_op(
        data,
        a.shape().to_vec(),
        vec![a.clone()],
        Box::new(move |grad_out, _out, inputs| {
            if inputs[0].requires_grad() {
                let da: Vec<f32> = grad_out.iter().map(|g| g * c).collect();
                inputs[0].accumulate_grad(&da);
            }
        }),
    )
}

/// Broadcast-add a `[C]` vector over the last axis of `x`.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let c = *x.shape().last().ok_or(TensorError::Dimension {
        op: "add_bias",
        msg: "rank-0 input".into(),
    })?;
    if bias.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            op: "add_bias",
            lhs: x.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let bd = bias.to_vec();
    let data: Vec<f32> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v + bd[i % c])
        .collect();
    Ok(Tensor::from_op(
        data,
        x.shape().to_vec(),
        vec![x.clone(), bias.clone()],
        Box::new(move |grad_out, _out, inputs| {
            if inputs[0].requires_grad() {
                inputs[0].accumulate_grad(grad_out);
            }
            if inputs[1].requires_grad() {
                let mut db = vec![0.0f64; c];
                for (i, g) in grad_out.iter().enumerate() {
                    db[i % c] += *g as f64;
                }
                accumulate_f64(&inputs[1], &db);
            }
        }),
    ))
}

// ---------------------------------------------------------------------------
// Matrix multiplication with leading batch dims (equal-or-1 broadcast)
// ---------------------------------------------------------------------------

struct BatchMap {
    out_count: usize,
    a_offsets: Vec<usize>,
    b_offsets: Vec<usize>,
}

fn batch_map(a_batch: &[usize], b_batch: &[usize]) -> Result<BatchMap> {
    let rank = a_batch.len().max(b_batch.len());
    let pad = |s: &[usize], i: usize| -> usize {
        let off = rank - s.len();
        if i < off {
            1
        } else {
            s[i - off]
        }
    };
    let mut out_shape = vec![1usize; rank];
    for i in 0..rank {
        let (da, db) = (pad(a_batch, i), pad(b_batch, i));
        if da != db && da != 1 && db != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul (batch dims)",
                lhs: a_batch.to_vec(),
                rhs: b_batch.to_vec(),
            });
        }
        out_shape[i] = da.max(db);
    }
    let out_count = element_count(&out_shape);
    let mut a_offsets = Vec::with_capacity(out_count);
    let mut b_offsets = Vec::with_capacity(out_count);
    for flat in 0..out_count {
        let mut rem = flat;
        let mut ai = 0usize;
        let mut bi = 0usize;
        for i in 0..rank {
            let stride: usize = out_shape[i + 1..].iter().product();
            let idx = rem / stride;
            rem %= stride;
            let (da, db) = (pad(a_batch, i), pad(b_batch, i));
            ai = ai * da + if da == 1 { 0 } else { idx };
            bi = bi * db + if db == 1 { 0 } else { idx };
        }
        a_offsets.push(ai);
        b_offsets.push(bi);
    }
    Ok(BatchMap {
        out_count,
        a_offsets,
        b_offsets,
    })
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ash, bsh) = (a.shape().to_vec(), b.shape().to_vec());
    if ash.len() < 2 || bsh.len() < 2 {
        return Err(TensorError::Dimension {
            op: "matmul",
            msg: format!("needs rank >= 2, got {ash:?} x {bsh:?}"),
        });
    }
    let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
    let (kb, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
    if k != kb {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: ash.clone(),
            rhs: bsh.clone(),
        });
    }
    let map = batch_map(&ash[..ash.len() - 2], &bsh[..bsh.len() - 2])?;

    let mut out_shape: Vec<usize> = Vec::new();
    {
        let rank = (ash.len() - 2).max(bsh.len() - 2);
        for i in 0..rank {
            let da = if i + ash.len() - 2 >= rank {
                ash[i + ash.len() - 2 - rank]
            } else {
                1
            };
            let db = if i + bsh.len() - 2 >= rank {
                bsh[i + bsh.len() - 2 - rank]
            } else {
                1
            };
            out_shape.push(da.max(db));
        }
    }
    out_shape.push(m);
    out_shape.push(n);

    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0f32; map.out_count * m * n];
    for batch in 0..map.out_count {
        let ab = map.a_offsets[batch] * m * k;
        let bb = map.b_offsets[batch] * k * n;
        let ob = batch * m * n;
        for i in 0..m {
            let mut row = vec![0.0f64; n];
            for kk in 0..k {
                let av = ad[ab + i * k + kk] as f64;
                if av == 0.0 {
                    continue;
                }
                let brow = bb + kk * n;
                for (j, r) in row.iter_mut().enumerate() {
                    *r += av * bd[brow + j] as f64;
                }
            }
            for (j, r) in row.iter().enumerate() {
                out[ob + i * n + j] = *r as f32;
            }
        }
    }
    drop(ad);
    drop(bd);

    let (a_len, b_len) = (a.len(), b.len());
    Ok(Tensor::from_op(
        out,
        out_shape,
        vec![a.clone(), b.clone()],
        Box::new(move |grad_out, _out, inputs| {
            let ad = inputs[0].data();
            let bd = inputs[1].data();
            let want_a = inputs[0].requires_grad();
            let want_b = inputs[1].requires_grad();
            let mut da = vec![0.0f64; if want_a { a_len } else { 0 }];
            let mut db = vec![0.0f64; if want_b { b_len } else { 0 }];
            for batch in 0..map.out_count {
                let ab = map.a_offsets[batch] * m * k;
                let bb = map.b_offsets[batch] * k * n;
                let ob = batch * m * n;
                for i in 0..m {
                    for j in 0..n {
                        let g = grad_out[ob + i * n + j] as f64;
                        if g == 0.0 {
                            continue;
                        }
                        if want_a {
                            for kk in 0..k {
                                da[ab + i * k + kk] += g * bd[bb + kk * n + j] as f64;
                            }
                        }
                        if want_b {
                            for kk in 0..k {
                                db[bb + kk * n + j] += g * ad[ab + i * k + kk] as f64;
                            }
                        }
                    }
                }
            }
            drop(ad);
            drop(bd);
            if want_a {
                accumulate_f64(&inputs[0], &da);
            }
            if want_b {
                accumulate_f64(&inputs[1], &db);
            }
        }),
    ))
}

/// `matmul(x, w) + bias` over the last axis.
pub fn linear(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let y = matmul(x, w)?;
    match bias {
        Some(b) => add_bias(&y, b),
        None => Ok(y),
    }
}

// ---------------------------------------------------------------------------
// Softmax and pointwise nonlinearities
// ---------------------------------------------------------------------------

pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(TensorError::Dimension {
            op: "softmax",
            msg: format!("axis {axis} out of range for shape {:?}", x.shape()),
        });
    }
    let shape = x.shape().to_vec();
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();

    let xd = x.data();
    let mut out = vec![0.0f32; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut max = f32::NEG_INFINITY;
            for l in 0..axis_len {
                max = max.max(xd[base + l * inner]);
            }
            let mut denom = 0.0f64;
            for l in 0..axis_len {
                denom += ((xd[base + l * inner] - max) as f64).exp();
            }
            for l in 0..axis_len {
                out[base + l * inner] =
                    (((xd[base + l * inner] - max) as f64).exp() / denom) as f32;
            }
        }
    }
    drop(xd);

    Ok(Tensor::from_op(
        out,
        shape,
        vec![x.clone()],
        Box::new(move |grad_out, out_data, inputs| {
            if !inputs[0].requires_grad() {
                return;
            }
            let mut dx = vec![0.0f64; grad_out.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * axis_len * inner + i;
                    let mut dot = 0.0f64;
                    for l in 0..axis_len {
                        let idx = base + l * inner;
                        dot += grad_out[idx] as f64 * out_data[idx] as f64;
                    }
                    for l in 0..axis_len {
                        let idx = base + l * inner;
                        dx[idx] = out_data[idx] as f64 * (grad_out[idx] as f64 - dot);
                    }
                }
            }
            accumulate_f64(&inputs[0], &dx);
        }),
    ))
}

/// Exact Gaussian-CDF GELU: `x * Phi(x)`.
pub fn gelu(x: &Tensor) -> Tensor {
    const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
    let data: Vec<f32> = x
        .data()
        .iter()
        .map(|&v| {
            let v = v as f64;
            (v * 0.5 * (1.0 + libm::erf(v * INV_SQRT_2))) as f32
        })
        .collect();
    Tensor::from_op(
        data,
        x.shape().to_vec(),
        vec![x.clone()],
        Box::new(|grad_out, _out, inputs| {
            if !inputs[0].requires_grad() {
                return;
            }
            const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
            let xd = inputs[0].data();
            let dx: Vec<f32> = grad_out
                .iter()
                .zip(xd.iter())
                .map(|(&g, &v)| {
                    let v = v as f64;
                    let cdf = 0.5 * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2));
                    let pdf = INV_SQRT_2PI * (-0.5 * v * v).exp();
                    (g as f64 * (cdf + v * pdf)) as f32
                })
                .collect();
            drop(xd);
            inputs[0].accumulate_grad(&dx);
        }),
    )
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let data: Vec<f32> = x
        .data()
        .iter()
        .map(|&v| (1.0 / (1.0 + (-(v as f64)).exp())) as f32)
        .collect();
    Tensor::from_op(
        data,
        x.shape().to_vec(),
        vec![x.clone()],
        Box::new(|grad_out, out_data, inputs| {
            if !inputs[0].requires_grad() {
                return;
            }
            let dx: Vec<f32> = grad_out
                .iter()
                .zip(out_data.iter())
                .map(|(&g, &y)| {
                    let y = y as f64;
                    (g as f64 * y * (1.0 - y)) as f32
                })
                .collect();
            inputs[0].accumulate_grad(&dx);
        }),
    )
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis
// ---------------------------------------------------------------------------

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let c = *x.shape().last().ok_or(TensorError::Dimension {
        op: "layer_norm",
        msg: "rank-0 input".into(),
    })?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            lhs: gamma.shape().to_vec(),
            rhs: vec![c],
        });
    }
    let rows = x.len() / c;
    let xd = x.data();
    let gd = gamma.to_vec();
    let bd = beta.to_vec();
    let mut out = vec![0.0f32; xd.len()];
    let mut inv_std = vec![0.0f64; rows];
    let mut means = vec![0.0f64; rows];
    for r in 0..rows {
        let row = &xd[r * c..(r + 1) * c];
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / c as f64;
        let var = row
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / c as f64;
        let istd = 1.0 / (var + eps as f64).sqrt();
        means[r] = mean;
        inv_std[r] = istd;
        for i in 0..c {
            let xhat = (row[i] as f64 - mean) * istd;
            out[r * c + i] = (xhat * gd[i] as f64 + bd[i] as f64) as f32;
        }
    }
    drop(xd);

    Ok(Tensor::from_op(
        out,
        x.shape().to_vec(),
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |grad_out, _out, inputs| {
            let xd = inputs[0].data();
            let gd = inputs[1].to_vec();
            let want_x = inputs[0].requires_grad();
            let want_g = inputs[1].requires_grad();
            let want_b = inputs[2].requires_grad();
            let mut dx = vec![0.0f64; if want_x { xd.len() } else { 0 }];
            let mut dg = vec![0.0f64; if want_g { c } else { 0 }];
            let mut db = vec![0.0f64; if want_b { c } else { 0 }];
            for r in 0..rows {
                let row = &xd[r * c..(r + 1) * c];
                let gout = &grad_out[r * c..(r + 1) * c];
                let (mean, istd) = (means[r], inv_std[r]);
                let mut sum_dxhat = 0.0f64;
                let mut sum_dxhat_xhat = 0.0f64;
                for i in 0..c {
                    let xhat = (row[i] as f64 - mean) * istd;
                    let dxhat = gout[i] as f64 * gd[i] as f64;
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    if want_g {
                        dg[i] += gout[i] as f64 * xhat;
                    }
                    if want_b {
                        db[i] += gout[i] as f64;
                    }
                }
                if want_x {
                    for i in 0..c {
                        let xhat = (row[i] as f64 - mean) * istd;
                        let dxhat = gout[i] as f64 * gd[i] as f64;
                        dx[r * c + i] = istd
                            * (dxhat - sum_dxhat / c as f64 - xhat * sum_dxhat_xhat / c as f64);
                    }
                }
            }
            drop(xd);
            if want_x {
                accumulate_f64(&inputs[0], &dx);
            }
            if want_g {
                accumulate_f64(&inputs[1], &dg);
            }
            if want_b {
                accumulate_f64(&inputs[2], &db);
            }
        }),
    ))
}

// ---------------------------------------------------------------------------
// 2-D convolution (cross-correlation, zero padding, optional groups)
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor> {
    let xs = x.shape().to_vec();
    let ws = weight.shape().to_vec();
    if xs.len() != 3 || ws.len() != 4 {
        return Err(TensorError::Dimension {
            op: "conv2d",
            msg: format!("expected x [C,H,W] and weight [O,I,kh,kw], got {xs:?} / {ws:?}"),
        });
    }
    let (cin, h, w) = (xs[0], xs[1], xs[2]);
    let (cout, cin_g, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if groups == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
        return Err(TensorError::Dimension {
            op: "conv2d",
            msg: format!(
                "groups {groups} incompatible with C_in {cin}, C_out {cout}, weight {ws:?}"
            ),
        });
    }
    if stride == 0 {
        return Err(TensorError::Dimension {
            op: "conv2d",
            msg: "stride must be positive".into(),
        });
    }
    let oh = (h + 2 * padding).checked_sub(kh).map(|v| v / stride + 1);
    let ow = (w + 2 * padding).checked_sub(kw).map(|v| v / stride + 1);
    let (oh, ow) = match (oh, ow) {
        (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => (oh, ow),
        _ => {
            return Err(TensorError::Dimension {
                op: "conv2d",
                msg: format!(
                    "kernel {kh}x{kw} stride {stride} padding {padding} yields empty output for {h}x{w}"
                ),
            })
        }
    };
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                lhs: b.shape().to_vec(),
                rhs: vec![cout],
            });
        }
    }

    let xd = x.data();
    let wd = weight.data();
    let bd = bias.map(|b| b.to_vec());
    let cpg_out = cout / groups;
    let mut out = vec![0.0f32; cout * oh * ow];
    for oc in 0..cout {
        let g = oc / cpg_out;
        let base_b = bd.as_ref().map_or(0.0, |b| b[oc] as f64);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = base_b;
                for icg in 0..cin_g {
                    let ic = g * cin_g + icg;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xv = xd[ic * h * w + iy as usize * w + ix as usize] as f64;
                            let wv = wd[((oc * cin_g + icg) * kh + ky) * kw + kx] as f64;
                            acc += xv * wv;
                        }
                    }
                }
                out[oc * oh * ow + oy * ow + ox] = acc as f32;
            }
        }
    }
    drop(xd);
    drop(wd);

    let mut inputs = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        inputs.push(b.clone());
    }
    let x_len = x.len();
    let w_len = weight.len();
    Ok(Tensor::from_op(
        out,
        vec![cout, oh, ow],
        inputs,
        Box::new(move |grad_out, _out, inputs| {
            let xd = inputs[0].data();
            let wd = inputs[1].data();
            let want_x = inputs[0].requires_grad();
            let want_w = inputs[1].requires_grad();
            let want_b = inputs.len() == 3 && inputs[2].requires_grad();
            let mut dx = vec![0.0f64; if want_x { x_len } else { 0 }];
            let mut dw = vec![0.0f64; if want_w { w_len } else { 0 }];
            let mut db = vec![0.0f64; if want_b { cout } else { 0 }];
            for oc in 0..cout {
                let g = oc / cpg_out;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let go = grad_out[oc * oh * ow + oy * ow + ox] as f64;
                        if go == 0.0 {
                            continue;
                        }
                        if want_b {
                            db[oc] += go;
                        }
                        for icg in 0..cin_g {
                            let ic = g * cin_g + icg;
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = ic * h * w + iy as usize * w + ix as usize;
                                    let wi = ((oc * cin_g + icg) * kh + ky) * kw + kx;
                                    if want_x {
                                        dx[xi] += go * wd[wi] as f64;
                                    }
                                    if want_w {
                                        dw[wi] += go * xd[xi] as f64;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            drop(xd);
            drop(wd);
            if want_x {
                accumulate_f64(&inputs[0], &dx);
            }
            if want_w {
                accumulate_f64(&inputs[1], &dw);
            }
            if want_b {
                accumulate_f64(&inputs[2], &db);
            }
        }),
    ))
}

// ---------------------------------------------------------------------------
// Bilinear resize (align_corners = false)
// ---------------------------------------------------------------------------

fn bilinear_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    // Per output index: (left sample, right sample, right weight).
    (0..out_len)
        .map(|d| {
            let src = (d as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
            let floor = src.floor();
            let t = src - floor;
            let i0 = (floor as isize).clamp(0, in_len as isize - 1) as usize;
            let i1 = (floor as isize + 1).clamp(0, in_len as isize - 1) as usize;
            (i0, i1, t)
        })
        .collect()
}

pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let xs = x.shape().to_vec();
    if xs.len() != 3 {
        return Err(TensorError::Dimension {
            op: "resize_bilinear",
            msg: format!("expected [C,H,W], got {xs:?}"),
        });
    }
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::Dimension {
            op: "resize_bilinear",
            msg: "output extents must be >= 1".into(),
        });
    }
    let (c, h, w) = (xs[0], xs[1], xs[2]);
    let ys = bilinear_taps(out_h, h);
    let xs_taps = bilinear_taps(out_w, w);

    let xd = x.data();
    let mut out = vec![0.0f32; c * out_h * out_w];
    for ch in 0..c {
        let plane = &xd[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, tx)) in xs_taps.iter().enumerate() {
                let v00 = plane[y0 * w + x0] as f64;
                let v01 = plane[y0 * w + x1] as f64;
                let v10 = plane[y1 * w + x0] as f64;
                let v11 = plane[y1 * w + x1] as f64;
                let top = v00 * (1.0 - tx) + v01 * tx;
                let bot = v10 * (1.0 - tx) + v11 * tx;
                out[ch * out_h * out_w + oy * out_w + ox] = (top * (1.0 - ty) + bot * ty) as f32;
            }
        }
    }
    drop(xd);

    Ok(Tensor::from_op(
        out,
        vec![c, out_h, out_w],
        vec![x.clone()],
        Box::new(move |grad_out, _out, inputs| {
            if !inputs[0].requires_grad() {
                return;
            }
            let mut dx = vec![0.0f64; c * h * w];
            for ch in 0..c {
                for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
                    for (ox, &(x0, x1, tx)) in xs_taps.iter().enumerate() {
                        let g = grad_out[ch * out_h * out_w + oy * out_w + ox] as f64;
                        if g == 0.0 {
                            continue;
                        }
                        let base = ch * h * w;
                        dx[base + y0 * w + x0] += g * (1.0 - ty) * (1.0 - tx);
                        dx[base + y0 * w + x1] += g * (1.0 - ty) * tx;
                        dx[base + y1 * w + x0] += g * ty * (1.0 - tx);
                        dx[base + y1 * w + x1] += g * ty * tx;
                    }
                }
            }
            accumulate_f64(&inputs[0], &dx);
        }),
    ))
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if element_count(shape) != x.len() {
        return Err(TensorError::Dimension {
            op: "reshape",
            msg: format!("cannot view {:?} as {shape:?}", x.shape()),
        });
    }
    Ok(Tensor::from_op(
        x.to_vec(),
        shape.to_vec(),
        vec![x.clone()],
        Box::new(|grad_out, _out, inputs| {
            if inputs[0].requires_grad() {
                inputs[0].accumulate_grad(grad_out);
            }
        }),
    ))
}

pub fn permute(x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank
        || axes
            .iter()
            .any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
    {
        return Err(TensorError::Dimension {
            op: "permute",
            msg: format!("axes {axes:?} invalid for rank {rank}"),
        });
    }
    let in_shape = x.shape().to_vec();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let gather: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();

    let forward_index = {
        let out_shape = out_shape.clone();
        let gather = gather.clone();
        move |flat: usize| -> usize {
            let mut rem = flat;
            let mut src = 0usize;
            for i in 0..out_shape.len() {
                let stride: usize = out_shape[i + 1..].iter().product();
                src += (rem / stride) * gather[i];
                rem %= stride;
            }
            src
        }
    };

    let xd = x.data();
    let data: Vec<f32> = (0..xd.len()).map(|i| xd[forward_index(i)]).collect();
    drop(xd);

    Ok(Tensor::from_op(
        data,
        out_shape,
        vec![x.clone()],
        Box::new(move |grad_out, _out, inputs| {
            if !inputs[0].requires_grad() {
                return;
            }
            let mut dx = vec![0.0f32; grad_out.len()];
            for (i, g) in grad_out.iter().enumerate() {
                dx[forward_index(i)] += g;
            }
            inputs[0].accumulate_grad(&dx);
        }),
    ))
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts.first().ok_or(TensorError::Dimension {
        op: "concat",
        msg: "empty input list".into(),
    })?;
    let rank = first.rank();
    if axis >= rank {
        return Err(TensorError::Dimension {
            op: "concat",
            msg: format!("axis {axis} out of range for rank {rank}"),
        });
    }
    let mut out_shape = first.shape().to_vec();
    for p in &parts[1..] {
        if p.rank() != rank
            || p.shape()
                .iter()
                .enumerate()
                .any(|(i, &e)| i != axis && e != out_shape[i])
        {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        out_shape[axis] += p.shape()[axis];
    }

    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let spans: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
    let total_span: usize = spans.iter().sum();

    let mut data = vec![0.0f32; element_count(&out_shape)];
    for o in 0..outer {
        let mut cursor = 0usize;
        for (p, &span) in parts.iter().zip(&spans) {
            let pd = p.data();
            data[o * total_span + cursor..o * total_span + cursor + span]
                .copy_from_slice(&pd[o * span..(o + 1) * span]);
            cursor += span;
        }
    }

    let inputs: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
    Ok(Tensor::from_op(
        data,
        out_shape,
        inputs,
        Box::new(move |grad_out, _out, inputs| {
            let mut cursor = 0usize;
            for (input, &span) in inputs.iter().zip(&spans) {
                if input.requires_grad() {
                    let mut dx = vec![0.0f32; input.len()];
                    for o in 0..outer {
                        dx[o * span..(o + 1) * span].copy_from_slice(
                            &grad_out[o * total_span + cursor..o * total_span + cursor + span],
                        );
                    }
                    input.accumulate_grad(&dx);
                }
                cursor += span;
            }
        }),
    ))
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

pub fn sum_all(x: &Tensor) -> Result<Tensor> {
    let total: f64 = x.data().iter().map(|&v| v as f64).sum();
    Ok(Tensor::from_op(
        vec![total as f32],
        vec![1],
        vec![x.clone()],
        Box::new(|grad_out, _out, inputs| {
            if inputs[0].requires_grad() {
                let dx = vec![grad_out[0]; inputs[0].len()];
                inputs[0].accumulate_grad(&dx);
            }
        }),
    ))
}

pub fn mean_all(x: &Tensor) -> Result<Tensor> {
    let n = x.len();
    let total: f64 = x.data().iter().map(|&v| v as f64).sum();
    Ok(Tensor::from_op(
        vec![(total / n as f64) as f32],
        vec![1],
        vec![x.clone()],
        Box::new(move |grad_out, _out, inputs| {
            if inputs[0].requires_grad() {
                let dx = vec![grad_out[0] / n as f32; n];
                inputs[0].accumulate_grad(&dx);
            }
        }),
    ))
}

/// Mean negative log-likelihood of per-element class probabilities.
///
/// `probs` has the class axis first (`[C, ...]`); `labels[i]` picks the class
/// of flattened element `i`. Probabilities are clamped to
/// `[clamp, 1 - clamp]` before the log, so the loss stays finite and the
/// gradient vanishes inside the clamped region.
pub fn nll_mean(probs: &Tensor, labels: &[usize], clamp: f32) -> Result<Tensor> {
    let shape = probs.shape();
    if shape.is_empty() {
        return Err(TensorError::Dimension {
            op: "nll_mean",
            msg: "rank-0 probabilities".into(),
        });
    }
    let classes = shape[0];
    let count = probs.len() / classes;
    if labels.len() != count {
        return Err(TensorError::ShapeMismatch {
            op: "nll_mean",
            lhs: shape.to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(TensorError::Contract(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let lo = clamp as f64;
    let hi = 1.0 - lo;
    let pd = probs.data();
    let mut total = 0.0f64;
    for (i, &l) in labels.iter().enumerate() {
        let p = (pd[l * count + i] as f64).clamp(lo, hi);
        total -= p.ln();
    }
    drop(pd);
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        vec![(total / count as f64) as f32],
        vec![1],
        vec![probs.clone()],
        Box::new(move |grad_out, _out, inputs| {
            if !inputs[0].requires_grad() {
                return;
            }
            let pd = inputs[0].data();
            let mut dp = vec![0.0f64; pd.len()];
            let g = grad_out[0] as f64 / count as f64;
            for (i, &l) in labels.iter().enumerate() {
                let p = pd[l * count + i] as f64;
                if p > lo && p < hi {
                    dp[l * count + i] = -g / p;
                }
            }
            drop(pd);
            accumulate_f64(&inputs[0], &dp);
        }),
    ))
}
