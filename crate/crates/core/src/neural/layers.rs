//! Layer kernels. Backward functions accumulate parameter gradients into the
//! caller's buffers and return the gradient with respect to the input.

use super::{shape_err, NnError, Tensor};

fn dims3(t: &Tensor, ctx: &str) -> Result<(usize, usize, usize), NnError> {
    match *t.shape() {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(shape_err(ctx, &[0, 0, 0], t.shape())),
    }
}

fn dims4(t: &Tensor, ctx: &str) -> Result<(usize, usize, usize, usize), NnError> {
    match *t.shape() {
        [a, b, c, d] => Ok((a, b, c, d)),
        _ => Err(shape_err(ctx, &[0, 0, 0, 0], t.shape())),
    }
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_geom(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<ConvGeom, NnError> {
    let (c, h, w) = dims3(input, "conv2d input")?;
    let (f, kc, kh, kw) = dims4(kernels, "conv2d kernels")?;
    if kc != c || kh > h || kw > w || kh == 0 || kw == 0 {
        return Err(shape_err("conv2d kernels", &[f, c, kh.min(h), kw.min(w)], kernels.shape()));
    }
    if bias.shape() != [f] {
        return Err(shape_err("conv2d bias", &[f], bias.shape()));
    }
    Ok(ConvGeom {
        c,
        h,
        w,
        f,
        kh,
        kw,
        oh: h - kh + 1,
        ow: w - kw + 1,
    })
}

/// Valid (no padding), stride-1 cross-correlation:
/// `out[f,i,j] = bias[f] + Σ_{c,u,v} input[c,i+u,j+v] · kernels[f,c,u,v]`.
pub fn conv2d_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let g = conv_geom(input, kernels, bias)?;
    let x = input.data();
    let k = kernels.data();
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.f * plane];
    for fi in 0..g.f {
        let o = &mut out[fi * plane..(fi + 1) * plane];
        o.fill(bias.data()[fi]);
        for ci in 0..g.c {
            for u in 0..g.kh {
                for v in 0..g.kw {
                    let kv = k[((fi * g.c + ci) * g.kh + u) * g.kw + v];
                    for i in 0..g.oh {
                        let src = (ci * g.h + i + u) * g.w + v;
                        let row_in = &x[src..src + g.ow];
                        let row_out = &mut o[i * g.ow..(i + 1) * g.ow];
                        for (a, b) in row_out.iter_mut().zip(row_in) {
                            *a += kv * b;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![g.f, g.oh, g.ow], out))
}

pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    upstream: &Tensor,
    grad_kernels: &mut [f64],
    grad_bias: &mut [f64],
) -> Result<Tensor, NnError> {
    let g = conv_geom(input, kernels, bias)?;
    if upstream.shape() != [g.f, g.oh, g.ow] {
        return Err(shape_err("conv2d upstream", &[g.f, g.oh, g.ow], upstream.shape()));
    }
    let x = input.data();
    let k = kernels.data();
    let up = upstream.data();
    let plane = g.oh * g.ow;
    let mut dx = vec![0.0; x.len()];
    for fi in 0..g.f {
        let gf = &up[fi * plane..(fi + 1) * plane];
        grad_bias[fi] += gf.iter().sum::<f64>();
        for ci in 0..g.c {
            for u in 0..g.kh {
                for v in 0..g.kw {
                    let kidx = ((fi * g.c + ci) * g.kh + u) * g.kw + v;
                    let kv = k[kidx];
                    let mut acc = 0.0;
                    for i in 0..g.oh {
                        let src = (ci * g.h + i + u) * g.w + v;
                        let row_g = &gf[i * g.ow..(i + 1) * g.ow];
                        let row_in = &x[src..src + g.ow];
                        acc += row_g.iter().zip(row_in).map(|(a, b)| a * b).sum::<f64>();
                        let row_dx = &mut dx[src..src + g.ow];
                        for (d, gv) in row_dx.iter_mut().zip(row_g) {
                            *d += kv * gv;
                        }
                    }
                    grad_kernels[kidx] += acc;
                }
            }
        }
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), dx))
}

fn dense_check(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize), NnError> {
    let (m, n) = match *weights.shape() {
        [m, n] => (m, n),
        _ => return Err(shape_err("dense weights", &[0, input.len()], weights.shape())),
    };
    if input.shape() != [n] {
        return Err(shape_err("dense input", &[n], input.shape()));
    }
    if bias.shape() != [m] {
        return Err(shape_err("dense bias", &[m], bias.shape()));
    }
    Ok((m, n))
}

/// `out = W x + b`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let (m, n) = dense_check(input, weights, bias)?;
    let x = input.data();
    let w = weights.data();
    let out = (0..m)
        .map(|i| {
            bias.data()[i]
                + w[i * n..(i + 1) * n]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect();
    Ok(Tensor::from_parts(vec![m], out))
}

pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    upstream: &Tensor,
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
) -> Result<Tensor, NnError> {
    let (m, n) = dense_check(input, weights, bias)?;
    if upstream.shape() != [m] {
        return Err(shape_err("dense upstream", &[m], upstream.shape()));
    }
    let x = input.data();
    let w = weights.data();
    let mut dx = vec![0.0; n];
    for (i, &g) in upstream.data().iter().enumerate() {
        grad_bias[i] += g;
        if g == 0.0 {
            continue;
        }
        let row = i * n..(i + 1) * n;
        for (d, xv) in grad_weights[row.clone()].iter_mut().zip(x) {
            *d += g * xv;
        }
        for (d, wv) in dx.iter_mut().zip(&w[row]) {
            *d += g * wv;
        }
    }
    Ok(Tensor::from_parts(vec![n], dx))
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor::from_parts(
        input.shape().to_vec(),
        input.data().iter().map(|&v| v.max(0.0)).collect(),
    )
}

pub(crate) fn relu_backward(input: &Tensor, upstream: &Tensor) -> Tensor {
    Tensor::from_parts(
        input.shape().to_vec(),
        input
            .data()
            .iter()
            .zip(upstream.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
    )
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    Tensor::from_parts(
        input.shape().to_vec(),
        input.data().iter().map(|&v| sigmoid_scalar(v)).collect(),
    )
}

pub(crate) fn sigmoid_backward(input: &Tensor, upstream: &Tensor) -> Tensor {
    Tensor::from_parts(
        input.shape().to_vec(),
        input
            .data()
            .iter()
            .zip(upstream.data())
            .map(|(&x, &g)| {
                let s = sigmoid_scalar(x);
                g * s * (1.0 - s)
            })
            .collect(),
    )
}

/// Softmax over all elements, shifted by the maximum for stability.
pub fn softmax(input: &Tensor) -> Tensor {
    let x = input.data();
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::from_parts(input.shape().to_vec(), exps.into_iter().map(|e| e / total).collect())
}

/// Vector-Jacobian product of softmax: `s ⊙ (g − ⟨g, s⟩)`.
pub fn softmax_backward(input: &Tensor, upstream: &Tensor) -> Tensor {
    let s = softmax(input);
    let dot: f64 = s.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum();
    Tensor::from_parts(
        input.shape().to_vec(),
        s.data()
            .iter()
            .zip(upstream.data())
            .map(|(sv, g)| sv * (g - dot))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_sum_of_ones() {
        let x = Tensor::new(vec![1, 3, 3], vec![1.0; 9]).unwrap();
        let k = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let out = conv2d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn conv_identity_kernel_crops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 5, 6], &mut rng);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[0] = 1.0;
        let out = conv2d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.shape(), &[1, 3, 4]);
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(out.data()[i * 4 + j], x.data()[i * 6 + j]);
            }
        }
    }

    #[test]
    fn conv_matches_quadruple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[1, 6, 6], &mut rng);
        let k = random(&[2, 1, 3, 3], &mut rng);
        let b = random(&[2], &mut rng);
        let out = conv2d_forward(&x, &k, &b).unwrap();
        for f in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    let mut s = b.data()[f];
                    for u in 0..3 {
                        for v in 0..3 {
                            s += x.data()[(i + u) * 6 + j + v] * k.data()[(f * 3 + u) * 3 + v];
                        }
                    }
                    assert!((out.data()[(f * 4 + i) * 4 + j] - s).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(conv2d_forward(&x, &k, &Tensor::zeros(&[1])).is_err());
        let k = Tensor::zeros(&[1, 2, 5, 3]);
        assert!(conv2d_forward(&x, &k, &Tensor::zeros(&[1])).is_err());
        let k = Tensor::zeros(&[1, 2, 3, 3]);
        assert!(conv2d_forward(&x, &k, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn dense_examples() {
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        let x = Tensor::vector(vec![0.5, -2.0, 3.0]);
        assert_eq!(dense_forward(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);

        let w = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let out = dense_forward(&Tensor::vector(vec![2.0, 3.0]), &w, &Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(out.data(), &[6.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random(&[4, 3], &mut rng);
        let b = random(&[4], &mut rng);
        let x = random(&[3], &mut rng);
        let out = dense_forward(&x, &w, &b).unwrap();
        for i in 0..4 {
            let mut s = b.data()[i];
            for j in 0..3 {
                s += w.data()[i * 3 + j] * x.data()[j];
            }
            assert!((out.data()[i] - s).abs() < 1e-12);
        }
        assert!(dense_forward(&Tensor::zeros(&[2]), &w, &b).is_err());
    }

    #[test]
    fn dense_squared_error_gradient_closed_form() {
        // L = ½‖Wx + b − y‖² ⇒ ∂L/∂W = (Wx + b − y) xᵀ
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random(&[3, 4], &mut rng);
        let b = random(&[3], &mut rng);
        let x = random(&[4], &mut rng);
        let y = random(&[3], &mut rng);
        let out = dense_forward(&x, &w, &b).unwrap();
        let resid: Vec<f64> = out.data().iter().zip(y.data()).map(|(o, t)| o - t).collect();
        let mut gw = vec![0.0; 12];
        let mut gb = vec![0.0; 3];
        dense_backward(&x, &w, &b, &Tensor::vector(resid.clone()), &mut gw, &mut gb).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert!((gw[i * 4 + j] - resid[i] * x.data()[j]).abs() < 1e-14);
            }
            assert!((gb[i] - resid[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = random(&[7], &mut rng);
            let s = softmax(&x);
            assert!((s.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(s.data().iter().all(|&p| p > 0.0 && p < 1.0));
        }
        let big = Tensor::vector(vec![1000.0, 0.0]);
        assert!(softmax(&big).data().iter().all(|v| v.is_finite()));
    }
}
