//! Neural-network ops: normalization, attention and the convolutions used by
//! the compact EEG network.

use super::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::{dot, gemm, gemm_nt, gemm_tn, Tensor};

/// Per-feature statistics measured on a training batch.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance estimate, suitable for running averages.
    pub var: Vec<T>,
}

/// Left padding for a "same" convolution of odd or even length.
#[inline]
pub fn same_pad_left(k: usize) -> usize {
    (k - 1) / 2
}

impl<T: Scalar> Graph<T> {
    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let d = *self.shape(x).last().expect("layer_norm on 0-d tensor");
        assert_eq!(self.shape(gamma), &[d]);
        assert_eq!(self.shape(beta), &[d]);
        let xv = self.value(x);
        let rows = xv.len() / d;
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let dn = T::from_usize_lossy(d);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mu = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&a| (a - mu) * (a - mu)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mu) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        let v = Tensor::from_vec(xv.shape(), out).unwrap();
        self.push(
            v,
            &[x, gamma, beta],
            Box::new(move |g, p, _| {
                let gamma = p[1].data();
                let mut dx = vec![T::zero(); g.len()];
                let mut dg = vec![T::zero(); d];
                let mut db = vec![T::zero(); d];
                for r in 0..rows {
                    let grow = &g.data()[r * d..(r + 1) * d];
                    let hrow = &xhat[r * d..(r + 1) * d];
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..d {
                        let dh = grow[j] * gamma[j];
                        m1 += dh;
                        m2 += dh * hrow[j];
                        dg[j] += grow[j] * hrow[j];
                        db[j] += grow[j];
                    }
                    m1 /= dn;
                    m2 /= dn;
                    for j in 0..d {
                        let dh = grow[j] * gamma[j];
                        dx[r * d + j] = rstd[r] * (dh - m1 - hrow[j] * m2);
                    }
                }
                vec![
                    Some(Tensor::from_vec(g.shape(), dx).unwrap()),
                    Some(Tensor::from_vec(&[d], dg).unwrap()),
                    Some(Tensor::from_vec(&[d], db).unwrap()),
                ]
            }),
        )
    }

    /// Multi-head scaled dot-product self-attention core.
    ///
    /// `q`, `k`, `v` are `[n, t, d]` with `d` divisible by `heads`; returns
    /// `[n, t, d]` with the heads concatenated along the last axis.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let shape = self.shape(q).to_vec();
        assert_eq!(shape.len(), 3, "attention expects [n, t, d]");
        assert_eq!(self.shape(k), &shape[..]);
        assert_eq!(self.shape(v), &shape[..]);
        let (n, t, d) = (shape[0], shape[1], shape[2]);
        assert!(heads >= 1 && d % heads == 0, "d={d} not divisible by heads={heads}");
        let dh = d / heads;
        let inv_sqrt = T::one() / T::from_usize_lossy(dh).sqrt();

        let gather = move |src: &[T], b: usize, h: usize| -> Vec<T> {
            let mut out = vec![T::zero(); t * dh];
            for i in 0..t {
                let off = (b * t + i) * d + h * dh;
                out[i * dh..(i + 1) * dh].copy_from_slice(&src[off..off + dh]);
            }
            out
        };

        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); n * heads * t * t];
        let mut out = vec![T::zero(); n * t * d];
        for b in 0..n {
            for h in 0..heads {
                let qh = gather(qv, b, h);
                let kh = gather(kv, b, h);
                let vh = gather(vv, b, h);
                let p = &mut probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
                gemm_nt(&qh, &kh, p, t, dh, t);
                for row in p.chunks_mut(t) {
                    let mut m = T::neg_infinity();
                    for s in row.iter_mut() {
                        *s *= inv_sqrt;
                        m = m.max(*s);
                    }
                    let mut z = T::zero();
                    for s in row.iter_mut() {
                        *s = (*s - m).exp();
                        z += *s;
                    }
                    for s in row.iter_mut() {
                        *s /= z;
                    }
                }
                let mut oh = vec![T::zero(); t * dh];
                gemm(p, &vh, &mut oh, t, t, dh);
                for i in 0..t {
                    let off = (b * t + i) * d + h * dh;
                    out[off..off + dh].copy_from_slice(&oh[i * dh..(i + 1) * dh]);
                }
            }
        }
        let value = Tensor::from_vec(&shape, out).unwrap();
        self.push(
            value,
            &[q, k, v],
            Box::new(move |g, p, _| {
                let (qv, kv, vv, gv) = (p[0].data(), p[1].data(), p[2].data(), g.data());
                let mut dq = vec![T::zero(); n * t * d];
                let mut dk = vec![T::zero(); n * t * d];
                let mut dv = vec![T::zero(); n * t * d];
                for b in 0..n {
                    for h in 0..heads {
                        let qh = gather(qv, b, h);
                        let kh = gather(kv, b, h);
                        let vh = gather(vv, b, h);
                        let goh = gather(gv, b, h);
                        let pm = &probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
                        // dV = Pᵀ dO
                        let mut dvh = vec![T::zero(); t * dh];
                        gemm_tn(pm, &goh, &mut dvh, t, t, dh);
                        // dP = dO Vᵀ
                        let mut dp = vec![T::zero(); t * t];
                        gemm_nt(&goh, &vh, &mut dp, t, dh, t);
                        // dS = P ⊙ (dP − rowsum(dP ⊙ P)), folded with 1/√dh
                        for i in 0..t {
                            let prow = &pm[i * t..(i + 1) * t];
                            let drow = &mut dp[i * t..(i + 1) * t];
                            let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                            for (dd, &pp) in drow.iter_mut().zip(prow) {
                                *dd = pp * (*dd - dot) * inv_sqrt;
                            }
                        }
                        let mut dqh = vec![T::zero(); t * dh];
                        gemm(&dp, &kh, &mut dqh, t, t, dh);
                        let mut dkh = vec![T::zero(); t * dh];
                        gemm_tn(&dp, &qh, &mut dkh, t, t, dh);
                        for i in 0..t {
                            let off = (b * t + i) * d + h * dh;
                            dq[off..off + dh].copy_from_slice(&dqh[i * dh..(i + 1) * dh]);
                            dk[off..off + dh].copy_from_slice(&dkh[i * dh..(i + 1) * dh]);
                            dv[off..off + dh].copy_from_slice(&dvh[i * dh..(i + 1) * dh]);
                        }
                    }
                }
                vec![
                    Some(Tensor::from_vec(&shape, dq).unwrap()),
                    Some(Tensor::from_vec(&shape, dk).unwrap()),
                    Some(Tensor::from_vec(&shape, dv).unwrap()),
                ]
            }),
        )
    }

    /// Temporal convolution shared across electrodes: `x` is `[n, c, t]`,
    /// `w` is `[f, k]`, output `[n, f, c, t]` ("same" zero padding, no bias).
    pub fn temporal_conv(&mut self, x: Var, w: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3, "temporal_conv expects [n, c, t]");
        let (n, c, t) = (xs[0], xs[1], xs[2]);
        let (f, k) = (self.shape(w)[0], self.shape(w)[1]);
        let left = same_pad_left(k);
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![T::zero(); n * f * c * t];
        for b in 0..n {
            for ch in 0..c {
                let xrow = &xv[(b * c + ch) * t..(b * c + ch + 1) * t];
                for fi in 0..f {
                    let orow = &mut out[((b * f + fi) * c + ch) * t..((b * f + fi) * c + ch + 1) * t];
                    for kk in 0..k {
                        let wk = wv[fi * k + kk];
                        let (lo, hi, shift) = conv_range(t, kk, left);
                        for (o, &xx) in orow[lo..hi].iter_mut().zip(&xrow[(lo as isize + shift) as usize..]) {
                            *o += wk * xx;
                        }
                    }
                }
            }
        }
        let v = Tensor::from_vec(&[n, f, c, t], out).unwrap();
        self.push(
            v,
            &[x, w],
            Box::new(move |g, p, _| {
                let (xv, wv, gv) = (p[0].data(), p[1].data(), g.data());
                let mut dx = vec![T::zero(); n * c * t];
                let mut dw = vec![T::zero(); f * k];
                for b in 0..n {
                    for ch in 0..c {
                        let xrow = &xv[(b * c + ch) * t..(b * c + ch + 1) * t];
                        for fi in 0..f {
                            let grow = &gv[((b * f + fi) * c + ch) * t..((b * f + fi) * c + ch + 1) * t];
                            for kk in 0..k {
                                let wk = wv[fi * k + kk];
                                let (lo, hi, shift) = conv_range(t, kk, left);
                                let start = (lo as isize + shift) as usize;
                                let len = hi - lo;
                                let dxrow = &mut dx[(b * c + ch) * t + start..(b * c + ch) * t + start + len];
                                for (d, &gg) in dxrow.iter_mut().zip(&grow[lo..hi]) {
                                    *d += wk * gg;
                                }
                                dw[fi * k + kk] += dot(&grow[lo..hi], &xrow[start..start + len]);
                            }
                        }
                    }
                }
                vec![
                    Some(Tensor::from_vec(&[n, c, t], dx).unwrap()),
                    Some(Tensor::from_vec(&[f, k], dw).unwrap()),
                ]
            }),
        )
    }

    /// Per-row temporal convolution: `x` is `[n, f, t]`, `w` is `[f, k]`;
    /// row `f` is convolved with kernel `f` ("same" zero padding).
    pub fn depthwise_temporal_conv(&mut self, x: Var, w: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3);
        let (n, f, t) = (xs[0], xs[1], xs[2]);
        assert_eq!(self.shape(w)[0], f);
        let k = self.shape(w)[1];
        let left = same_pad_left(k);
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![T::zero(); n * f * t];
        for b in 0..n {
            for fi in 0..f {
                let base = (b * f + fi) * t;
                let xrow = &xv[base..base + t];
                let orow = &mut out[base..base + t];
                for kk in 0..k {
                    let wk = wv[fi * k + kk];
                    let (lo, hi, shift) = conv_range(t, kk, left);
                    for (o, &xx) in orow[lo..hi].iter_mut().zip(&xrow[(lo as isize + shift) as usize..]) {
                        *o += wk * xx;
                    }
                }
            }
        }
        let v = Tensor::from_vec(&xs, out).unwrap();
        self.push(
            v,
            &[x, w],
            Box::new(move |g, p, _| {
                let (xv, wv, gv) = (p[0].data(), p[1].data(), g.data());
                let mut dx = vec![T::zero(); n * f * t];
                let mut dw = vec![T::zero(); f * k];
                for b in 0..n {
                    for fi in 0..f {
                        let base = (b * f + fi) * t;
                        for kk in 0..k {
                            let wk = wv[fi * k + kk];
                            let (lo, hi, shift) = conv_range(t, kk, left);
                            let start = (lo as isize + shift) as usize;
                            let len = hi - lo;
                            let grow = &gv[base + lo..base + hi];
                            for (d, &gg) in dx[base + start..base + start + len].iter_mut().zip(grow) {
                                *d += wk * gg;
                            }
                            dw[fi * k + kk] += dot(grow, &xv[base + start..base + start + len]);
                        }
                    }
                }
                vec![
                    Some(Tensor::from_vec(&xs, dx).unwrap()),
                    Some(Tensor::from_vec(&[f, k], dw).unwrap()),
                ]
            }),
        )
    }

    /// Depthwise spatial filter spanning all electrodes: `x` is `[n, f1, c, t]`,
    /// `w` is `[f1·depth, c]`; output filter `o` reads input filter `o / depth`.
    /// Output `[n, f1·depth, t]`.
    pub fn depthwise_spatial(&mut self, x: Var, w: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4);
        let (n, f1, c, t) = (xs[0], xs[1], xs[2], xs[3]);
        let (fo, wc) = (self.shape(w)[0], self.shape(w)[1]);
        assert_eq!(wc, c, "spatial filter width vs electrodes");
        assert_eq!(fo % f1, 0);
        let depth = fo / f1;
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![T::zero(); n * fo * t];
        for b in 0..n {
            for o in 0..fo {
                let src = &xv[(b * f1 + o / depth) * c * t..(b * f1 + o / depth + 1) * c * t];
                let orow = &mut out[(b * fo + o) * t..(b * fo + o + 1) * t];
                gemm(&wv[o * c..(o + 1) * c], src, orow, 1, c, t);
            }
        }
        let v = Tensor::from_vec(&[n, fo, t], out).unwrap();
        self.push(
            v,
            &[x, w],
            Box::new(move |g, p, _| {
                let (xv, wv, gv) = (p[0].data(), p[1].data(), g.data());
                let mut dx = vec![T::zero(); n * f1 * c * t];
                let mut dw = vec![T::zero(); fo * c];
                for b in 0..n {
                    for o in 0..fo {
                        let src_off = (b * f1 + o / depth) * c * t;
                        let grow = &gv[(b * fo + o) * t..(b * fo + o + 1) * t];
                        // dx[c, t] += w[o, c] g[t]
                        gemm_tn(&wv[o * c..(o + 1) * c], grow, &mut dx[src_off..src_off + c * t], c, 1, t);
                        // dw[o, c] += Σ_t x[c, t] g[t]
                        gemm_nt(grow, &xv[src_off..src_off + c * t], &mut dw[o * c..(o + 1) * c], 1, t, c);
                    }
                }
                vec![
                    Some(Tensor::from_vec(&xs, dx).unwrap()),
                    Some(Tensor::from_vec(&[fo, c], dw).unwrap()),
                ]
            }),
        )
    }

    /// Mixes rows per sample: `x` `[n, f, t]`, `w` `[f2, f]` → `[n, f2, t]`.
    pub fn pointwise(&mut self, x: Var, w: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3);
        let (n, f, t) = (xs[0], xs[1], xs[2]);
        let f2 = self.shape(w)[0];
        assert_eq!(self.shape(w)[1], f);
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![T::zero(); n * f2 * t];
        for b in 0..n {
            gemm(wv, &xv[b * f * t..(b + 1) * f * t], &mut out[b * f2 * t..(b + 1) * f2 * t], f2, f, t);
        }
        let v = Tensor::from_vec(&[n, f2, t], out).unwrap();
        self.push(
            v,
            &[x, w],
            Box::new(move |g, p, _| {
                let (xv, wv, gv) = (p[0].data(), p[1].data(), g.data());
                let mut dx = vec![T::zero(); n * f * t];
                let mut dw = vec![T::zero(); f2 * f];
                for b in 0..n {
                    let gb = &gv[b * f2 * t..(b + 1) * f2 * t];
                    gemm_tn(wv, gb, &mut dx[b * f * t..(b + 1) * f * t], f, f2, t);
                    gemm_nt(gb, &xv[b * f * t..(b + 1) * f * t], &mut dw, f2, t, f);
                }
                vec![
                    Some(Tensor::from_vec(&xs, dx).unwrap()),
                    Some(Tensor::from_vec(&[f2, f], dw).unwrap()),
                ]
            }),
        )
    }

    /// Non-overlapping average pooling over the last axis; a trailing
    /// remainder shorter than `p` is dropped.
    pub fn avg_pool_last(&mut self, x: Var, p: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let t = *xs.last().unwrap();
        let to = t / p;
        let rows = self.value(x).len() / t;
        let inv = T::one() / T::from_usize_lossy(p);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); rows * to];
        for r in 0..rows {
            for j in 0..to {
                let s: T = xv[r * t + j * p..r * t + (j + 1) * p].iter().copied().sum();
                out[r * to + j] = s * inv;
            }
        }
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = to;
        let v = Tensor::from_vec(&shape, out).unwrap();
        self.push(
            v,
            &[x],
            Box::new(move |g, _, _| {
                let mut dx = vec![T::zero(); rows * t];
                for r in 0..rows {
                    for j in 0..to {
                        let gg = g.data()[r * to + j] * inv;
                        for d in &mut dx[r * t + j * p..r * t + (j + 1) * p] {
                            *d = gg;
                        }
                    }
                }
                vec![Some(Tensor::from_vec(&xs, dx).unwrap())]
            }),
        )
    }

    /// Batch normalization over axis 1 of `[n, f, ...]`.
    ///
    /// On a training tape the batch statistics are used and returned so the
    /// caller can update running averages; otherwise `running` (mean, var)
    /// is applied as a fixed affine map.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[T], &[T]),
        eps: T,
    ) -> (Var, Option<BatchStats<T>>) {
        let xs = self.shape(x).to_vec();
        let (n, f) = (xs[0], xs[1]);
        let l: usize = xs[2..].iter().product();
        let cnt = n * l;
        let xv = self.value(x).data();
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();

        let (mean, var, stats) = if self.training() {
            let cn = T::from_usize_lossy(cnt);
            let mut mean = vec![T::zero(); f];
            let mut var = vec![T::zero(); f];
            for b in 0..n {
                for fi in 0..f {
                    let row = &xv[(b * f + fi) * l..(b * f + fi + 1) * l];
                    mean[fi] += row.iter().copied().sum::<T>();
                }
            }
            for m in &mut mean {
                *m /= cn;
            }
            for b in 0..n {
                for fi in 0..f {
                    let row = &xv[(b * f + fi) * l..(b * f + fi + 1) * l];
                    var[fi] += row.iter().map(|&a| (a - mean[fi]) * (a - mean[fi])).sum::<T>();
                }
            }
            let unbiased: Vec<T> =
                var.iter().map(|&v| if cnt > 1 { v / T::from_usize_lossy(cnt - 1) } else { v }).collect();
            for v in &mut var {
                *v /= cn;
            }
            let stats = BatchStats { mean: mean.clone(), var: unbiased };
            (mean, var, Some(stats))
        } else {
            (running.0.to_vec(), running.1.to_vec(), None)
        };

        let rstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..n {
            for fi in 0..f {
                let off = (b * f + fi) * l;
                for i in 0..l {
                    let h = (xv[off + i] - mean[fi]) * rstd[fi];
                    xhat[off + i] = h;
                    out[off + i] = h * gv[fi] + bv[fi];
                }
            }
        }
        let v = Tensor::from_vec(&xs, out).unwrap();
        let batch_mode = stats.is_some();
        let var_id = self.push(
            v,
            &[x, gamma, beta],
            Box::new(move |g, p, _| {
                let gamma = p[1].data();
                let gvv = g.data();
                let mut dg = vec![T::zero(); f];
                let mut db = vec![T::zero(); f];
                for b in 0..n {
                    for fi in 0..f {
                        let off = (b * f + fi) * l;
                        for i in 0..l {
                            dg[fi] += gvv[off + i] * xhat[off + i];
                            db[fi] += gvv[off + i];
                        }
                    }
                }
                let mut dx = vec![T::zero(); gvv.len()];
                let cn = T::from_usize_lossy(cnt);
                for b in 0..n {
                    for fi in 0..f {
                        let off = (b * f + fi) * l;
                        let scale = gamma[fi] * rstd[fi];
                        if batch_mode {
                            let m1 = db[fi] / cn;
                            let m2 = dg[fi] / cn;
                            for i in 0..l {
                                dx[off + i] = scale * (gvv[off + i] - m1 - xhat[off + i] * m2);
                            }
                        } else {
                            for i in 0..l {
                                dx[off + i] = scale * gvv[off + i];
                            }
                        }
                    }
                }
                vec![
                    Some(Tensor::from_vec(&xs, dx).unwrap()),
                    Some(Tensor::from_vec(&[f], dg).unwrap()),
                    Some(Tensor::from_vec(&[f], db).unwrap()),
                ]
            }),
        );
        (var_id, stats)
    }
}

/// Valid output range `[lo, hi)` for tap `kk` of a same-padded convolution
/// over length `t`, plus the input offset `shift` (input index = out + shift).
#[inline]
fn conv_range(t: usize, kk: usize, left: usize) -> (usize, usize, isize) {
    let shift = kk as isize - left as isize;
    let lo = (-shift).max(0) as usize;
    let hi = ((t as isize) - shift).clamp(0, t as isize) as usize;
    (lo.min(hi), hi, shift)
}
