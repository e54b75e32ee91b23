//! Elementwise, reduction and linear-algebra ops.

use super::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::{gemm, gemm_nt, gemm_tn, Tensor};

impl<T: Scalar> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, &[a, b], Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, &[a, b], Box::new(|g, _, _| vec![Some(g.clone()), Some(g.map(|x| -x))]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(
            v,
            &[a, b],
            Box::new(|g, p, _| vec![Some(g.zip_map(p[1], |g, y| g * y)), Some(g.zip_map(p[0], |g, x| g * x))]),
        )
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, &[a], Box::new(move |g, _, _| vec![Some(g.scale(s))]))
    }

    /// Multiplies every element of `a` by the single-element `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s).item();
        let v = self.value(a).scale(sv);
        self.push(
            v,
            &[a, s],
            Box::new(|g, p, _| {
                let sv = p[1].item();
                let ds: T = g.data().iter().zip(p[0].data()).map(|(&g, &x)| g * x).sum();
                vec![Some(g.scale(sv)), Some(Tensor::full(p[1].shape(), ds))]
            }),
        )
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, &[a], Box::new(|g, _, _| vec![Some(g.clone())]))
    }

    /// Adds a `[d]` bias along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let d = *self.shape(x).last().expect("add_bias on 0-d tensor");
        assert_eq!(self.shape(b), &[d], "bias shape");
        let bias = self.value(b).data().to_vec();
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_mut(d) {
            for (o, &bb) in row.iter_mut().zip(&bias) {
                *o += bb;
            }
        }
        self.push(
            v,
            &[x, b],
            Box::new(move |g, _, _| {
                let mut db = vec![T::zero(); d];
                for row in g.data().chunks(d) {
                    for (acc, &gv) in db.iter_mut().zip(row) {
                        *acc += gv;
                    }
                }
                vec![Some(g.clone()), Some(Tensor::from_vec(&[d], db).unwrap())]
            }),
        )
    }

    /// Right-multiplies the last axis of `x` (`[..., d]`) by `w` (`[d, e]`).
    pub fn linear(&mut self, x: Var, w: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(ws.len(), 2, "linear weight must be 2-d");
        let d = *xs.last().expect("linear on 0-d tensor");
        assert_eq!(d, ws[0], "linear: input dim {d} vs weight {:?}", ws);
        let e = ws[1];
        let rows = self.value(x).len() / d.max(1);
        let mut out = vec![T::zero(); rows * e];
        gemm(self.value(x).data(), self.value(w).data(), &mut out, rows, d, e);
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = e;
        let v = Tensor::from_vec(&shape, out).unwrap();
        self.push(
            v,
            &[x, w],
            Box::new(move |g, p, _| {
                let mut dx = vec![T::zero(); rows * d];
                gemm_nt(g.data(), p[1].data(), &mut dx, rows, e, d);
                let mut dw = vec![T::zero(); d * e];
                gemm_tn(p[0].data(), g.data(), &mut dw, d, rows, e);
                vec![
                    Some(Tensor::from_vec(&xs, dx).unwrap()),
                    Some(Tensor::from_vec(&[d, e], dw).unwrap()),
                ]
            }),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a).len(), 2, "matmul lhs must be 2-d");
        self.linear(a, b)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let orig = self.shape(x).to_vec();
        let v = self.value(x).clone().reshape(shape).expect("reshape element count");
        self.push(v, &[x], Box::new(move |g, _, _| vec![Some(g.clone().reshape(&orig).unwrap())]))
    }

    /// Swaps the last two axes.
    pub fn swap_last2(&mut self, x: Var) -> Var {
        let v = self.value(x).swap_last2();
        self.push(v, &[x], Box::new(|g, _, _| vec![Some(g.swap_last2())]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(T::zero()));
        self.push(
            v,
            &[x],
            Box::new(|g, p, _| vec![Some(g.zip_map(p[0], |g, a| if a > T::zero() { g } else { T::zero() }))]),
        )
    }

    /// Exponential linear unit with α = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| if a > T::zero() { a } else { a.exp_m1() });
        self.push(
            v,
            &[x],
            Box::new(|g, p, out| {
                let mut d = g.clone();
                for ((dv, &a), &y) in d.data_mut().iter_mut().zip(p[0].data()).zip(out.data()) {
                    if a <= T::zero() {
                        *dv *= y + T::one();
                    }
                }
                vec![Some(d)]
            }),
        )
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(T::exp);
        self.push(v, &[x], Box::new(|g, _, out| vec![Some(g.zip_map(out, |g, y| g * y))]))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(T::ln);
        self.push(v, &[x], Box::new(|g, p, _| vec![Some(g.zip_map(p[0], |g, a| g / a))]))
    }

    /// Sum of all elements, as a 0-d tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, &[x], Box::new(|g, p, _| vec![Some(Tensor::full(p[0].shape(), g.item()))]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, T::one() / T::from_usize_lossy(n))
    }

    /// Row-wise log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let k = *self.shape(x).last().expect("log_softmax on 0-d tensor");
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_mut(k) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
            for z in row.iter_mut() {
                *z -= lse;
            }
        }
        self.push(
            v,
            &[x],
            Box::new(move |g, _, out| {
                let mut d = g.clone();
                for (drow, orow) in d.data_mut().chunks_mut(k).zip(out.data().chunks(k)) {
                    let gs: T = drow.iter().copied().sum();
                    for (dv, &lp) in drow.iter_mut().zip(orow) {
                        *dv -= lp.exp() * gs;
                    }
                }
                vec![Some(d)]
            }),
        )
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let ls = self.log_softmax(x);
        self.exp(ls)
    }

    /// Picks `x[i, idx[i]]` from a `[n, k]` tensor.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(shape.len(), 2);
        assert_eq!(shape[0], idx.len());
        let k = shape[1];
        let idx = idx.to_vec();
        let vals: Vec<T> = idx.iter().enumerate().map(|(i, &j)| self.value(x).data()[i * k + j]).collect();
        let v = Tensor::from_vec(&[idx.len()], vals).unwrap();
        self.push(
            v,
            &[x],
            Box::new(move |g, _, _| {
                let mut d = Tensor::zeros(&shape);
                for (i, &j) in idx.iter().enumerate() {
                    d.data_mut()[i * k + j] = g.data()[i];
                }
                vec![Some(d)]
            }),
        )
    }

    /// Concatenation along the first axis.
    pub fn cat_rows(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::cat_rows(&vals).expect("cat_rows shapes");
        let sizes: Vec<usize> = vals.iter().map(|t| t.shape()[0]).collect();
        self.push(
            v,
            parts,
            Box::new(move |g, _, _| {
                let mut start = 0;
                sizes
                    .iter()
                    .map(|&n| {
                        let s = g.slice_rows(start, start + n);
                        start += n;
                        Some(s)
                    })
                    .collect()
            }),
        )
    }

    /// Rows `[start, end)` along the first axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let full = self.shape(x).to_vec();
        let v = self.value(x).slice_rows(start, end);
        self.push(
            v,
            &[x],
            Box::new(move |g, _, _| {
                let mut d = Tensor::zeros(&full);
                let inner = g.len() / (end - start).max(1);
                d.data_mut()[start * inner..end * inner].copy_from_slice(g.data());
                vec![Some(d)]
            }),
        )
    }

    /// Squared Euclidean distances between the rows of `a` (`[n, f]`) and
    /// `b` (`[m, f]`), shape `[n, m]`.
    pub fn pairwise_sqdist(&mut self, a: Var, b: Var) -> Var {
        let (n, f) = (self.shape(a)[0], self.shape(a)[1]);
        let m = self.shape(b)[0];
        assert_eq!(self.shape(b)[1], f, "pairwise_sqdist feature dims");
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                let mut acc = T::zero();
                for k in 0..f {
                    let d = av[i * f + k] - bv[j * f + k];
                    acc += d * d;
                }
                out[i * m + j] = acc;
            }
        }
        let v = Tensor::from_vec(&[n, m], out).unwrap();
        self.push(
            v,
            &[a, b],
            Box::new(move |g, p, _| {
                let (av, bv, gv) = (p[0].data(), p[1].data(), g.data());
                let two = T::lit(2.0);
                let mut da = vec![T::zero(); n * f];
                let mut db = vec![T::zero(); m * f];
                for i in 0..n {
                    for j in 0..m {
                        let w = two * gv[i * m + j];
                        if w == T::zero() {
                            continue;
                        }
                        for k in 0..f {
                            let d = w * (av[i * f + k] - bv[j * f + k]);
                            da[i * f + k] += d;
                            db[j * f + k] -= d;
                        }
                    }
                }
                vec![
                    Some(Tensor::from_vec(&[n, f], da).unwrap()),
                    Some(Tensor::from_vec(&[m, f], db).unwrap()),
                ]
            }),
        )
    }

    /// Elementwise multiply by a constant mask (dropout, fixed weighting).
    pub fn mul_const(&mut self, x: Var, mask: Tensor<T>) -> Var {
        let v = self.value(x).zip_map(&mask, |a, m| a * m);
        self.push(v, &[x], Box::new(move |g, _, _| vec![Some(g.zip_map(&mask, |g, m| g * m))]))
    }
}
