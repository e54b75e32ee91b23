//! Channel-count projection: a transformer encoder over time steps followed
//! by a learned `C × C_t` map, plus plain channel selection.
//!
//! Input trials `[N, C, T_s]` are transposed to `[N, T_s, C]` so that every
//! time step is a token of dimension `C`, encoded, right-multiplied by the
//! projection `W_L` and transposed back to `[N, C_t, T_s]`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEncoding {
    #[default]
    None,
    Sinusoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResizeNetConfig {
    pub c_in: usize,
    pub c_out: usize,
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    /// Feed-forward width; `None` means 4 × token dimension.
    #[serde(default)]
    pub ff_dim: Option<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub positional_encoding: PositionalEncoding,
}

fn default_layers() -> usize {
    2
}
fn default_heads() -> usize {
    2
}
fn default_dropout() -> f64 {
    0.1
}

impl ResizeNetConfig {
    pub fn new(c_in: usize, c_out: usize) -> Self {
        ResizeNetConfig {
            c_in,
            c_out,
            n_layers: default_layers(),
            n_heads: default_heads(),
            ff_dim: None,
            dropout: default_dropout(),
            positional_encoding: PositionalEncoding::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_out == 0 || self.c_in < self.c_out {
            return Err(Error::Config(format!("need c_in >= c_out >= 1, got {} / {}", self.c_in, self.c_out)));
        }
        if self.n_layers == 0 || self.n_heads == 0 {
            return Err(Error::Config("n_layers and n_heads must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Token dimension seen by attention: `c_in` rounded up to a multiple of
    /// the head count.
    pub fn token_dim(&self) -> usize {
        self.c_in.div_ceil(self.n_heads) * self.n_heads
    }

    pub fn ff_width(&self) -> usize {
        self.ff_dim.unwrap_or(4 * self.token_dim())
    }
}

#[derive(Debug, Clone)]
struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct ResizeIds {
    lift: Option<(ParamId, ParamId)>,
    layers: Vec<LayerIds>,
    projection: ParamId,
}

/// ResizeNet parameters and their layout.
#[derive(Debug, Clone)]
pub struct ResizeNet<T> {
    pub cfg: ResizeNetConfig,
    pub params: ParamSet<T>,
    ids: ResizeIds,
}

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
}

impl<T: Scalar> ResizeNet<T> {
    /// Deterministic initialization. Linear weights are uniform in
    /// `±1/√fan_in`, biases zero, norms identity; the optional lift starts as
    /// a zero-padded identity so the encoder begins as a residual identity.
    pub fn init(cfg: ResizeNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let (c, d, ff) = (cfg.c_in, cfg.token_dim(), cfg.ff_width());

        let lift = (d != c).then(|| {
            let lin = Tensor::from_fn(&[c, d], |i| if i / d == i % d { T::one() } else { T::zero() });
            let lout = Tensor::from_fn(&[d, c], |i| if i / c == i % c { T::one() } else { T::zero() });
            (ps.add("lift_in", lin), ps.add("lift_out", lout))
        });

        let bd = 1.0 / (d as f64).sqrt();
        let bf = 1.0 / (ff as f64).sqrt();
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerIds {
                ln1_g: ps.add(p("ln1.gamma"), Tensor::ones(&[d])),
                ln1_b: ps.add(p("ln1.beta"), Tensor::zeros(&[d])),
                wq: ps.add(p("attn.wq"), uniform(&mut rng, &[d, d], bd)),
                bq: ps.add(p("attn.bq"), Tensor::zeros(&[d])),
                wk: ps.add(p("attn.wk"), uniform(&mut rng, &[d, d], bd)),
                bk: ps.add(p("attn.bk"), Tensor::zeros(&[d])),
                wv: ps.add(p("attn.wv"), uniform(&mut rng, &[d, d], bd)),
                bv: ps.add(p("attn.bv"), Tensor::zeros(&[d])),
                wo: ps.add(p("attn.wo"), uniform(&mut rng, &[d, d], bd)),
                bo: ps.add(p("attn.bo"), Tensor::zeros(&[d])),
                ln2_g: ps.add(p("ln2.gamma"), Tensor::ones(&[d])),
                ln2_b: ps.add(p("ln2.beta"), Tensor::zeros(&[d])),
                w1: ps.add(p("ff.w1"), uniform(&mut rng, &[d, ff], bd)),
                b1: ps.add(p("ff.b1"), Tensor::zeros(&[ff])),
                w2: ps.add(p("ff.w2"), uniform(&mut rng, &[ff, d], bf)),
                b2: ps.add(p("ff.b2"), Tensor::zeros(&[d])),
            });
        }
        let projection = ps.add("projection", uniform(&mut rng, &[c, cfg.c_out], 1.0 / (c as f64).sqrt()));
        Ok(ResizeNet { cfg, params: ps, ids: ResizeIds { lift, layers, projection } })
    }

    /// Rebuilds a network from stored parameters.
    pub fn from_params(cfg: ResizeNetConfig, params: &ParamSet<T>) -> Result<Self> {
        let mut net = Self::init(cfg, 0)?;
        net.params.copy_from(params)?;
        Ok(net)
    }

    pub fn projection(&self) -> &Tensor<T> {
        self.params.get(self.ids.projection)
    }

    pub fn projection_mut(&mut self) -> &mut Tensor<T> {
        self.params.get_mut(self.ids.projection)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[1] != self.cfg.c_in {
            return Err(Error::shape(format!("[N, {}, T_s]", self.cfg.c_in), format!("{shape:?}")));
        }
        Ok(())
    }

    fn dropout(&self, g: &mut Graph<T>, x: Var, rng: &mut Option<&mut ChaCha8Rng>) -> Var {
        let p = self.cfg.dropout;
        match rng {
            Some(rng) if g.training() && p > 0.0 => {
                let keep = T::lit(1.0 / (1.0 - p));
                let mask = Tensor::from_fn(g.shape(x), |_| if rng.random::<f64>() < p { T::zero() } else { keep });
                g.mul_const(x, mask)
            }
            _ => x,
        }
    }

    /// Encoder output `T(R(X))` before projection, `[N, T_s, C]`.
    pub fn encode(&self, g: &mut Graph<T>, b: &Bound, x: Var, mut rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        self.check_input(g.shape(x))?;
        let eps = T::lit(1e-5);
        let tokens = g.swap_last2(x);
        let mut h = match self.ids.lift {
            Some((lin, _)) => g.linear(tokens, b.var(lin)),
            None => tokens,
        };
        if self.cfg.positional_encoding == PositionalEncoding::Sinusoidal {
            let s = g.shape(h).to_vec();
            let pe = sinusoidal_table::<T>(s[1], s[2]);
            let mut full = Tensor::zeros(&s);
            for chunk in full.data_mut().chunks_mut(s[1] * s[2]) {
                chunk.copy_from_slice(pe.data());
            }
            let pe = g.constant(full);
            h = g.add(h, pe);
        }
        for l in &self.ids.layers {
            let n1 = g.layer_norm(h, b.var(l.ln1_g), b.var(l.ln1_b), eps);
            let q = g.linear(n1, b.var(l.wq));
            let q = g.add_bias(q, b.var(l.bq));
            let k = g.linear(n1, b.var(l.wk));
            let k = g.add_bias(k, b.var(l.bk));
            let v = g.linear(n1, b.var(l.wv));
            let v = g.add_bias(v, b.var(l.bv));
            let a = g.attention(q, k, v, self.cfg.n_heads);
            let a = g.linear(a, b.var(l.wo));
            let a = g.add_bias(a, b.var(l.bo));
            let a = self.dropout(g, a, &mut rng);
            h = g.add(h, a);

            let n2 = g.layer_norm(h, b.var(l.ln2_g), b.var(l.ln2_b), eps);
            let f = g.linear(n2, b.var(l.w1));
            let f = g.add_bias(f, b.var(l.b1));
            let f = g.relu(f);
            let f = g.linear(f, b.var(l.w2));
            let f = g.add_bias(f, b.var(l.b2));
            let f = self.dropout(g, f, &mut rng);
            h = g.add(h, f);
        }
        Ok(match self.ids.lift {
            Some((_, lout)) => g.linear(h, b.var(lout)),
            None => h,
        })
    }

    /// Full ResizeNet on the tape: `[N, C, T_s]` → `[N, C_t, T_s]`.
    pub fn forward(&self, g: &mut Graph<T>, b: &Bound, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let enc = self.encode(g, b, x, rng)?;
        let projected = g.linear(enc, b.var(self.ids.projection));
        Ok(g.swap_last2(projected))
    }

    /// Inference-mode forward on plain tensors.
    pub fn forward_tensor(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let mut g = Graph::new(false);
        let b = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &b, xv, None)?;
        Ok(g.value(y).clone())
    }
}

/// Standard sine/cosine position table `[t, d]`.
pub fn sinusoidal_table<T: Scalar>(t: usize, d: usize) -> Tensor<T> {
    Tensor::from_fn(&[t, d], |i| {
        let (pos, j) = ((i / d) as f64, i % d);
        let rate = 10000f64.powf(-((j / 2 * 2) as f64) / d as f64);
        T::lit(if j % 2 == 0 { (pos * rate).sin() } else { (pos * rate).cos() })
    })
}

/// Keeps channels `0..c_out` of `[N, C, T_s]` trials, in order.
pub fn select_channels<T: Scalar>(x: &Tensor<T>, c_out: usize) -> Result<Tensor<T>> {
    if x.ndim() != 3 {
        return Err(Error::shape("[N, C, T_s]", format!("{:?}", x.shape())));
    }
    let (n, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if c_out > c || c_out == 0 {
        return Err(Error::InvalidArgument(format!("cannot select {c_out} of {c} channels")));
    }
    let mut out = Vec::with_capacity(n * c_out * t);
    for trial in x.data().chunks(c * t) {
        out.extend_from_slice(&trial[..c_out * t]);
    }
    Tensor::from_vec(&[n, c_out, t], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_dim_rounds_up() {
        let mut cfg = ResizeNetConfig::new(55, 16);
        assert_eq!(cfg.token_dim(), 56);
        cfg.n_heads = 4;
        assert_eq!(cfg.token_dim(), 56);
        cfg.c_in = 18;
        assert_eq!(cfg.token_dim(), 20);
    }

    #[test]
    fn rejects_upsampling_and_wrong_input() {
        assert!(ResizeNet::<f32>::init(ResizeNetConfig::new(4, 6), 0).is_err());
        let net = ResizeNet::<f32>::init(ResizeNetConfig::new(6, 4), 0).unwrap();
        let err = net.forward_tensor(&Tensor::zeros(&[2, 5, 8])).unwrap_err();
        assert!(err.to_string().contains("[N, 6, T_s]"), "{err}");
    }

    #[test]
    fn odd_channels_with_lift() {
        let mut cfg = ResizeNetConfig::new(5, 3);
        cfg.positional_encoding = PositionalEncoding::Sinusoidal;
        let net = ResizeNet::<f64>::init(cfg, 3).unwrap();
        let y = net.forward_tensor(&Tensor::from_fn(&[2, 5, 7], |i| (i as f64).cos())).unwrap();
        assert_eq!(y.shape(), &[2, 3, 7]);
        assert!(y.all_finite());
    }

    #[test]
    fn select_identity_and_prefix() {
        let x = Tensor::<f32>::from_fn(&[2, 4, 3], |i| i as f32);
        assert_eq!(select_channels(&x, 4).unwrap(), x);
        let y = select_channels(&x, 2).unwrap();
        assert_eq!(y.data()[..6], x.data()[..6]);
        assert_eq!(y.data()[6..], x.data()[12..18]);
        assert!(select_channels(&x, 5).is_err());
    }
}
