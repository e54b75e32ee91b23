//! Central-difference checks of the tape's gradients on toy shapes. Each
//! returns the worst relative error over every input and parameter entry.

use xsa_core::autodiff::{Graph, Var};
use xsa_core::classifier::{EEGNet, EEGNetConfig};
use xsa_core::losses::KernelSpec;
use xsa_core::params::{ParamId, ParamSet};
use xsa_core::resize_net::{ResizeNet, ResizeNetConfig};
use xsa_core::Tensor;

use super::{max_rel_err, numeric_grad, randn, rng};

const H: f64 = 1e-5;
/// Entries smaller than this fraction of the largest gradient entry of a
/// check (or of 1) are compared absolutely. Structurally zero gradients,
/// such as a batch-norm shift that a later batch norm cancels, otherwise
/// turn pure rounding noise into large relative errors.
const FLOOR: f64 = 1e-6;

/// Worst error over `(analytic, numeric)` pairs with a floor scaled to the
/// largest analytic entry.
fn worst_of(pairs: &[(Tensor<f64>, Tensor<f64>)]) -> f64 {
    let scale = pairs.iter().flat_map(|(a, _)| a.data()).fold(1.0f64, |m, v| m.max(v.abs()));
    pairs.iter().map(|(a, n)| max_rel_err(a, n, FLOOR * scale)).fold(0.0, f64::max)
}

/// Gradient of `Σ y ⊙ r` for a model `y = f(x, params)`, checked against
/// central differences in `x` and in every parameter tensor.
fn check_model(
    x: &Tensor<f64>,
    params: &ParamSet<f64>,
    out_shape_seed: u64,
    forward: impl Fn(&mut Graph<f64>, &ParamSet<f64>, Var, bool) -> (Var, Vec<Var>),
) -> f64 {
    let weights = std::cell::OnceCell::<Tensor<f64>>::new();
    let scalar = |g: &mut Graph<f64>, y: Var| {
        let r = weights.get_or_init(|| randn(&mut rng(out_shape_seed), g.shape(y))).clone();
        let p = g.mul_const(y, r);
        g.sum(p)
    };
    let eval = |x: &Tensor<f64>, ps: &ParamSet<f64>| {
        let mut g = Graph::new(true);
        let xv = g.constant(x.clone());
        let (y, _) = forward(&mut g, ps, xv, false);
        let l = scalar(&mut g, y);
        g.value(l).item()
    };

    let mut g = Graph::new(true);
    let xv = g.leaf(x.clone());
    let (y, param_vars) = forward(&mut g, params, xv, true);
    let l = scalar(&mut g, y);
    let grads = g.backward(l);

    let mut pairs = vec![(grads.get(xv).unwrap().clone(), numeric_grad(x, H, |xp| eval(xp, params)))];
    for (i, &pv) in param_vars.iter().enumerate() {
        let analytic = grads.get(pv).cloned().unwrap_or_else(|| Tensor::zeros(params.get(ParamId(i)).shape()));
        let numeric = numeric_grad(params.get(ParamId(i)), H, |pt| {
            let mut ps = params.clone();
            *ps.get_mut(ParamId(i)) = pt.clone();
            eval(x, &ps)
        });
        pairs.push((analytic, numeric));
    }
    worst_of(&pairs)
}

/// ResizeNet forward, 1 layer, 1 head, with non-trivial weights.
pub fn resize_forward_error() -> f64 {
    let cfg = ResizeNetConfig { n_layers: 1, n_heads: 1, dropout: 0.0, ..ResizeNetConfig::new(3, 2) };
    let base = ResizeNet::<f64>::init(cfg.clone(), 1).unwrap();
    let mut r = rng(21);
    let mut ps = ParamSet::new();
    for (name, v) in base.params.iter() {
        let mut t = randn(&mut r, v.shape()).scale(0.5);
        if name.ends_with("gamma") {
            t = t.map(|a| 1.0 + 0.3 * a);
        }
        ps.add(name, t);
    }
    let x = randn(&mut rng(22), &[2, 3, 4]);
    check_model(&x, &ps, 23, |g, ps, xv, trainable| {
        let net = ResizeNet::from_params(cfg.clone(), ps).unwrap();
        let b = net.params.bind(g, trainable);
        (net.forward(g, &b, xv, None).unwrap(), b.vars().to_vec())
    })
}

/// The same check with two heads and a token lift (C = 3 is odd).
pub fn resize_forward_lifted_error() -> f64 {
    let cfg = ResizeNetConfig { n_layers: 2, n_heads: 2, dropout: 0.0, ..ResizeNetConfig::new(3, 2) };
    let net = ResizeNet::<f64>::init(cfg.clone(), 2).unwrap();
    let x = randn(&mut rng(24), &[2, 3, 4]);
    check_model(&x, &net.params, 25, |g, ps, xv, trainable| {
        let net = ResizeNet::from_params(cfg.clone(), ps).unwrap();
        let b = net.params.bind(g, trainable);
        (net.forward(g, &b, xv, None).unwrap(), b.vars().to_vec())
    })
}

/// EEGNet features on a `4 × 4 × 32` batch, batch-norm in training mode.
pub fn extract_features_error() -> f64 {
    let cfg = EEGNetConfig {
        temporal_kernel_len: 8,
        separable_kernel_len: 4,
        pool2: 2,
        dropout: 0.0,
        ..EEGNetConfig::new(4, 32, 16.0)
    };
    let net = EEGNet::<f64>::init(cfg.clone(), 3).unwrap();
    let x = randn(&mut rng(26), &[4, 4, 32]);
    let buffers = net.buffers.clone();
    check_model(&x, &net.params, 27, |g, ps, xv, trainable| {
        let net = EEGNet::from_parts(cfg.clone(), ps, &buffers).unwrap();
        let b = net.params.bind(g, trainable);
        (net.features(g, &b, xv, None).unwrap().0, b.vars().to_vec())
    })
}

/// Gradient of a two-input scalar loss with respect to both inputs.
fn check_pair(a: &Tensor<f64>, b: &Tensor<f64>, loss: impl Fn(&mut Graph<f64>, Var, Var) -> Var) -> f64 {
    let value = |a: &Tensor<f64>, b: &Tensor<f64>| {
        let mut g = Graph::new(true);
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        let l = loss(&mut g, av, bv);
        g.value(l).item()
    };
    let mut g = Graph::new(true);
    let (av, bv) = (g.leaf(a.clone()), g.leaf(b.clone()));
    let l = loss(&mut g, av, bv);
    let grads = g.backward(l);
    worst_of(&[
        (grads.get(av).unwrap().clone(), numeric_grad(a, H, |p| value(p, b))),
        (grads.get(bv).unwrap().clone(), numeric_grad(b, H, |p| value(a, p))),
    ])
}

pub fn cross_entropy_error() -> f64 {
    let z = randn(&mut rng(30), &[6, 2]).scale(2.0);
    let labels = [0u8, 1, 1, 0, 1, 0];
    let value = |z: &Tensor<f64>| {
        let mut g = Graph::new(true);
        let v = g.constant(z.clone());
        let l = g.cross_entropy(v, &labels).unwrap();
        g.value(l).item()
    };
    let mut g = Graph::new(true);
    let v = g.leaf(z.clone());
    let l = g.cross_entropy(v, &labels).unwrap();
    let grads = g.backward(l);
    worst_of(&[(grads.get(v).unwrap().clone(), numeric_grad(&z, H, value))])
}

pub fn kd_error() -> f64 {
    let zr = randn(&mut rng(31), &[5, 2]).scale(2.0);
    let zs = randn(&mut rng(32), &[5, 2]).scale(2.0);
    check_pair(&zr, &zs, |g, a, b| g.kd_loss(a, b, 2.0, false).unwrap())
}

pub fn mmd_error() -> f64 {
    let a = randn(&mut rng(33), &[6, 3]);
    let b = randn(&mut rng(34), &[5, 3]).map(|v| v + 0.7);
    let kernel = KernelSpec::fixed(vec![0.5, 2.0, 8.0]);
    check_pair(&a, &b, |g, x, y| g.mmd2(x, y, &kernel).unwrap())
}
