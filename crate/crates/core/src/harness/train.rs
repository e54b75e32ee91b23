//! Joint training of ResizeNet and the classifier under the combined
//! objective `CE + λ·KD + β·MMD`, plus the no-alignment baselines.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::split::TrackedLabels;
use crate::autodiff::{Graph, Var};
use crate::classifier::{predict_proba, EEGNet, EEGNetConfig};
use crate::error::{Error, Result};
use crate::losses::{KernelSpec, LossWeights};
use crate::params::{Adam, AdamConfig};
use crate::resize_net::{select_channels, PositionalEncoding, ResizeNet, ResizeNetConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

/// How the domain with more channels is brought down to the smaller count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelReconcile {
    /// Learned projection; the selection path serves as distillation partner.
    Resize,
    /// Keep the first channels.
    Select,
}

/// Built-in training strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Labeled target trials only, no alignment.
    Within,
    /// Labeled target plus all source trials, channels selected, no alignment.
    Comb,
    /// Source trials only, channels selected, no alignment.
    SourceOnly,
    /// Euclidean alignment, ResizeNet, distillation and MMD.
    Msa,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Within => "Within",
            Method::Comb => "Comb.",
            Method::SourceOnly => "Source Only",
            Method::Msa => "ResizeNet+MSA",
        }
    }

    /// Strategy for this method. Only `Msa` uses the loss weights and kernel.
    pub fn spec(self, weights: LossWeights, kernel: KernelSpec) -> MethodSpec {
        let base = MethodSpec {
            name: self.name().into(),
            use_source: true,
            use_target_labels: true,
            use_ea: false,
            reconcile: ChannelReconcile::Select,
            weights: LossWeights { lambda_kd: 0.0, beta_da: 0.0, tau: weights.tau },
            kernel: kernel.clone(),
            stop_gradient_teacher: false,
            share_weights: true,
            ce_on_selection: true,
        };
        match self {
            Method::Within => MethodSpec { use_source: false, ..base },
            Method::Comb => base,
            Method::SourceOnly => MethodSpec { use_target_labels: false, ..base },
            Method::Msa => MethodSpec { use_ea: true, reconcile: ChannelReconcile::Resize, weights, ..base },
        }
    }
}

/// A training strategy: which data enter, which alignments are active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub use_source: bool,
    pub use_target_labels: bool,
    pub use_ea: bool,
    pub reconcile: ChannelReconcile,
    pub weights: LossWeights,
    pub kernel: KernelSpec,
    pub stop_gradient_teacher: bool,
    /// One classifier for both the projection and the selection path.
    pub share_weights: bool,
    /// Also apply cross-entropy to the selection-path logits of labeled
    /// projected trials.
    #[serde(default = "yes")]
    pub ce_on_selection: bool,
}

fn yes() -> bool {
    true
}

impl MethodSpec {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.kernel.validate()?;
        if !self.use_source && !self.use_target_labels {
            return Err(Error::Config(format!("method {} has no labeled data", self.name)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { lr: 1e-3, batch: 64, epochs: 50 }
    }
}

/// Architecture knobs that are not fixed by the data shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelOptions {
    /// Temporal kernel; `None` means half the sampling rate.
    pub temporal_kernel_len: Option<usize>,
    pub eegnet_dropout: f64,
    pub resize_layers: usize,
    pub resize_heads: usize,
    pub resize_ff_dim: Option<usize>,
    pub resize_dropout: f64,
    pub positional_encoding: PositionalEncoding,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            temporal_kernel_len: None,
            eegnet_dropout: 0.25,
            resize_layers: 2,
            resize_heads: 2,
            resize_ff_dim: None,
            resize_dropout: 0.1,
            positional_encoding: PositionalEncoding::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Draw each batch half from each class.
    pub balanced_sampling: bool,
    pub model: ModelOptions,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerConfig, seed: u64) -> Self {
        TrainConfig { optimizer, seed, balanced_sampling: true, model: ModelOptions::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if o.epochs == 0 || o.batch == 0 || !(o.lr > 0.0) {
            return Err(Error::Config("epochs, batch and lr must be positive".into()));
        }
        Ok(())
    }
}

/// Training inputs. Target labels are reachable only through `target_labels`.
pub struct TrainData<'a, T> {
    /// Source trials and labels (ignored when the method does not use them).
    pub source: Option<(&'a Tensor<T>, &'a [u8])>,
    /// Every target trial `[N_t, C_t, T_s]`; unlabeled ones feed the MMD term.
    pub target_x: &'a Tensor<T>,
    pub target_labels: &'a TrackedLabels,
    pub labeled: &'a [usize],
    pub sampling_rate_hz: f64,
}

/// Per-epoch mean of each loss term; `None` for inactive terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce: f64,
    pub kd: Option<f64>,
    pub da: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum TrainStatus {
    Completed,
    /// Loss became non-finite; the model is the last finite state.
    Diverged { epoch: usize, step: usize },
}

/// How target trials reach the classifier at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "channels")]
pub enum TargetInput {
    Direct,
    Resize,
    Select(usize),
}

#[derive(Debug, Clone)]
pub struct TrainedModel<T> {
    pub method: MethodSpec,
    pub eegnet: EEGNet<T>,
    pub resize: Option<ResizeNet<T>>,
    /// Which domain the projection was applied to.
    pub resize_side: Option<Domain>,
    /// Separate classifier for the selection path when weights are not shared.
    pub teacher: Option<EEGNet<T>>,
    pub target_input: TargetInput,
    pub seed: u64,
}

impl<T: Scalar> TrainedModel<T> {
    /// Seizure-class probability for each `[N, C_t, T_s]` target trial.
    pub fn predict_scores(&self, x: &Tensor<T>) -> Result<Vec<f64>> {
        let logits = self.predict_logits(x)?;
        let p = predict_proba(&logits, 1.0)?;
        Ok(p.data().chunks(2).map(|r| r[1].as_f64()).collect())
    }

    pub fn predict_logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.eegnet.predict_logits(&self.prepare(Domain::Target, x)?)
    }

    pub fn extract_features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.extract_features_for(Domain::Target, x)
    }

    /// Features of trials from either domain, routed the way training
    /// routed that domain.
    pub fn extract_features_for(&self, domain: Domain, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.eegnet.extract_features(&self.prepare(domain, x)?)
    }

    /// Applies the trained projection to `[N, C, T_s]` trials.
    pub fn resize_trials(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let r = self.resize.as_ref().ok_or_else(|| Error::Format("model has no ResizeNet".into()))?;
        let n = x.shape()[0];
        if n == 0 {
            return Ok(Tensor::zeros(&[0, r.cfg.c_out, x.shape()[2]]));
        }
        let parts = (0..n)
            .step_by(256)
            .map(|start| r.forward_tensor(&x.slice_rows(start, (start + 256).min(n))))
            .collect::<Result<Vec<_>>>()?;
        Tensor::cat_rows(&parts.iter().collect::<Vec<_>>())
    }

    fn input_for(&self, domain: Domain, c: usize) -> TargetInput {
        if domain == Domain::Target {
            return self.target_input;
        }
        if self.resize_side == Some(Domain::Source) {
            TargetInput::Resize
        } else if c > self.eegnet.cfg.n_channels {
            TargetInput::Select(self.eegnet.cfg.n_channels)
        } else {
            TargetInput::Direct
        }
    }

    fn prepare(&self, domain: Domain, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.ndim() != 3 {
            return Err(Error::shape("[N, C, T]", format!("{:?}", x.shape())));
        }
        match self.input_for(domain, x.shape()[1]) {
            TargetInput::Direct => Ok(x.clone()),
            TargetInput::Select(c) => select_channels(x, c),
            TargetInput::Resize => self.resize_trials(x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput<T> {
    pub model: TrainedModel<T>,
    pub history: Vec<EpochRecord>,
    pub status: TrainStatus,
}

/// Indices grouped by label, from a label lookup.
fn by_class(idx: &[usize], label: impl Fn(usize) -> u8) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for &i in idx {
        out[label(i) as usize].push(i);
    }
    out
}

/// Draws `n` indices, half from each non-empty class when `balanced`.
fn draw(rng: &mut ChaCha8Rng, classes: &[Vec<usize>; 2], n: usize, balanced: bool) -> Vec<usize> {
    let all: Vec<usize> = classes.iter().flatten().copied().collect();
    if all.is_empty() {
        return vec![];
    }
    let both = !classes[0].is_empty() && !classes[1].is_empty();
    (0..n)
        .map(|k| {
            if balanced && both {
                *classes[k % 2].choose(rng).unwrap()
            } else {
                *all.choose(rng).unwrap()
            }
        })
        .collect()
}

/// Row range of one block inside a concatenated batch.
#[derive(Debug, Clone, Copy)]
struct Rows {
    start: usize,
    end: usize,
}

#[derive(Default)]
struct BatchPlan {
    /// Inputs for the main forward, already at the classifier's channel count.
    main: Vec<Var>,
    /// Selection-path inputs of the projected blocks.
    teacher: Vec<Var>,
    /// Row range within the selection path and labels, per projected block.
    teacher_rows: Vec<(Rows, Option<Vec<u8>>)>,
    ce_labels: Vec<u8>,
}

/// Trains one model. Data are expected to be aligned already if the method
/// asks for alignment.
pub fn train<T: Scalar>(method: &MethodSpec, data: &TrainData<T>, cfg: &TrainConfig) -> Result<TrainOutput<T>> {
    method.validate()?;
    cfg.validate()?;
    let tx = data.target_x;
    if tx.ndim() != 3 {
        return Err(Error::shape("[N, C, T_s]", format!("{:?}", tx.shape())));
    }
    let (c_t, t_s) = (tx.shape()[1], tx.shape()[2]);
    let source = if method.use_source {
        let (sx, sy) = data.source.ok_or_else(|| Error::Config(format!("{} needs source data", method.name)))?;
        if sx.ndim() != 3 || sx.shape()[2] != t_s || sy.len() != sx.shape()[0] {
            return Err(Error::shape(format!("[N_s, C_s, {t_s}] with labels"), format!("{:?}", sx.shape())));
        }
        Some((sx, sy))
    } else {
        None
    };
    let labeled: &[usize] = if method.use_target_labels { data.labeled } else { &[] };
    if source.is_none() && labeled.is_empty() {
        return Err(Error::Empty(format!("{} has no labeled training trials", method.name)));
    }

    let c_s = source.map(|(sx, _)| sx.shape()[1]).unwrap_or(c_t);
    let c_model = c_s.min(c_t);
    let hi_side = match c_s.cmp(&c_t) {
        std::cmp::Ordering::Greater => Some(Domain::Source),
        std::cmp::Ordering::Less => Some(Domain::Target),
        std::cmp::Ordering::Equal => None,
    };
    let resize_side = hi_side.filter(|_| method.reconcile == ChannelReconcile::Resize);
    let target_input = match (hi_side, method.reconcile) {
        (Some(Domain::Target), ChannelReconcile::Resize) => TargetInput::Resize,
        (Some(Domain::Target), ChannelReconcile::Select) => TargetInput::Select(c_model),
        _ => TargetInput::Direct,
    };
    let kd_on = resize_side.is_some() && method.weights.lambda_kd > 0.0;
    let sel_on = resize_side.is_some() && (kd_on || method.ce_on_selection);
    let da_on = source.is_some() && method.weights.beta_da > 0.0;

    let mo = &cfg.model;
    let mut ecfg = EEGNetConfig::new(c_model, t_s, data.sampling_rate_hz);
    if let Some(k) = mo.temporal_kernel_len {
        ecfg.temporal_kernel_len = k;
    }
    ecfg.dropout = mo.eegnet_dropout;
    let mut eegnet = EEGNet::<T>::init(ecfg.clone(), cfg.seed)?;
    let mut resize = match resize_side {
        Some(side) => {
            let c_in = if side == Domain::Source { c_s } else { c_t };
            let rcfg = ResizeNetConfig {
                c_in,
                c_out: c_model,
                n_layers: mo.resize_layers,
                n_heads: mo.resize_heads,
                ff_dim: mo.resize_ff_dim,
                dropout: mo.resize_dropout,
                positional_encoding: mo.positional_encoding,
            };
            Some(ResizeNet::<T>::init(rcfg, cfg.seed.wrapping_add(1))?)
        }
        None => None,
    };
    let mut teacher = if kd_on && !method.share_weights {
        Some(EEGNet::<T>::init(ecfg, cfg.seed.wrapping_add(2))?)
    } else {
        None
    };

    // selection happens once up front for the select strategy
    let src_sel;
    let tgt_sel;
    let source = match (source, hi_side, method.reconcile) {
        (Some((sx, sy)), Some(Domain::Source), ChannelReconcile::Select) => {
            src_sel = select_channels(sx, c_model)?;
            Some((&src_sel, sy))
        }
        (s, _, _) => s,
    };
    let tx = if target_input == TargetInput::Select(c_model) {
        tgt_sel = select_channels(tx, c_model)?;
        &tgt_sel
    } else {
        tx
    };

    let adam_cfg = AdamConfig { lr: cfg.optimizer.lr, ..Default::default() };
    let mut opt_e = Adam::new(adam_cfg, &eegnet.params);
    let mut opt_r = resize.as_ref().map(|r| Adam::new(adam_cfg, &r.params));
    let mut opt_t = teacher.as_ref().map(|t| Adam::new(adam_cfg, &t.params));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let src_classes = source.map(|(sx, sy)| by_class(&(0..sx.shape()[0]).collect::<Vec<_>>(), |i| sy[i]));
    let lab_classes = by_class(labeled, |i| data.target_labels.get(i));
    let all_target: Vec<usize> = (0..tx.shape()[0]).collect();

    let b = cfg.optimizer.batch;
    let n_src = source.map_or(0, |(sx, _)| sx.shape()[0]);
    let pool = if source.is_some() { n_src.max(tx.shape()[0]) } else { tx.shape()[0] };
    let steps = pool.div_ceil(b).max(1);
    let kernel = method.kernel.clone();
    let w = method.weights;

    let mut history = Vec::with_capacity(cfg.optimizer.epochs);
    let mut status = TrainStatus::Completed;
    let snapshot = |e: &EEGNet<T>, r: &Option<ResizeNet<T>>, t: &Option<EEGNet<T>>| (e.clone(), r.clone(), t.clone());
    let mut last_good = snapshot(&eegnet, &resize, &teacher);

    'epochs: for epoch in 0..cfg.optimizer.epochs {
        let mut sums = [0.0f64; 4];
        for step in 0..steps {
            let mut g = Graph::<T>::new(true);
            let be = eegnet.params.bind(&mut g, true);
            let br = resize.as_ref().map(|r| r.params.bind(&mut g, true));
            let bt = teacher.as_ref().map(|t| t.params.bind(&mut g, true));

            let mut plan = BatchPlan::default();
            let mut offset = 0;
            let mut sel_offset = 0;
            // (block input, domain, labels for CE if any)
            let mut blocks: Vec<(Tensor<T>, Domain, Option<Vec<u8>>)> = Vec::new();
            if let (Some((sx, sy)), Some(cls)) = (source, &src_classes) {
                let idx = draw(&mut rng, cls, b, cfg.balanced_sampling);
                blocks.push((sx.select_rows(&idx), Domain::Source, Some(idx.iter().map(|&i| sy[i]).collect())));
            }
            if !labeled.is_empty() {
                let idx = draw(&mut rng, &lab_classes, b.min(labeled.len()).max(2), cfg.balanced_sampling);
                let y = idx.iter().map(|&i| data.target_labels.get(i)).collect();
                blocks.push((tx.select_rows(&idx), Domain::Target, Some(y)));
            }
            if da_on {
                let idx: Vec<usize> = (0..b).map(|_| all_target[rng.random_range(0..all_target.len())]).collect();
                blocks.push((tx.select_rows(&idx), Domain::Target, None));
            }
            let mut block_rows = Vec::new();
            for (x, dom, y) in &blocks {
                let n = x.shape()[0];
                let xv = g.constant(x.clone());
                let main = if resize_side == Some(*dom) {
                    let r = resize.as_ref().unwrap();
                    let out = r.forward(&mut g, br.as_ref().unwrap(), xv, Some(&mut drop_rng))?;
                    if sel_on {
                        plan.teacher.push(g.constant(select_channels(x, c_model)?));
                        plan.teacher_rows.push((Rows { start: sel_offset, end: sel_offset + n }, y.clone()));
                        sel_offset += n;
                    }
                    out
                } else {
                    xv
                };
                plan.main.push(main);
                block_rows.push((Rows { start: offset, end: offset + n }, *dom, y.is_some()));
                if let Some(y) = y {
                    plan.ce_labels.extend_from_slice(y);
                }
                offset += n;
            }

            // one forward for the main path, plus the selection path when it
            // shares the classifier
            let n_main = offset;
            let mut inputs = plan.main.clone();
            if teacher.is_none() {
                inputs.extend_from_slice(&plan.teacher);
            }
            let x_all = if inputs.len() == 1 { inputs[0] } else { g.cat_rows(&inputs) };
            let (feats, stats) = eegnet.features(&mut g, &be, x_all, Some(&mut drop_rng))?;
            let logits = eegnet.logits(&mut g, &be, feats)?;

            // selection-path logits, from the shared classifier or the teacher
            let z_sel = if !sel_on {
                None
            } else if let (Some(tn), Some(btv)) = (&teacher, &bt) {
                let xs = if plan.teacher.len() == 1 { plan.teacher[0] } else { g.cat_rows(&plan.teacher) };
                let (f, _) = tn.features(&mut g, btv, xs, Some(&mut drop_rng))?;
                Some(tn.logits(&mut g, btv, f)?)
            } else {
                let total = g.shape(logits)[0];
                Some(g.slice_rows(logits, n_main, total))
            };

            let mut ce_parts: Vec<Var> = block_rows
                .iter()
                .filter(|(_, _, has_y)| *has_y)
                .map(|(r, _, _)| g.slice_rows(logits, r.start, r.end))
                .collect();
            if let (Some(zs), true) = (z_sel, method.ce_on_selection) {
                for (r, y) in &plan.teacher_rows {
                    if let Some(y) = y {
                        ce_parts.push(g.slice_rows(zs, r.start, r.end));
                        plan.ce_labels.extend_from_slice(y);
                    }
                }
            }
            let ce_logits = if ce_parts.len() == 1 { ce_parts[0] } else { g.cat_rows(&ce_parts) };
            let ce = g.cross_entropy(ce_logits, &plan.ce_labels)?;
            let mut loss = ce;

            let kd = if kd_on {
                let side = resize_side.unwrap();
                let z_r_parts: Vec<Var> = block_rows
                    .iter()
                    .filter(|(_, d, _)| *d == side)
                    .map(|(r, _, _)| g.slice_rows(logits, r.start, r.end))
                    .collect();
                let z_r = if z_r_parts.len() == 1 { z_r_parts[0] } else { g.cat_rows(&z_r_parts) };
                let kd = g.kd_loss(z_r, z_sel.unwrap(), w.tau, method.stop_gradient_teacher)?;
                let term = g.scale(kd, T::lit(w.lambda_kd));
                loss = g.add(loss, term);
                Some(kd)
            } else {
                None
            };

            let da = if da_on {
                let pick = |g: &mut Graph<T>, dom: Domain| {
                    let parts: Vec<Var> = block_rows
                        .iter()
                        .filter(|(_, d, _)| *d == dom)
                        .map(|(r, _, _)| g.slice_rows(feats, r.start, r.end))
                        .collect();
                    if parts.len() == 1 {
                        parts[0]
                    } else {
                        g.cat_rows(&parts)
                    }
                };
                let fs = pick(&mut g, Domain::Source);
                let ft = pick(&mut g, Domain::Target);
                let da = g.mmd2(fs, ft, &kernel)?;
                let term = g.scale(da, T::lit(w.beta_da));
                loss = g.add(loss, term);
                Some(da)
            } else {
                None
            };

            let lv = g.value(loss).item().as_f64();
            if !lv.is_finite() {
                status = TrainStatus::Diverged { epoch, step };
                (eegnet, resize, teacher) = last_good.clone();
                break 'epochs;
            }
            sums[0] += g.value(ce).item().as_f64();
            sums[1] += kd.map_or(0.0, |v| g.value(v).item().as_f64());
            sums[2] += da.map_or(0.0, |v| g.value(v).item().as_f64());
            sums[3] += lv;

            let grads = g.backward(loss);
            opt_e.step(&mut eegnet.params, &be, &grads);
            if let (Some(r), Some(o), Some(bv)) = (resize.as_mut(), opt_r.as_mut(), br.as_ref()) {
                o.step(&mut r.params, bv, &grads);
            }
            if let (Some(t), Some(o), Some(bv)) = (teacher.as_mut(), opt_t.as_mut(), bt.as_ref()) {
                o.step(&mut t.params, bv, &grads);
            }
            // the shared forward mixes both paths; its statistics are the
            // ones the classifier saw
            eegnet.update_running(&stats);
            if !eegnet.params.all_finite() || resize.as_ref().is_some_and(|r| !r.params.all_finite()) {
                status = TrainStatus::Diverged { epoch, step };
                (eegnet, resize, teacher) = last_good.clone();
                break 'epochs;
            }
        }
        let k = steps as f64;
        history.push(EpochRecord {
            epoch,
            ce: sums[0] / k,
            kd: kd_on.then_some(sums[1] / k),
            da: da_on.then_some(sums[2] / k),
            total: sums[3] / k,
        });
        log::debug!("{} epoch {epoch}: {:?}", method.name, history.last().unwrap());
        last_good = snapshot(&eegnet, &resize, &teacher);
    }

    Ok(TrainOutput {
        model: TrainedModel {
            method: method.clone(),
            eegnet,
            resize,
            resize_side,
            teacher,
            target_input,
            seed: cfg.seed,
        },
        history,
        status,
    })
}
