//! Training objectives and machinery: token-level NLL, expected-risk loss
//! over beam candidates, Adam/AdamW, global-norm clipping, the plateau
//! scheduler, and the train/fine-tune loops.

use std::io::Write;

use crate::config::{Config, OptimizerKind};
use crate::corpus::EncodedWindow;
use crate::error::{Error, Result};
use crate::model::{Seq2Seq, WindowModel};
use crate::numerics::{Graph, Node, ParamStore, Rng, Tensor};
use crate::parallel::par_map;

/// Mean negative log-likelihood of the gold tags over non-PAD positions.
pub fn token_nll(g: &mut Graph, step_log_probs: &[Node], gold: &[Option<usize>]) -> Result<Node> {
    if step_log_probs.len() != gold.len() {
        return Err(Error::shape(
            "token_nll",
            format!("{} steps vs {} tags", step_log_probs.len(), gold.len()),
        ));
    }
    let mut picked = Vec::new();
    for (lp, tag) in step_log_probs.iter().zip(gold) {
        if let Some(t) = tag {
            picked.push(g.gather(*lp, *t)?);
        }
    }
    if picked.is_empty() {
        return Err(Error::data("token_nll: every position is padding"));
    }
    let n = picked.len() as f64;
    let stacked = g.concat_many(&picked, 0)?;
    let total = g.sum(stacked)?;
    g.scale(total, -1.0 / n)
}

/// Cost assigned to a candidate sequence against the gold tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    /// 0 if the last (target) tags match, 1 otherwise.
    LastTag,
    /// Fraction of non-PAD positions that differ.
    Hamming,
    /// 1 if the last tags match, 0 otherwise. Rewards correct predictions
    /// under minimization; kept selectable for fidelity experiments only.
    PaperLiteral,
}

impl CostKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CostKind::LastTag => "last_tag",
            CostKind::Hamming => "hamming",
            CostKind::PaperLiteral => "paper_literal",
        }
    }
}

/// Sequence cost; `gold` uses `None` for PAD slots. Lengths must agree.
pub fn cost(kind: CostKind, candidate: &[usize], gold: &[Option<usize>]) -> f64 {
    assert_eq!(candidate.len(), gold.len(), "cost: length mismatch");
    let last_match = match (candidate.last(), gold.last()) {
        (Some(&c), Some(Some(g))) => c == *g,
        _ => false,
    };
    match kind {
        CostKind::LastTag => {
            if last_match {
                0.0
            } else {
                1.0
            }
        }
        CostKind::PaperLiteral => {
            if last_match {
                1.0
            } else {
                0.0
            }
        }
        CostKind::Hamming => {
            let mut total = 0usize;
            let mut wrong = 0usize;
            for (c, g) in candidate.iter().zip(gold) {
                if let Some(g) = g {
                    total += 1;
                    if c != g {
                        wrong += 1;
                    }
                }
            }
            if total == 0 {
                0.0
            } else {
                wrong as f64 / total as f64
            }
        }
    }
}

/// Expected risk over a candidate set: sum_i cost_i * p_i / sum_j p_j with
/// p_i = exp(logp_i). Computed in log space (softmax over the candidate
/// log-probabilities), which is exactly the renormalized distribution and
/// cannot underflow. Gradients flow through the log-probabilities.
pub fn risk_loss(g: &mut Graph, candidate_logps: &[Node], costs: &[f64]) -> Result<Node> {
    if candidate_logps.is_empty() || candidate_logps.len() != costs.len() {
        return Err(Error::shape(
            "risk_loss",
            format!("{} candidates, {} costs", candidate_logps.len(), costs.len()),
        ));
    }
    let stacked = g.concat_many(candidate_logps, 0)?;
    let weights = g.softmax(stacked)?;
    let cost_vec = g.constant(Tensor::vector(costs.to_vec()));
    g.dot(weights, cost_vec)
}

/// Adam / AdamW with bias-corrected moments. The decoupled variant applies
/// weight decay directly to the parameters after the moment update instead
/// of folding it into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decoupled: bool,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64, decoupled: bool) -> Self {
        let m = store.iter().map(|(_, p)| vec![0.0; p.grad.len()]).collect();
        let v = store.iter().map(|(_, p)| vec![0.0; p.grad.len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            decoupled,
            step: 0,
            m,
            v,
        }
    }

    pub fn for_config(store: &ParamStore, cfg: &Config) -> Self {
        Adam::new(
            store,
            cfg.lr,
            cfg.weight_decay,
            cfg.optimizer == OptimizerKind::AdamW,
        )
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Apply one update from the gradients accumulated in the store.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if !store.param(id).trainable {
                continue;
            }
            let idx = id.0;
            let grad = store.grad(id).to_vec();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            {
                let values = store.value_mut(id);
                for i in 0..values.len() {
                    let mut g = grad[i];
                    if !self.decoupled {
                        g += self.weight_decay * values[i];
                    }
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    if self.decoupled {
                        values[i] -= self.lr * self.weight_decay * values[i];
                    }
                }
            }
        }
    }
}

/// Scale all gradients so the global L2 norm is at most `max_norm`; returns
/// the pre-clip norm.
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0);
    let mut sq = 0.0;
    for (_, p) in store.iter() {
        if p.trainable {
            sq += p.grad.iter().map(|g| g * g).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        store.scale_grads(max_norm / norm);
    }
    norm
}

/// Reduce-on-plateau: multiply the learning rate by `factor` after
/// `patience` consecutive epochs without improvement of the tracked metric
/// (higher is better). The rate never increases.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    best: f64,
    since_improvement: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64) -> Self {
        assert!(patience >= 1);
        assert!((0.0..=1.0).contains(&factor) && factor > 0.0);
        PlateauScheduler {
            patience,
            factor,
            best: f64::NEG_INFINITY,
            since_improvement: 0,
        }
    }

    /// Feed one epoch's metric; returns the updated learning rate.
    pub fn update(&mut self, metric: f64, lr: f64) -> f64 {
        if metric > self.best {
            self.best = metric;
            self.since_improvement = 0;
            lr
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                self.since_improvement = 0;
                lr * self.factor
            } else {
                lr
            }
        }
    }
}

/// Last-tag accuracy of a model over a window set, fanning out per window
/// with read-only parameters.
pub fn last_tag_accuracy_of(
    model: &(impl WindowModel + ?Sized),
    store: &ParamStore,
    windows: &[EncodedWindow],
    beam: usize,
    alpha_lp: f64,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::data("accuracy over an empty window set"));
    }
    let results = par_map(windows, |w| -> Result<bool> {
        let predicted = model.predict_last(store, w, beam, alpha_lp)?;
        let gold = w
            .target()
            .gold_tag
            .ok_or_else(|| Error::data("untagged target during evaluation"))?;
        Ok(predicted == gold)
    });
    let mut correct = 0usize;
    for r in results {
        if r? {
            correct += 1;
        }
    }
    Ok(correct as f64 / windows.len() as f64)
}

/// Mean expected risk (the fine-tuning objective) of a model over a window
/// set, using beam candidates of width `beam`.
pub fn mean_expected_risk(
    model: &Seq2Seq,
    store: &ParamStore,
    windows: &[EncodedWindow],
    beam: usize,
    alpha_lp: f64,
    kind: CostKind,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::data("risk over an empty window set"));
    }
    let risks = par_map(windows, |w| -> Result<f64> {
        let gold = w.gold_tags()?;
        let hyps = model.beam_window(store, w, beam, alpha_lp)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for h in &hyps {
            let p = h.prob();
            num += cost(kind, &h.tags, &gold) * p;
            den += p;
        }
        Ok(num / den)
    });
    let mut total = 0.0;
    for r in &risks {
        match r {
            Ok(v) => total += v,
            Err(e) => return Err(Error::data(e.to_string())),
        }
    }
    Ok(total / windows.len() as f64)
}

/// Optional early-exit condition checked once per epoch.
#[derive(Debug, Clone, Copy, Default)]
pub struct StopWhen {
    pub train_acc_at_least: Option<f64>,
    pub dev_acc_at_least: Option<f64>,
}

impl StopWhen {
    fn is_some(&self) -> bool {
        self.train_acc_at_least.is_some() || self.dev_acc_at_least.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_acc: f64,
    pub lr: f64,
}

pub struct TrainResult {
    /// Parameter values at the best dev accuracy.
    pub best_params: Vec<(String, Tensor)>,
    pub best_dev_acc: f64,
    pub history: Vec<EpochRecord>,
}

fn write_log_line(log: &mut Option<&mut dyn Write>, rec: &EpochRecord) -> Result<()> {
    if let Some(w) = log {
        writeln!(
            w,
            "{}\t{:.6}\t{:.6}\t{:.6}",
            rec.epoch, rec.train_loss, rec.dev_acc, rec.lr
        )?;
    }
    Ok(())
}

/// Token-level training: shuffled windows, mini-batches of accumulated
/// gradients, global-norm clipping, Adam/AdamW, per-epoch dev accuracy on
/// the last tag, plateau scheduling, best-dev snapshotting. Stops at
/// `max_epochs` or when the learning rate falls below `min_lr`.
pub fn train(
    model: &dyn WindowModel,
    store: &mut ParamStore,
    train_windows: &[EncodedWindow],
    dev_windows: &[EncodedWindow],
    cfg: &Config,
    rng: &mut Rng,
    mut log: Option<&mut dyn Write>,
    stop: StopWhen,
) -> Result<TrainResult> {
    if train_windows.is_empty() || dev_windows.is_empty() {
        return Err(Error::data("training requires non-empty train and dev splits"));
    }
    let mut optimizer = Adam::for_config(store, cfg);
    let mut scheduler = PlateauScheduler::new(cfg.patience, cfg.decay);
    let mut best: Option<TrainResult> = None;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_windows.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            store.zero_grads();
            for &wi in batch {
                let mut g = Graph::new();
                let loss = model.loss(&mut g, store, &train_windows[wi], rng, true)?;
                epoch_loss += g.scalar_value(loss);
                g.backward(loss)?;
                g.flush_param_grads(store);
            }
            store.scale_grads(1.0 / batch.len() as f64);
            clip_gradients(store, cfg.clip);
            optimizer.step(store);
        }
        let train_loss = epoch_loss / train_windows.len() as f64;

        // Dev selection is greedy during token-level training.
        let dev_acc = last_tag_accuracy_of(model, store, dev_windows, 1, cfg.alpha_lp)?;
        let rec = EpochRecord {
            epoch,
            train_loss,
            dev_acc,
            lr: optimizer.lr,
        };
        write_log_line(&mut log, &rec)?;
        history.push(rec);

        if best.as_ref().is_none_or(|b| dev_acc > b.best_dev_acc) {
            best = Some(TrainResult {
                best_params: store.snapshot(),
                best_dev_acc: dev_acc,
                history: Vec::new(),
            });
        }

        if stop.is_some() {
            let hit_dev = stop.dev_acc_at_least.is_none_or(|t| dev_acc >= t);
            let hit_train = match stop.train_acc_at_least {
                None => true,
                Some(t) => {
                    last_tag_accuracy_of(model, store, train_windows, 1, cfg.alpha_lp)? >= t
                }
            };
            if hit_dev && hit_train {
                break;
            }
        }

        optimizer.lr = scheduler.update(dev_acc, optimizer.lr);
        if optimizer.lr < cfg.min_lr {
            break;
        }
    }

    let mut result = best.expect("at least one epoch ran");
    result.history = history;
    Ok(result)
}

/// Expected-risk fine-tuning from a converged token-level model. Per
/// window: beam candidates at `B_train`, renormalized expected cost,
/// backprop through the candidate log-probabilities, one optimizer step.
/// Dev selection uses last-tag accuracy with beam `B_inf`.
pub fn finetune_risk(
    model: &Seq2Seq,
    store: &mut ParamStore,
    train_windows: &[EncodedWindow],
    dev_windows: &[EncodedWindow],
    cfg: &Config,
    rng: &mut Rng,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainResult> {
    if train_windows.is_empty() || dev_windows.is_empty() {
        return Err(Error::data("fine-tuning requires non-empty train and dev splits"));
    }
    let mut optimizer = Adam::for_config(store, cfg);
    let mut scheduler = PlateauScheduler::new(cfg.patience, cfg.decay);
    let mut best: Option<TrainResult> = None;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_windows.len()).collect();

    for epoch in 1..=cfg.risk_epochs {
        rng.shuffle(&mut order);
        let mut epoch_risk = 0.0;
        for &wi in order.iter() {
            let window = &train_windows[wi];
            let gold = window.gold_tags()?;
            store.zero_grads();
            let mut g = Graph::new();
            let rescored = model.rescored_candidates(&mut g, store, window, cfg.b_train, cfg.alpha_lp)?;
            let costs: Vec<f64> = rescored
                .iter()
                .map(|(tags, _)| cost(cfg.risk_cost, tags, &gold))
                .collect();
            let logps: Vec<Node> = rescored.iter().map(|(_, n)| *n).collect();
            let loss = risk_loss(&mut g, &logps, &costs)?;
            epoch_risk += g.scalar_value(loss);
            g.backward(loss)?;
            g.flush_param_grads(store);
            clip_gradients(store, cfg.clip);
            optimizer.step(store);
        }
        let train_risk = epoch_risk / train_windows.len() as f64;

        let dev_acc = last_tag_accuracy_of(model, store, dev_windows, cfg.b_inf, cfg.alpha_lp)?;
        let rec = EpochRecord {
            epoch,
            train_loss: train_risk,
            dev_acc,
            lr: optimizer.lr,
        };
        write_log_line(&mut log, &rec)?;
        history.push(rec);

        if best.as_ref().is_none_or(|b| dev_acc > b.best_dev_acc) {
            best = Some(TrainResult {
                best_params: store.snapshot(),
                best_dev_acc: dev_acc,
                history: Vec::new(),
            });
        }

        optimizer.lr = scheduler.update(dev_acc, optimizer.lr);
        if optimizer.lr < cfg.min_lr {
            break;
        }
    }

    let mut result = best.expect("at least one epoch ran");
    result.history = history;
    Ok(result)
}
