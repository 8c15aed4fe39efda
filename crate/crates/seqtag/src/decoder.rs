//! Autoregressive tag decoder with four attention regimes: none, vanilla
//! alignment scoring, soft guided, and hard guided.
//!
//! Guided attention exploits the one-to-one alignment between window slots
//! and output tags: hard guidance pins step k to encoder slot k; soft
//! guidance adds 1 to the aligned raw score before the softmax.

use crate::encoder::{EncoderOutput, GruCell, GruParamIds};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Node, ParamId, ParamStore, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    None,
    Vanilla,
    SoftGuided,
    HardGuided,
}

impl AttentionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttentionMode::None => "none",
            AttentionMode::Vanilla => "vanilla",
            AttentionMode::SoftGuided => "soft",
            AttentionMode::HardGuided => "hard",
        }
    }
}

/// Alignment scorer parameters: a(h, s) = v . tanh(h W_dec + s W_enc + b).
#[derive(Debug, Clone)]
pub struct ScorerIds {
    pub w_dec: ParamId,
    pub w_enc: ParamId,
    pub b: ParamId,
    pub v: ParamId,
}

impl ScorerIds {
    pub fn init(store: &mut ParamStore, d_dec: usize, d_enc2: usize, rng: &mut Rng) -> Self {
        let k = 1.0 / (d_dec as f64).sqrt();
        ScorerIds {
            w_dec: store.add("dec.att.w_dec", Tensor::uniform(vec![d_dec, d_dec], -k, k, rng), true),
            w_enc: store.add("dec.att.w_enc", Tensor::uniform(vec![d_enc2, d_dec], -k, k, rng), true),
            b: store.add("dec.att.b", Tensor::zeros(vec![d_dec]), true),
            v: store.add("dec.att.v", Tensor::uniform(vec![d_dec], -k, k, rng), true),
        }
    }

    pub fn load(store: &ParamStore) -> Result<Self> {
        Ok(ScorerIds {
            w_dec: store.id("dec.att.w_dec")?,
            w_enc: store.id("dec.att.w_enc")?,
            b: store.id("dec.att.b")?,
            v: store.id("dec.att.v")?,
        })
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.w_dec, self.w_enc, self.b, self.v]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Scorer {
    w_dec: Node,
    w_enc: Node,
    b: Node,
    v: Node,
}

impl Scorer {
    /// Feedforward alignment score between a decoder state and one encoder
    /// slot state.
    pub fn score(&self, g: &mut Graph, h_dec: Node, h_slot: Node) -> Result<Node> {
        let hd = g.vec_mat(h_dec, self.w_dec)?;
        let hs = g.vec_mat(h_slot, self.w_enc)?;
        let s = g.add(hd, hs)?;
        let s = g.add(s, self.b)?;
        let t = g.tanh(s)?;
        g.dot(self.v, t)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderIds {
    pub mode: AttentionMode,
    pub tag_emb: ParamId,
    pub gru: GruParamIds,
    pub bridge_w: ParamId,
    pub bridge_b: ParamId,
    pub scorer: Option<ScorerIds>,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub n_tags: usize,
    pub d_dec: usize,
}

impl DecoderIds {
    /// Tag-embedding rows: one per real tag, then BOS, then PAD.
    pub fn init(
        store: &mut ParamStore,
        mode: AttentionMode,
        n_tags: usize,
        d_enc: usize,
        d_dec: usize,
        rng: &mut Rng,
    ) -> Self {
        let d_enc2 = 2 * d_enc;
        let k_emb = 1.0 / (d_dec as f64).sqrt();
        let tag_emb = store.add(
            "dec.tag_emb",
            Tensor::uniform(vec![n_tags + 2, d_dec], -k_emb, k_emb, rng),
            true,
        );
        let d_in = match mode {
            AttentionMode::None => d_dec,
            _ => d_dec + d_enc2,
        };
        let gru = GruParamIds::init(store, "dec.gru", d_in, d_dec, rng);
        let bridge_w = store.add(
            "dec.bridge_w",
            Tensor::uniform(vec![d_enc2, d_dec], -k_emb, k_emb, rng),
            true,
        );
        let bridge_b = store.add("dec.bridge_b", Tensor::zeros(vec![d_dec]), true);
        let scorer = match mode {
            AttentionMode::Vanilla | AttentionMode::SoftGuided => {
                Some(ScorerIds::init(store, d_dec, d_enc2, rng))
            }
            _ => None,
        };
        let k_out = 1.0 / (n_tags as f64).sqrt();
        let out_w = store.add(
            "dec.out_w",
            Tensor::uniform(vec![d_dec, n_tags], -k_out, k_out, rng),
            true,
        );
        let out_b = store.add("dec.out_b", Tensor::zeros(vec![n_tags]), true);
        DecoderIds {
            mode,
            tag_emb,
            gru,
            bridge_w,
            bridge_b,
            scorer,
            out_w,
            out_b,
            n_tags,
            d_dec,
        }
    }

    pub fn load(store: &ParamStore, mode: AttentionMode) -> Result<Self> {
        let tag_emb = store.id("dec.tag_emb")?;
        let n_tags = store.shape(tag_emb)[0] - 2;
        let d_dec = store.shape(tag_emb)[1];
        let scorer = match mode {
            AttentionMode::Vanilla | AttentionMode::SoftGuided => Some(ScorerIds::load(store)?),
            _ => None,
        };
        Ok(DecoderIds {
            mode,
            tag_emb,
            gru: GruParamIds::load(store, "dec.gru")?,
            bridge_w: store.id("dec.bridge_w")?,
            bridge_b: store.id("dec.bridge_b")?,
            scorer,
            out_w: store.id("dec.out_w")?,
            out_b: store.id("dec.out_b")?,
            n_tags,
            d_dec,
        })
    }

    pub fn bos_row(&self) -> usize {
        self.n_tags
    }

    pub fn pad_row(&self) -> usize {
        self.n_tags + 1
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> DecoderBound {
        DecoderBound {
            mode: self.mode,
            tag_emb: g.bind(store, self.tag_emb),
            gru: self.gru.bind(g, store),
            bridge_w: g.bind(store, self.bridge_w),
            bridge_b: g.bind(store, self.bridge_b),
            scorer: self.scorer.as_ref().map(|s| Scorer {
                w_dec: g.bind(store, s.w_dec),
                w_enc: g.bind(store, s.w_enc),
                b: g.bind(store, s.b),
                v: g.bind(store, s.v),
            }),
            out_w: g.bind(store, self.out_w),
            out_b: g.bind(store, self.out_b),
            n_tags: self.n_tags,
        }
    }
}

/// Previous-tag input to a decoder step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrevTag {
    Bos,
    Tag(usize),
    Pad,
}

pub struct StepOut {
    pub h: Node,
    /// Log-probabilities over the real tags.
    pub log_probs: Node,
    /// Attention row over encoder slots; `None` when mode is `None`.
    pub attention: Option<Node>,
    /// Context vector; `None` when mode is `None`.
    pub context: Option<Node>,
}

pub struct DecoderBound {
    pub mode: AttentionMode,
    tag_emb: Node,
    gru: GruCell,
    bridge_w: Node,
    bridge_b: Node,
    scorer: Option<Scorer>,
    out_w: Node,
    out_b: Node,
    pub n_tags: usize,
}

impl DecoderBound {
    /// Learned bridge from the encoder summary to the initial decoder state.
    pub fn init_state(&self, g: &mut Graph, summary: Node) -> Result<Node> {
        let a = g.affine(summary, self.bridge_w, self.bridge_b)?;
        g.tanh(a)
    }

    fn embed_prev(&self, g: &mut Graph, prev: PrevTag) -> Result<Node> {
        let row = match prev {
            PrevTag::Bos => self.n_tags,
            PrevTag::Pad => self.n_tags + 1,
            PrevTag::Tag(t) => {
                if t >= self.n_tags {
                    return Err(Error::shape("decoder", format!("tag id {t} out of range")));
                }
                t
            }
        };
        let e = g.lookup(self.tag_emb, &[row])?;
        g.row(e, 0)
    }

    /// Attention row and context vector for decoding step k given the
    /// previous decoder state.
    pub fn attention(
        &self,
        g: &mut Graph,
        h_prev: Node,
        slots: &[Node],
        k: usize,
    ) -> Result<(Node, Node)> {
        let width = slots.len();
        if k >= width {
            return Err(Error::shape("attention", format!("step {k} beyond width {width}")));
        }
        match self.mode {
            AttentionMode::None => unreachable!("attention() is not called without attention"),
            AttentionMode::HardGuided => {
                // No scoring at all: the weight row is exactly one-hot at k.
                let mut row = vec![0.0; width];
                row[k] = 1.0;
                let alpha = g.constant(Tensor::vector(row));
                Ok((alpha, slots[k]))
            }
            AttentionMode::Vanilla | AttentionMode::SoftGuided => {
                let scorer = self.scorer.as_ref().expect("scoring modes have a scorer");
                let mut scores = Vec::with_capacity(width);
                for (j, &s) in slots.iter().enumerate() {
                    let mut a = scorer.score(g, h_prev, s)?;
                    if self.mode == AttentionMode::SoftGuided && j == k {
                        let one = g.scalar(1.0);
                        a = g.add(a, one)?;
                    }
                    scores.push(a);
                }
                let stacked = g.concat_many(&scores, 0)?;
                let alpha = g.softmax(stacked)?;
                let mut context: Option<Node> = None;
                for (j, &s) in slots.iter().enumerate() {
                    let w = g.gather(alpha, j)?;
                    let part = g.mul(w, s)?;
                    context = Some(match context {
                        None => part,
                        Some(c) => g.add(c, part)?,
                    });
                }
                Ok((alpha, context.expect("windows are non-empty")))
            }
        }
    }

    /// One decoding step: embed the previous tag, attend (unless mode is
    /// `None`), advance the GRU, project to tag logits.
    pub fn step(
        &self,
        g: &mut Graph,
        slots: &[Node],
        h_prev: Node,
        prev: PrevTag,
        k: usize,
    ) -> Result<StepOut> {
        let emb = self.embed_prev(g, prev)?;
        let (input, attention, context) = match self.mode {
            AttentionMode::None => (emb, None, None),
            _ => {
                let (alpha, c) = self.attention(g, h_prev, slots, k)?;
                (g.concat(emb, c, 0)?, Some(alpha), Some(c))
            }
        };
        let h = self.gru.step(g, input, h_prev)?;
        let logits = g.affine(h, self.out_w, self.out_b)?;
        let log_probs = g.log_softmax(logits)?;
        Ok(StepOut {
            h,
            log_probs,
            attention,
            context,
        })
    }
}

/// Feedback regime for whole-window decoding.
pub enum Feed<'a> {
    /// Gold tags per slot (`None` marks a PAD slot) fed as previous-tag
    /// inputs; used for training.
    Teacher(&'a [Option<usize>]),
    /// The decoder's own argmax is fed back.
    Greedy,
}

pub struct DecodedWindow {
    pub step_log_probs: Vec<Node>,
    pub attention: Vec<Option<Node>>,
    /// Argmax tag per step (ties to the lowest tag index).
    pub predictions: Vec<usize>,
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl DecoderBound {
    pub fn decode_window(
        &self,
        g: &mut Graph,
        enc: &EncoderOutput,
        feed: Feed<'_>,
    ) -> Result<DecodedWindow> {
        let width = enc.slot_states.len();
        if let Feed::Teacher(tags) = &feed {
            if tags.len() != width {
                return Err(Error::shape(
                    "decode_window",
                    format!("{} teacher tags for width {width}", tags.len()),
                ));
            }
        }
        let mut h = self.init_state(g, enc.summary)?;
        let mut step_log_probs = Vec::with_capacity(width);
        let mut attention = Vec::with_capacity(width);
        let mut predictions = Vec::with_capacity(width);
        for k in 0..width {
            let prev = if k == 0 {
                PrevTag::Bos
            } else {
                match &feed {
                    Feed::Teacher(tags) => match tags[k - 1] {
                        Some(t) => PrevTag::Tag(t),
                        None => PrevTag::Pad,
                    },
                    Feed::Greedy => PrevTag::Tag(predictions[k - 1]),
                }
            };
            let out = self.step(g, &enc.slot_states, h, prev, k)?;
            predictions.push(argmax(g.value(out.log_probs)));
            step_log_probs.push(out.log_probs);
            attention.push(out.attention);
            h = out.h;
        }
        Ok(DecodedWindow {
            step_log_probs,
            attention,
            predictions,
        })
    }
}
