//! Breadth-synchronous beam search over tag sequences.
//!
//! Every output has exactly one tag per window slot, so hypotheses complete
//! after W steps with no end-of-sequence symbol. Scores are accumulated
//! log-probabilities divided by the length-normalization coefficient
//! lp(n) = (5 + n)^alpha / 6^alpha; within one step all hypotheses share a
//! length, so normalization affects reported scores but not pruning.

use crate::decoder::{DecoderBound, PrevTag};
use crate::encoder::EncoderOutput;
use crate::error::Result;
use crate::numerics::{Graph, Node};

/// Length-normalization coefficient from beam-search practice in
/// translation systems.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

/// A completed beam hypothesis.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub tags: Vec<usize>,
    /// Accumulated log P(tags | window); never positive.
    pub logp: f64,
    /// logp / lp(len).
    pub score: f64,
    /// One attention row per decoding step (empty when the decoder has no
    /// attention).
    pub attention: Vec<Vec<f64>>,
}

impl Hypothesis {
    /// P(tags | window).
    pub fn prob(&self) -> f64 {
        self.logp.exp()
    }
}

struct Live {
    tags: Vec<usize>,
    logp: f64,
    score: f64,
    state: Node,
    attention: Vec<Vec<f64>>,
}

/// Ranking: score desc, then logp desc, then tag sequence ascending. The
/// full key makes rankings reproducible under exact ties.
fn rank(a: &Live, b: &Live) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.logp.total_cmp(&a.logp))
        .then_with(|| a.tags.cmp(&b.tags))
}

/// Explore tag sequences for one encoded window, keeping the `beam` best
/// hypotheses per step, and return every completed hypothesis ranked best
/// first (at most `beam` of them).
pub fn beam_search(
    g: &mut Graph,
    decoder: &DecoderBound,
    enc: &EncoderOutput,
    beam: usize,
    alpha_lp: f64,
) -> Result<Vec<Hypothesis>> {
    assert!(beam >= 1, "beam width must be >= 1");
    let width = enc.slot_states.len();
    let n_tags = decoder.n_tags;
    let h0 = decoder.init_state(g, enc.summary)?;
    let mut live = vec![Live {
        tags: Vec::new(),
        logp: 0.0,
        score: 0.0,
        state: h0,
        attention: Vec::new(),
    }];

    for k in 0..width {
        let lp = length_penalty(k + 1, alpha_lp);
        let mut expanded = Vec::with_capacity(live.len() * n_tags);
        for hyp in &live {
            let prev = match hyp.tags.last() {
                None => PrevTag::Bos,
                Some(&t) => PrevTag::Tag(t),
            };
            let out = decoder.step(g, &enc.slot_states, hyp.state, prev, k)?;
            let row = g.value(out.log_probs).to_vec();
            let alpha_row = out.attention.map(|a| g.value(a).to_vec());
            for (t, &lp_tag) in row.iter().enumerate() {
                let mut tags = hyp.tags.clone();
                tags.push(t);
                let logp = hyp.logp + lp_tag;
                let mut attention = hyp.attention.clone();
                if let Some(a) = &alpha_row {
                    attention.push(a.clone());
                }
                expanded.push(Live {
                    tags,
                    logp,
                    score: logp / lp,
                    state: out.h,
                    attention,
                });
            }
        }
        expanded.sort_by(rank);
        expanded.truncate(beam);
        live = expanded;
    }

    Ok(live
        .into_iter()
        .map(|h| Hypothesis {
            tags: h.tags,
            logp: h.logp,
            score: h.score,
            attention: h.attention,
        })
        .collect())
}

/// The candidate set for expected-risk training: completed hypotheses plus
/// their sequence probabilities.
pub fn candidate_set(
    g: &mut Graph,
    decoder: &DecoderBound,
    enc: &EncoderOutput,
    beam: usize,
    alpha_lp: f64,
) -> Result<Vec<(Hypothesis, f64)>> {
    Ok(beam_search(g, decoder, enc, beam, alpha_lp)?
        .into_iter()
        .map(|h| {
            let p = h.prob();
            (h, p)
        })
        .collect())
}
