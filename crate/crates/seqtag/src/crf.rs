//! Linear-chain CRF baseline: unary potentials projected from encoder slot
//! states plus a learned tag-transition matrix, globally normalized by the
//! forward algorithm in log space.
//!
//! The chain covers only the non-PAD slots of a window (padding contributes
//! no potentials); the transition matrix has one extra row for the
//! begin-of-sequence pseudo-tag.

use crate::corpus::EncodedWindow;
use crate::encoder::{EncoderIds, EncoderKind};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, WindowModel};
use crate::numerics::{Graph, Node, ParamId, ParamStore, Rng, Tensor};

/// Log-potential of one tag path: sum of unary scores plus transition
/// scores, starting from the BOS row of the transition matrix.
pub fn crf_score(
    g: &mut Graph,
    unaries: &[Node],
    transitions: Node,
    tags: &[usize],
    n_tags: usize,
) -> Result<Node> {
    if unaries.len() != tags.len() || unaries.is_empty() {
        return Err(Error::shape(
            "crf_score",
            format!("{} unaries vs {} tags", unaries.len(), tags.len()),
        ));
    }
    let mut total: Option<Node> = None;
    let mut prev_row = n_tags; // BOS
    for (unary, &tag) in unaries.iter().zip(tags) {
        let u = g.gather(*unary, tag)?;
        let row = g.row(transitions, prev_row)?;
        let tr = g.gather(row, tag)?;
        let step = g.add(u, tr)?;
        total = Some(match total {
            None => step,
            Some(acc) => g.add(acc, step)?,
        });
        prev_row = tag;
    }
    Ok(total.expect("non-empty chain"))
}

/// Log partition function by the forward recurrence:
/// alpha_0 = unary_0 + transitions[BOS], then
/// alpha_t[c] = unary_t[c] + logsumexp_j(alpha_{t-1}[j] + transitions[j][c]).
pub fn crf_log_partition(
    g: &mut Graph,
    unaries: &[Node],
    transitions: Node,
    n_tags: usize,
) -> Result<Node> {
    if unaries.is_empty() {
        return Err(Error::shape("crf_log_partition", "empty chain"));
    }
    let bos = g.row(transitions, n_tags)?;
    let mut alpha = g.add(unaries[0], bos)?;
    if unaries.len() > 1 {
        let trans_t = g.transpose(transitions)?; // [n_tags, n_tags + 1]
        for unary in &unaries[1..] {
            let mut cols = Vec::with_capacity(n_tags);
            for c in 0..n_tags {
                let col = g.row(trans_t, c)?;
                let col = g.narrow(col, 0, n_tags)?; // drop the BOS row
                let scores = g.add(alpha, col)?;
                cols.push(g.logsumexp(scores)?);
            }
            let stacked = g.concat_many(&cols, 0)?;
            alpha = g.add(stacked, *unary)?;
        }
    }
    g.logsumexp(alpha)
}

/// Sequence negative log-likelihood: logZ - score(gold).
pub fn crf_nll(
    g: &mut Graph,
    unaries: &[Node],
    transitions: Node,
    tags: &[usize],
    n_tags: usize,
) -> Result<Node> {
    let score = crf_score(g, unaries, transitions, tags, n_tags)?;
    let log_z = crf_log_partition(g, unaries, transitions, n_tags)?;
    g.sub(log_z, score)
}

/// Max-product decoding over raw potential values. `transitions` is row
/// major with n_tags + 1 rows (last row BOS). Ties go to the lower tag
/// index.
pub fn viterbi(unaries: &[Vec<f64>], transitions: &[f64], n_tags: usize) -> Vec<usize> {
    assert!(!unaries.is_empty());
    let trans = |prev: usize, cur: usize| transitions[prev * n_tags + cur];
    let mut delta: Vec<f64> = (0..n_tags)
        .map(|c| unaries[0][c] + trans(n_tags, c))
        .collect();
    let mut backptr: Vec<Vec<usize>> = Vec::with_capacity(unaries.len());
    for unary in &unaries[1..] {
        let mut next = vec![f64::NEG_INFINITY; n_tags];
        let mut back = vec![0usize; n_tags];
        for (c, slot) in next.iter_mut().enumerate() {
            for p in 0..n_tags {
                let cand = delta[p] + trans(p, c);
                if cand > *slot {
                    *slot = cand;
                    back[c] = p;
                }
            }
            *slot += unary[c];
        }
        delta = next;
        backptr.push(back);
    }
    let mut best = 0;
    for c in 1..n_tags {
        if delta[c] > delta[best] {
            best = c;
        }
    }
    let mut path = vec![best];
    for back in backptr.iter().rev() {
        best = back[*path.last().expect("non-empty path")];
        path.push(best);
    }
    path.reverse();
    path
}

pub struct CrfModel {
    pub spec: ModelSpec,
    pub word_emb: ParamId,
    pub encoder: EncoderIds,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub transitions: ParamId,
    pub n_tags: usize,
}

impl CrfModel {
    pub fn init(
        store: &mut ParamStore,
        spec: ModelSpec,
        n_tags: usize,
        word_table: Tensor,
        rng: &mut Rng,
    ) -> Self {
        let word_emb = store.add("emb", word_table, true);
        let encoder = EncoderIds::init(store, spec.encoder, spec.d_emb, spec.d_enc, rng);
        let k = 1.0 / (n_tags as f64).sqrt();
        let proj_w = store.add(
            "crf.proj_w",
            Tensor::uniform(vec![2 * spec.d_enc, n_tags], -k, k, rng),
            true,
        );
        let proj_b = store.add("crf.proj_b", Tensor::zeros(vec![n_tags]), true);
        let transitions = store.add(
            "crf.transitions",
            Tensor::zeros(vec![n_tags + 1, n_tags]),
            true,
        );
        CrfModel {
            spec,
            word_emb,
            encoder,
            proj_w,
            proj_b,
            transitions,
            n_tags,
        }
    }

    pub fn load(store: &ParamStore, spec: ModelSpec) -> Result<Self> {
        let proj_w = store.id("crf.proj_w")?;
        let n_tags = store.shape(proj_w)[1];
        Ok(CrfModel {
            spec,
            word_emb: store.id("emb")?,
            encoder: EncoderIds::load(store, spec.encoder)?,
            proj_w,
            proj_b: store.id("crf.proj_b")?,
            transitions: store.id("crf.transitions")?,
            n_tags,
        })
    }

    /// Unary potentials for the non-PAD slots, plus the index of the first
    /// real slot.
    pub fn unaries(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        window: &EncodedWindow,
        rng: &mut Rng,
        training: bool,
    ) -> Result<(Vec<Node>, usize)> {
        let table = g.bind(store, self.word_emb);
        let dropout = if training { self.spec.dropout } else { 0.0 };
        let enc = self
            .encoder
            .encode(g, store, table, window, dropout, rng, training)?;
        let w = g.bind(store, self.proj_w);
        let b = g.bind(store, self.proj_b);
        let start = window.slots.iter().position(|s| !s.is_pad).expect("target is real");
        let mut unaries = Vec::with_capacity(window.width() - start);
        for state in &enc.slot_states[start..] {
            unaries.push(g.affine(*state, w, b)?);
        }
        Ok((unaries, start))
    }

    /// Best tag path for the non-PAD slots.
    pub fn viterbi_window(
        &self,
        store: &ParamStore,
        window: &EncodedWindow,
    ) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let mut rng = Rng::new(0);
        let (unaries, _) = self.unaries(&mut g, store, window, &mut rng, false)?;
        let values: Vec<Vec<f64>> = unaries.iter().map(|&u| g.value(u).to_vec()).collect();
        Ok(viterbi(&values, store.value(self.transitions), self.n_tags))
    }
}

impl WindowModel for CrfModel {
    fn loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        window: &EncodedWindow,
        rng: &mut Rng,
        training: bool,
    ) -> Result<Node> {
        let gold = window.gold_tags()?;
        let (unaries, start) = self.unaries(g, store, window, rng, training)?;
        let tags: Vec<usize> = gold[start..]
            .iter()
            .map(|t| t.ok_or_else(|| Error::data("untagged slot inside the chain")))
            .collect::<Result<_>>()?;
        let transitions = g.bind(store, self.transitions);
        crf_nll(g, &unaries, transitions, &tags, self.n_tags)
    }

    fn predict_last(
        &self,
        store: &ParamStore,
        window: &EncodedWindow,
        _beam: usize,
        _alpha_lp: f64,
    ) -> Result<usize> {
        let path = self.viterbi_window(store, window)?;
        path.last()
            .copied()
            .ok_or_else(|| Error::shape("viterbi", "empty chain"))
    }
}
