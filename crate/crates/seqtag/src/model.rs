//! Model assembly: the seq2seq tagger (embedding + encoder + decoder) and
//! the trait the training loop drives.

use crate::beam::{beam_search, candidate_set, Hypothesis};
use crate::corpus::EncodedWindow;
use crate::decoder::{AttentionMode, DecoderIds, Feed};
use crate::encoder::{EncoderIds, EncoderKind, EncoderOutput};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Node, ParamId, ParamStore, Rng, Tensor};
use crate::objectives::token_nll;

/// Architecture hyperparameters needed to rebuild a model around a
/// parameter store.
#[derive(Debug, Clone, Copy)]
pub struct ModelSpec {
    pub encoder: EncoderKind,
    pub attention: AttentionMode,
    pub d_emb: usize,
    pub d_enc: usize,
    pub d_dec: usize,
    pub dropout: f64,
}

/// Anything trainable per window with a last-tag prediction.
pub trait WindowModel: Sync {
    fn loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        window: &EncodedWindow,
        rng: &mut Rng,
        training: bool,
    ) -> Result<Node>;

    fn predict_last(
        &self,
        store: &ParamStore,
        window: &EncodedWindow,
        beam: usize,
        alpha_lp: f64,
    ) -> Result<usize>;
}

pub struct Seq2Seq {
    pub spec: ModelSpec,
    pub word_emb: ParamId,
    pub encoder: EncoderIds,
    pub decoder: DecoderIds,
    pub n_tags: usize,
}

/// A full-window prediction with per-step attention rows for export.
pub struct WindowPrediction {
    pub tags: Vec<usize>,
    pub score: f64,
    pub attention: Vec<Vec<f64>>,
}

impl Seq2Seq {
    pub fn init(
        store: &mut ParamStore,
        spec: ModelSpec,
        n_tags: usize,
        word_table: Tensor,
        rng: &mut Rng,
    ) -> Self {
        assert_eq!(word_table.shape()[1], spec.d_emb);
        let word_emb = store.add("emb", word_table, true);
        let encoder = EncoderIds::init(store, spec.encoder, spec.d_emb, spec.d_enc, rng);
        let decoder = DecoderIds::init(store, spec.attention, n_tags, spec.d_enc, spec.d_dec, rng);
        Seq2Seq {
            spec,
            word_emb,
            encoder,
            decoder,
            n_tags,
        }
    }

    pub fn load(store: &ParamStore, spec: ModelSpec) -> Result<Self> {
        let word_emb = store.id("emb")?;
        let encoder = EncoderIds::load(store, spec.encoder)?;
        let decoder = DecoderIds::load(store, spec.attention)?;
        let n_tags = decoder.n_tags;
        Ok(Seq2Seq {
            spec,
            word_emb,
            encoder,
            decoder,
            n_tags,
        })
    }

    pub fn encode_window(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        window: &EncodedWindow,
        rng: &mut Rng,
        training: bool,
    ) -> Result<EncoderOutput> {
        let table = g.bind(store, self.word_emb);
        let dropout = if training { self.spec.dropout } else { 0.0 };
        self.encoder
            .encode(g, store, table, window, dropout, rng, training)
    }

    /// Teacher-forced negative log-likelihood of the gold tags, averaged
    /// over non-PAD positions.
    pub fn window_nll(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        window: &EncodedWindow,
        rng: &mut Rng,
        training: bool,
    ) -> Result<Node> {
        let gold = window.gold_tags()?;
        let enc = self.encode_window(g, store, window, rng, training)?;
        let dec = self.decoder.bind(g, store);
        let decoded = dec.decode_window(g, &enc, Feed::Teacher(&gold))?;
        token_nll(g, &decoded.step_log_probs, &gold)
    }

    /// Ranked beam hypotheses for one window (inference path, no dropout).
    pub fn beam_window(
        &self,
        store: &ParamStore,
        window: &EncodedWindow,
        beam: usize,
        alpha_lp: f64,
    ) -> Result<Vec<Hypothesis>> {
        let mut g = Graph::new();
        let mut rng = Rng::new(0); // inference path draws nothing
        let enc = self.encode_window(&mut g, store, window, &mut rng, false)?;
        let dec = self.decoder.bind(&mut g, store);
        beam_search(&mut g, &dec, &enc, beam, alpha_lp)
    }

    /// Best hypothesis with attention rows.
    pub fn predict_window(
        &self,
        store: &ParamStore,
        window: &EncodedWindow,
        beam: usize,
        alpha_lp: f64,
    ) -> Result<WindowPrediction> {
        let mut hyps = self.beam_window(store, window, beam, alpha_lp)?;
        let best = hyps.swap_remove(0);
        Ok(WindowPrediction {
            tags: best.tags,
            score: best.score,
            attention: best.attention,
        })
    }

    /// Candidate sequences and their probabilities plus, for each candidate,
    /// a differentiable log-probability node from a teacher-forced re-score.
    /// The candidate structures themselves are treated as fixed: gradients
    /// flow only through the log-probabilities.
    pub fn rescored_candidates(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        window: &EncodedWindow,
        beam: usize,
        alpha_lp: f64,
    ) -> Result<Vec<(Vec<usize>, Node)>> {
        let mut rng = Rng::new(0);
        // Search without gradients first.
        let candidates: Vec<Vec<usize>> = {
            let mut gs = Graph::new();
            let enc = self.encode_window(&mut gs, store, window, &mut rng, false)?;
            let dec = self.decoder.bind(&mut gs, store);
            candidate_set(&mut gs, &dec, &enc, beam, alpha_lp)?
                .into_iter()
                .map(|(h, _)| h.tags)
                .collect()
        };
        // Re-score each candidate on the gradient graph.
        let enc = self.encode_window(g, store, window, &mut rng, false)?;
        let dec = self.decoder.bind(g, store);
        let mut out = Vec::with_capacity(candidates.len());
        for tags in candidates {
            let teacher: Vec<Option<usize>> = tags.iter().map(|&t| Some(t)).collect();
            let decoded = dec.decode_window(g, &enc, Feed::Teacher(&teacher))?;
            let mut logp: Option<Node> = None;
            for (lp, &t) in decoded.step_log_probs.iter().zip(&tags) {
                let picked = g.gather(*lp, t)?;
                logp = Some(match logp {
                    None => picked,
                    Some(acc) => g.add(acc, picked)?,
                });
            }
            out.push((tags, logp.expect("windows are non-empty")));
        }
        Ok(out)
    }
}

impl WindowModel for Seq2Seq {
    fn loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        window: &EncodedWindow,
        rng: &mut Rng,
        training: bool,
    ) -> Result<Node> {
        self.window_nll(g, store, window, rng, training)
    }

    fn predict_last(
        &self,
        store: &ParamStore,
        window: &EncodedWindow,
        beam: usize,
        alpha_lp: f64,
    ) -> Result<usize> {
        let p = self.predict_window(store, window, beam, alpha_lp)?;
        p.tags
            .last()
            .copied()
            .ok_or_else(|| Error::shape("predict", "empty window"))
    }
}
