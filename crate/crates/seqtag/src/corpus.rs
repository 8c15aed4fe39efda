//! Conversation ingestion, vocabulary and tag-set construction, context
//! windowing, and pretrained-embedding loading.
//!
//! The input format is one JSON object per line:
//!
//! ```text
//! {"conversation_id": "c1", "utterances": [
//!     {"speaker": "A", "tokens": ["hello", "there"], "tag": "greeting"},
//!     {"speaker": "B", "text": "Hi !", "tag": "greeting"}
//! ]}
//! ```
//!
//! `tokens` wins when both `tokens` and `text` are present; `text` goes
//! through the whitespace tokenizer. Tags may be null at predict time.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

pub const UNK_WORD: &str = "<unk>";
pub const PAD_WORD: &str = "<pad>";
pub const UNK_ID: usize = 0;
pub const PAD_ID: usize = 1;

/// One speaker-attributed token sequence with an optional gold tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker: String,
    pub tokens: Vec<String>,
    pub tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

/// Lowercase, split on whitespace, strip leading/trailing punctuation from
/// each token. Tokens that are pure punctuation survive unchanged.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            let w = w.to_lowercase();
            let trimmed = w.trim_matches(|c: char| c.is_ascii_punctuation());
            if trimmed.is_empty() {
                w
            } else {
                trimmed.to_string()
            }
        })
        .collect()
}

#[derive(Deserialize)]
struct RawUtterance {
    speaker: String,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    tag: Option<String>,
}

#[derive(Deserialize)]
struct RawConversation {
    conversation_id: String,
    utterances: Vec<RawUtterance>,
}

/// Read a conversation file (one JSON object per line). Tokens are
/// lowercased and utterances truncated to `max_seq_len` tokens. Malformed
/// records are reported with their line number.
pub fn load_corpus(path: &Path, max_seq_len: usize) -> Result<Vec<Conversation>> {
    let file = File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    parse_corpus(BufReader::new(file), max_seq_len, &path.display().to_string())
}

pub fn parse_corpus<R: Read>(
    reader: BufReader<R>,
    max_seq_len: usize,
    source: &str,
) -> Result<Vec<Conversation>> {
    let mut conversations = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawConversation = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("{source}:{lineno}: malformed record: {e}")))?;
        if raw.utterances.is_empty() {
            return Err(Error::data(format!(
                "{source}:{lineno}: conversation {} has no utterances",
                raw.conversation_id
            )));
        }
        let mut utterances = Vec::with_capacity(raw.utterances.len());
        for (ui, u) in raw.utterances.into_iter().enumerate() {
            if u.speaker.is_empty() {
                return Err(Error::data(format!(
                    "{source}:{lineno}: utterance {ui}: empty speaker"
                )));
            }
            let mut tokens = match (u.tokens, u.text) {
                (Some(tokens), _) => tokens.iter().map(|t| t.to_lowercase()).collect(),
                (None, Some(text)) => tokenize(&text),
                (None, None) => {
                    return Err(Error::data(format!(
                        "{source}:{lineno}: utterance {ui}: needs \"tokens\" or \"text\""
                    )))
                }
            };
            if tokens.is_empty() {
                return Err(Error::data(format!(
                    "{source}:{lineno}: utterance {ui}: no tokens after tokenization"
                )));
            }
            tokens.truncate(max_seq_len);
            utterances.push(Utterance {
                speaker: u.speaker,
                tokens,
                tag: u.tag,
            });
        }
        conversations.push(Conversation {
            id: raw.conversation_id,
            utterances,
        });
    }
    Ok(conversations)
}

/// Split manifest: conversation ids per split, as a single JSON object
/// `{"train": [...], "dev": [...], "test": [...]}`.
#[derive(Debug, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

pub fn load_split_manifest(path: &Path) -> Result<SplitManifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::data(format!("{}: malformed manifest: {e}", path.display())))
}

/// Partition one corpus by a manifest; ids absent from every split are an
/// error, as are manifest ids missing from the corpus.
pub fn apply_manifest(
    conversations: Vec<Conversation>,
    manifest: &SplitManifest,
) -> Result<(Vec<Conversation>, Vec<Conversation>, Vec<Conversation>)> {
    let mut by_id: HashMap<String, Conversation> = HashMap::new();
    for c in conversations {
        if by_id.insert(c.id.clone(), c).is_some() {
            return Err(Error::data("duplicate conversation id in corpus".to_string()));
        }
    }
    let mut take = |ids: &[String]| -> Result<Vec<Conversation>> {
        ids.iter()
            .map(|id| {
                by_id
                    .remove(id)
                    .ok_or_else(|| Error::data(format!("manifest id {id} not found in corpus")))
            })
            .collect()
    };
    let train = take(&manifest.train)?;
    let dev = take(&manifest.dev)?;
    let test = take(&manifest.test)?;
    if !by_id.is_empty() {
        let mut left: Vec<_> = by_id.keys().cloned().collect();
        left.sort();
        return Err(Error::data(format!(
            "conversations not assigned to any split: {}",
            left.join(", ")
        )));
    }
    Ok((train, dev, test))
}

/// Word-to-index map with reserved UNK (index 0) and PAD (index 1). Indices
/// are assigned by descending frequency, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    pub min_count: usize,
}

impl Vocabulary {
    pub fn build(conversations: &[Conversation], min_count: usize) -> Result<Self> {
        if min_count < 1 {
            return Err(Error::config("min_count: must be >= 1"));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for c in conversations {
            for u in &c.utterances {
                for t in &u.tokens {
                    *counts.entry(t.as_str()).or_insert(0) += 1;
                }
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(w, n)| n >= min_count && w != UNK_WORD && w != PAD_WORD)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut words = vec![UNK_WORD.to_string(), PAD_WORD.to_string()];
        words.extend(kept.into_iter().map(|(w, _)| w.to_string()));
        Ok(Self::from_words(words, min_count))
    }

    /// Rebuild from an ordered word list (index = position), e.g. when
    /// loading a checkpoint.
    pub fn from_words(words: Vec<String>, min_count: usize) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary {
            words,
            index,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn encode(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn decode(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

pub const BOS_TAG: &str = "<bos>";
pub const PAD_TAG: &str = "<pad>";

/// Ordered dialog-act labels with reserved decoder-start (BOS) and padding
/// (PAD) symbols. Real tags occupy dense indices 0..n-1; BOS is n and PAD
/// is n+1, so neither can collide with a real tag.
#[derive(Debug, Clone, PartialEq)]
pub struct TagSet {
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagSet {
    pub fn build(conversations: &[Conversation]) -> Result<Self> {
        let mut seen: Vec<String> = Vec::new();
        for c in conversations {
            for u in &c.utterances {
                if let Some(tag) = &u.tag {
                    if !seen.contains(tag) {
                        seen.push(tag.clone());
                    }
                }
            }
        }
        seen.sort();
        if seen.is_empty() {
            return Err(Error::data("no gold tags found in training data"));
        }
        Ok(Self::from_tags(seen))
    }

    pub fn from_tags(tags: Vec<String>) -> Self {
        let index = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        TagSet { tags, index }
    }

    /// Number of real tags.
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn bos_id(&self) -> usize {
        self.tags.len()
    }

    pub fn pad_id(&self) -> usize {
        self.tags.len() + 1
    }

    pub fn encode(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn decode(&self, id: usize) -> &str {
        &self.tags[id]
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }
}

/// A fixed-length run of consecutive utterances. The last slot is always a
/// real utterance (the prediction target); padding, when present, is a
/// contiguous prefix.
#[derive(Debug, Clone)]
pub struct ContextWindow<'a> {
    /// `None` marks a PAD slot.
    pub slots: Vec<Option<&'a Utterance>>,
    pub conversation_id: &'a str,
    /// Index of the target utterance within its conversation.
    pub target_utterance: usize,
}

impl ContextWindow<'_> {
    pub fn width(&self) -> usize {
        self.slots.len()
    }

    pub fn target_index(&self) -> usize {
        self.slots.len() - 1
    }

    pub fn pad_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_none()).count()
    }
}

/// One window per utterance: window k targets utterance k and holds
/// utterances max(0, k-W+1)..=k, left-padded to exactly W slots.
pub fn make_windows(conversation: &Conversation, width: usize) -> Vec<ContextWindow<'_>> {
    assert!(width >= 1, "window width must be >= 1");
    (0..conversation.utterances.len())
        .map(|k| {
            let lo = (k + 1).saturating_sub(width);
            let real = &conversation.utterances[lo..=k];
            let mut slots: Vec<Option<&Utterance>> = vec![None; width - real.len()];
            slots.extend(real.iter().map(Some));
            ContextWindow {
                slots,
                conversation_id: &conversation.id,
                target_utterance: k,
            }
        })
        .collect()
}

/// A window slot with tokens, speaker, and tag resolved to indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSlot {
    pub is_pad: bool,
    pub token_ids: Vec<usize>,
    /// `None` for PAD slots; real speakers are interned per conversation,
    /// so equality means "same speaker" within any one window.
    pub speaker: Option<u32>,
    /// Gold tag index; `None` for PAD slots and untagged utterances.
    pub gold_tag: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedWindow {
    pub slots: Vec<EncodedSlot>,
    pub conversation_id: String,
    pub target_utterance: usize,
}

impl EncodedWindow {
    pub fn width(&self) -> usize {
        self.slots.len()
    }

    pub fn target(&self) -> &EncodedSlot {
        self.slots.last().expect("windows are non-empty")
    }

    /// Gold tag per slot with PAD slots as `None`; errors if a real slot is
    /// untagged (training/eval requires full supervision).
    pub fn gold_tags(&self) -> Result<Vec<Option<usize>>> {
        self.slots
            .iter()
            .map(|s| {
                if s.is_pad {
                    Ok(None)
                } else {
                    s.gold_tag.map(Some).ok_or_else(|| {
                        Error::data(format!(
                            "conversation {}: utterance without gold tag",
                            self.conversation_id
                        ))
                    })
                }
            })
            .collect()
    }
}

/// Encode every window of every conversation. Unknown tags are an error
/// when `require_tags` is set (train/eval); otherwise they pass through as
/// untagged.
pub fn encode_windows(
    conversations: &[Conversation],
    width: usize,
    vocab: &Vocabulary,
    tags: &TagSet,
    require_tags: bool,
) -> Result<Vec<EncodedWindow>> {
    let mut out = Vec::new();
    for conv in conversations {
        // Intern speakers in first-appearance order; only equality within a
        // window matters, so per-conversation ids suffice.
        let mut speaker_ids: HashMap<&str, u32> = HashMap::new();
        for u in &conv.utterances {
            let next = speaker_ids.len() as u32;
            speaker_ids.entry(u.speaker.as_str()).or_insert(next);
        }
        for window in make_windows(conv, width) {
            let slots = window
                .slots
                .iter()
                .map(|slot| match slot {
                    None => Ok(EncodedSlot {
                        is_pad: true,
                        token_ids: vec![PAD_ID],
                        speaker: None,
                        gold_tag: None,
                    }),
                    Some(u) => {
                        let gold_tag = match &u.tag {
                            Some(t) => match tags.encode(t) {
                                Some(id) => Some(id),
                                None if require_tags => {
                                    return Err(Error::data(format!(
                                        "conversation {}: unknown tag {t:?}",
                                        conv.id
                                    )))
                                }
                                None => None,
                            },
                            None => None,
                        };
                        Ok(EncodedSlot {
                            is_pad: false,
                            token_ids: u.tokens.iter().map(|t| vocab.encode(t)).collect(),
                            speaker: Some(speaker_ids[u.speaker.as_str()]),
                            gold_tag,
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(EncodedWindow {
                slots,
                conversation_id: conv.id.clone(),
                target_utterance: window.target_utterance,
            });
        }
    }
    Ok(out)
}

/// Load pretrained word vectors in the text format `word v1 ... v_dim`, one
/// entry per line, with an optional `V dim` header. Words absent from the
/// file (plus UNK) are initialized from U(-0.1, 0.1); the PAD row is zero.
/// The result is the full trainable embedding table.
pub fn load_embeddings(
    path: Option<&Path>,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut Rng,
) -> Result<Tensor> {
    let mut table = Tensor::uniform(vec![vocab.len(), dim], -0.1, 0.1, rng);
    table.data_mut()[PAD_ID * dim..(PAD_ID + 1) * dim].fill(0.0);
    let Some(path) = path else {
        return Ok(table);
    };

    let file = File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line has a first field");
        let values: Vec<&str> = parts.collect();
        if lineno == 1 && values.len() == 1 {
            // `V dim` header; both fields numeric.
            if word.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok() {
                continue;
            }
        }
        if values.len() != dim {
            return Err(Error::data(format!(
                "{}:{lineno}: word {word:?} has {} values, expected {dim}",
                path.display(),
                values.len()
            )));
        }
        let id = match vocab.encode(word) {
            UNK_ID if word != UNK_WORD => continue, // not in vocabulary
            id => id,
        };
        if id == PAD_ID {
            continue;
        }
        for (k, v) in values.iter().enumerate() {
            let parsed: f64 = v.parse().map_err(|_| {
                Error::data(format!(
                    "{}:{lineno}: word {word:?}: bad float {v:?}",
                    path.display()
                ))
            })?;
            table.data_mut()[id * dim + k] = parsed;
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn conv(tokens_and_tags: &[(&str, &str, &str)]) -> Conversation {
        Conversation {
            id: "c".into(),
            utterances: tokens_and_tags
                .iter()
                .map(|(speaker, text, tag)| Utterance {
                    speaker: speaker.to_string(),
                    tokens: tokenize(text),
                    tag: Some(tag.to_string()),
                })
                .collect(),
        }
    }

    fn parse(s: &str, max_len: usize) -> Result<Vec<Conversation>> {
        parse_corpus(BufReader::new(Cursor::new(s.to_string())), max_len, "test")
    }

    #[test]
    fn load_single_conversation() {
        let json = r#"{"conversation_id": "c1", "utterances": [
            {"speaker": "A", "text": "Hello there", "tag": "g"},
            {"speaker": "B", "tokens": ["Hi"], "tag": "g"},
            {"speaker": "A", "text": "Bye !", "tag": "c"}
        ]}"#
        .replace('\n', " ");
        let convs = parse(&json, 20).unwrap();
        assert_eq!(convs.len(), 1);
        assert_eq!(convs[0].utterances.len(), 3);
        assert_eq!(convs[0].utterances[0].tokens, vec!["hello", "there"]);
        assert_eq!(convs[0].utterances[1].tokens, vec!["hi"]);
        assert_eq!(convs[0].utterances[2].tokens, vec!["bye", "!"]);
    }

    #[test]
    fn long_utterances_are_truncated() {
        let words: Vec<String> = (0..25).map(|i| format!("w{i}")).collect();
        let json = format!(
            r#"{{"conversation_id": "c", "utterances": [{{"speaker": "A", "text": "{}", "tag": "t"}}]}}"#,
            words.join(" ")
        );
        let convs = parse(&json, 20).unwrap();
        assert_eq!(convs[0].utterances[0].tokens.len(), 20);
        assert_eq!(convs[0].utterances[0].tokens[19], "w19");
    }

    #[test]
    fn empty_utterance_reports_line() {
        let json = "\n".to_string()
            + r#"{"conversation_id": "c", "utterances": [{"speaker": "A", "text": "   ", "tag": "t"}]}"#;
        let err = parse(&json, 20).unwrap_err();
        assert!(err.to_string().contains("test:2"), "got: {err}");
    }

    #[test]
    fn tokens_win_over_text() {
        let json = r#"{"conversation_id": "c", "utterances": [{"speaker": "A", "tokens": ["KEPT"], "text": "dropped words", "tag": null}]}"#;
        let convs = parse(json, 20).unwrap();
        assert_eq!(convs[0].utterances[0].tokens, vec!["kept"]);
        assert_eq!(convs[0].utterances[0].tag, None);
    }

    #[test]
    fn vocab_min_count_and_determinism() {
        let c = conv(&[("A", "a a b", "t")]);
        let v = Vocabulary::build(&[c.clone()], 2).unwrap();
        assert_eq!(v.len(), 3); // unk, pad, a
        assert_eq!(v.encode("a"), 2);
        assert_eq!(v.encode("b"), UNK_ID);

        let v1 = Vocabulary::build(&[c.clone()], 1).unwrap();
        let v2 = Vocabulary::build(&[c], 1).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(v1.len(), 4);
    }

    #[test]
    fn vocab_orders_by_frequency_then_lexicographic() {
        let c = conv(&[("A", "b b c a a z", "t")]);
        let v = Vocabulary::build(&[c], 1).unwrap();
        // a and b both occur twice: tie broken lexicographically.
        assert_eq!(v.decode(2), "a");
        assert_eq!(v.decode(3), "b");
        assert_eq!(v.decode(4), "c");
        assert_eq!(v.decode(5), "z");
    }

    #[test]
    fn vocab_unk_closure() {
        let c = conv(&[("A", "x y", "t")]);
        let v = Vocabulary::build(&[c], 1).unwrap();
        for id in 0..v.len() {
            assert_eq!(v.encode(v.decode(id)), id);
        }
        assert_eq!(v.encode("never-seen"), UNK_ID);
    }

    #[test]
    fn windows_pad_on_the_left() {
        let c = conv(&[("A", "u one", "t"), ("B", "u two", "t"), ("A", "u three", "t")]);
        let ws = make_windows(&c, 5);
        assert_eq!(ws.len(), 3);
        assert_eq!(ws[0].pad_count(), 4);
        assert_eq!(ws[1].pad_count(), 3);
        assert_eq!(ws[2].pad_count(), 2);
        for w in &ws {
            assert!(w.slots[w.target_index()].is_some());
        }
    }

    #[test]
    fn long_conversations_lose_padding() {
        let utts: Vec<(&str, &str, &str)> = (0..7).map(|_| ("A", "word", "t")).collect();
        let c = conv(&utts);
        let ws = make_windows(&c, 5);
        assert_eq!(ws.len(), 7);
        assert_eq!(ws[3].pad_count(), 1);
        for w in &ws[4..] {
            assert_eq!(w.pad_count(), 0);
        }
    }

    #[test]
    fn every_utterance_is_a_target_once() {
        let utts: Vec<(&str, &str, &str)> = (0..9).map(|_| ("A", "word", "t")).collect();
        let c = conv(&utts);
        let ws = make_windows(&c, 5);
        let targets: Vec<usize> = ws.iter().map(|w| w.target_utterance).collect();
        assert_eq!(targets, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn encoded_windows_carry_tags_and_speakers() {
        let c = conv(&[("A", "hello", "g"), ("B", "hi", "g"), ("A", "bye", "c")]);
        let vocab = Vocabulary::build(&[c.clone()], 1).unwrap();
        let tags = TagSet::build(&[c.clone()]).unwrap();
        let ws = encode_windows(&[c], 3, &vocab, &tags, true).unwrap();
        assert_eq!(ws.len(), 3);
        let last = &ws[2];
        assert_eq!(last.slots[0].speaker, Some(0));
        assert_eq!(last.slots[1].speaker, Some(1));
        assert_eq!(last.slots[2].speaker, Some(0));
        assert_eq!(last.target().gold_tag, tags.encode("c"));
        // Padded window: PAD slots have no speaker and PAD token.
        assert!(ws[0].slots[0].is_pad);
        assert_eq!(ws[0].slots[0].token_ids, vec![PAD_ID]);
        assert_eq!(ws[0].slots[0].speaker, None);
    }

    #[test]
    fn unknown_tag_is_an_error_when_required() {
        let train = conv(&[("A", "x", "t1")]);
        let tags = TagSet::build(&[train.clone()]).unwrap();
        let vocab = Vocabulary::build(&[train], 1).unwrap();
        let eval = conv(&[("A", "x", "t2")]);
        assert!(encode_windows(&[eval], 3, &vocab, &tags, true).is_err());
    }

    #[test]
    fn embeddings_cover_and_default() {
        use std::io::Write;
        let c = conv(&[("A", "apple banana", "t")]);
        let vocab = Vocabulary::build(&[c], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "4 3").unwrap();
        writeln!(f, "apple 1.0 2.0 3.0").unwrap();
        writeln!(f, "banana 4.0 5.0 6.0").unwrap();
        writeln!(f, "cherry 7.0 8.0 9.0").unwrap();
        drop(f);

        let mut rng = Rng::new(1);
        let table = load_embeddings(Some(&path), &vocab, 3, &mut rng).unwrap();
        let a = vocab.encode("apple");
        assert_eq!(&table.data()[a * 3..(a + 1) * 3], &[1.0, 2.0, 3.0]);
        // PAD row zero, UNK row random in (-0.1, 0.1).
        assert_eq!(&table.data()[PAD_ID * 3..(PAD_ID + 1) * 3], &[0.0, 0.0, 0.0]);
        assert!(table.data()[UNK_ID * 3..(UNK_ID + 1) * 3]
            .iter()
            .all(|&v| v != 0.0 && v.abs() < 0.1));
    }

    #[test]
    fn embeddings_dim_mismatch_names_word() {
        use std::io::Write;
        let c = conv(&[("A", "apple", "t")]);
        let vocab = Vocabulary::build(&[c], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "apple 1.0 2.0").unwrap();
        drop(f);
        let mut rng = Rng::new(1);
        let err = load_embeddings(Some(&path), &vocab, 3, &mut rng).unwrap_err();
        assert!(err.to_string().contains("apple"), "got: {err}");
    }

    #[test]
    fn missing_embedding_file_means_random_table() {
        let c = conv(&[("A", "apple", "t")]);
        let vocab = Vocabulary::build(&[c], 1).unwrap();
        let mut rng = Rng::new(1);
        let table = load_embeddings(None, &vocab, 4, &mut rng).unwrap();
        assert_eq!(table.shape(), &[3, 4]);
        assert!(table.data()[PAD_ID * 4..(PAD_ID + 1) * 4].iter().all(|&v| v == 0.0));
    }
}
