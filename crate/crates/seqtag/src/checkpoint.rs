//! Versioned binary checkpoints: config snapshot, vocabulary, tag set, and
//! every named parameter tensor.
//!
//! Byte layout (all integers little endian):
//!
//! ```text
//! magic      8  bytes  "SEQTAGCK"
//! version    u32       currently 1
//! kind       u8        1 = seq2seq, 2 = crf
//! config     u32 len + UTF-8 canonical key-value text
//! vocab      u32 count, then per word:  u32 len + UTF-8 (in index order)
//! tags       u32 count, then per tag:   u32 len + UTF-8 (real tags only)
//! tensors    u32 count, then per tensor:
//!              u32 len + UTF-8 name
//!              u8 trainable flag
//!              u32 ndim, u64 per dimension
//!              f64 per element (row major, little-endian bit pattern)
//! ```
//!
//! Values are written with their exact f64 bit patterns, so a load/save
//! round trip reproduces bit-identical predictions.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::{Config, ModelKind};
use crate::corpus::{TagSet, Vocabulary};
use crate::crf::CrfModel;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Seq2Seq, WindowModel};
use crate::numerics::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"SEQTAGCK";
const VERSION: u32 = 1;

pub struct Checkpoint {
    pub config: Config,
    pub vocab: Vocabulary,
    pub tags: TagSet,
    pub store: ParamStore,
}

/// Either trained model kind, rebuilt from a checkpoint.
pub enum TaggerModel {
    Seq2Seq(Seq2Seq),
    Crf(CrfModel),
}

impl TaggerModel {
    pub fn as_window_model(&self) -> &dyn WindowModel {
        match self {
            TaggerModel::Seq2Seq(m) => m,
            TaggerModel::Crf(m) => m,
        }
    }
}

impl ModelSpec {
    pub fn from_config(cfg: &Config) -> Self {
        ModelSpec {
            encoder: cfg.encoder,
            attention: cfg.attention,
            d_emb: cfg.embedding_dim,
            d_enc: cfg.d_enc,
            d_dec: cfg.d_dec,
            dropout: cfg.dropout,
        }
    }
}

impl Checkpoint {
    pub fn model(&self) -> Result<TaggerModel> {
        let spec = ModelSpec::from_config(&self.config);
        Ok(match self.config.model {
            ModelKind::Seq2Seq => TaggerModel::Seq2Seq(Seq2Seq::load(&self.store, spec)?),
            ModelKind::Crf => TaggerModel::Crf(CrfModel::load(&self.store, spec)?),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let kind: u8 = match self.config.model {
            ModelKind::Seq2Seq => 1,
            ModelKind::Crf => 2,
        };
        w.write_all(&[kind])?;
        write_string(&mut w, &self.config.canonical())?;
        write_u32(&mut w, self.vocab.len() as u32)?;
        for word in self.vocab.words() {
            write_string(&mut w, word)?;
        }
        write_u32(&mut w, self.tags.len() as u32)?;
        for tag in self.tags.tags() {
            write_string(&mut w, tag)?;
        }
        write_u32(&mut w, self.store.len() as u32)?;
        for (id, p) in self.store.iter() {
            write_string(&mut w, &p.name)?;
            w.write_all(&[u8::from(p.trainable)])?;
            write_u32(&mut w, p.shape.len() as u32)?;
            for &d in &p.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in self.store.value(id) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path)
            .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::data("not a checkpoint file (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::data(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let mut kind = [0u8; 1];
        read_exact(&mut r, &mut kind)?;
        let config_text = read_string(&mut r)?;
        let config = Config::parse(&config_text)?;
        let expected_kind = match config.model {
            ModelKind::Seq2Seq => 1,
            ModelKind::Crf => 2,
        };
        if kind[0] != expected_kind {
            return Err(Error::data("checkpoint kind disagrees with its config snapshot"));
        }

        let n_words = read_u32(&mut r)? as usize;
        let words: Vec<String> = (0..n_words).map(|_| read_string(&mut r)).collect::<Result<_>>()?;
        let vocab = Vocabulary::from_words(words, config.min_count);

        let n_tags = read_u32(&mut r)? as usize;
        let tags: Vec<String> = (0..n_tags).map(|_| read_string(&mut r)).collect::<Result<_>>()?;
        let tags = TagSet::from_tags(tags);

        let n_params = read_u32(&mut r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n_params {
            let name = read_string(&mut r)?;
            let mut flag = [0u8; 1];
            read_exact(&mut r, &mut flag)?;
            let ndim = read_u32(&mut r)? as usize;
            if ndim == 0 || ndim > 8 {
                return Err(Error::data(format!("tensor {name}: bad rank {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                read_exact(&mut r, &mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            let tensor = Tensor::from_vec(shape, data)
                .map_err(|e| Error::data(format!("tensor {name}: {e}")))?;
            store.add(name, tensor, flag[0] != 0);
        }
        Ok(Checkpoint {
            config,
            vocab,
            tags,
            store,
        })
    }

    /// Human-readable summary for the inspect subcommand.
    pub fn describe(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "format version\t{VERSION}");
        let _ = writeln!(s, "model\t{}", self.config.model.as_str());
        let _ = writeln!(s, "encoder\t{}", self.config.encoder.as_str());
        let _ = writeln!(s, "attention\t{}", self.config.attention.as_str());
        let _ = writeln!(s, "vocabulary\t{}", self.vocab.len());
        let _ = writeln!(s, "tags\t{}", self.tags.len());
        let total: usize = self.store.iter().map(|(_, p)| p.grad.len()).sum();
        let _ = writeln!(s, "parameters\t{} tensors, {} values", self.store.len(), total);
        let _ = writeln!(s, "\nconfig:");
        for line in self.config.canonical().lines() {
            let _ = writeln!(s, "  {line}");
        }
        let _ = writeln!(s, "\ntensors:");
        for (_, p) in self.store.iter() {
            let dims: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(s, "  {}\t[{}]", p.name, dims.join(", "));
        }
        s
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::data("truncated checkpoint"))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 24 {
        return Err(Error::data("unreasonable string length in checkpoint"));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::data("invalid UTF-8 in checkpoint"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{encode_windows, Conversation, Utterance};
    use crate::numerics::Rng;

    fn tiny_corpus() -> Vec<Conversation> {
        let utt = |speaker: &str, text: &str, tag: &str| Utterance {
            speaker: speaker.into(),
            tokens: text.split_whitespace().map(str::to_string).collect(),
            tag: Some(tag.into()),
        };
        vec![Conversation {
            id: "c1".into(),
            utterances: vec![
                utt("A", "hello there", "greet"),
                utt("B", "hi", "greet"),
                utt("A", "how are you", "question"),
                utt("B", "fine thanks", "answer"),
            ],
        }]
    }

    fn build() -> (Checkpoint, Vec<crate::corpus::EncodedWindow>) {
        let convs = tiny_corpus();
        let vocab = Vocabulary::build(&convs, 1).unwrap();
        let tags = TagSet::build(&convs).unwrap();
        let mut cfg = Config::default();
        cfg.embedding_dim = 4;
        cfg.d_enc = 2;
        cfg.d_dec = 3;
        cfg.context_window = 3;
        let mut rng = Rng::new(cfg.seed);
        let table = crate::corpus::load_embeddings(None, &vocab, 4, &mut rng).unwrap();
        let mut store = ParamStore::new();
        let spec = ModelSpec::from_config(&cfg);
        let _model = Seq2Seq::init(&mut store, spec, tags.len(), table, &mut rng);
        let windows = encode_windows(&convs, 3, &vocab, &tags, true).unwrap();
        (
            Checkpoint {
                config: cfg,
                vocab,
                tags,
                store,
            },
            windows,
        )
    }

    #[test]
    fn round_trip_preserves_predictions_bit_for_bit() {
        let (ckpt, windows) = build();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();

        assert_eq!(ckpt.config, loaded.config);
        assert_eq!(ckpt.vocab, loaded.vocab);
        assert_eq!(ckpt.tags, loaded.tags);

        let m1 = match ckpt.model().unwrap() {
            TaggerModel::Seq2Seq(m) => m,
            _ => unreachable!(),
        };
        let m2 = match loaded.model().unwrap() {
            TaggerModel::Seq2Seq(m) => m,
            _ => unreachable!(),
        };
        for w in &windows {
            let a = m1.predict_window(&ckpt.store, w, 3, 0.65).unwrap();
            let b = m2.predict_window(&loaded.store, w, 3, 0.65).unwrap();
            assert_eq!(a.tags, b.tags);
            assert_eq!(a.score.to_bits(), b.score.to_bits());
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTMAGIC____________").unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let (ckpt, _) = build();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn describe_names_every_tensor() {
        let (ckpt, _) = build();
        let text = ckpt.describe();
        for (_, p) in ckpt.store.iter() {
            assert!(text.contains(&p.name));
        }
        assert!(text.contains("seq2seq"));
    }
}
