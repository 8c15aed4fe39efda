//! Flat key-value configuration with typed validation.
//!
//! Format: one `key = value` per line; `#` starts a comment. Unknown keys
//! and out-of-range values are errors that name the key. Two presets under
//! `presets/` mirror the two training regimes this crate ships with.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::decoder::AttentionMode;
use crate::encoder::EncoderKind;
use crate::error::{Error, Result};
use crate::objectives::CostKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Seq2Seq,
    Crf,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Seq2Seq => "seq2seq",
            ModelKind::Crf => "crf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    AdamW,
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub model: ModelKind,
    pub encoder: EncoderKind,
    pub attention: AttentionMode,
    pub context_window: usize,
    pub d_enc: usize,
    pub d_dec: usize,
    pub embedding_dim: usize,
    pub min_count: usize,
    pub max_seq_len: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub patience: usize,
    pub decay: f64,
    pub clip: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub min_lr: f64,
    pub risk_epochs: usize,
    pub b_train: usize,
    pub b_inf: usize,
    pub alpha_lp: f64,
    pub seed: u64,
    pub risk_cost: CostKind,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            model: ModelKind::Seq2Seq,
            encoder: EncoderKind::Hgru,
            attention: AttentionMode::HardGuided,
            context_window: 5,
            d_enc: 128,
            d_dec: 48,
            embedding_dim: 300,
            min_count: 1,
            max_seq_len: 20,
            lr: 0.01,
            optimizer: OptimizerKind::Adam,
            patience: 20,
            decay: 0.5,
            clip: 5.0,
            weight_decay: 1e-5,
            dropout: 0.2,
            batch_size: 32,
            max_epochs: 100,
            min_lr: 1e-5,
            risk_epochs: 10,
            b_train: 2,
            b_inf: 5,
            alpha_lp: 0.65,
            seed: 42,
            risk_cost: CostKind::LastTag,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| {
                    Error::config(format!("line {}: expected key = value", lineno + 1))
                })?;
            if !seen.insert(key.to_string()) {
                return Err(Error::config(format!("{key}: duplicate key")));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model" => {
                self.model = match value {
                    "seq2seq" => ModelKind::Seq2Seq,
                    "crf" => ModelKind::Crf,
                    _ => return Err(Error::config(format!("model: unknown value {value:?}"))),
                }
            }
            "encoder" => {
                self.encoder = match value {
                    "vanilla" => EncoderKind::Vanilla,
                    "hgru" => EncoderKind::Hgru,
                    "perso" => EncoderKind::Perso,
                    _ => return Err(Error::config(format!("encoder: unknown value {value:?}"))),
                }
            }
            "attention" => {
                self.attention = match value {
                    "none" => AttentionMode::None,
                    "vanilla" => AttentionMode::Vanilla,
                    "soft" => AttentionMode::SoftGuided,
                    "hard" => AttentionMode::HardGuided,
                    _ => return Err(Error::config(format!("attention: unknown value {value:?}"))),
                }
            }
            "optimizer" => {
                self.optimizer = match value {
                    "adam" => OptimizerKind::Adam,
                    "adamw" => OptimizerKind::AdamW,
                    _ => return Err(Error::config(format!("optimizer: unknown value {value:?}"))),
                }
            }
            "risk_cost" => {
                self.risk_cost = match value {
                    "last_tag" => CostKind::LastTag,
                    "hamming" => CostKind::Hamming,
                    "paper_literal" => CostKind::PaperLiteral,
                    _ => return Err(Error::config(format!("risk_cost: unknown value {value:?}"))),
                }
            }
            "context_window" => self.context_window = parse_num(key, value)?,
            "d_enc" => self.d_enc = parse_num(key, value)?,
            "d_dec" => self.d_dec = parse_num(key, value)?,
            "embedding_dim" => self.embedding_dim = parse_num(key, value)?,
            "min_count" => self.min_count = parse_num(key, value)?,
            "max_seq_len" => self.max_seq_len = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            "decay" => self.decay = parse_num(key, value)?,
            "clip" => self.clip = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "dropout" => self.dropout = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "max_epochs" => self.max_epochs = parse_num(key, value)?,
            "min_lr" => self.min_lr = parse_num(key, value)?,
            "risk_epochs" => self.risk_epochs = parse_num(key, value)?,
            "B_train" => self.b_train = parse_num(key, value)?,
            "B_inf" => self.b_inf = parse_num(key, value)?,
            "alpha_lp" => self.alpha_lp = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            _ => return Err(Error::config(format!("{key}: unknown key"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("context_window", self.context_window),
            ("d_enc", self.d_enc),
            ("d_dec", self.d_dec),
            ("embedding_dim", self.embedding_dim),
            ("min_count", self.min_count),
            ("max_seq_len", self.max_seq_len),
            ("patience", self.patience),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("risk_epochs", self.risk_epochs),
            ("B_train", self.b_train),
            ("B_inf", self.b_inf),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{key}: must be >= 1")));
            }
        }
        if self.lr <= 0.0 {
            return Err(Error::config("lr: must be > 0"));
        }
        if !(0.0 < self.decay && self.decay <= 1.0) {
            return Err(Error::config("decay: must be in (0, 1]"));
        }
        if self.clip <= 0.0 {
            return Err(Error::config("clip: must be > 0"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay: must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout: must be in [0, 1)"));
        }
        if self.min_lr <= 0.0 {
            return Err(Error::config("min_lr: must be > 0"));
        }
        if self.alpha_lp < 0.0 {
            return Err(Error::config("alpha_lp: must be >= 0"));
        }
        Ok(())
    }

    /// Canonical text form: every key, fixed order. Stored inside
    /// checkpoints and reproducible byte for byte.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model = {}", self.model.as_str());
        let _ = writeln!(s, "encoder = {}", self.encoder.as_str());
        let _ = writeln!(s, "attention = {}", self.attention.as_str());
        let _ = writeln!(s, "context_window = {}", self.context_window);
        let _ = writeln!(s, "d_enc = {}", self.d_enc);
        let _ = writeln!(s, "d_dec = {}", self.d_dec);
        let _ = writeln!(s, "embedding_dim = {}", self.embedding_dim);
        let _ = writeln!(s, "min_count = {}", self.min_count);
        let _ = writeln!(s, "max_seq_len = {}", self.max_seq_len);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "optimizer = {}", self.optimizer.as_str());
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "decay = {}", self.decay);
        let _ = writeln!(s, "clip = {}", self.clip);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "min_lr = {}", self.min_lr);
        let _ = writeln!(s, "risk_epochs = {}", self.risk_epochs);
        let _ = writeln!(s, "B_train = {}", self.b_train);
        let _ = writeln!(s, "B_inf = {}", self.b_inf);
        let _ = writeln!(s, "alpha_lp = {}", self.alpha_lp);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "risk_cost = {}", self.risk_cost.as_str());
        s
    }
}
