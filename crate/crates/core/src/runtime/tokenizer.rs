//! Byte-level BPE driven by a standard `tokenizer.json` definition.
//!
//! Encoding follows the reference pipeline: split on added tokens that match
//! raw text, NFC-normalize, split on added tokens that match normalized text,
//! pre-tokenize with the GPT-2 byte-level regex, then apply ranked merges.

use std::collections::HashMap;
use std::path::Path;

use aho_corasick::{AhoCorasick, MatchKind};
use fancy_regex::Regex;
use serde::Deserialize;
use serde_json::Value;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::runtime::TokenSequence;

const PRETOKENIZE_PATTERN: &str =
    r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

/// Text <-> token id conversion as seen by the evaluation code.
pub trait TextCodec: Send + Sync {
    fn encode(&self, text: &str) -> Result<TokenSequence>;
    fn decode(&self, ids: &[u32]) -> Result<String>;
    /// Id of a single token given its surface text, if the vocabulary has one.
    fn token_id(&self, token_text: &str) -> Option<u32>;
    fn vocab_size(&self) -> usize;

    /// Like `decode`, but ids the codec does not know (embedding rows padded
    /// past the vocabulary) come out as `<id N>` instead of failing.
    fn decode_lossy(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        let mut start = 0;
        for (i, &id) in ids.iter().enumerate() {
            if let Err(Error::TokenOutOfRange { .. }) = self.decode(&[id]) {
                out.push_str(&self.decode(&ids[start..i])?);
                out.push_str(&format!("<id {id}>"));
                start = i + 1;
            }
        }
        out.push_str(&self.decode(&ids[start..])?);
        Ok(out)
    }
}

#[derive(Debug, Clone, Deserialize)]
struct AddedTokenDef {
    id: u32,
    content: String,
    #[serde(default)]
    normalized: bool,
    #[serde(default)]
    special: bool,
}

#[derive(Debug, Clone)]
struct AddedTokens {
    tokens: Vec<AddedTokenDef>,
    matcher: Option<AhoCorasick>,
}

impl AddedTokens {
    fn new(tokens: Vec<AddedTokenDef>) -> Result<Self> {
        let matcher = if tokens.is_empty() {
            None
        } else {
            Some(
                AhoCorasick::builder()
                    .match_kind(MatchKind::LeftmostLongest)
                    .build(tokens.iter().map(|t| t.content.as_str()))
                    .map_err(|e| Error::Tokenizer(e.to_string()))?,
            )
        };
        Ok(AddedTokens { tokens, matcher })
    }

    /// Splits `text` into plain segments and added-token ids, in order.
    fn split<'t>(&self, text: &'t str) -> Vec<Segment<'t>> {
        let Some(matcher) = &self.matcher else {
            return vec![Segment::Text(text)];
        };
        let mut out = Vec::new();
        let mut last = 0;
        for m in matcher.find_iter(text) {
            if m.start() > last {
                out.push(Segment::Text(&text[last..m.start()]));
            }
            out.push(Segment::Added(self.tokens[m.pattern().as_usize()].id));
            last = m.end();
        }
        if last < text.len() {
            out.push(Segment::Text(&text[last..]));
        }
        out
    }
}

enum Segment<'t> {
    Text(&'t str),
    Added(u32),
}

/// Reversible mapping from bytes to printable characters used by byte-level
/// vocabularies.
fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let printable = |b: u32| {
        (u32::from(b'!')..=u32::from(b'~')).contains(&b)
            || (0xA1..=0xAC).contains(&b)
            || (0xAE..=0xFF).contains(&b)
    };
    let mut extra = 0u32;
    for b in 0..256u32 {
        table[b as usize] = if printable(b) {
            char::from_u32(b).expect("latin-1 range")
        } else {
            extra += 1;
            char::from_u32(255 + extra).expect("valid code point")
        };
    }
    table
}

pub struct Tokenizer {
    vocab: HashMap<String, u32>,
    id_to_token: HashMap<u32, String>,
    merges: HashMap<(u32, u32), (u32, u32)>,
    byte_ids: [u32; 256],
    byte_decoder: HashMap<char, u8>,
    byte_encoder: [char; 256],
    raw_added: AddedTokens,
    normalized_added: AddedTokens,
    added_by_id: HashMap<u32, AddedTokenDef>,
    nfc: bool,
    add_prefix_space: bool,
    pattern: Regex,
    vocab_size: usize,
}

impl std::fmt::Debug for Tokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tokenizer")
            .field("vocab_size", &self.vocab_size)
            .field("merges", &self.merges.len())
            .finish()
    }
}

fn parse_merges(value: &Value) -> Result<Vec<(String, String)>> {
    let list = value
        .as_array()
        .ok_or_else(|| Error::Tokenizer("`model.merges` must be a list".into()))?;
    list.iter()
        .map(|m| match m {
            Value::String(s) => s
                .split_once(' ')
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .ok_or_else(|| Error::Tokenizer(format!("malformed merge `{s}`"))),
            Value::Array(pair) if pair.len() == 2 => match (&pair[0], &pair[1]) {
                (Value::String(a), Value::String(b)) => Ok((a.clone(), b.clone())),
                _ => Err(Error::Tokenizer("merge pair must hold two strings".into())),
            },
            other => Err(Error::Tokenizer(format!("malformed merge {other}"))),
        })
        .collect()
}

fn byte_level_options(pre: &Value) -> Result<bool> {
    match pre.get("type").and_then(Value::as_str) {
        Some("ByteLevel") => {
            if pre.get("use_regex").and_then(Value::as_bool) == Some(false) {
                return Err(Error::Tokenizer(
                    "ByteLevel pre-tokenizer without regex is not supported".into(),
                ));
            }
            Ok(pre
                .get("add_prefix_space")
                .and_then(Value::as_bool)
                .unwrap_or(false))
        }
        Some("Sequence") => match pre.get("pretokenizers").and_then(Value::as_array) {
            Some(list) if list.len() == 1 => byte_level_options(&list[0]),
            _ => Err(Error::Tokenizer(
                "only a single ByteLevel pre-tokenizer is supported".into(),
            )),
        },
        other => Err(Error::Tokenizer(format!(
            "unsupported pre_tokenizer {other:?}"
        ))),
    }
}

fn normalizer_is_nfc(norm: &Value) -> Result<bool> {
    match norm {
        Value::Null => Ok(false),
        _ => match norm.get("type").and_then(Value::as_str) {
            Some("NFC") => Ok(true),
            Some("Sequence") => {
                let list = norm
                    .get("normalizers")
                    .and_then(Value::as_array)
                    .cloned()
                    .unwrap_or_default();
                let mut nfc = false;
                for n in &list {
                    nfc |= normalizer_is_nfc(n)?;
                }
                Ok(nfc)
            }
            other => Err(Error::Tokenizer(format!("unsupported normalizer {other:?}"))),
        },
    }
}

impl Tokenizer {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Tokenizer("empty tokenizer definition".into()));
        }
        let root: Value = serde_json::from_str(text).map_err(|e| Error::json("tokenizer", e))?;
        let model = root
            .get("model")
            .ok_or_else(|| Error::Tokenizer("missing `model` section".into()))?;
        if let Some(kind) = model.get("type").and_then(Value::as_str) {
            if kind != "BPE" {
                return Err(Error::Tokenizer(format!("unsupported model type `{kind}`")));
            }
        }
        let vocab: HashMap<String, u32> = serde_json::from_value(
            model
                .get("vocab")
                .cloned()
                .ok_or_else(|| Error::Tokenizer("missing `model.vocab`".into()))?,
        )
        .map_err(|e| Error::json("tokenizer vocab", e))?;
        if vocab.is_empty() {
            return Err(Error::Tokenizer("empty vocabulary".into()));
        }
        let merge_pairs = parse_merges(model.get("merges").unwrap_or(&Value::Array(vec![])))?;

        let byte_encoder = bytes_to_unicode();
        let mut byte_ids = [0u32; 256];
        for (b, ch) in byte_encoder.iter().enumerate() {
            byte_ids[b] = *vocab.get(&ch.to_string()).ok_or_else(|| {
                Error::Tokenizer(format!("vocabulary lacks the byte symbol for 0x{b:02x}"))
            })?;
        }
        let byte_decoder = byte_encoder
            .iter()
            .enumerate()
            .map(|(b, c)| (*c, b as u8))
            .collect();

        let mut merges = HashMap::with_capacity(merge_pairs.len());
        for (rank, (a, b)) in merge_pairs.iter().enumerate() {
            let lookup = |s: &str| {
                vocab
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::Tokenizer(format!("merge references unknown `{s}`")))
            };
            let merged = lookup(&format!("{a}{b}"))?;
            merges
                .entry((lookup(a)?, lookup(b)?))
                .or_insert((rank as u32, merged));
        }

        let added: Vec<AddedTokenDef> = match root.get("added_tokens") {
            Some(v) if !v.is_null() => {
                serde_json::from_value(v.clone()).map_err(|e| Error::json("added_tokens", e))?
            }
            _ => Vec::new(),
        };
        let added_by_id = added.iter().map(|t| (t.id, t.clone())).collect();
        let (norm_added, raw_added): (Vec<_>, Vec<_>) =
            added.iter().cloned().partition(|t| t.normalized);

        let nfc = normalizer_is_nfc(root.get("normalizer").unwrap_or(&Value::Null))?;
        let add_prefix_space = match root.get("pre_tokenizer") {
            Some(pre) if !pre.is_null() => byte_level_options(pre)?,
            _ => return Err(Error::Tokenizer("missing byte-level pre_tokenizer".into())),
        };

        let mut id_to_token: HashMap<u32, String> =
            vocab.iter().map(|(k, v)| (*v, k.clone())).collect();
        for t in &added {
            id_to_token.entry(t.id).or_insert_with(|| t.content.clone());
        }
        let vocab_size = id_to_token.keys().max().map_or(0, |m| *m as usize + 1);

        Ok(Tokenizer {
            vocab,
            id_to_token,
            merges,
            byte_ids,
            byte_decoder,
            byte_encoder,
            raw_added: AddedTokens::new(raw_added)?,
            normalized_added: AddedTokens::new(norm_added)?,
            added_by_id,
            nfc,
            add_prefix_space,
            pattern: Regex::new(PRETOKENIZE_PATTERN).expect("static pattern compiles"),
            vocab_size,
        })
    }

    fn bpe_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut symbols: Vec<u32> = word.bytes().map(|b| self.byte_ids[b as usize]).collect();
        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.merges.get(&(w[0], w[1])).map(|m| (m.0, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() {
                    if let Some(&(r, id)) = self.merges.get(&(symbols[i], symbols[i + 1])) {
                        if r == rank {
                            merged.push(id);
                            i += 2;
                            continue;
                        }
                    }
                }
                merged.push(symbols[i]);
                i += 1;
            }
            symbols = merged;
        }
        out.extend(symbols);
    }

    fn encode_plain(&self, text: &str, out: &mut Vec<u32>) -> Result<()> {
        if text.is_empty() {
            return Ok(());
        }
        let prefixed;
        let text = if self.add_prefix_space && !text.starts_with(' ') {
            prefixed = format!(" {text}");
            prefixed.as_str()
        } else {
            text
        };
        for piece in self.pattern.find_iter(text) {
            let piece = piece.map_err(|e| Error::Tokenizer(e.to_string()))?;
            self.bpe_word(piece.as_str(), out);
        }
        Ok(())
    }

    pub fn encode_ids(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids = Vec::new();
        for seg in self.raw_added.split(text) {
            match seg {
                Segment::Added(id) => ids.push(id),
                Segment::Text(t) => {
                    let normalized: String = if self.nfc {
                        t.nfc().collect()
                    } else {
                        t.to_string()
                    };
                    for inner in self.normalized_added.split(&normalized) {
                        match inner {
                            Segment::Added(id) => ids.push(id),
                            Segment::Text(p) => self.encode_plain(p, &mut ids)?,
                        }
                    }
                }
            }
        }
        Ok(ids)
    }

    fn decode_inner(&self, ids: &[u32], skip_special: bool) -> Result<String> {
        let mut bytes = Vec::new();
        for id in ids {
            if let Some(added) = self.added_by_id.get(id) {
                if !(skip_special && added.special) {
                    bytes.extend_from_slice(added.content.as_bytes());
                }
                continue;
            }
            let token = self.id_to_token.get(id).ok_or(Error::TokenOutOfRange {
                id: *id,
                vocab: self.vocab_size,
            })?;
            for ch in token.chars() {
                match self.byte_decoder.get(&ch) {
                    Some(b) => bytes.push(*b),
                    None => {
                        let mut buf = [0u8; 4];
                        bytes.extend_from_slice(ch.encode_utf8(&mut buf).as_bytes());
                    }
                }
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    pub fn decode_skip_special(&self, ids: &[u32]) -> Result<String> {
        self.decode_inner(ids, true)
    }

    /// Raw vocabulary entry for `id` (byte-level symbols, not decoded text).
    pub fn id_to_token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(&id).map(String::as_str)
    }

    /// Byte-level symbol string for arbitrary text, e.g. `" fear"` -> `"Ġfear"`.
    pub fn byte_level_form(&self, text: &str) -> String {
        text.bytes().map(|b| self.byte_encoder[b as usize]).collect()
    }
}

impl TextCodec for Tokenizer {
    fn encode(&self, text: &str) -> Result<TokenSequence> {
        Ok(TokenSequence::new(self.encode_ids(text)?))
    }

    fn decode(&self, ids: &[u32]) -> Result<String> {
        self.decode_inner(ids, false)
    }

    fn token_id(&self, token_text: &str) -> Option<u32> {
        if let Some(t) = self.added_by_id.values().find(|t| t.content == token_text) {
            return Some(t.id);
        }
        self.vocab.get(&self.byte_level_form(token_text)).copied()
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}
