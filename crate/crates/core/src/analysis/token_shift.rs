use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runtime::LanguageModel;

/// Probability changes smaller than this are treated as no change.
pub const ZERO_DELTA: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDelta {
    pub token_id: u32,
    pub text: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceShift {
    pub index: usize,
    pub increased: Vec<TokenDelta>,
    pub decreased: Vec<TokenDelta>,
}

/// `(t, k)`: token `t` appeared in `k` sentences' lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCount {
    pub token_id: u32,
    pub text: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenShiftReport {
    pub k: usize,
    pub n_sentences: usize,
    pub sentences: Vec<SentenceShift>,
    pub increased_counts: Vec<TokenCount>,
    pub decreased_counts: Vec<TokenCount>,
}

fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(f64::from(x)));
    let exp: Vec<f64> = logits.iter().map(|&x| (f64::from(x) - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Largest `k` entries by `key`, ties broken by lower token id.
fn top_k(deltas: &[f64], k: usize, keep: impl Fn(f64) -> bool, key: impl Fn(f64) -> f64) -> Vec<(u32, f64)> {
    let mut chosen: Vec<(u32, f64)> = deltas
        .iter()
        .enumerate()
        .filter(|(_, &d)| keep(d))
        .map(|(i, &d)| (i as u32, d))
        .collect();
    chosen.sort_by(|a, b| key(b.1).total_cmp(&key(a.1)).then(a.0.cmp(&b.0)));
    chosen.truncate(k);
    chosen
}

fn count(sentences: &[SentenceShift], pick: impl Fn(&SentenceShift) -> &[TokenDelta]) -> Vec<TokenCount> {
    let mut counts: BTreeMap<u32, (String, usize)> = BTreeMap::new();
    for s in sentences {
        for t in pick(s) {
            counts.entry(t.token_id).or_insert_with(|| (t.text.clone(), 0)).1 += 1;
        }
    }
    let mut out: Vec<TokenCount> = counts
        .into_iter()
        .map(|(token_id, (text, count))| TokenCount { token_id, text, count })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then(a.token_id.cmp(&b.token_id)));
    out
}

/// Maps each state through the final norm, unembedding and softmax, and
/// lists the `k` tokens whose probability rose and fell the most.
pub fn token_shift<M: LanguageModel + ?Sized>(
    model: &M,
    before: &[Vec<f32>],
    after: &[Vec<f32>],
    k: usize,
) -> Result<TokenShiftReport> {
    if k == 0 {
        return Err(Error::InvalidInput("token shift needs k >= 1".into()));
    }
    if before.len() != after.len() {
        return Err(Error::InvalidInput(format!(
            "{} before states but {} after states",
            before.len(),
            after.len()
        )));
    }
    let mut sentences = Vec::with_capacity(before.len());
    for (index, (b, a)) in before.iter().zip(after).enumerate() {
        let pb = softmax(&model.unembed(b)?);
        let pa = softmax(&model.unembed(a)?);
        let deltas: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x - y).collect();
        let describe = |list: Vec<(u32, f64)>| -> Result<Vec<TokenDelta>> {
            list.into_iter()
                .map(|(token_id, delta)| {
                    let text = model.codec().decode_lossy(&[token_id])?;
                    Ok(TokenDelta { token_id, text, delta })
                })
                .collect()
        };
        sentences.push(SentenceShift {
            index,
            increased: describe(top_k(&deltas, k, |d| d > ZERO_DELTA, |d| d))?,
            decreased: describe(top_k(&deltas, k, |d| d < -ZERO_DELTA, |d| -d))?,
        });
    }
    Ok(TokenShiftReport {
        k,
        n_sentences: sentences.len(),
        increased_counts: count(&sentences, |s| &s.increased),
        decreased_counts: count(&sentences, |s| &s.decreased),
        sentences,
    })
}
