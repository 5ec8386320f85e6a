use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::log_softmax;
use crate::eval::report::{Aggregate, EvalReport, ItemRecord};
use crate::runtime::{Capture, LanguageModel, SteeringPlan};

/// Negative log-likelihood of tokens `1..t` of `text` and the number of
/// predicted tokens. Steering applies to every position.
pub fn sequence_nll<M: LanguageModel + ?Sized>(
    model: &M,
    text: &str,
    steering: Option<&SteeringPlan>,
) -> Result<(f64, usize)> {
    let ids = model.codec().encode(text)?;
    if ids.is_empty() {
        return Err(Error::InvalidInput(format!("text {text:?} encodes to no tokens")));
    }
    if ids.len() == 1 {
        return Ok((0.0, 0));
    }
    let logits = model.forward(&ids, steering, &Capture::logits_only())?.logits;
    let mut nll = 0.0;
    for (pos, &next) in ids.iter().enumerate().skip(1) {
        let row = logits.row(pos - 1);
        nll -= log_softmax(row.as_slice().expect("contiguous row"))[next as usize];
    }
    Ok((nll, ids.len() - 1))
}

/// `exp` of the mean per-token negative log-likelihood over the corpus.
pub fn perplexity<M: LanguageModel + ?Sized>(
    model: &M,
    corpus: &[String],
    steering: Option<&SteeringPlan>,
) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("perplexity corpus is empty".into()));
    }
    let items = corpus
        .par_iter()
        .enumerate()
        .map(|(i, text)| {
            let (nll, n) = sequence_nll(model, text, steering)?;
            Ok(ItemRecord {
                index: i,
                scores: BTreeMap::from([("nll".to_string(), nll), ("tokens".to_string(), n as f64)]),
                detail: serde_json::Value::Null,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = EvalReport::new("perplexity", vec![model.model_id().to_string()], items);
    report.add_metric(
        "perplexity",
        Aggregate::Perplexity {
            nll_key: "nll".into(),
            count_key: "tokens".into(),
        },
    )?;
    if let Some(plan) = steering {
        report.steering = plan.summary();
        report.alpha = Some(plan.default_alpha);
    }
    Ok(report)
}
