//! One PASS/FAIL line per acceptance criterion. Criteria that need Pythia
//! checkpoints look for them under `$TRANSPLANT_MODELS_DIR` (default
//! `<workspace>/models`), one directory per model: `pythia-14m`,
//! `pythia-70m`, `pythia-410m`, `pythia-1.4b`.

mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transplant_core::analysis::{centroids, pca_displacement, token_shift, PcaFit, PcaProjection};
use transplant_core::concept::{
    collect_paired_activations, cosine, fit_linear_map, least_squares, reformulate, refine_concept,
    steered_last_token_states, ConceptVector, ExamplePairSet, LayerCorrespondence, PromptTemplate, TemplateSet,
    DEFAULT_CUTOFF,
};
use transplant_core::eval::{
    emotion_eval, emotion_pairs, few_shot_prefix, perplexity, read_jsonl, read_lines, EmotionEvalOptions,
    EmotionItem, EmotionTask, EMOTIONS,
};
use transplant_core::{Capture, DecodeConfig, GptNeoX, LanguageModel, SteeringPlan};

use common::stub::{StubModel, WordCodec};
use common::{fixtures, golden, max_abs_diff, model};

type Check = Result<String, String>;

const SWEEP: [f32; 3] = [2.0, 4.0, 6.0];
const PAIRS_PER_EMOTION: usize = 200;
const FIT_SAMPLES: usize = 2000;

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data(name: &str) -> PathBuf {
    workspace().join("data").join(name)
}

fn models_dir() -> PathBuf {
    std::env::var_os("TRANSPLANT_MODELS_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace().join("models"))
}

fn pythia(name: &str) -> Result<GptNeoX, String> {
    let dir = models_dir().join(name);
    if !dir.join("config.json").exists() {
        return Err(format!("no checkpoint at {}", dir.display()));
    }
    GptNeoX::load(&dir).map_err(|e| format!("{name}: {e}"))
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn oracle_parity() -> Check {
    let name = "pythia-70m";
    let golden_dir = [fixtures().join(name), models_dir().join(name)]
        .into_iter()
        .find(|d| d.join("golden.json").exists())
        .ok_or_else(|| format!("no golden fixtures for {name} in the fixture or model directories"))?;
    let m = pythia(name)?;
    let g = golden(&golden_dir);
    if g.prompts.len() != 5 {
        return Err(format!("expected 5 fixture prompts, found {}", g.prompts.len()));
    }
    let (mut logit_err, mut state_err) = (0.0f32, 0.0f32);
    for p in &g.prompts {
        let ids = m.codec().encode(&p.text).map_err(err)?;
        if ids.as_ref() != p.ids.as_slice() {
            return Err(format!("tokenization differs for {:?}", p.text));
        }
        let r = m.forward(&ids, None, &Capture::states_and_last_logits()).map_err(err)?;
        logit_err = logit_err.max(max_abs_diff(&r.last_logits().unwrap().to_vec(), &p.logits));
        for (k, want) in p.states.iter().enumerate() {
            state_err = state_err.max(max_abs_diff(&r.state(k + 1).unwrap().vector, want));
        }
    }
    let detail = format!("logits max-abs {logit_err:.2e} (<= 2e-3), states max-abs {state_err:.2e} (<= 5e-3)");
    if logit_err <= 2e-3 && state_err <= 5e-3 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 2

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn least_squares_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x = random_matrix(&mut rng, 512, 64);
    let planted = random_matrix(&mut rng, 64, 128);
    let fit = least_squares(&x, &x.dot(&planted), DEFAULT_CUTOFF).map_err(err)?;
    let rel = frobenius(&(&fit.solution - &planted)) / frobenius(&planted);

    let mut held = 0;
    for _ in 0..20 {
        let n = rng.random_range(10..120);
        let (d1, d2) = (rng.random_range(1..40), rng.random_range(1..30));
        let x = random_matrix(&mut rng, n, d1);
        let y = random_matrix(&mut rng, n, d2);
        let f = least_squares(&x, &y, DEFAULT_CUTOFF).map_err(err)?.solution;
        let residual = frobenius(&x.t().dot(&(x.dot(&f) - &y)));
        if residual <= 1e-5 * (1.0 + frobenius(&x) * frobenius(&y)) {
            held += 1;
        }
    }
    let detail = format!("planted relative error {rel:.2e} (<= 1e-4), normal equations held on {held}/20");
    if rel <= 1e-4 && held == 20 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 3

fn steering_algebra() -> Check {
    let m = model("neox-par");
    let mut failures = Vec::new();
    let v: Vec<f32> = (0..m.hidden_dim()).map(|i| ((i * 13 % 7) as f32 - 3.0) * 0.2).collect();

    let ids = m.codec().encode("The river flows through the old town").map_err(err)?;
    let base = m.forward(&ids, None, &Capture::states_and_last_logits()).map_err(err)?;
    let mut zero = SteeringPlan::new(0.0);
    zero.add_vector("v", (1..=m.n_layers()).map(|k| (k, v.clone())), None).map_err(err)?;
    let z = m.forward(&ids, Some(&zero), &Capture::states_and_last_logits()).map_err(err)?;
    let greedy = DecodeConfig::greedy(8);
    if z.logits != base.logits
        || z.captured != base.captured
        || m.generate(&ids, &greedy, Some(&zero)).map_err(err)? != m.generate(&ids, &greedy, None).map_err(err)?
    {
        failures.push("alpha = 0 changed the output".to_string());
    }

    let (layer, alpha) = (2, 2.5f32);
    let steered = m
        .forward(&ids, Some(&SteeringPlan::single(layer, v.clone(), alpha)), &Capture::states())
        .map_err(err)?;
    for k in 1..layer {
        if steered.state(k).unwrap().vector != base.state(k).unwrap().vector {
            failures.push(format!("layer {k} below the injection changed"));
        }
    }
    let exact = steered
        .state(layer)
        .unwrap()
        .vector
        .iter()
        .zip(&base.state(layer).unwrap().vector)
        .zip(&v)
        .all(|((a, b), vi)| *a == b + alpha * vi);
    if !exact {
        failures.push(format!("layer {layer} delta is not alpha * v"));
    }

    let items: Vec<EmotionItem> = read_jsonl(&data("emotion/refine.jsonl")).map_err(err)?;
    let pairs = emotion_pairs(&items, "fear", 12, 0, "emotion").map_err(err)?;
    let template = TemplateSet::builtin().get("emotion").map_err(err)?.clone();
    let forward = refine_concept(&m, &pairs, &template).map_err(err)?;
    let backward = refine_concept(&m, &pairs.swapped(), &template).map_err(err)?;
    let antisymmetric = forward
        .layers
        .iter()
        .all(|(k, a)| a.iter().zip(&backward.layers[k]).all(|(x, y)| *x == -*y));
    if !antisymmetric {
        failures.push("refine(P, N) != -refine(N, P)".into());
    }
    if failures.is_empty() {
        Ok("alpha = 0 bitwise no-op; layers < k bitwise equal and layer k = h + alpha * v exactly; antisymmetry exact".into())
    } else {
        Err(failures.join("; "))
    }
}

// ---------------------------------------------------------------- 4, 5, 6

struct EmotionData {
    refine: Vec<EmotionItem>,
    validate: Vec<EmotionItem>,
    eval: Vec<EmotionItem>,
    fewshot: Vec<EmotionItem>,
    template: PromptTemplate,
}

impl EmotionData {
    fn load() -> Result<Self, String> {
        Ok(EmotionData {
            refine: read_jsonl(&data("emotion/refine.jsonl")).map_err(err)?,
            validate: read_jsonl(&data("emotion/validate.jsonl")).map_err(err)?,
            eval: read_jsonl(&data("emotion/eval.jsonl")).map_err(err)?,
            fewshot: read_jsonl(&data("emotion/fewshot.jsonl")).map_err(err)?,
            template: TemplateSet::builtin().get("emotion").map_err(err)?.clone(),
        })
    }

    fn task(&self, model: &GptNeoX, items: &[EmotionItem]) -> Result<EmotionTask, String> {
        let prefix = few_shot_prefix(&self.template, &self.fewshot);
        EmotionTask::new(model.codec(), items.to_vec(), prefix, self.template.clone(), &BTreeMap::new()).map_err(err)
    }

    fn vectors(&self, model: &GptNeoX) -> Result<Vec<ConceptVector>, String> {
        EMOTIONS
            .iter()
            .map(|e| {
                let pairs: ExamplePairSet =
                    emotion_pairs(&self.refine, e, PAIRS_PER_EMOTION, 0, "emotion").map_err(err)?;
                refine_concept(model, &pairs, &self.template).map_err(err)
            })
            .collect()
    }
}

fn token_acc(model: &GptNeoX, task: &EmotionTask, target: &str, plan: Option<&SteeringPlan>) -> Result<f64, String> {
    let r = emotion_eval(model, task, target, plan, EmotionEvalOptions::default()).map_err(err)?;
    Ok(r.metric("token_acc").expect("emotion reports token_acc"))
}

/// `(baseline, best over the sweep)` token accuracy per emotion.
fn sweep(model: &GptNeoX, task: &EmotionTask, vectors: &[ConceptVector]) -> Result<Vec<(f64, f64)>, String> {
    vectors
        .iter()
        .map(|v| {
            let base = token_acc(model, task, &v.concept, None)?;
            let mut best = base;
            for alpha in SWEEP {
                let plan = v.steering(None, alpha).map_err(err)?;
                best = best.max(token_acc(model, task, &v.concept, Some(&plan))?);
            }
            Ok((base, best))
        })
        .collect()
}

fn transplanted(src: &GptNeoX, tgt: &GptNeoX, vectors: &[ConceptVector]) -> Result<Vec<ConceptVector>, String> {
    let corpus = read_lines(&data("fit_corpus.txt")).map_err(err)?;
    let corpus = &corpus[..FIT_SAMPLES.min(corpus.len())];
    let corr = LayerCorrespondence::proportional(src.n_layers(), tgt.n_layers());
    let acts = collect_paired_activations(src, tgt, corpus, &corr, "fit_corpus").map_err(err)?;
    let maps = fit_linear_map(&acts, DEFAULT_CUTOFF).map_err(err)?;
    vectors.iter().map(|v| reformulate(v, &maps).map_err(err)).collect()
}

fn describe(results: &[(f64, f64)]) -> String {
    EMOTIONS
        .iter()
        .zip(results)
        .map(|(e, (b, s))| format!("{e} {:.1}->{:.1}%", 100.0 * b, 100.0 * s))
        .collect::<Vec<_>>()
        .join(", ")
}

fn count(results: &[(f64, f64)], margin: f64) -> usize {
    results.iter().filter(|(b, s)| s - b >= margin && s > b).count()
}

fn emotion_transplant(m410: &Result<GptNeoX, String>, v410: &Result<Vec<ConceptVector>, String>) -> Check {
    let data = EmotionData::load()?;
    let m410 = m410.as_ref().map_err(Clone::clone)?;
    let v410 = v410.as_ref().map_err(Clone::clone)?;
    let m14b = pythia("pythia-1.4b")?;
    let m14m = pythia("pythia-14m")?;
    let m70m = pythia("pythia-70m")?;

    let own = sweep(m410, &data.task(m410, &data.eval)?, v410)?;
    let own_ok = count(&own, 0.10) >= 4;

    let cross = sweep(&m14b, &data.task(&m14b, &data.eval)?, &transplanted(m410, &m14b, v410)?)?;
    let cross_ok = count(&cross, f64::MIN_POSITIVE) >= 3;

    let small_up = sweep(&m70m, &data.task(&m70m, &data.eval)?, &transplanted(&m14m, &m70m, &data.vectors(&m14m)?)?)?;
    let small_down = sweep(&m14m, &data.task(&m14m, &data.eval)?, &transplanted(&m70m, &m14m, &data.vectors(&m70m)?)?)?;
    let small_ok = count(&small_up, 0.10) < 4 && count(&small_down, 0.10) < 4;

    let detail = format!(
        "410M self [{}] {}/6 >= +10pp (need 4); 410M->1.4B [{}] {}/6 improved (need 3); 14M->70M {}/6, 70M->14M {}/6 >= +10pp (need < 4 each)",
        describe(&own),
        count(&own, 0.10),
        describe(&cross),
        count(&cross, f64::MIN_POSITIVE),
        count(&small_up, 0.10),
        count(&small_down, 0.10)
    );
    if own_ok && cross_ok && small_ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn paired(m: &GptNeoX, texts: &[String], plan: &SteeringPlan, layer: usize) -> Result<(Vec<Vec<f32>>, Vec<Vec<f32>>), String> {
    let mut before = Vec::new();
    let mut after = Vec::new();
    for t in texts {
        before.push(steered_last_token_states(m, t, None).map_err(err)?.swap_remove(layer - 1));
        after.push(steered_last_token_states(m, t, Some(plan)).map_err(err)?.swap_remove(layer - 1));
    }
    Ok((before, after))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn pca_displacement_check(m410: &Result<GptNeoX, String>, v410: &Result<Vec<ConceptVector>, String>) -> Check {
    let data = EmotionData::load()?;
    let m = m410.as_ref().map_err(Clone::clone)?;
    let fear = v410.as_ref().map_err(Clone::clone)?.iter().find(|v| v.concept == "fear").expect("six vectors");
    let layer = m.n_layers() / 2;
    let alpha = 4.0;
    let v = fear.layer(layer).expect("every layer refined").to_vec();
    let plan = SteeringPlan::single(layer, v.clone(), alpha);
    let texts: Vec<String> = data.eval.iter().map(|i| data.template.render(&i.scenario)).collect();
    let labels: Vec<String> = data.eval.iter().map(|i| i.label.clone()).collect();

    let (before, after) = paired(m, &texts, &plan, layer)?;
    let p: PcaProjection = pca_displacement(&before, &after, &labels, 2, PcaFit::Joint).map_err(err)?;
    let offset: Vec<f32> = v.iter().map(|x| alpha * x).collect();
    let dir: Vec<f32> = p.project_direction(&offset).iter().map(|&x| x as f32).collect();
    let mean_cos = p
        .points
        .iter()
        .map(|pt| cosine(&pt.arrow.iter().map(|&x| x as f32).collect::<Vec<_>>(), &dir))
        .sum::<f64>()
        / p.points.len() as f64;

    let (before, after) = paired(m, &texts, &plan, m.n_layers())?;
    let p = pca_displacement(&before, &after, &labels, 2, PcaFit::Joint).map_err(err)?;
    let anchor = centroids(&p, false).into_iter().find(|(l, _)| l == "fear").expect("fear items").1;
    let moved: Vec<(String, f64, f64)> = centroids(&p, false)
        .into_iter()
        .zip(centroids(&p, true))
        .filter(|((l, _), _)| l != "fear")
        .map(|((l, b), (_, a))| (l, distance(&b, &anchor), distance(&a, &anchor)))
        .collect();
    let closer = moved.iter().filter(|(_, b, a)| a < b).count();
    let detail = format!(
        "layer {layer}, alpha {alpha}: mean arrow cosine {mean_cos:.4} (> 0.99); final layer: {closer}/{} non-fear centroids moved closer to fear",
        moved.len()
    );
    if mean_cos > 0.99 && closer == moved.len() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn perplexity_sanity(m410: &Result<GptNeoX, String>, v410: &Result<Vec<ConceptVector>, String>) -> Check {
    let words = ["the", "river", "flows", "through", "town", "a", "small", "bridge"];
    let stub = StubModel::uniform(WordCodec::new(&words));
    let corpus: Vec<String> = vec![
        "the river flows through the town".into(),
        "a small bridge".into(),
        "the town".into(),
    ];
    let ppl = perplexity(&stub, &corpus, None).map_err(err)?.metric("perplexity").unwrap();
    let vocab = stub.vocab_size() as f64;
    let rel = (ppl - vocab).abs() / vocab;
    let stub_detail = format!("uniform stub PPL {ppl:.6} vs |V| = {vocab} (rel {rel:.1e} <= 1e-3)");
    if rel > 1e-3 {
        return Err(stub_detail);
    }

    let large = (|| -> Check {
        let emotions = EmotionData::load()?;
        let m = m410.as_ref().map_err(Clone::clone)?;
        let fear = v410.as_ref().map_err(Clone::clone)?.iter().find(|v| v.concept == "fear").expect("six vectors");
        let validation = emotions.task(m, &emotions.validate)?;
        let mut best = (SWEEP[0], f64::NEG_INFINITY);
        for alpha in SWEEP {
            let acc = token_acc(m, &validation, "fear", Some(&fear.steering(None, alpha).map_err(err)?))?;
            if acc > best.1 {
                best = (alpha, acc);
            }
        }
        let ppl_corpus = read_lines(&data("ppl_corpus.txt")).map_err(err)?;
        let base = perplexity(m, &ppl_corpus, None).map_err(err)?.metric("perplexity").unwrap();
        let plan = fear.steering(None, best.0).map_err(err)?;
        let steered = perplexity(m, &ppl_corpus, Some(&plan)).map_err(err)?.metric("perplexity").unwrap();
        let increase = steered / base - 1.0;
        let detail = format!(
            "410M PPL {base:.2} -> {steered:.2} at validation alpha {} ({:+.1}%, < +15%)",
            best.0,
            100.0 * increase
        );
        if increase < 0.15 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })();
    match large {
        Ok(d) => Ok(format!("{stub_detail}; {d}")),
        Err(d) => Err(format!("{stub_detail}; {d}")),
    }
}

// ---------------------------------------------------------------- 7

fn final_states(m: &GptNeoX, texts: &[&str], plan: Option<&SteeringPlan>) -> Result<Vec<Vec<f32>>, String> {
    texts
        .iter()
        .map(|t| {
            steered_last_token_states(m, t, plan)
                .map(|mut s| s.swap_remove(m.n_layers() - 1))
                .map_err(err)
        })
        .collect()
}

fn token_shift_check() -> Check {
    let sentences = [
        "The river flows through the old town",
        "Numbers like 42 and 2024",
        "Hello",
        "Pretend you're an honest person.",
        "A light rain fell as the market packed up.",
    ];
    let m = model("neox-wide");
    let token = 321usize;
    let row: Vec<f32> = m.weights().unembedding.row(token).to_vec();
    let before = final_states(&m, &sentences, None)?;
    let after: Vec<Vec<f32>> = before
        .iter()
        .map(|x| {
            let scale = 40.0 * x.iter().map(|v| v * v).sum::<f32>().sqrt() / row.iter().map(|v| v * v).sum::<f32>().sqrt();
            x.iter().zip(&row).map(|(a, b)| a + scale * b).collect()
        })
        .collect();
    let planted = token_shift(&m, &before, &after, 10).map_err(err)?;
    let hits = planted
        .sentences
        .iter()
        .filter(|s| s.increased.iter().any(|t| t.token_id as usize == token))
        .count();

    let zero = SteeringPlan::single(2, vec![0.0; m.hidden_dim()], 5.0);
    let zeroed = final_states(&m, &sentences, Some(&zero))?;
    let shift = token_shift(&m, &before, &zeroed, 10).map_err(err)?;
    let empty = shift.sentences.iter().all(|s| s.increased.is_empty() && s.decreased.is_empty());

    let detail = format!(
        "planted token in {hits}/{} increased sets; zero vector shift sets empty: {empty}",
        sentences.len()
    );
    if hits == sentences.len() && empty {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Check, f64)> = Vec::new();
    let mut record = |id: usize, name: &'static str, f: &dyn Fn() -> Check| {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} [{id}] {name} ({secs:.1}s): {detail}");
        results.push((id, name, outcome, secs));
    };

    record(1, "oracle parity", &oracle_parity);
    record(2, "least-squares correctness", &least_squares_correctness);
    record(3, "steering algebra", &steering_algebra);
    record(7, "token shift", &token_shift_check);

    let m410 = pythia("pythia-410m");
    let v410 = m410.as_ref().map_err(Clone::clone).and_then(|m| EmotionData::load()?.vectors(m));
    record(4, "emotion transplantation", &|| emotion_transplant(&m410, &v410));
    record(5, "pca displacement", &|| pca_displacement_check(&m410, &v410));
    record(6, "perplexity sanity", &|| perplexity_sanity(&m410, &v410));

    let passed = results.iter().filter(|r| r.2.is_ok()).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
