use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use transplant_core::concept::{load_maps, load_vector};
use transplant_core::{DecodeConfig, GptNeoX, LanguageModel, SteeringPlan};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transplant"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap().trim().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SCENARIOS: &str = r#"{"scenario": "You hear a noise at night.", "label": "fear"}
{"scenario": "A dog growls at you.", "label": "fear"}
{"scenario": "The ice cracks under you.", "label": "fear"}
{"scenario": "Your friends throw you a party.", "label": "happiness"}
{"scenario": "You win the big game.", "label": "happiness"}
{"scenario": "Your old dog dies.", "label": "sadness"}
{"scenario": "A friend moves away.", "label": "sadness"}
{"scenario": "Someone steals your bike.", "label": "anger"}
{"scenario": "A gift arrives from nowhere.", "label": "surprise"}
{"scenario": "The soup has a fly in it.", "label": "disgust"}
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("scenarios.jsonl"), SCENARIOS).unwrap();
        Workspace { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn file(&self, name: &str, contents: &str) -> PathBuf {
        let p = self.path().join(name);
        fs::write(&p, contents).unwrap();
        p
    }

    fn pairs(&self, concept: &str, n: usize) -> String {
        ok(
            self.path(),
            &["make-pairs", "--scenarios", "scenarios.jsonl", "--concept", concept, "--n", &n.to_string(), "--seed", "3"],
        )
    }

    fn refine(&self, model: &str, concept: &str, pairs: &str) -> String {
        ok(
            self.path(),
            &["refine", "--src-model", s(&fixture(model)), "--pairs", pairs, "--concept", concept, "--template", "emotion"],
        )
    }
}

#[test]
fn refine_missing_pair_file_is_a_usage_error() {
    let ws = Workspace::new();
    let out = run(
        ws.path(),
        &["refine", "--src-model", s(&fixture("neox-par")), "--pairs", "nope.jsonl", "--concept", "fear"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.jsonl"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let ws = Workspace::new();
    assert_eq!(run(ws.path(), &["refine", "--bogus"]).status.code(), Some(2));
}

#[test]
fn refine_is_deterministic_and_covers_every_layer() {
    let ws = Workspace::new();
    let pairs = ws.pairs("fear", 3);
    let first = ws.refine("neox-par", "fear", &pairs);
    let bytes = fs::read(ws.path().join(&first)).unwrap();
    fs::remove_file(ws.path().join(&first)).unwrap();
    let second = ws.refine("neox-par", "fear", &pairs);
    assert_eq!(first, second);
    assert_eq!(bytes, fs::read(ws.path().join(&second)).unwrap());
    assert!(first.starts_with("artifacts/vectors/fear-"));

    let v = load_vector(&ws.path().join(&first)).unwrap();
    assert_eq!(v.layers.keys().copied().collect::<Vec<_>>(), vec![1, 2, 3]);
    assert_eq!(v.n_pairs, 3);
    let sidecar: Value =
        serde_json::from_str(&fs::read_to_string(ws.path().join(&first).with_extension("json")).unwrap()).unwrap();
    let prov = &sidecar["provenance"];
    assert_eq!(prov["command"], "refine");
    assert_eq!(prov["config"]["concept"], "fear");
    assert!(prov["inputs"]["pairs"].as_str().unwrap().starts_with("sha256:"));
    assert!(prov["inputs"]["src_model"].as_str().unwrap().starts_with("sha256:"));
}

#[test]
fn self_map_is_close_to_identity() {
    let ws = Workspace::new();
    let out = ok(
        ws.path(),
        &[
            "fit-map",
            "--src-model",
            s(&fixture("neox-par")),
            "--tgt-model",
            s(&fixture("neox-par")),
            "--corpus",
            s(&data("fit_corpus.txt")),
            "--n-samples",
            "300",
        ],
    );
    let maps = load_maps(&ws.path().join(out)).unwrap();
    assert_eq!(maps.layers.len(), 3);
    for (k, m) in &maps.layers {
        assert_eq!(m.source_layer, *k);
        assert!(m.residual >= 0.0 && m.relative_residual >= 0.0);
        for ((i, j), &f) in m.matrix.indexed_iter() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((f - want).abs() <= 1e-3, "layer {k} ({i},{j}) = {f}");
        }
    }
}

#[test]
fn fit_map_rejects_empty_corpus() {
    let ws = Workspace::new();
    let empty = ws.file("empty.txt", "\n\n");
    let out = run(
        ws.path(),
        &["fit-map", "--src-model", s(&fixture("neox-par")), "--tgt-model", s(&fixture("neox-wide")), "--corpus", s(&empty)],
    );
    assert_eq!(out.status.code(), Some(2));
}

fn generate(model: &GptNeoX, text: &str, plan: Option<&SteeringPlan>, n: usize) -> String {
    let ids = model.codec().encode(text).unwrap();
    let out = model.generate(&ids, &DecodeConfig::greedy(n), plan).unwrap();
    model.codec().decode(&out).unwrap()
}

#[test]
fn transplant_alpha_zero_matches_unsteered() {
    let ws = Workspace::new();
    let v = ws.refine("neox-seq", "fear", &ws.pairs("fear", 3));
    let out = ok(
        ws.path(),
        &["transplant", "--tgt-model", s(&fixture("neox-seq")), "--vector", &v, "--alpha", "0", "--prompt", "The river", "--max-new-tokens", "8"],
    );
    let model = GptNeoX::load(&fixture("neox-seq")).unwrap();
    assert_eq!(out, generate(&model, "The river", None, 8).trim());
}

#[test]
fn transplant_sums_vectors_with_their_own_strengths() {
    let ws = Workspace::new();
    let fear = ws.refine("neox-seq", "fear", &ws.pairs("fear", 3));
    let joy = ws.refine("neox-seq", "happiness", &ws.pairs("happiness", 2));
    let out = ok(
        ws.path(),
        &[
            "transplant",
            "--tgt-model",
            s(&fixture("neox-seq")),
            "--vector",
            &format!("{fear}@4"),
            "--vector",
            &format!("{joy}@-2.5"),
            "--layers",
            "2",
            "--prompt",
            "Hello",
            "--max-new-tokens",
            "6",
        ],
    );
    let model = GptNeoX::load(&fixture("neox-seq")).unwrap();
    let fv = load_vector(&ws.path().join(&fear)).unwrap();
    let jv = load_vector(&ws.path().join(&joy)).unwrap();
    let mut plan = SteeringPlan::new(1.0);
    plan.add_vector("fear", [(2, fv.layers[&2].clone())], Some(4.0)).unwrap();
    plan.add_vector("happiness", [(2, jv.layers[&2].clone())], Some(-2.5)).unwrap();
    assert_eq!(out, generate(&model, "Hello", Some(&plan), 6).trim());
}

#[test]
fn cross_model_vector_without_map_asks_for_fit_map() {
    let ws = Workspace::new();
    let v = ws.refine("neox-par", "fear", &ws.pairs("fear", 2));
    let out = run(
        ws.path(),
        &["transplant", "--tgt-model", s(&fixture("neox-wide")), "--vector", &v, "--prompt", "Hello"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fit-map"));
}

#[test]
fn cross_model_transplant_through_fitted_map() {
    let ws = Workspace::new();
    let v = ws.refine("neox-par", "fear", &ws.pairs("fear", 2));
    let map = ok(
        ws.path(),
        &[
            "fit-map",
            "--src-model",
            s(&fixture("neox-par")),
            "--tgt-model",
            s(&fixture("neox-wide")),
            "--corpus",
            s(&data("fit_corpus.txt")),
            "--n-samples",
            "150",
        ],
    );
    assert!(map.contains("neox-par-to-neox-wide-"));
    let text = ok(
        ws.path(),
        &["transplant", "--tgt-model", s(&fixture("neox-wide")), "--vector", &v, "--maps", &map, "--alpha", "2", "--prompt", "Hello", "--max-new-tokens", "4"],
    );
    assert!(!text.is_empty());
}

fn emotion_eval_args<'a>(model: &'a str, v: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "eval", "emotion", "--tgt-model", model, "--items", "scenarios.jsonl", "--target", "fear", "--vector", v,
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn emotion_eval_report_and_grid() {
    let ws = Workspace::new();
    let model = fixture("neox-par");
    let v = ws.refine("neox-par", "fear", &ws.pairs("fear", 3));
    let report_path = ok(ws.path(), &emotion_eval_args(s(&model), &v, &["--alpha", "1"]));
    let report: Value = serde_json::from_str(&fs::read_to_string(ws.path().join(&report_path)).unwrap()).unwrap();
    assert_eq!(report["task"], "emotion");
    // seven scenarios are not labelled fear
    assert_eq!(report["items"].as_array().unwrap().len(), 7);
    assert_eq!(report["config"]["command"], "eval");

    let grid_path = ok(ws.path(), &emotion_eval_args(s(&model), &v, &["--alpha-grid", "0:4:2"]));
    let grid: Value = serde_json::from_str(&fs::read_to_string(ws.path().join(&grid_path)).unwrap()).unwrap();
    let best = grid["extra"]["best_alpha"].as_f64().unwrap();
    assert_eq!(grid["alpha"].as_f64().unwrap(), best);
    assert_eq!(grid["extra"]["grid"]["evaluations"].as_array().unwrap().len(), 3);
}

#[test]
fn eval_reruns_are_identical() {
    let ws = Workspace::new();
    let model = fixture("neox-par");
    let v = ws.refine("neox-par", "fear", &ws.pairs("fear", 3));
    let args = emotion_eval_args(s(&model), &v, &["--alpha", "2"]);
    let a = ok(ws.path(), &args);
    let first = fs::read(ws.path().join(&a)).unwrap();
    fs::remove_file(ws.path().join(&a)).unwrap();
    let b = ok(ws.path(), &args);
    assert_eq!(a, b);
    assert_eq!(first, fs::read(ws.path().join(&b)).unwrap());
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let ws = Workspace::new();
    let v = ws.refine("neox-par", "fear", &ws.pairs("fear", 3));
    let cfg = serde_json::json!({
        "tgt_model": fixture("neox-par"),
        "items": "scenarios.jsonl",
        "target": "fear",
        "alpha": 3.0,
        "vectors": [{ "path": v }],
    });
    ws.file("run.json", &cfg.to_string());
    let path = ok(ws.path(), &["eval", "emotion", "--config", "run.json", "--alpha", "0.5"]);
    let report: Value = serde_json::from_str(&fs::read_to_string(ws.path().join(path)).unwrap()).unwrap();
    assert_eq!(report["alpha"].as_f64(), Some(0.5));
    assert_eq!(report["config"]["config"]["alpha"].as_f64(), Some(0.5));
    assert_eq!(report["config"]["config"]["target"], "fear");

    ws.file("bad.json", r#"{"alhpa": 1}"#);
    assert_eq!(run(ws.path(), &["eval", "emotion", "--config", "bad.json"]).status.code(), Some(2));
}

#[test]
fn mc_and_perplexity_reports() {
    let ws = Workspace::new();
    ws.file(
        "mc.jsonl",
        concat!(
            r#"{"question": "The sky is", "choices": ["blue", "made of cheese"], "correct": 0}"#,
            "\n",
            r#"{"question": "Two plus two is", "choices": ["five", "four", "ten"], "correct": 1}"#,
            "\n"
        ),
    );
    ws.file("ppl.txt", "The river flows.\nA small town.\n");
    let model = fixture("neox-par");
    let mc = ok(ws.path(), &["eval", "mc", "--tgt-model", s(&model), "--items", "mc.jsonl"]);
    let mc: Value = serde_json::from_str(&fs::read_to_string(ws.path().join(mc)).unwrap()).unwrap();
    assert_eq!(mc["items"].as_array().unwrap().len(), 2);
    let ppl = ok(ws.path(), &["eval", "perplexity", "--tgt-model", s(&model), "--items", "ppl.txt"]);
    let ppl: Value = serde_json::from_str(&fs::read_to_string(ws.path().join(ppl)).unwrap()).unwrap();
    assert!(ppl["metrics"][0]["value"].as_f64().unwrap() > 1.0);
}

#[test]
fn completion_eval_with_lexicon_and_unreachable_service() {
    let ws = Workspace::new();
    ws.file("prompts.jsonl", "{\"prompt\": \"people are\", \"group\": \"g\"}\n");
    let model = fixture("neox-par");
    let base = ["eval", "completion", "--tgt-model", s(&model), "--items", "prompts.jsonl", "--max-new-tokens", "4"];
    let mut with_lexicon = base.to_vec();
    let lexicon = data("lexicon.txt");
    with_lexicon.extend(["--lexicon", s(&lexicon)]);
    ok(ws.path(), &with_lexicon);

    let mut offline = base.to_vec();
    offline.extend(["--classifier-url", "http://127.0.0.1:9/score"]);
    assert_eq!(run(ws.path(), &offline).status.code(), Some(4));

    assert_eq!(run(ws.path(), &base).status.code(), Some(2));
}

#[test]
fn analyses_write_plot_ready_json() {
    let ws = Workspace::new();
    let model = fixture("neox-par");
    let v = ws.refine("neox-par", "fear", &ws.pairs("fear", 3));
    let pca = ok(
        ws.path(),
        &["analyze", "pca", "--tgt-model", s(&model), "--vector", &v, "--layers", "2", "--alpha", "4", "--items", "scenarios.jsonl", "--target", "fear"],
    );
    let pca: Value = serde_json::from_str(&fs::read_to_string(ws.path().join(pca)).unwrap()).unwrap();
    assert_eq!(pca["capture_layer"], 2);
    assert!(pca["mean_arrow_cosine"].as_f64().unwrap() > 0.99);
    assert_eq!(pca["projection"]["points"].as_array().unwrap().len(), 10);
    assert_eq!(pca["centroid_distances"].as_array().unwrap().len(), 5);

    ws.file("sentences.txt", "The river flows.\nHello there\n");
    let shift = ok(
        ws.path(),
        &["analyze", "token-shift", "--tgt-model", s(&model), "--vector", &v, "--alpha", "0", "--items", "sentences.txt", "--k", "3"],
    );
    let shift: Value = serde_json::from_str(&fs::read_to_string(ws.path().join(shift)).unwrap()).unwrap();
    let report = &shift["report"];
    assert_eq!(report["n_sentences"], 2);
    assert!(report["increased_counts"].as_array().unwrap().is_empty());
    assert_eq!(shift["capture_layer"], 3);
}
