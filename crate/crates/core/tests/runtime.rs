mod common;

use common::{fixtures, golden, max_abs_diff, model};
use transplant_core::runtime::{
    load_checkpoint, Capture, DecodeConfig, DecodeStrategy, LanguageModel, LogitsMode,
    SteeringPlan, TextCodec, Tokenizer,
};
use transplant_core::{Error, TokenSequence};

const MODELS: [&str; 3] = ["neox-par", "neox-seq", "neox-wide"];

#[test]
fn tokenizer_matches_reference_ids() {
    let tok = Tokenizer::from_file(&fixtures().join("tokenizer.json")).unwrap();
    let cases: Vec<serde_json::Value> = serde_json::from_str(
        &std::fs::read_to_string(fixtures().join("tokenizer_cases.json")).unwrap(),
    )
    .unwrap();
    for case in &cases {
        let text = case["text"].as_str().unwrap();
        let expected: Vec<u32> = case["ids"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap() as u32)
            .collect();
        assert_eq!(tok.encode_ids(text).unwrap(), expected, "encoding {text:?}");
    }
}

#[test]
fn tokenizer_round_trips_scenario_text() {
    let tok = Tokenizer::from_file(&fixtures().join("tokenizer.json")).unwrap();
    let s = "Scenario: You receive an unexpected token of appreciation.";
    assert_eq!(tok.decode(&tok.encode(s).unwrap()).unwrap(), s);
    assert!(tok.encode("").unwrap().is_empty());
}

#[test]
fn fixture_checkpoints_load_with_expected_shapes() {
    let (cfg, w) = load_checkpoint(&fixtures().join("neox-wide")).unwrap();
    assert_eq!((cfg.n_layers, cfg.hidden_dim, cfg.n_heads), (4, 96, 4));
    assert!(cfg.tie_embeddings);
    assert_eq!(w.unembedding, w.embedding);
    let (cfg, _) = load_checkpoint(&fixtures().join("neox-seq")).unwrap();
    assert!(!cfg.parallel_residual);
    assert_eq!(cfg.rotary_dims(), 8);
}

#[test]
fn logits_and_states_match_reference_implementation() {
    for name in MODELS {
        let m = model(name);
        let g = golden(&fixtures().join(name));
        assert_eq!(g.prompts.len(), 5);
        for p in &g.prompts {
            let ids = m.codec().encode(&p.text).unwrap();
            assert_eq!(ids.ids(), p.ids.as_slice(), "{name}: token ids for {:?}", p.text);
            let out = m
                .forward(&ids, None, &Capture::states_and_last_logits())
                .unwrap();
            let logits = out.last_logits().unwrap().to_vec();
            let err = max_abs_diff(&logits, &p.logits);
            assert!(err <= 2e-3, "{name}: logits max-abs {err}");
            for (k, expected) in p.states.iter().enumerate() {
                let got = &out.state(k + 1).unwrap().vector;
                let err = max_abs_diff(got, expected);
                assert!(err <= 5e-3, "{name}: layer {} state max-abs {err}", k + 1);
            }
        }
    }
}

#[test]
fn all_position_logits_match_reference() {
    let m = model("neox-par");
    let g = golden(&fixtures().join("neox-par"));
    let all = g.file.f32("prompt0.all_logits").unwrap();
    let ids = TokenSequence::new(g.prompts[0].ids.clone());
    let out = m.forward(&ids, None, &Capture::logits_only()).unwrap();
    assert_eq!(out.logits.shape(), all.shape.as_slice());
    let err = max_abs_diff(out.logits.as_slice().unwrap(), &all.data);
    assert!(err <= 2e-3, "max-abs {err}");
}

#[test]
fn softmax_rows_sum_to_one() {
    let m = model("neox-par");
    let ids = m.codec().encode("The river flows through the old town").unwrap();
    let out = m.forward(&ids, None, &Capture::logits_only()).unwrap();
    for row in out.logits.rows() {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let z: f64 = row.iter().map(|&l| f64::from(l - max).exp()).sum();
        let total: f64 = row.iter().map(|&l| f64::from(l - max).exp() / z).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}

#[test]
fn greedy_generation_matches_reference_and_is_deterministic() {
    for name in MODELS {
        let m = model(name);
        let g = golden(&fixtures().join(name));
        let (_, expected) = g.file.i64("greedy.ids").unwrap();
        let prompt = TokenSequence::new(g.prompts[1].ids.clone());
        let cfg = DecodeConfig::greedy(expected.len());
        let a = m.generate(&prompt, &cfg, None).unwrap();
        let b = m.generate(&prompt, &cfg, None).unwrap();
        assert_eq!(a, b);
        let expected: Vec<u32> = expected.iter().map(|&x| x as u32).collect();
        assert_eq!(a.ids(), expected.as_slice(), "{name}");
    }
}

#[test]
fn cached_decoding_matches_full_recompute() {
    let m = model("neox-seq");
    let v: Vec<f32> = (0..m.hidden_dim()).map(|i| ((i as f32) * 0.37).sin()).collect();
    let plan = SteeringPlan::single(2, v, 1.5);
    for steering in [None, Some(&plan)] {
        let resolved = steering.map(|p| p.resolve(m.n_layers(), m.hidden_dim()).unwrap());
        let prompt = m.codec().encode("Numbers like 42 and").unwrap();
        let mut cache = m.new_cache();
        let mut context = prompt.clone();
        let mut step = m
            .forward_cached(&mut cache, &prompt, resolved.as_ref(), &Capture::last_logits())
            .unwrap();
        for _ in 0..8 {
            let full = m.forward(&context, steering, &Capture::last_logits()).unwrap();
            let inc = step.last_logits().unwrap().to_vec();
            let err = max_abs_diff(&inc, &full.last_logits().unwrap().to_vec());
            assert!(err <= 1e-4, "incremental vs full max-abs {err}");
            let next = transplant_core::runtime::argmax(&inc) as u32;
            context.push(next);
            step = m
                .forward_cached(&mut cache, &[next], resolved.as_ref(), &Capture::last_logits())
                .unwrap();
        }
    }
}

#[test]
fn default_generate_agrees_with_cached_generate() {
    struct Recompute<'a>(&'a transplant_core::GptNeoX);
    impl LanguageModel for Recompute<'_> {
        fn model_id(&self) -> &str {
            "recompute"
        }
        fn n_layers(&self) -> usize {
            self.0.n_layers()
        }
        fn hidden_dim(&self) -> usize {
            self.0.hidden_dim()
        }
        fn vocab_size(&self) -> usize {
            self.0.vocab_size()
        }
        fn max_seq_len(&self) -> usize {
            self.0.max_seq_len()
        }
        fn codec(&self) -> &dyn TextCodec {
            self.0.codec()
        }
        fn forward(
            &self,
            t: &TokenSequence,
            s: Option<&SteeringPlan>,
            c: &Capture,
        ) -> transplant_core::Result<transplant_core::ForwardResult> {
            self.0.forward(t, s, c)
        }
        fn unembed(&self, state: &[f32]) -> transplant_core::Result<Vec<f32>> {
            self.0.unembed(state)
        }
    }
    let m = model("neox-par");
    let prompt = m.codec().encode("Hello").unwrap();
    let cfg = DecodeConfig {
        strategy: DecodeStrategy::Temperature {
            temperature: 0.8,
            seed: 11,
        },
        max_new_tokens: 10,
        stop_token: None,
    };
    let cached = m.generate(&prompt, &cfg, None).unwrap();
    let slow = Recompute(&m).generate(&prompt, &cfg, None).unwrap();
    assert_eq!(cached, slow);
}

#[test]
fn zero_strength_steering_is_bitwise_noop() {
    let m = model("neox-par");
    let ids = m.codec().encode("Pretend you're an honest person").unwrap();
    let v: Vec<f32> = (0..m.hidden_dim()).map(|i| i as f32 * 0.01 - 0.3).collect();
    let mut plan = SteeringPlan::new(0.0);
    plan.add_vector("a", (1..=m.n_layers()).map(|k| (k, v.clone())), None)
        .unwrap();
    let cap = Capture {
        layers: transplant_core::runtime::LayerSelection::All,
        full_states: true,
        logits: LogitsMode::All,
    };
    let base = m.forward(&ids, None, &cap).unwrap();
    let steered = m.forward(&ids, Some(&plan), &cap).unwrap();
    let bits = |a: &ndarray::Array2<f32>| a.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&base.logits), bits(&steered.logits));
    assert_eq!(base.captured, steered.captured);
    let prompt = ids.clone();
    let cfg = DecodeConfig::greedy(6);
    assert_eq!(
        m.generate(&prompt, &cfg, None).unwrap(),
        m.generate(&prompt, &cfg, Some(&plan)).unwrap()
    );
}

#[test]
fn single_layer_injection_is_local_and_exact() {
    let m = model("neox-wide");
    let ids = m.codec().encode("The committee met on Tuesday").unwrap();
    let v: Vec<f32> = (0..m.hidden_dim()).map(|i| ((i * 7 % 13) as f32) - 6.0).collect();
    let alpha = 0.75f32;
    let cap = Capture {
        layers: transplant_core::runtime::LayerSelection::All,
        full_states: true,
        logits: LogitsMode::Skip,
    };
    for k in 1..=m.n_layers() {
        let plan = SteeringPlan::single(k, v.clone(), alpha);
        let base = m.forward(&ids, None, &cap).unwrap();
        let steered = m.forward(&ids, Some(&plan), &cap).unwrap();
        let (bs, ss) = (base.full_states.unwrap(), steered.full_states.unwrap());
        for layer in 0..k - 1 {
            assert!(
                bs[layer].iter().zip(ss[layer].iter()).all(|(a, b)| a.to_bits() == b.to_bits()),
                "layer {} changed when steering layer {k}",
                layer + 1
            );
        }
        for (b_row, s_row) in bs[k - 1].rows().into_iter().zip(ss[k - 1].rows()) {
            for ((b, s), x) in b_row.iter().zip(s_row.iter()).zip(&v) {
                assert_eq!(s.to_bits(), (b + alpha * x).to_bits());
            }
        }
    }
}

#[test]
fn context_and_shape_errors() {
    let m = model("neox-par");
    let long = TokenSequence::new(vec![5; m.max_seq_len() + 1]);
    assert!(matches!(
        m.forward(&long, None, &Capture::logits_only()),
        Err(Error::SequenceTooLong { .. })
    ));
    let prompt = TokenSequence::new(vec![5; m.max_seq_len() - 2]);
    assert!(matches!(
        m.generate(&prompt, &DecodeConfig::greedy(5), None),
        Err(Error::SequenceTooLong { .. })
    ));
    assert!(m.generate(&TokenSequence::default(), &DecodeConfig::greedy(1), None).is_err());
    assert!(m.generate(&prompt, &DecodeConfig::greedy(0), None).is_err());
    let bad = TokenSequence::new(vec![m.vocab_size() as u32]);
    assert!(matches!(
        m.forward(&bad, None, &Capture::logits_only()),
        Err(Error::TokenOutOfRange { .. })
    ));
    let wrong = SteeringPlan::single(1, vec![1.0; 3], 1.0);
    assert!(m.forward(&TokenSequence::new(vec![1]), Some(&wrong), &Capture::logits_only()).is_err());
}

#[test]
fn config_wider_than_tensors_is_a_shape_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let src = fixtures().join("neox-par");
    std::fs::copy(src.join("model.safetensors"), dir.path().join("model.safetensors")).unwrap();
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(src.join("config.json")).unwrap()).unwrap();
    cfg["hidden_size"] = 128.into();
    std::fs::write(dir.path().join("config.json"), cfg.to_string()).unwrap();
    assert!(matches!(
        load_checkpoint(dir.path()),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn missing_tensor_is_reported_by_name() {
    use std::collections::HashMap;
    use transplant_core::tensor_file::{write_f32_tensors, TensorFile};
    let dir = tempfile::tempdir().unwrap();
    let src = fixtures().join("neox-par");
    std::fs::copy(src.join("config.json"), dir.path().join("config.json")).unwrap();
    let file = TensorFile::open(&src.join("model.safetensors")).unwrap();
    let kept: Vec<(String, Vec<usize>, Vec<f32>)> = file
        .names()
        .into_iter()
        .filter(|n| n != "gpt_neox.final_layer_norm.bias")
        .map(|n| {
            let t = file.f32(&n).unwrap();
            (n, t.shape, t.data)
        })
        .collect();
    let refs: Vec<(String, Vec<usize>, &[f32])> = kept
        .iter()
        .map(|(n, s, d)| (n.clone(), s.clone(), d.as_slice()))
        .collect();
    write_f32_tensors(&dir.path().join("model.safetensors"), &refs, Some(HashMap::new())).unwrap();
    match load_checkpoint(dir.path()) {
        Err(Error::MissingTensor(name)) => assert_eq!(name, "final_layer_norm.bias"),
        other => panic!("expected missing tensor, got {other:?}"),
    }
}

#[test]
fn unembed_of_final_state_reproduces_last_logits() {
    let m = model("neox-par");
    let ids = m.codec().encode("Hello world").unwrap();
    let out = m.forward(&ids, None, &Capture::states_and_last_logits()).unwrap();
    let last = &out.state(m.n_layers()).unwrap().vector;
    let logits = m.unembed(last).unwrap();
    assert!(max_abs_diff(&logits, &out.last_logits().unwrap().to_vec()) < 1e-5);
    assert!(m.unembed(&[1.0, 2.0]).is_err());
}
