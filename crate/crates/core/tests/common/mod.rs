#![allow(dead_code)]

use std::path::PathBuf;

use transplant_core::tensor_file::TensorFile;
use transplant_core::GptNeoX;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn model(name: &str) -> GptNeoX {
    GptNeoX::load(&fixtures().join(name)).expect("fixture model loads")
}

pub struct GoldenPrompt {
    pub text: String,
    pub ids: Vec<u32>,
    pub logits: Vec<f32>,
    /// `L x d`, row k-1 = layer k.
    pub states: Vec<Vec<f32>>,
}

pub struct Golden {
    pub prompts: Vec<GoldenPrompt>,
    pub file: TensorFile,
    pub manifest: serde_json::Value,
}

pub fn golden(dir: &std::path::Path) -> Golden {
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("golden.json")).unwrap()).unwrap();
    let file = TensorFile::open(&dir.join("golden.safetensors")).unwrap();
    let prompts = manifest["prompts"]
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (_, ids) = file.i64(&format!("prompt{i}.ids")).unwrap();
            let states = file.f32(&format!("prompt{i}.states")).unwrap();
            let d = states.shape[1];
            GoldenPrompt {
                text: p["text"].as_str().unwrap().to_string(),
                ids: ids.iter().map(|&x| x as u32).collect(),
                logits: file.f32(&format!("prompt{i}.logits")).unwrap().data,
                states: states.data.chunks(d).map(<[f32]>::to_vec).collect(),
            }
        })
        .collect();
    Golden {
        prompts,
        file,
        manifest,
    }
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

pub mod stub {
    use ndarray::Array2;
    use transplant_core::runtime::TextCodec;
    use transplant_core::{
        Capture, Error, ForwardResult, LanguageModel, Result, SteeringPlan, TokenSequence,
    };

    /// Whole-word codec: a piece is a word with its leading space, or a
    /// single non-alphanumeric character. Unknown pieces map to id 0.
    pub struct WordCodec {
        pub vocab: Vec<String>,
    }

    impl WordCodec {
        pub fn new(words: &[&str]) -> Self {
            let mut vocab = vec!["<unk>".to_string()];
            vocab.extend(words.iter().map(|w| w.to_string()));
            WordCodec { vocab }
        }

        fn pieces(text: &str) -> Vec<String> {
            let mut out = Vec::new();
            let mut current = String::new();
            for c in text.chars() {
                if c.is_alphanumeric() {
                    current.push(c);
                    continue;
                }
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                if c == ' ' {
                    current.push(' ');
                } else {
                    out.push(c.to_string());
                }
            }
            if !current.is_empty() {
                out.push(current);
            }
            out
        }
    }

    impl TextCodec for WordCodec {
        fn encode(&self, text: &str) -> Result<TokenSequence> {
            Ok(Self::pieces(text)
                .iter()
                .map(|p| self.vocab.iter().position(|v| v == p).unwrap_or(0) as u32)
                .collect())
        }

        fn decode(&self, ids: &[u32]) -> Result<String> {
            ids.iter()
                .map(|&i| {
                    self.vocab
                        .get(i as usize)
                        .cloned()
                        .ok_or(Error::TokenOutOfRange { id: i, vocab: self.vocab.len() })
                })
                .collect()
        }

        fn token_id(&self, token: &str) -> Option<u32> {
            self.vocab.iter().position(|v| v == token).map(|i| i as u32)
        }

        fn vocab_size(&self) -> usize {
            self.vocab.len()
        }
    }

    type LogitsFn = dyn Fn(&[u32]) -> Vec<f32> + Send + Sync;

    /// Next-token logits come from a closure over the prefix. No hidden
    /// states.
    pub struct StubModel {
        pub codec: WordCodec,
        pub logits: Box<LogitsFn>,
    }

    impl StubModel {
        pub fn new(codec: WordCodec, logits: impl Fn(&[u32]) -> Vec<f32> + Send + Sync + 'static) -> Self {
            StubModel { codec, logits: Box::new(logits) }
        }

        /// Every token equally likely everywhere.
        pub fn uniform(codec: WordCodec) -> Self {
            let v = codec.vocab.len();
            Self::new(codec, move |_| vec![0.25; v])
        }
    }

    impl LanguageModel for StubModel {
        fn model_id(&self) -> &str {
            "stub"
        }
        fn n_layers(&self) -> usize {
            1
        }
        fn hidden_dim(&self) -> usize {
            1
        }
        fn vocab_size(&self) -> usize {
            self.codec.vocab.len()
        }
        fn max_seq_len(&self) -> usize {
            4096
        }
        fn codec(&self) -> &dyn TextCodec {
            &self.codec
        }
        fn forward(
            &self,
            tokens: &TokenSequence,
            _steering: Option<&SteeringPlan>,
            _capture: &Capture,
        ) -> Result<ForwardResult> {
            let v = self.vocab_size();
            let mut logits = Array2::zeros((tokens.len(), v));
            for t in 0..tokens.len() {
                let row = (self.logits)(&tokens[..=t]);
                logits.row_mut(t).assign(&ndarray::Array1::from(row));
            }
            Ok(ForwardResult { logits, captured: Vec::new(), full_states: None })
        }
        fn unembed(&self, _state: &[f32]) -> Result<Vec<f32>> {
            Err(Error::InvalidInput("stub has no unembedding".into()))
        }
    }
}
