//! Log-linear next-token generator.
//!
//! The output side is an explicit vocabulary (so generation is invertible); the
//! input side is hashed: bag of words over the prompt plus two positional
//! features for the last two emitted tokens.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fl::{ModelParameters, Tensor};
use crate::linalg::{log_softmax, softmax, Matrix, SparseColumnGrad};
use crate::rng::SplitMix64;
use crate::text_features::{bow_features, tokenize, SparseFeatureVector, Token};

pub const GENERATOR_TENSOR: &str = "generator.W";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const EOS_ID: usize = 0;
pub const UNK_ID: usize = 1;
/// Number of previously generated tokens visible to the next step.
pub const HISTORY_WINDOW: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocab {
    /// Takes the full ordered token list, which must start with `<eos>`, `<unk>`.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[EOS_ID] != EOS || tokens[UNK_ID] != UNK {
            return Err(Error::Format(format!(
                "vocabulary must start with {EOS:?}, {UNK:?}"
            )));
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, t) in tokens.iter().enumerate() {
            if token_to_id.insert(t.clone(), id).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self {
            id_to_token: tokens,
            token_to_id,
        })
    }

    /// Tokens ranked by frequency (descending) then first occurrence, truncated
    /// to `max_size - 2` and appended after the reserved ids.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Self {
        assert!(max_size >= 2, "vocabulary needs room for {EOS} and {UNK}");
        let mut stats: HashMap<Token, (usize, usize)> = HashMap::new();
        let mut position = 0;
        for text in corpus {
            for token in tokenize(text.as_ref()) {
                stats.entry(token).or_insert((0, position)).0 += 1;
                position += 1;
            }
        }
        let mut ranked: Vec<(Token, (usize, usize))> = stats.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        let tokens = [EOS.to_owned(), UNK.to_owned()]
            .into_iter()
            .chain(
                ranked
                    .into_iter()
                    .take(max_size - 2)
                    .map(|(t, _)| t.into_string()),
            )
            .collect();
        Self::from_tokens(tokens).expect("tokenizer never yields reserved tokens")
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(&self.id_to_token).map_err(std::io::Error::from)?;
        json.push(b'\n');
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let tokens: Vec<String> = serde_json::from_slice(&fs::read(path)?)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Self::from_tokens(tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DecodingMode {
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub max_tokens: usize,
    pub mode: DecodingMode,
}

impl GenerationConfig {
    pub fn greedy(max_tokens: usize) -> Self {
        Self {
            max_tokens,
            mode: DecodingMode::Greedy,
        }
    }

    pub fn sample(max_tokens: usize, temperature: f64, seed: u64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self {
            max_tokens,
            mode: DecodingMode::Sample { temperature, seed },
        })
    }
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self::greedy(32)
    }
}

/// Input features for one decoding step: prompt bag of words plus
/// `prev1=<last>` and `prev2=<second-last>` history features.
pub fn step_features<P: AsRef<str>, H: AsRef<str>>(
    prompt: &[P],
    history: &[H],
    dim: usize,
) -> SparseFeatureVector {
    let mut features = bow_features(prompt, dim);
    for (offset, token) in history.iter().rev().take(HISTORY_WINDOW).enumerate() {
        let key = format!("prev{}={}", offset + 1, token.as_ref());
        features.add_hashed(key.as_bytes());
    }
    features
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogLinearLM {
    vocab: Vocab,
    weights: Matrix,
}

impl LogLinearLM {
    /// All-zero weights: the uniform next-token model.
    pub fn zeros(vocab: Vocab, features: usize) -> Self {
        assert!(features > 0, "feature dimension must be positive");
        let weights = Matrix::zeros(vocab.len(), features);
        Self { vocab, weights }
    }

    pub fn new(vocab: Vocab, weights: Matrix) -> Result<Self> {
        if weights.rows() != vocab.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weight rows for a vocabulary of {}",
                weights.rows(),
                vocab.len()
            )));
        }
        Ok(Self { vocab, weights })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn features(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn next_token_logits<P: AsRef<str>, H: AsRef<str>>(
        &self,
        prompt: &[P],
        history: &[H],
    ) -> Vec<f64> {
        self.weights
            .mul_sparse(&step_features(prompt, history, self.features()))
    }

    /// Target ids followed by EOS, with vocabulary lookups (unknown words map to UNK).
    fn target_ids(&self, target: &str) -> Vec<usize> {
        tokenize(target)
            .iter()
            .map(|t| self.vocab.id(t))
            .chain(std::iter::once(EOS_ID))
            .collect()
    }

    /// Teacher-forced natural-log probability of `target` followed by EOS.
    /// History tokens are the vocabulary spellings of the realized ids.
    pub fn sequence_log_prob(&self, prompt: &str, target: &str) -> f64 {
        let prompt = tokenize(prompt);
        self.sequence_log_prob_ids(&prompt, &self.target_ids(target))
    }

    /// Sum of log-probabilities of `ids` in order; `ids` should end with EOS for
    /// a complete sequence.
    pub fn sequence_log_prob_ids<P: AsRef<str>>(&self, prompt: &[P], ids: &[usize]) -> f64 {
        let mut history: Vec<&str> = Vec::with_capacity(ids.len());
        let mut total = 0.0;
        for &id in ids {
            let logits = self.next_token_logits(prompt, &history);
            total += log_softmax(&logits)[id];
            history.push(self.vocab.token(id));
        }
        total
    }

    /// Mean next-token cross-entropy of `target` + EOS and its gradient with
    /// respect to the weights. Prompt tokens are conditioning only.
    pub fn cross_entropy_and_grad(&self, prompt: &str, target: &str) -> (f64, SparseColumnGrad) {
        let prompt = tokenize(prompt);
        let ids = self.target_ids(target);
        let steps = ids.len() as f64;
        let mut grad = SparseColumnGrad::new(self.vocab.len(), self.features());
        let mut history: Vec<&str> = Vec::with_capacity(ids.len());
        let mut nll = 0.0;
        for &id in &ids {
            let features = step_features(&prompt, &history, self.features());
            let logits = self.weights.mul_sparse(&features);
            let log_p = log_softmax(&logits);
            nll -= log_p[id];
            let mut coeffs: Vec<f64> = log_p.iter().map(|lp| lp.exp()).collect();
            coeffs[id] -= 1.0;
            grad.add_outer(&coeffs, &features, 1.0 / steps);
            history.push(self.vocab.token(id));
        }
        (nll / steps, grad)
    }

    pub fn generate(&self, prompt: &str, config: &GenerationConfig) -> String {
        let prompt = tokenize(prompt);
        let mut sampler = match config.mode {
            DecodingMode::Sample { temperature, seed } => {
                Some((temperature, SplitMix64::new(seed)))
            }
            DecodingMode::Greedy => None,
        };
        let mut emitted: Vec<&str> = Vec::new();
        while emitted.len() < config.max_tokens {
            let logits = self.next_token_logits(&prompt, &emitted);
            let id = match sampler.as_mut() {
                None => argmax(&logits),
                Some((temperature, rng)) => {
                    let scaled: Vec<f64> = logits.iter().map(|l| l / *temperature).collect();
                    sample_index(&softmax(&scaled), rng.next_f64())
                }
            };
            if id == EOS_ID {
                break;
            }
            emitted.push(self.vocab.token(id));
        }
        emitted.join(" ")
    }

    pub fn parameters(&self) -> ModelParameters {
        let mut params = ModelParameters::new();
        params
            .insert(
                GENERATOR_TENSOR,
                Tensor::new(
                    vec![self.weights.rows(), self.weights.cols()],
                    self.weights.to_f32(),
                )
                .expect("matrix shape"),
            )
            .expect("unique names");
        params
    }

    pub fn from_parameters(vocab: Vocab, params: &ModelParameters) -> Result<Self> {
        let t = params
            .get(GENERATOR_TENSOR)
            .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor {GENERATOR_TENSOR}")))?;
        match t.shape() {
            [rows, cols] => Self::new(vocab, Matrix::from_f32(*rows, *cols, t.values())?),
            shape => Err(Error::ShapeMismatch(format!(
                "{GENERATOR_TENSOR} has shape {shape:?}, expected two dimensions"
            ))),
        }
    }

    pub fn load_parameters(&mut self, params: &ModelParameters) -> Result<()> {
        let loaded = Self::from_parameters(self.vocab.clone(), params)?;
        if loaded.features() != self.features() {
            return Err(Error::ShapeMismatch(format!(
                "generator has {} features, parameters have {}",
                self.features(),
                loaded.features()
            )));
        }
        *self = loaded;
        Ok(())
    }

    pub fn checksum(&self) -> u64 {
        self.weights.checksum()
    }
}

/// Index of the largest value; lowest index wins ties.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw for `u` in `[0, 1)`.
fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left the cumulative sum just below u: take the last non-zero entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::text_features::{feature_index, hash64};

    fn vocab(words: &[&str]) -> Vocab {
        let mut tokens = vec![EOS.to_owned(), UNK.to_owned()];
        tokens.extend(words.iter().map(|w| w.to_string()));
        Vocab::from_tokens(tokens).unwrap()
    }

    fn random_lm(words: &[&str], features: usize, seed: u64) -> LogLinearLM {
        let v = vocab(words);
        let mut rng = SplitMix64::new(seed);
        let data = (0..v.len() * features)
            .map(|_| 2.0 * rng.next_f64() - 1.0)
            .collect();
        LogLinearLM::new(v.clone(), Matrix::from_vec(v.len(), features, data).unwrap()).unwrap()
    }

    #[test]
    fn vocab_building() {
        assert_eq!(Vocab::build(&["a a b"], 10).tokens(), [EOS, UNK, "a", "b"]);
        assert_eq!(Vocab::build::<&str>(&[], 10).tokens(), [EOS, UNK]);
        assert_eq!(Vocab::build(&["z y", "y z x"], 10).tokens(), [EOS, UNK, "z", "y", "x"]);
        assert_eq!(Vocab::build(&["c c b b a"], 3).tokens(), [EOS, UNK, "c"]);
        assert_eq!(Vocab::build(&["c c b b a"], 2).tokens(), [EOS, UNK]);
        let v = Vocab::build(&["hello world"], 8);
        assert_eq!(v.id("world"), 3);
        assert_eq!(v.id("missing"), UNK_ID);
    }

    #[test]
    fn vocab_rejects_malformed_lists() {
        assert!(Vocab::from_tokens(vec!["<eos>".into()]).is_err());
        assert!(Vocab::from_tokens(vec!["<unk>".into(), "<eos>".into()]).is_err());
        assert!(Vocab::from_tokens(vec![EOS.into(), UNK.into(), "a".into(), "a".into()]).is_err());
    }

    #[test]
    fn step_feature_examples() {
        let none: [&str; 0] = [];
        assert!(step_features(&none, &none, 64).is_empty());
        assert_eq!(step_features(&["a"], &none, 64), bow_features(&["a"], 64));
        let f = 1 << 20;
        let got = step_features(&none, &["w", "x", "y"], f);
        let mut expected = SparseFeatureVector::new(f);
        expected.add((0xcda1_a3d8_a56b_0509_u64 % f as u64) as usize, 1.0);
        expected.add((0xd6a3_c9d8_aa9e_9c1b_u64 % f as u64) as usize, 1.0);
        assert_eq!(got, expected);
        assert_eq!(hash64(b"prev1=y"), 0xcda1_a3d8_a56b_0509);
    }

    #[test]
    fn logits_examples() {
        let lm = LogLinearLM::zeros(vocab(&["a", "b"]), 16);
        assert_eq!(lm.next_token_logits(&["a"], &["b"]), vec![0.0; 4]);
        let mut w = Matrix::zeros(4, 16);
        let col = feature_index(b"q", 16);
        for r in 0..4 {
            w.set(r, col, r as f64 + 0.5);
        }
        let lm = LogLinearLM::new(vocab(&["a", "b"]), w).unwrap();
        let none: [&str; 0] = [];
        assert_eq!(lm.next_token_logits(&["q"], &none), vec![0.5, 1.5, 2.5, 3.5]);
    }

    #[test]
    fn logits_match_dense_oracle() {
        let lm = random_lm(&["a", "b", "c"], 24, 3);
        let prompt = ["x", "y", "x"];
        let history = ["a", "b", "c"];
        let mut dense = [0.0; 24];
        for p in prompt {
            dense[feature_index(p.as_bytes(), 24)] += 1.0;
        }
        dense[feature_index(b"prev1=c", 24)] += 1.0;
        dense[feature_index(b"prev2=b", 24)] += 1.0;
        let got = lm.next_token_logits(&prompt, &history);
        for (r, g) in got.iter().enumerate() {
            let e: f64 = (0..24).map(|c| lm.weights().get(r, c) * dense[c]).sum();
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_model_log_prob() {
        let lm = LogLinearLM::zeros(vocab(&["a", "b"]), 8);
        assert!((lm.sequence_log_prob("anything", "a b") - 3.0 * 0.25f64.ln()).abs() < 1e-12);
        assert!((lm.sequence_log_prob("anything", "a b") + 4.158883).abs() < 1e-6);
        assert!((lm.sequence_log_prob("", "") - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_prob_matches_stepwise_oracle() {
        let lm = random_lm(&["a", "b", "c"], 16, 8);
        let prompt = ["p", "q"];
        let targets = ["b", "zzz", "a"]; // zzz -> <unk>
        let ids = [3, UNK_ID, 2, EOS_ID];
        let names = ["b", "<unk>", "a"];
        let mut oracle = 0.0;
        for (step, &id) in ids.iter().enumerate() {
            let mut x = [0.0; 16];
            for p in prompt {
                x[feature_index(p.as_bytes(), 16)] += 1.0;
            }
            if step >= 1 {
                x[feature_index(format!("prev1={}", names[step - 1]).as_bytes(), 16)] += 1.0;
            }
            if step >= 2 {
                x[feature_index(format!("prev2={}", names[step - 2]).as_bytes(), 16)] += 1.0;
            }
            let logits: Vec<f64> = (0..5)
                .map(|r| (0..16).map(|c| lm.weights().get(r, c) * x[c]).sum())
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            oracle += (logits[id].exp() / z).ln();
        }
        let got = lm.sequence_log_prob("p q", &targets.join(" "));
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }

    /// Enumerates every id sequence over the non-EOS tokens of a 3-token
    /// vocabulary; complete sequences (terminated by EOS) of length <= L carry
    /// total mass <= 1 that approaches 1 as L grows.
    #[test]
    fn sequence_probabilities_sum_to_one() {
        let lm = random_lm(&["a"], 8, 21);
        let prompt = ["ctx"];
        let mut previous = 0.0;
        for bound in 0..=12 {
            let mut mass = 0.0;
            for len in 0..=bound {
                for code in 0..(1usize << len) {
                    let mut ids: Vec<usize> =
                        (0..len).map(|b| 1 + ((code >> b) & 1)).collect();
                    ids.push(EOS_ID);
                    mass += lm.sequence_log_prob_ids(&prompt, &ids).exp();
                }
            }
            assert!(mass <= 1.0 + 1e-12);
            assert!(mass >= previous);
            previous = mass;
        }
        assert!(previous > 0.9, "mass {previous}");
    }

    #[test]
    fn generation_edge_cases() {
        let lm = random_lm(&["a", "b"], 8, 2);
        assert_eq!(lm.generate("hi", &GenerationConfig::greedy(0)), "");
        let mut w = Matrix::zeros(4, 8);
        for c in 0..8 {
            w.set(EOS_ID, c, 5.0);
        }
        let eos_lm = LogLinearLM::new(vocab(&["a", "b"]), w).unwrap();
        assert_eq!(eos_lm.generate("anything here", &GenerationConfig::greedy(10)), "");
        // Zero weights: uniform logits, lowest id (EOS) wins the tie.
        let flat = LogLinearLM::zeros(vocab(&["a"]), 8);
        assert_eq!(flat.generate("x", &GenerationConfig::greedy(5)), "");
    }

    #[test]
    fn greedy_emits_unk_literal_and_stops_at_max() {
        let mut w = Matrix::zeros(4, 8);
        for c in 0..8 {
            w.set(UNK_ID, c, 1.0);
        }
        let lm = LogLinearLM::new(vocab(&["a", "b"]), w).unwrap();
        assert_eq!(lm.generate("q", &GenerationConfig::greedy(3)), "<unk> <unk> <unk>");
    }

    #[test]
    fn sampling_is_seeded() {
        let lm = random_lm(&["a", "b", "c", "d"], 16, 5);
        let cfg = GenerationConfig::sample(20, 1.5, 42).unwrap();
        assert_eq!(lm.generate("q r", &cfg), lm.generate("q r", &cfg));
        assert!(GenerationConfig::sample(5, 0.0, 1).is_err());
        assert!(GenerationConfig::sample(5, f64::NAN, 1).is_err());
    }

    #[test]
    fn sample_index_edges() {
        assert_eq!(sample_index(&[0.0, 1.0], 0.0), 1);
        assert_eq!(sample_index(&[0.5, 0.5], 0.999_999), 1);
        assert_eq!(sample_index(&[0.3, 0.3, 0.0], 0.99), 1);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn parameters_round_trip() {
        let lm = random_lm(&["a", "b"], 8, 1);
        let params = lm.parameters();
        let restored = LogLinearLM::from_parameters(lm.vocab().clone(), &params).unwrap();
        // Values pass through f32.
        assert_eq!(restored.weights().as_slice(), Matrix::from_f32(4, 8, &lm.weights().to_f32()).unwrap().as_slice());
        assert!(LogLinearLM::from_parameters(vocab(&["a"]), &params).is_err());
    }

    proptest! {
        #[test]
        fn prompt_order_invariant(words in proptest::collection::vec("[a-f]{1,3}", 0..8), seed in 0u64..20) {
            let lm = random_lm(&["a", "b", "c"], 16, seed);
            let mut reversed = words.clone();
            reversed.reverse();
            prop_assert_eq!(
                lm.sequence_log_prob(&words.join(" "), "b a").to_bits(),
                lm.sequence_log_prob(&reversed.join(" "), "b a").to_bits()
            );
        }

        #[test]
        fn greedy_deterministic(seed in 0u64..30) {
            let lm = random_lm(&["a", "b", "c"], 16, seed);
            let cfg = GenerationConfig::greedy(8);
            prop_assert_eq!(lm.generate("x y", &cfg), lm.generate("x y", &cfg));
        }
    }
}
