use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::attention::ConditioningSequence;
use crate::error::{invalid, Result};

const START: &str = "<start>";
const END: &str = "<end>";
const PAD: &str = "<pad>";

/// Deterministic hash-seeded word embeddings standing in for a text encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyTextEncoder {
    pub n_tokens: usize,
    pub dim: usize,
}

fn hashed_vector(key: &str, dim: usize) -> Vec<f64> {
    let digest = Sha256::digest(key.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    let scale = 1.0 / (dim as f64).sqrt();
    (0..dim)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        })
        .collect()
}

impl ToyTextEncoder {
    pub fn new(n_tokens: usize, dim: usize) -> Result<Self> {
        if n_tokens < 3 || dim == 0 {
            return Err(invalid!("text encoder needs N >= 3 and D >= 1"));
        }
        Ok(Self { n_tokens, dim })
    }

    /// Lowercased alphanumeric words.
    pub fn words(prompt: &str) -> Vec<String> {
        prompt
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect()
    }

    /// Token strings after framing, truncation and padding to `n_tokens`.
    pub fn token_strings(&self, prompt: &str) -> Vec<String> {
        let mut toks = vec![START.to_string()];
        toks.extend(Self::words(prompt).into_iter().take(self.n_tokens - 2));
        toks.push(END.to_string());
        toks.resize(self.n_tokens, PAD.to_string());
        toks
    }

    pub fn embed_token(&self, token: &str) -> Vec<f64> {
        hashed_vector(&format!("tok:{token}"), self.dim)
    }

    /// Embedding standing in for a reference image's identity features.
    pub fn identity_embedding(&self, descriptor: &str) -> Vec<f64> {
        hashed_vector(&format!("id:{descriptor}"), self.dim)
    }

    pub fn encode(&self, prompt: &str) -> Result<ConditioningSequence> {
        let toks = self.token_strings(prompt);
        let mut m = Array2::zeros((self.n_tokens, self.dim));
        for (mut row, t) in m.rows_mut().into_iter().zip(&toks) {
            row.assign(&ndarray::Array1::from(self.embed_token(t)));
        }
        ConditioningSequence::new(m, None, prompt)
    }

    /// Position of the first occurrence of `word` among the token strings.
    pub fn find_word(&self, prompt: &str, word: &str) -> Option<usize> {
        let word = word.to_lowercase();
        self.token_strings(prompt).iter().position(|t| *t == word)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_and_padding() {
        let enc = ToyTextEncoder::new(6, 4).unwrap();
        assert_eq!(
            enc.token_strings("A man, riding a horse!"),
            vec!["<start>", "a", "man", "riding", "a", "<end>"]
        );
        assert_eq!(
            enc.token_strings("hi"),
            vec!["<start>", "hi", "<end>", "<pad>", "<pad>", "<pad>"]
        );
        assert_eq!(enc.find_word("a man riding", "Man"), Some(2));
    }

    #[test]
    fn encoding_is_deterministic() {
        let enc = ToyTextEncoder::new(8, 5).unwrap();
        assert_eq!(enc.encode("a woman").unwrap(), enc.encode("a woman").unwrap());
        assert_ne!(
            enc.encode("a woman").unwrap().tokens(),
            enc.encode("a man").unwrap().tokens()
        );
    }
}
