//! Deterministic offline clients.
//!
//! The chat mock keeps the information path semantically meaningful: it
//! scans the prompt for `topic:<tag>` markers and answers with a templated
//! text naming the observed tags by frequency, so topic signal survives the
//! summarize → shift → encode chain without a real language model. The
//! embed mock hashes token-sized chunks of the text into pseudorandom unit
//! vectors and averages them, which is deterministic and text-sensitive.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::{ChatClient, EmbedClient};
use crate::error::Result;

/// Header the default shift template puts above the newer summary; used to
/// split a shift prompt into its previous/current halves.
const CURRENT_MARKER: &str = "Current interest summary:";
const PREVIOUS_MARKER: &str = "Previous interest summary:";

pub struct MockChatClient {
    tag_pattern: Regex,
}

impl Default for MockChatClient {
    fn default() -> Self {
        Self::new()
    }
}

impl MockChatClient {
    pub fn new() -> Self {
        MockChatClient {
            tag_pattern: Regex::new(r"topic:([A-Za-z0-9_\-]+)").unwrap(),
        }
    }

    fn count_tags(&self, text: &str) -> Vec<(String, usize)> {
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        for (pos, cap) in self.tag_pattern.captures_iter(text).enumerate() {
            let tag = cap[1].to_string();
            let entry = counts.entry(tag).or_insert((0, pos));
            entry.0 += 1;
        }
        let mut ranked: Vec<(String, usize, usize)> = counts
            .into_iter()
            .map(|(tag, (count, first))| (tag, count, first))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.into_iter().map(|(tag, count, _)| (tag, count)).collect()
    }

    /// Tags in descending count order; ties broken by first appearance.
    /// Lines with a high rating mark what the user actually enjoyed, so
    /// when any such line carries tags, only those lines are counted —
    /// mirroring a model that reads the ratings rather than the raw
    /// exposure mix.
    fn ranked_tags(&self, text: &str) -> Vec<(String, usize)> {
        let enjoyed: String = text
            .lines()
            .filter(|l| l.contains("[rating: 4]") || l.contains("[rating: 5]"))
            .collect::<Vec<_>>()
            .join("\n");
        let from_enjoyed = self.count_tags(&enjoyed);
        if from_enjoyed.is_empty() {
            self.count_tags(text)
        } else {
            from_enjoyed
        }
    }

    fn summarize(&self, prompt: &str) -> String {
        let ranked = self.ranked_tags(prompt);
        match ranked.split_first() {
            None => "No clear interest signal in this history.".to_string(),
            Some(((main, _), rest)) if rest.is_empty() => {
                format!("Main interest: topic:{main}.")
            }
            Some(((main, _), rest)) => {
                let others: Vec<String> =
                    rest.iter().map(|(t, _)| format!("topic:{t}")).collect();
                format!(
                    "Main interest: topic:{main}. Also noted: {}.",
                    others.join(", ")
                )
            }
        }
    }

    fn shift(&self, prompt: &str) -> String {
        let (prev_part, curr_part) = match prompt.split_once(CURRENT_MARKER) {
            Some(split) => split,
            None => return self.summarize(prompt),
        };
        let prev_main = self.ranked_tags(prev_part).into_iter().next();
        let curr_main = self.ranked_tags(curr_part).into_iter().next();
        match (prev_main, curr_main) {
            (Some((prev, _)), Some((curr, _))) if prev == curr => {
                format!("Interest unchanged: topic:{curr} remains the main interest.")
            }
            (Some((prev, _)), Some((curr, _))) => {
                format!("New main interest: topic:{curr}. Previous interest topic:{prev} is fading.")
            }
            (_, Some((curr, _))) => format!("New main interest: topic:{curr}."),
            _ => "No clear interest shift signal.".to_string(),
        }
    }
}

impl ChatClient for MockChatClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        if prompt.contains(PREVIOUS_MARKER) {
            Ok(self.shift(prompt))
        } else {
            Ok(self.summarize(prompt))
        }
    }

    fn kind(&self) -> &'static str {
        "mock"
    }
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Characters per pseudo-token chunk.
const CHUNK_CHARS: usize = 4;

pub struct MockEmbedClient {
    dim: usize,
}

impl MockEmbedClient {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "embedding dimension must be >= 1");
        MockEmbedClient { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let chars: Vec<char> = text.chars().collect();
        let mut pooled = vec![0.0; self.dim];
        let mut chunks = 0usize;
        for chunk in chars.chunks(CHUNK_CHARS) {
            let token: String = chunk.iter().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()));
            let mut v = vec![0.0; self.dim];
            let mut norm = 0.0f64;
            for x in &mut v {
                *x = rng.random_range(-1.0..1.0);
                norm += *x * *x;
            }
            let norm = norm.sqrt().max(1e-12);
            for (p, x) in pooled.iter_mut().zip(&v) {
                *p += x / norm;
            }
            chunks += 1;
        }
        if chunks > 0 {
            for p in &mut pooled {
                *p /= chunks as f64;
            }
        }
        pooled
    }
}

impl EmbedClient for MockEmbedClient {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn kind(&self) -> &'static str {
        "mock"
    }
}
