//! Prompt construction and the two-stage interest distillation.
//!
//! Stage one summarizes a single partition; stage two compares consecutive
//! partition summaries to describe the interest shift. Rendering is pure;
//! only [`summarize_partition`] and [`infer_interest_shift`] talk to the
//! chat client and touch the ledger.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::client::ChatClient;
use crate::error::{Error, Result};
use crate::ledger::EfficiencyLedger;
use crate::stream::Partition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PromptKind {
    Summary,
    Shift,
}

/// A fully rendered prompt plus its token estimate (`ceil(chars / 4)`).
#[derive(Debug, Clone, PartialEq)]
pub struct PromptText {
    pub kind: PromptKind,
    pub text: String,
    pub token_estimate: usize,
}

impl PromptText {
    fn new(kind: PromptKind, text: String) -> Self {
        let token_estimate = estimate_tokens(&text);
        PromptText {
            kind,
            text,
            token_estimate,
        }
    }
}

/// Character-count heuristic; good enough for order-of-magnitude accounting.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, Default)]
pub struct UserProfile {
    pub user_id: String,
    /// Free text; may be empty for anonymous users.
    pub description: String,
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>, description: impl Into<String>) -> Self {
        UserProfile {
            user_id: user_id.into(),
            description: description.into(),
        }
    }
}

/// Dataset-specific analysis angles (e.g. genre, director, period).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFactors {
    factors: Vec<String>,
}

impl DatasetFactors {
    pub fn new(factors: Vec<String>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Config("factor list must not be empty".into()));
        }
        Ok(DatasetFactors { factors })
    }

    pub fn factors(&self) -> &[String] {
        &self.factors
    }

    fn rendered(&self) -> String {
        self.factors.join(", ")
    }
}

/// The two texts produced for one partition. The shift is absent exactly
/// for the first partition, which has no predecessor to compare against.
#[derive(Debug, Clone, PartialEq)]
pub struct InterestKnowledge {
    pub partition_index: u32,
    pub summary: String,
    pub shift: Option<String>,
}

impl InterestKnowledge {
    pub fn new(partition_index: u32, summary: String, shift: Option<String>) -> Result<Self> {
        if summary.is_empty() {
            return Err(Error::Precondition("interest summary must not be empty".into()));
        }
        if partition_index == 1 && shift.is_some() {
            return Err(Error::Precondition(
                "the first partition cannot carry a shift".into(),
            ));
        }
        Ok(InterestKnowledge {
            partition_index,
            summary,
            shift,
        })
    }
}

const SUMMARY_TEMPLATE: &str = include_str!("../templates/summary.txt");
const SHIFT_TEMPLATE: &str = include_str!("../templates/shift.txt");
const EMPTY_PROFILE_LINE: &str = "(no profile information provided)";

/// Prompt wording lives in plain text files so it can be swapped without a
/// rebuild; the built-in copies of `templates/` are the defaults.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    summary: String,
    shift: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            summary: SUMMARY_TEMPLATE.to_string(),
            shift: SHIFT_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Loads `summary.txt` and `shift.txt` from a directory.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let summary = fs::read_to_string(dir.join("summary.txt"))?;
        let shift = fs::read_to_string(dir.join("shift.txt"))?;
        for (name, text, placeholders) in [
            ("summary.txt", &summary, &["{profile}", "{behaviors}", "{factors}"][..]),
            ("shift.txt", &shift, &["{previous}", "{current}", "{factors}"][..]),
        ] {
            for p in placeholders {
                if !text.contains(p) {
                    return Err(Error::Config(format!(
                        "template {name} is missing the {p} placeholder"
                    )));
                }
            }
        }
        Ok(PromptTemplates { summary, shift })
    }
}

fn render_behavior_line(b: &crate::stream::Behavior) -> String {
    let mut line = format!("- {}", b.title);
    if !b.attributes.is_empty() {
        let attrs: Vec<String> = b
            .attributes
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect();
        line.push_str(&format!(" ({})", attrs.join(", ")));
    }
    if let Some(r) = b.rating {
        line.push_str(&format!(" [rating: {r}]"));
    }
    line
}

/// Renders the stage-one prompt: profile section, one line per behavior,
/// factor list. Pure and deterministic.
pub fn build_summary_prompt(
    profile: &UserProfile,
    partition: &Partition,
    factors: &DatasetFactors,
    templates: &PromptTemplates,
) -> PromptText {
    let profile_text = if profile.description.is_empty() {
        EMPTY_PROFILE_LINE.to_string()
    } else {
        profile.description.clone()
    };
    let behaviors: Vec<String> = partition.behaviors().iter().map(render_behavior_line).collect();
    let text = templates
        .summary
        .replace("{profile}", &profile_text)
        .replace("{behaviors}", &behaviors.join("\n"))
        .replace("{factors}", &factors.rendered());
    PromptText::new(PromptKind::Summary, text)
}

/// Renders the stage-two prompt comparing two summaries. Errors when either
/// summary is empty.
pub fn build_shift_prompt(
    prev_summary: &str,
    curr_summary: &str,
    factors: &DatasetFactors,
    templates: &PromptTemplates,
) -> Result<PromptText> {
    if prev_summary.is_empty() || curr_summary.is_empty() {
        return Err(Error::Precondition(
            "shift prompt requires two non-empty summaries".into(),
        ));
    }
    let text = templates
        .shift
        .replace("{previous}", prev_summary)
        .replace("{current}", curr_summary)
        .replace("{factors}", &factors.rendered());
    Ok(PromptText::new(PromptKind::Shift, text))
}

fn run_chat_call(
    client: &dyn ChatClient,
    user_id: &str,
    prompt: &PromptText,
    ledger: &EfficiencyLedger,
) -> Result<String> {
    let started = Instant::now();
    let completion = client.complete(&prompt.text).map_err(|e| match e {
        Error::Transport {
            endpoint,
            attempts,
            message,
            ..
        } => Error::Transport {
            endpoint,
            attempts,
            message,
            prompt: Some(prompt.text.clone()),
        },
        other => other,
    })?;
    if completion.trim().is_empty() {
        return Err(Error::Protocol("chat client returned an empty completion".into()));
    }
    ledger.record_call(user_id, prompt.token_estimate as u64, started.elapsed());
    Ok(completion)
}

/// Stage one: summarize one partition. Exactly one ledger call is recorded
/// per successful completion.
pub fn summarize_partition(
    client: &dyn ChatClient,
    profile: &UserProfile,
    partition: &Partition,
    factors: &DatasetFactors,
    ledger: &EfficiencyLedger,
    templates: &PromptTemplates,
) -> Result<String> {
    let prompt = build_summary_prompt(profile, partition, factors, templates);
    run_chat_call(client, &profile.user_id, &prompt, ledger)
}

/// Stage two: describe the shift between consecutive summaries. Callers
/// skip this for the first partition.
pub fn infer_interest_shift(
    client: &dyn ChatClient,
    user_id: &str,
    curr_summary: &str,
    prev_summary: &str,
    factors: &DatasetFactors,
    ledger: &EfficiencyLedger,
    templates: &PromptTemplates,
) -> Result<String> {
    let prompt = build_shift_prompt(prev_summary, curr_summary, factors, templates)?;
    run_chat_call(client, user_id, &prompt, ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::MockChatClient;
    use crate::stream::{Behavior, PartitionConfig, UserState};

    fn movie(user: &str, i: usize, title: &str, genre: &str, director: &str, year: u32) -> Behavior {
        Behavior {
            user_id: user.into(),
            item_id: format!("m{i}"),
            title: title.into(),
            attributes: vec![
                ("genre".into(), genre.into()),
                ("director".into(), director.into()),
                ("period".into(), year.to_string()),
            ],
            rating: Some(1 + (i % 5) as u8),
            timestamp: i as u64,
        }
    }

    fn movie_partition(n: usize) -> Partition {
        let titles = [
            "The Long Voyage Home Again",
            "Midnight over the Harbor District",
            "A Study In Emerald Shadows",
            "The Cartographer's Daughter Returns",
            "Autumn Light on Gray Mountains",
        ];
        let directors = ["Howard Greenfield", "Maria Castellanos", "Ingmar Svensson"];
        let genres = ["Drama", "Thriller", "Romance", "Adventure"];
        let mut state = UserState::new("u");
        let cfg = PartitionConfig::new(n as u32).unwrap();
        for i in 0..n {
            state
                .ingest(
                    movie(
                        "u",
                        i,
                        titles[i % titles.len()],
                        genres[i % genres.len()],
                        directors[i % directors.len()],
                        1960 + i as u32,
                    ),
                    &cfg,
                )
                .unwrap();
        }
        state.partitions()[0].clone()
    }

    fn factors() -> DatasetFactors {
        DatasetFactors::new(vec!["genre".into(), "director".into(), "period".into()]).unwrap()
    }

    #[test]
    fn summary_prompt_contains_titles_and_factors() {
        let templates = PromptTemplates::default();
        let profile = UserProfile::new("u", "male, 25");
        let mut state = UserState::new("u");
        let cfg = PartitionConfig::new(2).unwrap();
        state.ingest(movie("u", 0, "First Film", "Drama", "D One", 1990), &cfg).unwrap();
        let p = match state.ingest(movie("u", 1, "Second Film", "Comedy", "D Two", 1991), &cfg).unwrap() {
            crate::stream::IngestOutcome::PartitionSealed(p) => p,
            _ => panic!("expected seal"),
        };
        let prompt = build_summary_prompt(&profile, &p, &factors(), &templates);
        for needle in ["male, 25", "First Film", "Second Film", "genre", "director", "period"] {
            assert!(prompt.text.contains(needle), "missing {needle}");
        }
        // sections appear in order: profile, behaviors, factors
        let profile_at = prompt.text.find("male, 25").unwrap();
        let first_at = prompt.text.find("First Film").unwrap();
        let factors_at = prompt.text.rfind("genre, director, period").unwrap();
        assert!(profile_at < first_at && first_at < factors_at);
        assert_eq!(prompt.kind, PromptKind::Summary);
        assert_eq!(prompt.token_estimate, estimate_tokens(&prompt.text));
    }

    #[test]
    fn empty_profile_uses_placeholder_line() {
        let templates = PromptTemplates::default();
        let profile = UserProfile::new("u", "");
        let p = movie_partition(3);
        let prompt = build_summary_prompt(&profile, &p, &factors(), &templates);
        assert!(prompt.text.contains(EMPTY_PROFILE_LINE));
    }

    #[test]
    fn twenty_behavior_movie_prompt_lands_near_reported_token_budget() {
        // Reference point: 967.1 tokens per summary prompt at partition
        // size 20. The character heuristic only needs to land within a
        // factor of 2.5.
        let templates = PromptTemplates::default();
        let profile = UserProfile::new("u", "female, 34, engineer");
        let p = movie_partition(20);
        let prompt = build_summary_prompt(&profile, &p, &factors(), &templates);
        let est = prompt.token_estimate as f64;
        assert!(est >= 967.1 / 2.5, "estimate {est} too small");
        assert!(est <= 967.1 * 2.5, "estimate {est} too large");
    }

    #[test]
    fn rendering_is_pure_and_deterministic() {
        let templates = PromptTemplates::default();
        let profile = UserProfile::new("u", "desc");
        let p = movie_partition(5);
        let ledger = EfficiencyLedger::new("t");
        let a = build_summary_prompt(&profile, &p, &factors(), &templates);
        let b = build_summary_prompt(&profile, &p, &factors(), &templates);
        assert_eq!(a, b);
        assert_eq!(ledger.total_calls(), 0);
    }

    #[test]
    fn token_estimate_monotone_in_behavior_count() {
        let templates = PromptTemplates::default();
        let profile = UserProfile::new("u", "");
        let mut last = 0;
        for n in [1usize, 3, 8, 20] {
            let p = movie_partition(n);
            let prompt = build_summary_prompt(&profile, &p, &factors(), &templates);
            assert!(prompt.token_estimate > 0);
            assert!(prompt.token_estimate >= last);
            last = prompt.token_estimate;
        }
    }

    #[test]
    fn shift_prompt_contains_both_summaries_under_headers() {
        let templates = PromptTemplates::default();
        let prompt =
            build_shift_prompt("likes action", "likes comedy", &factors(), &templates).unwrap();
        let prev_at = prompt.text.find("Previous interest summary:").unwrap();
        let curr_at = prompt.text.find("Current interest summary:").unwrap();
        assert!(prev_at < curr_at);
        assert!(prompt.text.find("likes action").unwrap() > prev_at);
        assert!(prompt.text.find("likes comedy").unwrap() > curr_at);
        assert!(prompt.text.contains("new interests"));
        assert!(prompt.text.contains("obsolescent interests"));
        assert_eq!(prompt.kind, PromptKind::Shift);
    }

    #[test]
    fn identical_summaries_still_render() {
        let templates = PromptTemplates::default();
        let prompt = build_shift_prompt("same text", "same text", &factors(), &templates).unwrap();
        assert!(prompt.text.matches("same text").count() >= 2);
    }

    #[test]
    fn shift_prompt_rejects_empty_summaries() {
        let templates = PromptTemplates::default();
        assert!(build_shift_prompt("", "curr", &factors(), &templates).is_err());
        assert!(build_shift_prompt("prev", "", &factors(), &templates).is_err());
    }

    #[test]
    fn custom_factor_words_are_rendered() {
        let templates = PromptTemplates::default();
        let f = DatasetFactors::new(vec!["category".into(), "author".into()]).unwrap();
        let prompt = build_shift_prompt("a", "b", &f, &templates).unwrap();
        assert!(prompt.text.contains("category"));
        assert!(prompt.text.contains("author"));
    }

    #[test]
    fn summarize_records_exactly_one_call() {
        let client = MockChatClient::new();
        let ledger = EfficiencyLedger::new("t");
        let templates = PromptTemplates::default();
        let profile = UserProfile::new("u", "");
        let p = movie_partition(4);
        let s1 = summarize_partition(&client, &profile, &p, &factors(), &ledger, &templates).unwrap();
        assert_eq!(ledger.user("u").llm_calls, 1);
        let s2 = summarize_partition(&client, &profile, &p, &factors(), &ledger, &templates).unwrap();
        assert_eq!(s1, s2, "deterministic mock, deterministic summary");
        assert_eq!(ledger.user("u").llm_calls, 2);
        let prompt = build_summary_prompt(&profile, &p, &factors(), &templates);
        assert_eq!(
            ledger.user("u").prompt_tokens,
            2 * prompt.token_estimate as u64
        );
    }

    #[test]
    fn shift_records_calls_and_is_deterministic() {
        let client = MockChatClient::new();
        let ledger = EfficiencyLedger::new("t");
        let templates = PromptTemplates::default();
        let a = infer_interest_shift(
            &client,
            "u",
            "Main interest: topic:b.",
            "Main interest: topic:a.",
            &factors(),
            &ledger,
            &templates,
        )
        .unwrap();
        let b = infer_interest_shift(
            &client,
            "u",
            "Main interest: topic:b.",
            "Main interest: topic:a.",
            &factors(),
            &ledger,
            &templates,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(ledger.user("u").llm_calls, 2);
    }

    #[test]
    fn shift_with_empty_previous_summary_is_rejected() {
        let client = MockChatClient::new();
        let ledger = EfficiencyLedger::new("t");
        let templates = PromptTemplates::default();
        let err = infer_interest_shift(&client, "u", "curr", "", &factors(), &ledger, &templates)
            .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
        assert_eq!(ledger.total_calls(), 0);
    }

    #[test]
    fn empty_completion_is_protocol_error() {
        struct Silent;
        impl ChatClient for Silent {
            fn complete(&self, _prompt: &str) -> Result<String> {
                Ok("   ".into())
            }
            fn kind(&self) -> &'static str {
                "silent"
            }
        }
        let ledger = EfficiencyLedger::new("t");
        let templates = PromptTemplates::default();
        let profile = UserProfile::new("u", "");
        let p = movie_partition(2);
        let err =
            summarize_partition(&Silent, &profile, &p, &factors(), &ledger, &templates).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
        assert_eq!(ledger.total_calls(), 0, "failed calls are not billed");
    }

    #[test]
    fn transport_errors_carry_the_prompt() {
        struct Down;
        impl ChatClient for Down {
            fn complete(&self, _prompt: &str) -> Result<String> {
                Err(Error::Transport {
                    endpoint: "chat".into(),
                    attempts: 4,
                    message: "refused".into(),
                    prompt: None,
                })
            }
            fn kind(&self) -> &'static str {
                "down"
            }
        }
        let ledger = EfficiencyLedger::new("t");
        let templates = PromptTemplates::default();
        let profile = UserProfile::new("u", "");
        let p = movie_partition(2);
        let err =
            summarize_partition(&Down, &profile, &p, &factors(), &ledger, &templates).unwrap_err();
        match err {
            Error::Transport { prompt, .. } => {
                assert!(prompt.unwrap().contains("Behavior history"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn knowledge_invariants() {
        assert!(InterestKnowledge::new(1, "s".into(), None).is_ok());
        assert!(InterestKnowledge::new(1, "s".into(), Some("c".into())).is_err());
        assert!(InterestKnowledge::new(2, "s".into(), Some("c".into())).is_ok());
        assert!(InterestKnowledge::new(2, "".into(), None).is_err());
    }

    #[test]
    fn token_estimator_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }

    #[test]
    fn templates_load_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("summary.txt"), "{profile}{behaviors}{factors}").unwrap();
        std::fs::write(dir.path().join("shift.txt"), "{previous}{current}{factors}").unwrap();
        assert!(PromptTemplates::from_dir(dir.path()).is_ok());
        std::fs::write(dir.path().join("shift.txt"), "{previous} only").unwrap();
        assert!(PromptTemplates::from_dir(dir.path()).is_err());
    }
}
