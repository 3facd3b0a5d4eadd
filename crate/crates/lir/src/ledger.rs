//! Accounting for language-model usage: calls, prompt tokens, wall time.
//!
//! Counters only ever increase within a run. Increments are atomic so
//! independent user pipelines may share one ledger.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Serialize;

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UserCounters {
    pub llm_calls: u64,
    pub prompt_tokens: u64,
    pub llm_wall_nanos: u64,
}

#[derive(Debug, Default)]
pub struct EfficiencyLedger {
    label: String,
    per_user: Mutex<BTreeMap<String, UserCounters>>,
    total_calls: AtomicU64,
    total_prompt_tokens: AtomicU64,
    total_wall_nanos: AtomicU64,
}

impl EfficiencyLedger {
    pub fn new(label: impl Into<String>) -> Self {
        EfficiencyLedger {
            label: label.into(),
            ..Default::default()
        }
    }

    /// Variant label this ledger is accounting for.
    pub fn label(&self) -> &str {
        &self.label
    }

    /// Record one completed language-model call.
    pub fn record_call(&self, user_id: &str, prompt_tokens: u64, wall: Duration) {
        let nanos = wall.as_nanos() as u64;
        {
            let mut users = self.per_user.lock().unwrap();
            let c = users.entry(user_id.to_string()).or_default();
            c.llm_calls += 1;
            c.prompt_tokens += prompt_tokens;
            c.llm_wall_nanos += nanos;
        }
        self.total_calls.fetch_add(1, Ordering::Relaxed);
        self.total_prompt_tokens
            .fetch_add(prompt_tokens, Ordering::Relaxed);
        self.total_wall_nanos.fetch_add(nanos, Ordering::Relaxed);
    }

    pub fn user(&self, user_id: &str) -> UserCounters {
        self.per_user
            .lock()
            .unwrap()
            .get(user_id)
            .copied()
            .unwrap_or_default()
    }

    pub fn users_seen(&self) -> usize {
        self.per_user.lock().unwrap().len()
    }

    pub fn total_calls(&self) -> u64 {
        self.total_calls.load(Ordering::Relaxed)
    }

    pub fn total_prompt_tokens(&self) -> u64 {
        self.total_prompt_tokens.load(Ordering::Relaxed)
    }

    pub fn total_wall(&self) -> Duration {
        Duration::from_nanos(self.total_wall_nanos.load(Ordering::Relaxed))
    }
}

/// Averages reported per variant, mirroring the ledger's global counters.
#[derive(Debug, Clone, Serialize)]
pub struct EfficiencyReport {
    pub variant: String,
    pub calls_per_user: f64,
    pub tokens_per_prompt: f64,
    pub time_per_user_secs: f64,
}

/// Simple averages over users and over calls. `user_count` is the number of
/// users in the run (callers pass the dataset's user count, not just the
/// users that triggered calls).
pub fn ledger_report(ledger: &EfficiencyLedger, user_count: usize) -> EfficiencyReport {
    assert!(user_count >= 1, "ledger_report requires user_count >= 1");
    let calls = ledger.total_calls();
    let tokens_per_prompt = if calls == 0 {
        0.0
    } else {
        ledger.total_prompt_tokens() as f64 / calls as f64
    };
    EfficiencyReport {
        variant: ledger.label().to_string(),
        calls_per_user: calls as f64 / user_count as f64,
        tokens_per_prompt,
        time_per_user_secs: ledger.total_wall().as_secs_f64() / user_count as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averages_over_users_and_calls() {
        let ledger = EfficiencyLedger::new("full");
        for _ in 0..17 {
            ledger.record_call("a", 100, Duration::from_millis(2));
        }
        for _ in 0..9 {
            ledger.record_call("b", 50, Duration::from_millis(2));
        }
        let report = ledger_report(&ledger, 2);
        assert_eq!(report.calls_per_user, 13.0);
        let expected_tokens = (17.0 * 100.0 + 9.0 * 50.0) / 26.0;
        assert!((report.tokens_per_prompt - expected_tokens).abs() < 1e-9);
        assert_eq!(ledger.user("a").llm_calls, 17);
        assert_eq!(ledger.user("b").prompt_tokens, 450);
    }

    #[test]
    fn empty_ledger_reports_zero() {
        let ledger = EfficiencyLedger::new("idle");
        let report = ledger_report(&ledger, 3);
        assert_eq!(report.calls_per_user, 0.0);
        assert_eq!(report.tokens_per_prompt, 0.0);
    }
}
