//! End-to-end orchestration: ingest → seal → summarize → shift → encode →
//! project → store → fuse.
//!
//! Language-model work happens once per sealed partition and is cached in
//! the representation store, so replaying a stream against a warm store
//! performs zero calls and zero writes, and prediction never touches the
//! chat client at all. Users are independent work units; a user whose
//! calls fail after retries is excluded from sample building instead of
//! aborting the run.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::client::{ChatClient, EmbedClient};
use crate::ctr::CtrSample;
use crate::encoding::{encode_knowledge, fit_projection, KnowledgeVector, Projection, Stage};
use crate::error::{Error, Result};
use crate::fusion::{mean_pool_fuse, self_attention_fuse, AttentionWeights, FuseMode, FusedRepresentation};
use crate::ledger::EfficiencyLedger;
use crate::prompt::{
    infer_interest_shift, summarize_partition, DatasetFactors, InterestKnowledge, PromptTemplates,
    UserProfile,
};
use crate::store::{RepresentationStore, StoreRecord};
use crate::stream::{Behavior, IngestOutcome, Partition, PartitionConfig, UserState};
use crate::data::Dataset;

/// History window for the no-partition variant's single prompt.
pub const NO_PARTITION_MAX_LEN: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Variant {
    Full,
    NoPartition,
    NoInterestShift,
    NoAttentionFuse,
    PerStep { max_len: usize },
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Full => "full".into(),
            Variant::NoPartition => "no-partition".into(),
            Variant::NoInterestShift => "no-interest-shift".into(),
            Variant::NoAttentionFuse => "no-attention-fuse".into(),
            Variant::PerStep { max_len } => format!("per-step:{max_len}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no-partition" => Ok(Variant::NoPartition),
            "no-interest-shift" => Ok(Variant::NoInterestShift),
            "no-attention-fuse" => Ok(Variant::NoAttentionFuse),
            other => {
                if let Some(len) = other.strip_prefix("per-step:") {
                    let max_len: usize = len
                        .parse()
                        .map_err(|_| Error::Config(format!("bad per-step length `{len}`")))?;
                    if max_len == 0 {
                        return Err(Error::Config("per-step length must be >= 1".into()));
                    }
                    Ok(Variant::PerStep { max_len })
                } else {
                    Err(Error::Config(format!(
                        "unknown variant `{other}` (expected full, no-partition, \
                         no-interest-shift, no-attention-fuse, or per-step:<L>)"
                    )))
                }
            }
        }
    }

    pub fn fuse_mode(&self) -> FuseMode {
        match self {
            Variant::NoAttentionFuse => FuseMode::MeanPool,
            _ => FuseMode::SelfAttention,
        }
    }

    fn wants_shift(&self) -> bool {
        matches!(self, Variant::Full | Variant::NoAttentionFuse)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantConfig {
    pub variant: Variant,
    pub k: u32,
    pub d_red: usize,
    pub d_att: usize,
    pub seed: u64,
}

impl Default for VariantConfig {
    fn default() -> Self {
        VariantConfig {
            variant: Variant::Full,
            k: 20,
            d_red: 32,
            d_att: 32,
            seed: 0,
        }
    }
}

/// One representation becoming available: store key plus the timestamp from
/// which samples may use it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SealEvent {
    pub index: u32,
    pub sealed_at: u64,
}

#[derive(Debug)]
pub struct ProcessOutcome {
    pub states: BTreeMap<String, UserState>,
    /// Per user: every representation key this run produced or found
    /// cached, with its availability timestamp.
    pub timelines: BTreeMap<String, Vec<SealEvent>>,
    /// The projection used to reduce raw vectors; `None` when nothing new
    /// was encoded and none was supplied.
    pub projection: Option<Projection>,
    /// Users dropped after client failures, with the failure text.
    pub failed_users: BTreeMap<String, String>,
}

struct WorkItem {
    partition: Partition,
    needs_shift: bool,
}

struct NewEntry {
    index: u32,
    sealed_at: u64,
    knowledge: InterestKnowledge,
    raw: KnowledgeVector,
}

pub struct Pipeline<'a> {
    pub cfg: VariantConfig,
    pub chat: &'a dyn ChatClient,
    pub embed: &'a dyn EmbedClient,
    pub templates: &'a PromptTemplates,
}

impl Pipeline<'_> {
    /// Runs the incremental algorithm over a timestamp-sorted dataset.
    ///
    /// `pretrained` supplies an existing projection (for incremental runs
    /// against a warm store); otherwise one is fitted on the raw vectors
    /// whose partitions sealed before `pca_cutoff` (all of them when the
    /// cutoff is `None` or leaves fewer than `d_red` vectors).
    pub fn process_stream(
        &self,
        dataset: &Dataset,
        store: &mut RepresentationStore,
        ledger: &EfficiencyLedger,
        pretrained: Option<Projection>,
        pca_cutoff: Option<u64>,
    ) -> Result<ProcessOutcome> {
        let factors = DatasetFactors::new(dataset.factors.clone())?;
        let pcfg = PartitionConfig::new(self.cfg.k)?;

        // Phase 1: replay the stream through per-user state machines.
        let mut states: BTreeMap<String, UserState> = BTreeMap::new();
        let mut behaviors_by_user: BTreeMap<String, Vec<Behavior>> = BTreeMap::new();
        for labeled in &dataset.records {
            let behavior = labeled.to_behavior();
            behavior.validate()?;
            let user = behavior.user_id.clone();
            let state = states
                .entry(user.clone())
                .or_insert_with(|| UserState::new(user.clone()));
            match state.ingest(behavior.clone(), &pcfg)? {
                IngestOutcome::PartitionSealed(_) | IngestOutcome::CacheAppended => {}
            }
            behaviors_by_user.entry(user).or_default().push(behavior);
        }

        // Phase 2: decide what needs language-model work per variant.
        let mut work: BTreeMap<String, Vec<WorkItem>> = BTreeMap::new();
        for (user, state) in &states {
            let items = match &self.cfg.variant {
                Variant::Full | Variant::NoInterestShift | Variant::NoAttentionFuse => state
                    .partitions()
                    .iter()
                    .map(|p| WorkItem {
                        partition: p.clone(),
                        needs_shift: self.cfg.variant.wants_shift() && p.index() >= 2,
                    })
                    .collect(),
                Variant::NoPartition => {
                    let all = &behaviors_by_user[user];
                    let tail = all[all.len().saturating_sub(NO_PARTITION_MAX_LEN)..].to_vec();
                    vec![WorkItem {
                        partition: Partition::from_behaviors(1, tail)?,
                        needs_shift: false,
                    }]
                }
                Variant::PerStep { max_len } => {
                    let all = &behaviors_by_user[user];
                    (1..=all.len())
                        .map(|i| {
                            let tail = all[i.saturating_sub(*max_len)..i].to_vec();
                            Ok(WorkItem {
                                partition: Partition::from_behaviors(i as u32, tail)?,
                                needs_shift: false,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?
                }
            };
            work.insert(user.clone(), items);
        }

        // Phase 3: cascade the prompts, skipping keys already cached.
        let mut timelines: BTreeMap<String, Vec<SealEvent>> = BTreeMap::new();
        let mut failed_users: BTreeMap<String, String> = BTreeMap::new();
        let mut new_entries: Vec<(String, NewEntry)> = Vec::new();
        for (user, items) in &work {
            let profile = UserProfile::new(
                user.clone(),
                dataset.profiles.get(user).cloned().unwrap_or_default(),
            );
            match self.process_user(user, &profile, items, &factors, store, ledger) {
                Ok(entries) => {
                    timelines.insert(
                        user.clone(),
                        items
                            .iter()
                            .map(|item| SealEvent {
                                index: item.partition.index(),
                                sealed_at: item.partition.sealed_at(),
                            })
                            .collect(),
                    );
                    for entry in entries {
                        new_entries.push((user.clone(), entry));
                    }
                }
                Err(e) => {
                    failed_users.insert(user.clone(), e.to_string());
                }
            }
        }

        // Phase 4: obtain the projection and persist the reduced vectors.
        // The requested d_red is clamped to what the fit corpus supports on
        // very small runs; consumers read the effective dimension off the
        // projection (or the stored vectors).
        let projection = match pretrained {
            Some(p) => {
                if let Some((_, entry)) = new_entries.first() {
                    if entry.raw.dim() != p.d_enc() {
                        return Err(Error::Dimension {
                            what: "pretrained projection input",
                            expected: p.d_enc(),
                            got: entry.raw.dim(),
                        });
                    }
                }
                Some(p)
            }
            None if new_entries.is_empty() => None,
            None => {
                let in_window: Vec<KnowledgeVector> = new_entries
                    .iter()
                    .filter(|(_, e)| pca_cutoff.map_or(true, |cut| e.sealed_at < cut))
                    .map(|(_, e)| e.raw.clone())
                    .collect();
                let fit_set: Vec<KnowledgeVector> = if in_window.len() >= self.cfg.d_red {
                    in_window
                } else {
                    new_entries.iter().map(|(_, e)| e.raw.clone()).collect()
                };
                let d_red = self.cfg.d_red.min(fit_set.len()).min(fit_set[0].dim());
                Some(fit_projection(&fit_set, d_red)?)
            }
        };

        for (user, entry) in new_entries {
            let projection = projection
                .as_ref()
                .expect("projection exists whenever new entries exist");
            let reduced = projection.project(&entry.raw)?;
            store.put(StoreRecord {
                user_id: user,
                partition_index: entry.index,
                stage: Stage::Reduced,
                values: reduced.values,
                summary: entry.knowledge.summary,
                shift: entry.knowledge.shift,
            })?;
        }

        Ok(ProcessOutcome {
            states,
            timelines,
            projection,
            failed_users,
        })
    }

    fn process_user(
        &self,
        user: &str,
        profile: &UserProfile,
        items: &[WorkItem],
        factors: &DatasetFactors,
        store: &RepresentationStore,
        ledger: &EfficiencyLedger,
    ) -> Result<Vec<NewEntry>> {
        let mut entries = Vec::new();
        let mut prev_summary: Option<String> = None;
        for item in items {
            let index = item.partition.index();
            if let Some(cached) = store.get(user, index) {
                prev_summary = Some(cached.summary.clone());
                continue;
            }
            let summary =
                summarize_partition(self.chat, profile, &item.partition, factors, ledger, self.templates)?;
            let shift = match (&prev_summary, item.needs_shift) {
                (Some(prev), true) => Some(infer_interest_shift(
                    self.chat,
                    user,
                    &summary,
                    prev,
                    factors,
                    ledger,
                    self.templates,
                )?),
                _ => None,
            };
            let knowledge = InterestKnowledge::new(index, summary.clone(), shift)?;
            let raw = encode_knowledge(self.embed, user, &knowledge)?;
            entries.push(NewEntry {
                index,
                sealed_at: item.partition.sealed_at(),
                knowledge,
                raw,
            });
            prev_summary = Some(summary);
        }
        Ok(entries)
    }
}

/// Fuses everything stored for a user, in partition order. The per-step
/// variant uses only the freshest vector (its single summary replaces the
/// whole pipeline). Errors when nothing is stored; callers substitute the
/// zeros path.
pub fn fuse_user(
    store: &RepresentationStore,
    user_id: &str,
    weights: &AttentionWeights,
    variant: &Variant,
) -> Result<FusedRepresentation> {
    let records = store.user_records(user_id);
    if records.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "no stored representations for user `{user_id}`"
        )));
    }
    let vectors: Vec<KnowledgeVector> = match variant {
        Variant::PerStep { .. } => vec![records.last().unwrap().vector()],
        _ => records.iter().map(|r| r.vector()).collect(),
    };
    match variant.fuse_mode() {
        FuseMode::MeanPool => mean_pool_fuse(&vectors, weights),
        FuseMode::SelfAttention => self_attention_fuse(&vectors, weights),
    }
}

/// Timestamp separating the train and test windows: the timestamp of the
/// first test-side record under a `ratio` split.
pub fn split_cutoff(dataset: &Dataset, ratio: f64) -> Result<u64> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let n = dataset.records.len();
    let n_train = ((n as f64) * ratio).floor() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Config(format!(
            "split ratio {ratio} leaves an empty side for {n} records"
        )));
    }
    Ok(dataset.records[n_train].record.timestamp)
}

#[derive(Debug)]
pub struct SampleSplit {
    pub train: Vec<CtrSample>,
    pub test: Vec<CtrSample>,
    pub split_timestamp: u64,
}

/// Builds leakage-free samples: the global-timestamp split puts the first
/// `ratio` of records in the train side; each sample's history holds the
/// user's most recent `history_max` behaviors strictly before its
/// timestamp, and its long-term vectors come only from partitions sealed
/// strictly before it.
pub fn build_training_samples(
    dataset: &Dataset,
    outcome: &ProcessOutcome,
    store: &RepresentationStore,
    variant: &Variant,
    split_ratio: f64,
    history_max: usize,
) -> Result<SampleSplit> {
    let split_timestamp = split_cutoff(dataset, split_ratio)?;
    let n_train = ((dataset.records.len() as f64) * split_ratio).floor() as usize;

    let mut history: BTreeMap<&str, Vec<(u64, &str)>> = BTreeMap::new();
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(dataset.records.len() - n_train);

    for (pos, labeled) in dataset.records.iter().enumerate() {
        let rec = &labeled.record;
        let user = rec.user_id.as_str();
        let seen = history.entry(user).or_default();

        if !outcome.failed_users.contains_key(user) {
            let mut recent: Vec<String> = seen
                .iter()
                .rev()
                .filter(|(t, _)| *t < rec.timestamp)
                .take(history_max)
                .map(|(_, item)| item.to_string())
                .collect();
            recent.reverse();

            let mut long_term: Vec<Vec<f64>> = Vec::new();
            if let Some(timeline) = outcome.timelines.get(user) {
                let available = timeline.iter().filter(|e| e.sealed_at < rec.timestamp);
                let selected: Vec<&SealEvent> = match variant {
                    Variant::PerStep { .. } => available.last().into_iter().collect(),
                    _ => available.collect(),
                };
                for event in selected {
                    if let Some(stored) = store.get(user, event.index) {
                        long_term.push(stored.values.clone());
                    }
                }
            }

            // item-side features are the attributes; the raw item id still
            // reaches the model through the history table
            let fields: Vec<(String, String)> = rec
                .attributes
                .iter()
                .map(|(name, value)| (name.clone(), value.clone()))
                .collect();

            let sample = CtrSample {
                user_id: rec.user_id.clone(),
                target_item_id: rec.item_id.clone(),
                fields,
                history: recent,
                long_term,
                label: labeled.label,
                timestamp: rec.timestamp,
            };
            if pos < n_train {
                train.push(sample);
            } else {
                test.push(sample);
            }
        }

        seen.push((rec.timestamp, rec.item_id.as_str()));
    }

    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(
            "split produced an empty train or test side (all users failed?)".into(),
        ));
    }
    Ok(SampleSplit {
        train,
        test,
        split_timestamp,
    })
}
