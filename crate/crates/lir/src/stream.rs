//! Per-user streaming state machine.
//!
//! Incoming behaviors accumulate in a short-term cache; once the cache holds
//! at least `K` of them it is sealed into an immutable, 1-indexed partition
//! of the user's long-term memory. The leftover cache at end of stream is
//! deliberately left unsealed: those behaviors are consumed directly as the
//! CTR model's recent-history feature.

use serde::Serialize;

use crate::error::{Error, Result};

/// One timestamped user–item interaction with its textual attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Behavior {
    pub user_id: String,
    pub item_id: String,
    pub title: String,
    /// Ordered (name, value) pairs, e.g. ("genre", "Drama").
    pub attributes: Vec<(String, String)>,
    /// 1..=5 when present; only used for labeling in the data loader.
    pub rating: Option<u8>,
    /// Seconds since epoch.
    pub timestamp: u64,
}

impl Behavior {
    pub fn validate(&self) -> Result<()> {
        if self.title.is_empty() {
            return Err(Error::Precondition(format!(
                "behavior for user `{}` has an empty title",
                self.user_id
            )));
        }
        if let Some(r) = self.rating {
            if !(1..=5).contains(&r) {
                return Err(Error::Precondition(format!(
                    "rating {r} out of range 1..=5"
                )));
            }
        }
        Ok(())
    }
}

/// An immutable slice of a user's history. Fields are private: once sealed,
/// a partition cannot be mutated through the public API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    index: u32,
    behaviors: Vec<Behavior>,
    sealed_at: u64,
}

impl Partition {
    fn seal(index: u32, behaviors: Vec<Behavior>) -> Result<Self> {
        if behaviors.is_empty() {
            return Err(Error::DegenerateInput(
                "a partition must contain at least one behavior".into(),
            ));
        }
        let sealed_at = behaviors.last().map(|b| b.timestamp).unwrap_or(0);
        Ok(Partition {
            index,
            behaviors,
            sealed_at,
        })
    }

    /// 1-based position in the user's long-term memory.
    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn behaviors(&self) -> &[Behavior] {
        &self.behaviors
    }

    pub fn len(&self) -> usize {
        self.behaviors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.behaviors.is_empty()
    }

    /// Timestamp of the behavior whose arrival triggered the seal.
    pub fn sealed_at(&self) -> u64 {
        self.sealed_at
    }

    /// Pipeline-internal constructor for pseudo-partitions (the
    /// whole-history and trailing-window prompt variants).
    pub(crate) fn from_behaviors(index: u32, behaviors: Vec<Behavior>) -> Result<Self> {
        Partition::seal(index, behaviors)
    }
}

/// Balance coefficient for the partition condition (`Len(cache) ≥ K`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PartitionConfig {
    k: u32,
}

impl PartitionConfig {
    pub fn new(k: u32) -> Result<Self> {
        if k < 1 {
            return Err(Error::Config("partition coefficient K must be ≥ 1".into()));
        }
        Ok(PartitionConfig { k })
    }

    pub fn k(&self) -> u32 {
        self.k
    }
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig { k: 20 }
    }
}

/// Returns true when the cache is due to be sealed into a new partition.
pub fn check_partition_condition(cache: &[Behavior], config: &PartitionConfig) -> bool {
    cache.len() >= config.k() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestOutcome {
    CacheAppended,
    PartitionSealed(Partition),
}

/// Short-term cache plus ordered long-term partition memory for one user.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserState {
    user_id: String,
    short_term_cache: Vec<Behavior>,
    partitions: Vec<Partition>,
}

impl UserState {
    pub fn new(user_id: impl Into<String>) -> Self {
        UserState {
            user_id: user_id.into(),
            short_term_cache: Vec::new(),
            partitions: Vec::new(),
        }
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn cache(&self) -> &[Behavior] {
        &self.short_term_cache
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn partition(&self, index: u32) -> Option<&Partition> {
        // indices are 1..=len with no gaps
        self.partitions.get(index.checked_sub(1)? as usize)
    }

    pub fn partition_count(&self) -> u32 {
        self.partitions.len() as u32
    }

    /// Append a behavior to the cache; seal a new partition if the
    /// condition now holds. The sealed partition is also retained in this
    /// state's long-term memory.
    pub fn ingest(&mut self, behavior: Behavior, config: &PartitionConfig) -> Result<IngestOutcome> {
        if behavior.user_id != self.user_id {
            return Err(Error::IdentityMismatch {
                expected: self.user_id.clone(),
                got: behavior.user_id,
            });
        }
        self.short_term_cache.push(behavior);
        if check_partition_condition(&self.short_term_cache, config) {
            let sealed = self.seal_partition()?;
            return Ok(IngestOutcome::PartitionSealed(sealed));
        }
        Ok(IngestOutcome::CacheAppended)
    }

    /// Move the entire cache into a new partition with index
    /// `partition_count + 1`. Errors when the cache is empty.
    pub fn seal_partition(&mut self) -> Result<Partition> {
        if self.short_term_cache.is_empty() {
            return Err(Error::DegenerateInput(
                "cannot seal an empty short-term cache".into(),
            ));
        }
        let index = self.partition_count() + 1;
        let behaviors = std::mem::take(&mut self.short_term_cache);
        let partition = Partition::seal(index, behaviors)?;
        self.partitions.push(partition.clone());
        Ok(partition)
    }
}
