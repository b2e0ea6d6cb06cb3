//! Sliding-window query rate limiting and a day-scoped single-flight cache.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::dp::NoisyRelease;
use crate::error::{invalid, Result};

pub const DEFAULT_Q_MAX: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateDecision {
    Allow,
    Deny,
}

/// Per-user sliding-window counter: at most `q_max` admitted queries in any
/// half-open window `(t - window, t]`.
#[derive(Debug)]
pub struct RateLimiter {
    q_max: u32,
    window: u64,
    users: Mutex<HashMap<String, VecDeque<u64>>>,
}

impl RateLimiter {
    pub fn new(q_max: u32, window: u64) -> Result<Self> {
        if q_max == 0 {
            return Err(invalid("q_max", "must be positive"));
        }
        if window == 0 {
            return Err(invalid("window", "must be positive"));
        }
        Ok(Self {
            q_max,
            window,
            users: Mutex::new(HashMap::new()),
        })
    }

    pub fn q_max(&self) -> u32 {
        self.q_max
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    /// Admits and records the query iff fewer than `q_max` queries from
    /// `user` fall in the trailing window ending at `t`. Timestamps must not
    /// go backwards for a given user.
    pub fn check_rate(&self, user: &str, t: u64) -> RateDecision {
        let mut users = self.users.lock().expect("rate limiter poisoned");
        let stamps = users.entry(user.to_string()).or_default();
        while stamps.front().is_some_and(|&s| s + self.window <= t) {
            stamps.pop_front();
        }
        if stamps.len() < self.q_max as usize {
            stamps.push_back(t);
            RateDecision::Allow
        } else {
            RateDecision::Deny
        }
    }
}

/// Canonical query descriptor: fields are normalized and sorted so logically
/// identical queries share one cache key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QueryDescriptor {
    pub cohort: String,
    pub metric: String,
    pub statistic: String,
    pub parameters: BTreeMap<String, String>,
}

impl QueryDescriptor {
    pub fn new(
        cohort: impl Into<String>,
        metric: impl Into<String>,
        statistic: impl Into<String>,
        parameters: impl IntoIterator<Item = (String, String)>,
    ) -> Self {
        let norm = |s: String| s.trim().to_lowercase();
        Self {
            cohort: cohort.into().trim().to_string(),
            metric: norm(metric.into()),
            statistic: norm(statistic.into()),
            parameters: parameters
                .into_iter()
                .map(|(k, v)| (norm(k), v.trim().to_string()))
                .collect(),
        }
    }

    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for QueryDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}", self.cohort, self.metric, self.statistic)?;
        for (k, v) in &self.parameters {
            write!(f, "|{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheOutcome {
    Hit,
    Miss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

type Slot = Arc<Mutex<Option<NoisyRelease>>>;

/// Day-scoped release cache. For each `(descriptor, day)` the compute closure
/// runs at most once even under concurrent callers; everyone else receives
/// the stored release.
#[derive(Debug, Default)]
pub struct ResultCache {
    slots: Mutex<HashMap<(String, u64), Slot>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ResultCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the cached release for the key or computes, stores and
    /// returns a new one. A failed computation stores nothing.
    pub fn cached_release<F>(
        &self,
        descriptor: &QueryDescriptor,
        day: u64,
        compute: F,
    ) -> Result<(NoisyRelease, CacheOutcome)>
    where
        F: FnOnce() -> Result<NoisyRelease>,
    {
        let slot = {
            let mut slots = self.slots.lock().expect("cache poisoned");
            slots.entry((descriptor.canonical(), day)).or_default().clone()
        };
        let mut guard = slot.lock().expect("cache slot poisoned");
        if let Some(release) = *guard {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok((release, CacheOutcome::Hit));
        }
        let release = compute()?;
        *guard = Some(release);
        self.misses.fetch_add(1, Ordering::Relaxed);
        Ok((release, CacheOutcome::Miss))
    }

    /// Drops entries stamped before `day`.
    pub fn evict_before(&self, day: u64) {
        self.slots
            .lock()
            .expect("cache poisoned")
            .retain(|(_, d), _| *d >= day);
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }
}
