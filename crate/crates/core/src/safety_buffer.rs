//! Persistent store of recovery actions, clustered in feature space.
//!
//! A record `(feature, action, reward)` is added whenever an action takes the
//! agent from a danger state back to safety. Records survive policy updates.
//! At every episode end the buffer is re-clustered; in a danger state the
//! agent's proposed action is kept if it already appears among the recovery
//! actions of the state's cluster, and otherwise replaced by the
//! highest-reward recovery action of that cluster.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::clustering::{self, ClusterModel, KMeansParams};
use crate::cmdp::{ActionValue, FeatureVec};
use crate::error::{Error, Result};

/// Per-component tolerance for exact-match retrieval.
pub const BRUTE_FORCE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryRecord {
    pub feature: FeatureVec,
    pub action: ActionValue,
    pub reward: f64,
    /// 1-based, strictly increasing.
    pub insert_order: u64,
}

/// How many clusters to fit for `N` stored records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KPolicy {
    /// `k = max(1, round(N^p))`.
    Exponent(f64),
    /// No clustering: exact feature matches only.
    BruteForce,
}

impl KPolicy {
    pub fn exponent(p: f64) -> Result<Self> {
        if p > 0.0 && p <= 1.0 {
            Ok(KPolicy::Exponent(p))
        } else {
            Err(Error::InvalidArgument(format!("k exponent must lie in (0, 1], got {p}")))
        }
    }

    pub fn cluster_count(&self, n: usize) -> Option<usize> {
        match self {
            KPolicy::Exponent(p) if n > 0 => Some(((n as f64).powf(*p).round() as usize).max(1)),
            _ => None,
        }
    }
}

impl Default for KPolicy {
    fn default() -> Self {
        KPolicy::Exponent(0.5)
    }
}

impl FromStr for KPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("brute") || s.eq_ignore_ascii_case("bruteforce") {
            return Ok(KPolicy::BruteForce);
        }
        let p = match s.split_once('/') {
            Some((a, b)) => {
                let num: f64 = a.trim().parse().map_err(|_| bad_k(s))?;
                let den: f64 = b.trim().parse().map_err(|_| bad_k(s))?;
                num / den
            }
            None => s.parse().map_err(|_| bad_k(s))?,
        };
        // 0.333 on the command line means one third
        let p = if (p - 1.0 / 3.0).abs() < 1e-3 { 1.0 / 3.0 } else { p };
        KPolicy::exponent(p)
    }
}

fn bad_k(s: &str) -> Error {
    Error::InvalidArgument(format!("cannot parse k policy '{s}'"))
}

impl fmt::Display for KPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KPolicy::BruteForce => f.write_str("brute"),
            KPolicy::Exponent(p) if (p - 1.0 / 3.0).abs() < 1e-12 => f.write_str("0.333"),
            KPolicy::Exponent(p) => write!(f, "{p}"),
        }
    }
}

/// Decides whether two actions count as "the same" recovery action.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionMatcher {
    DiscreteExact,
    /// Continuous actions fall into per-dimension buckets
    /// `floor((a_i - low_i) / width_i)`.
    GridBucket { widths: Vec<f64>, lows: Vec<f64> },
}

impl ActionMatcher {
    pub fn grid_bucket(widths: Vec<f64>, lows: Vec<f64>) -> Result<Self> {
        if widths.len() != lows.len() || widths.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidArgument(
                "bucket widths must be positive, one per dimension".into(),
            ));
        }
        Ok(ActionMatcher::GridBucket { widths, lows })
    }

    pub fn bucket(&self, action: &[f64]) -> Vec<i64> {
        match self {
            ActionMatcher::DiscreteExact => action.iter().map(|x| *x as i64).collect(),
            ActionMatcher::GridBucket { widths, lows } => action
                .iter()
                .zip(widths.iter().zip(lows))
                .map(|(a, (w, lo))| ((a - lo) / w).floor() as i64)
                .collect(),
        }
    }

    pub fn matches(&self, a: &ActionValue, b: &ActionValue) -> Result<bool> {
        match (self, a, b) {
            (ActionMatcher::DiscreteExact, ActionValue::Discrete(x), ActionValue::Discrete(y)) => {
                Ok(x == y)
            }
            (ActionMatcher::GridBucket { widths, .. }, ActionValue::Continuous(x), ActionValue::Continuous(y)) => {
                if x.len() != widths.len() || y.len() != widths.len() {
                    return Err(Error::Usage("action dimension does not match the bucket grid".into()));
                }
                Ok(self.bucket(x) == self.bucket(y))
            }
            _ => Err(Error::Usage(
                "actions and matcher must agree on discrete vs continuous".into(),
            )),
        }
    }
}

pub fn actions_match(matcher: &ActionMatcher, a: &ActionValue, b: &ActionValue) -> Result<bool> {
    matcher.matches(a, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub action: ActionValue,
    /// True when the proposed action was replaced.
    pub substituted: bool,
    pub candidates: usize,
    /// Insert order of the record whose action was returned.
    pub source: Option<u64>,
}

/// Distinct feature vectors of the stored records, in order of first
/// occurrence, with multiplicities.
#[derive(Debug, Clone, Default)]
struct DistinctFeatures {
    lookup: HashMap<Vec<u64>, usize>,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// Distinct-point index of every record, in record order.
    of_record: Vec<usize>,
}

impl DistinctFeatures {
    fn add(&mut self, feature: &FeatureVec) {
        let key: Vec<u64> = feature.iter().map(|x| x.to_bits()).collect();
        let next = self.points.len();
        let u = *self.lookup.entry(key).or_insert(next);
        if u == next {
            self.points.push(feature.0.clone());
            self.weights.push(0.0);
        }
        self.weights[u] += 1.0;
        self.of_record.push(u);
    }
}

#[derive(Debug, Clone)]
struct FittedIndex {
    model: ClusterModel,
    /// Insert orders of the records in each cluster, ascending.
    members: Vec<Vec<u64>>,
    seed: u64,
    span: (u64, u64),
}

#[derive(Debug, Clone)]
pub struct SafetyBuffer {
    records: VecDeque<RecoveryRecord>,
    next_order: u64,
    index: Option<FittedIndex>,
    /// Records with an insert order up to this one are visible to
    /// brute-force queries; set at rebuild.
    visible_upto: u64,
    k_policy: KPolicy,
    matcher: ActionMatcher,
    capacity: Option<usize>,
    kmeans: KMeansParams,
    rebuilds: usize,
    fits: usize,
    /// Maintained across inserts; dropped on eviction and recomputed at the
    /// next rebuild.
    distinct: Option<DistinctFeatures>,
}

impl SafetyBuffer {
    pub fn new(k_policy: KPolicy, matcher: ActionMatcher) -> Self {
        SafetyBuffer {
            records: VecDeque::new(),
            next_order: 1,
            index: None,
            visible_upto: 0,
            k_policy,
            matcher,
            capacity: None,
            kmeans: KMeansParams::default(),
            rebuilds: 0,
            fits: 0,
            distinct: Some(DistinctFeatures::default()),
        }
    }

    pub fn with_capacity(mut self, capacity: Option<usize>) -> Result<Self> {
        if capacity == Some(0) {
            return Err(Error::InvalidArgument("buffer capacity must be positive".into()));
        }
        self.capacity = capacity;
        Ok(self)
    }

    pub fn with_kmeans(mut self, params: KMeansParams) -> Self {
        self.kmeans = params;
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &RecoveryRecord> {
        self.records.iter()
    }

    pub fn k_policy(&self) -> KPolicy {
        self.k_policy
    }

    pub fn matcher(&self) -> &ActionMatcher {
        &self.matcher
    }

    pub fn model(&self) -> Option<&ClusterModel> {
        self.index.as_ref().map(|ix| &ix.model)
    }

    /// Number of `rebuild` calls so far.
    pub fn rebuild_count(&self) -> usize {
        self.rebuilds
    }

    /// Number of rebuilds that actually refitted k-means.
    pub fn fit_count(&self) -> usize {
        self.fits
    }

    pub fn get(&self, insert_order: u64) -> Option<&RecoveryRecord> {
        let front = self.records.front()?.insert_order;
        let offset = insert_order.checked_sub(front)?;
        self.records.get(offset as usize)
    }

    /// Appends a record, evicting the oldest one when over capacity. The
    /// clustering is not updated until the next [`rebuild`](Self::rebuild).
    pub fn insert(&mut self, feature: FeatureVec, action: ActionValue, reward: f64) -> Result<u64> {
        if let Some(first) = self.records.front() {
            if first.feature.len() != feature.len() {
                return Err(Error::InvalidArgument(format!(
                    "feature dimension {} differs from stored dimension {}",
                    feature.len(),
                    first.feature.len()
                )));
            }
            if first.action.is_discrete() != action.is_discrete() {
                return Err(Error::InvalidArgument("action kind differs from stored records".into()));
            }
        }
        let order = self.next_order;
        self.next_order += 1;
        if let Some(d) = &mut self.distinct {
            d.add(&feature);
        }
        self.records.push_back(RecoveryRecord {
            feature,
            action,
            reward,
            insert_order: order,
        });
        if let Some(cap) = self.capacity {
            while self.records.len() > cap {
                self.records.pop_front();
                self.distinct = None;
            }
        }
        Ok(order)
    }

    /// Re-clusters the current records. Rebuilding unchanged records with the
    /// same seed reuses the existing model, which is identical to a refit.
    pub fn rebuild(&mut self, seed: u64) -> Result<()> {
        self.rebuilds += 1;
        self.visible_upto = self.next_order - 1;
        let n = self.records.len();
        let Some(k_target) = self.k_policy.cluster_count(n) else {
            self.index = None;
            return Ok(());
        };
        let span = (
            self.records.front().expect("n > 0").insert_order,
            self.records.back().expect("n > 0").insert_order,
        );
        if let Some(ix) = &self.index {
            if ix.seed == seed && ix.span == span {
                return Ok(());
            }
        }

        // Cluster distinct feature vectors once, weighted by multiplicity.
        let records = &self.records;
        let distinct = self.distinct.get_or_insert_with(|| {
            let mut d = DistinctFeatures::default();
            records.iter().for_each(|r| d.add(&r.feature));
            d
        });
        let (unique, weights, record_unique) = (&distinct.points, &distinct.weights, &distinct.of_record);
        // k cannot exceed the number of distinct points without leaving
        // clusters empty.
        let k = k_target.min(unique.len());
        let fitted = clustering::fit_weighted(unique, weights, k, self.kmeans, seed)?;
        let assignments: Vec<usize> = record_unique.iter().map(|u| fitted.assignments[*u]).collect();
        let mut members = vec![Vec::new(); k];
        for (r, a) in self.records.iter().zip(&assignments) {
            members[*a].push(r.insert_order);
        }
        self.fits += 1;
        self.index = Some(FittedIndex {
            model: ClusterModel {
                assignments,
                ..fitted
            },
            members,
            seed,
            span,
        });
        Ok(())
    }

    /// Records sharing the query's cluster (or, in brute-force mode, its
    /// exact feature vector), in insert order.
    pub fn candidate_set(&self, feature: &[f64]) -> Vec<&RecoveryRecord> {
        if self.records.is_empty() {
            return Vec::new();
        }
        match self.k_policy {
            KPolicy::Exponent(_) => {
                let Some(ix) = &self.index else {
                    return Vec::new();
                };
                let Ok(c) = ix.model.assign(feature) else {
                    return Vec::new();
                };
                ix.members[c].iter().filter_map(|o| self.get(*o)).collect()
            }
            KPolicy::BruteForce => self
                .records
                .iter()
                .take_while(|r| r.insert_order <= self.visible_upto)
                .filter(|r| {
                    r.feature.len() == feature.len()
                        && r.feature
                            .iter()
                            .zip(feature)
                            .all(|(a, b)| (a - b).abs() <= BRUTE_FORCE_EPS)
                })
                .collect(),
        }
    }

    pub fn query(&self, proposed: &ActionValue, feature: &[f64]) -> Result<QueryOutcome> {
        let candidates = self.candidate_set(feature);
        let pass = |n| QueryOutcome {
            action: proposed.clone(),
            substituted: false,
            candidates: n,
            source: None,
        };
        if candidates.is_empty() {
            return Ok(pass(0));
        }
        for r in &candidates {
            if self.matcher.matches(proposed, &r.action)? {
                return Ok(QueryOutcome {
                    source: Some(r.insert_order),
                    ..pass(candidates.len())
                });
            }
        }
        let best = candidates
            .iter()
            .copied()
            .reduce(|best, r| {
                if r.reward > best.reward || (r.reward == best.reward && r.insert_order < best.insert_order) {
                    r
                } else {
                    best
                }
            })
            .expect("non-empty");
        Ok(QueryOutcome {
            action: best.action.clone(),
            substituted: true,
            candidates: candidates.len(),
            source: Some(best.insert_order),
        })
    }

    pub fn query_recovery_action(&self, proposed: &ActionValue, feature: &[f64]) -> Result<ActionValue> {
        self.query(proposed, feature).map(|o| o.action)
    }

    /// Writes a header line followed by one
    /// `insert_order,reward,action...,feature...` line per record.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        let (kind, action_dim, feature_dim) = match self.records.front() {
            None => ("none", 0, 0),
            Some(r) => (
                if r.action.is_discrete() { "discrete" } else { "continuous" },
                r.action.components().len(),
                r.feature.len(),
            ),
        };
        writeln!(
            out,
            "# safety-buffer v1 kind={kind} action_dim={action_dim} feature_dim={feature_dim} records={}",
            self.records.len()
        )?;
        for r in &self.records {
            let mut fields = vec![r.insert_order.to_string(), r.reward.to_string()];
            fields.extend(r.action.components().iter().map(|x| x.to_string()));
            fields.extend(r.feature.iter().map(|x| x.to_string()));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    /// Loads a snapshot. The result is stale until rebuilt.
    pub fn read_snapshot<R: BufRead>(input: R, k_policy: KPolicy, matcher: ActionMatcher) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::parse(1, "missing header"))??;
        let mut fields = HashMap::new();
        let mut words = header.split_whitespace();
        if words.next() != Some("#") || words.next() != Some("safety-buffer") || words.next() != Some("v1") {
            return Err(Error::parse(1, "not a v1 safety-buffer snapshot"));
        }
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| Error::parse(1, format!("bad header field '{w}'")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let field = |k: &str| -> Result<&String> {
            fields.get(k).ok_or_else(|| Error::parse(1, format!("header lacks '{k}'")))
        };
        let kind = field("kind")?.clone();
        let dim = |k: &str| -> Result<usize> {
            field(k)?.parse().map_err(|_| Error::parse(1, format!("bad '{k}'")))
        };
        let (action_dim, feature_dim, count) = (dim("action_dim")?, dim("feature_dim")?, dim("records")?);

        let mut buffer = SafetyBuffer::new(k_policy, matcher);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let values: Vec<&str> = line.split(',').map(str::trim).collect();
            if values.len() != 2 + action_dim + feature_dim {
                return Err(Error::parse(line_no, "wrong number of fields"));
            }
            let order: u64 = values[0].parse().map_err(|_| Error::parse(line_no, "bad insert order"))?;
            let nums: Vec<f64> = values[1..]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(line_no, "bad number"))?;
            let action = match kind.as_str() {
                "discrete" => ActionValue::Discrete(nums[1] as usize),
                "continuous" => ActionValue::Continuous(nums[1..1 + action_dim].to_vec()),
                _ => return Err(Error::parse(line_no, "records in an empty snapshot")),
            };
            if order < buffer.next_order {
                return Err(Error::parse(line_no, "insert orders must increase"));
            }
            buffer.records.push_back(RecoveryRecord {
                feature: FeatureVec(nums[1 + action_dim..].to_vec()),
                action,
                reward: nums[0],
                insert_order: order,
            });
            buffer.next_order = order + 1;
        }
        if buffer.records.len() != count {
            return Err(Error::parse(1, "record count does not match the header"));
        }
        buffer.distinct = None;
        Ok(buffer)
    }
}
