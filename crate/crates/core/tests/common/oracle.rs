//! Independent reference implementations used as test oracles.

use rand::Rng as _;
use saferl::clustering::{squared_distance, ClusterModel};
use saferl::cmdp::{ActionValue, FeatureVec};
use saferl::rng::{rng_from, Rng};
use saferl::safety_buffer::{ActionMatcher, KPolicy, RecoveryRecord, SafetyBuffer};

/// Linear scan; ties go to the lowest index.
pub fn nearest_centroid(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..centroids.len() {
        if squared_distance(&centroids[j], x) < squared_distance(&centroids[best], x) {
            best = j;
        }
    }
    best
}

fn same_action(matcher: &ActionMatcher, a: &ActionValue, b: &ActionValue) -> bool {
    match (matcher, a, b) {
        (ActionMatcher::DiscreteExact, ActionValue::Discrete(x), ActionValue::Discrete(y)) => x == y,
        (ActionMatcher::GridBucket { widths, lows }, ActionValue::Continuous(x), ActionValue::Continuous(y)) => {
            (0..x.len()).all(|i| ((x[i] - lows[i]) / widths[i]).floor() == ((y[i] - lows[i]) / widths[i]).floor())
        }
        _ => panic!("mixed action kinds"),
    }
}

/// Nearest centroid, gather that cluster, keep the proposal if some member
/// matches it, else the highest-reward member (earliest insert on ties).
pub fn oracle_query(buffer: &SafetyBuffer, proposed: &ActionValue, feature: &[f64]) -> ActionValue {
    let records: Vec<&RecoveryRecord> = buffer.records().collect();
    let candidates: Vec<&RecoveryRecord> = match buffer.k_policy() {
        KPolicy::BruteForce => records
            .into_iter()
            .filter(|r| r.feature.iter().zip(feature).all(|(a, b)| (a - b).abs() <= 1e-9))
            .collect(),
        KPolicy::Exponent(_) => match buffer.model() {
            None => Vec::new(),
            Some(m) => {
                let c = nearest_centroid(&m.centroids, feature);
                records
                    .into_iter()
                    .filter(|r| nearest_centroid(&m.centroids, &r.feature) == c)
                    .collect()
            }
        },
    };
    if candidates.is_empty() || candidates.iter().any(|r| same_action(buffer.matcher(), proposed, &r.action)) {
        return proposed.clone();
    }
    let mut best = candidates[0];
    for r in &candidates[1..] {
        if r.reward > best.reward {
            best = r;
        }
    }
    best.action.clone()
}

pub struct RandomBufferCase {
    pub buffer: SafetyBuffer,
    pub queries: Vec<(ActionValue, Vec<f64>)>,
}

/// A random buffer (N <= 200, feature dim <= 30) rebuilt once, plus queries
/// drawn both from stored features and from fresh points.
pub fn random_buffer_case(seed: u64) -> RandomBufferCase {
    let mut rng = rng_from(seed, &[0xb0f]);
    let n = rng.random_range(0..=200usize);
    let dim = rng.random_range(1..=30usize);
    let grid_features = rng.random_bool(0.5);
    let discrete = rng.random_bool(0.5);
    let n_actions = rng.random_range(1..=6usize);
    let k_policy = match rng.random_range(0..5) {
        0 => KPolicy::BruteForce,
        1 => KPolicy::Exponent(0.1),
        2 => KPolicy::Exponent(1.0 / 3.0),
        3 => KPolicy::Exponent(0.5),
        _ => KPolicy::Exponent(0.8),
    };
    let matcher = if discrete {
        ActionMatcher::DiscreteExact
    } else {
        ActionMatcher::grid_bucket(vec![0.25; 2], vec![-1.0; 2]).unwrap()
    };
    let feature = |rng: &mut Rng| -> Vec<f64> {
        (0..dim)
            .map(|_| if grid_features { rng.random_range(0..2) as f64 } else { rng.random_range(-1.0..1.0) })
            .collect()
    };
    let action = |rng: &mut Rng| {
        if discrete {
            ActionValue::Discrete(rng.random_range(0..n_actions))
        } else {
            ActionValue::Continuous((0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
        }
    };
    let mut buffer = SafetyBuffer::new(k_policy, matcher);
    let mut stored = Vec::new();
    for _ in 0..n {
        let f = feature(&mut rng);
        let reward = if rng.random_bool(0.5) { rng.random_range(0..4) as f64 * 0.5 } else { rng.random_range(-1.0..2.0) };
        buffer.insert(FeatureVec::new(f.clone()), action(&mut rng), reward).unwrap();
        stored.push(f);
    }
    buffer.rebuild(rng.random()).unwrap();
    let queries = (0..20)
        .map(|_| {
            let f = if !stored.is_empty() && rng.random_bool(0.5) {
                stored[rng.random_range(0..stored.len())].clone()
            } else {
                feature(&mut rng)
            };
            (action(&mut rng), f)
        })
        .collect();
    RandomBufferCase { buffer, queries }
}

/// Checks the buffer's answers against `oracle_query`; returns a description
/// of the first disagreement.
pub fn check_buffer_case(case: &RandomBufferCase) -> Result<(), String> {
    for (proposed, f) in &case.queries {
        let got = case.buffer.query_recovery_action(proposed, f).map_err(|e| e.to_string())?;
        let want = oracle_query(&case.buffer, proposed, f);
        if got != want {
            return Err(format!("query {proposed} at {f:?}: got {got}, oracle {want}"));
        }
        // output closure
        if &got != proposed && !case.buffer.records().any(|r| r.action == got) {
            return Err(format!("returned action {got} is neither proposed nor stored"));
        }
    }
    Ok(())
}

/// WCSS non-increasing per iteration, every point at its nearest centroid,
/// objective equal to the recomputed WCSS.
pub fn check_kmeans_model(points: &[Vec<f64>], model: &ClusterModel) -> Result<(), String> {
    for w in model.objective_trace.windows(2) {
        if w[1] > w[0] + 1e-9 * (1.0 + w[0]) {
            return Err(format!("objective rose from {} to {}", w[0], w[1]));
        }
    }
    let mut wcss = 0.0;
    for (p, &a) in points.iter().zip(&model.assignments) {
        let own = squared_distance(p, &model.centroids[a]);
        let best = model.centroids.iter().map(|c| squared_distance(p, c)).fold(f64::INFINITY, f64::min);
        if own > best + 1e-9 * (1.0 + best) {
            return Err(format!("point {p:?} assigned at distance {own}, nearest is {best}"));
        }
        wcss += own;
    }
    if (wcss - model.objective).abs() > 1e-9 * (1.0 + wcss) {
        return Err(format!("objective {} differs from recomputed {wcss}", model.objective));
    }
    Ok(())
}

pub fn random_points(seed: u64) -> (Vec<Vec<f64>>, usize) {
    let mut rng = rng_from(seed, &[0x9e7]);
    let n = rng.random_range(1..=60usize);
    let dim = rng.random_range(1..=8usize);
    let integer = rng.random_bool(0.3);
    let points = (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| if integer { rng.random_range(-3..=3) as f64 } else { rng.random_range(-10.0..10.0) })
                .collect()
        })
        .collect();
    let k = rng.random_range(1..=n);
    (points, k)
}
