//! Generalized advantage estimation.

use crate::policy::rollout::RolloutBatch;

/// Backward recursion over a batch of concatenated episodes:
/// `delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t)` and
/// `A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}`, where an
/// episode boundary (terminal, truncation or end of batch) stops the
/// recursion and truncated steps bootstrap from `bootstrap`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    truncated: &[bool],
    bootstrap: &[f64],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let boundary = dones[t] || truncated[t] || t + 1 == n;
        let next_value = if dones[t] {
            0.0
        } else if boundary {
            bootstrap[t]
        } else {
            values[t + 1]
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        let carry = if boundary { 0.0 } else { next_adv };
        adv[t] = delta + gamma * lambda * carry;
        next_adv = adv[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

pub fn compute_gae(batch: &RolloutBatch, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    gae(
        &batch.rewards,
        &batch.values,
        &batch.dones,
        &batch.truncated,
        &batch.bootstrap_values,
        gamma,
        lambda,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_zero_is_one_step_td() {
        let r = [1.0, 0.5, -0.2, 2.0];
        let v = [0.3, 0.1, 0.7, -0.4];
        let dones = [false, false, false, true];
        let (a, ret) = gae(&r, &v, &dones, &[false; 4], &[0.0; 4], 0.9, 0.0);
        for t in 0..4 {
            let next = if t == 3 { 0.0 } else { v[t + 1] };
            assert_eq!(a[t], r[t] + 0.9 * next - v[t]);
            assert_eq!(ret[t], a[t] + v[t]);
        }
    }

    #[test]
    fn monte_carlo_limit() {
        let r = [1.0, 2.0, 3.0, 4.0];
        let (a, _) = gae(&r, &[0.0; 4], &[false, false, false, true], &[false; 4], &[0.0; 4], 1.0, 1.0);
        assert_eq!(a, vec![10.0, 9.0, 7.0, 4.0]);
    }

    /// Direct evaluation of `A_t = sum_l (gamma*lambda)^l delta_{t+l}` within
    /// each episode.
    fn naive(r: &[f64], v: &[f64], done: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
        let n = r.len();
        let delta: Vec<f64> = (0..n)
            .map(|t| {
                let next = if done[t] || t + 1 == n { 0.0 } else { v[t + 1] };
                r[t] + gamma * next - v[t]
            })
            .collect();
        (0..n)
            .map(|t| {
                let mut total = 0.0;
                for u in t..n {
                    total += (gamma * lambda).powi((u - t) as i32) * delta[u];
                    if done[u] {
                        break;
                    }
                }
                total
            })
            .collect()
    }

    #[test]
    fn matches_naive_sum() {
        use rand::Rng as _;
        let mut rng = crate::rng::rng_from(9, &[]);
        for _ in 0..100 {
            let r: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut d: Vec<bool> = (0..10).map(|_| rng.random_bool(0.2)).collect();
            d[9] = true;
            let (a, _) = gae(&r, &v, &d, &[false; 10], &[0.0; 10], 0.97, 0.9);
            for (x, y) in a.iter().zip(naive(&r, &v, &d, 0.97, 0.9)) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn truncation_bootstraps_and_resets() {
        let r = [1.0, 1.0, 1.0];
        let v = [0.0, 0.0, 0.0];
        let (a, _) = gae(&r, &v, &[false; 3], &[true, false, false], &[5.0, 0.0, 2.0], 1.0, 1.0);
        assert_eq!(a, vec![6.0, 4.0, 3.0]);
    }
}
