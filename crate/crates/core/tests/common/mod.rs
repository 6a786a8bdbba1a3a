// Different test binaries use different subsets of these helpers.
#![allow(dead_code)]

//! Shared test oracles, independent of the implementation paths they check.

use std::collections::BTreeSet;

use safeval::envs::gridworld::GridworldConfig;
use safeval::nn::Mlp;
use safeval::sut::TabularPolicy;

/// Smallest |pre-activation| over all hidden relu units of a network at an
/// input, recomputed from raw layer parameters. Finite-difference gradient
/// probes are only trustworthy when this margin comfortably exceeds the
/// probe step.
pub fn min_hidden_preact_margin(net: &Mlp, input: &[f64]) -> f64 {
    let sizes = net.layer_sizes();
    let mut cur = input.to_vec();
    let mut margin = f64::INFINITY;
    for l in 0..net.num_layers() {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let w = net.layer_weights(l);
        let b = net.layer_biases(l);
        let mut next = vec![0.0; n_out];
        for o in 0..n_out {
            let mut acc = b[o];
            for j in 0..n_in {
                acc += w[o * n_in + j] * cur[j];
            }
            if l + 1 < net.num_layers() {
                margin = margin.min(acc.abs());
                next[o] = acc.max(0.0);
            } else {
                next[o] = acc;
            }
        }
        cur = next;
    }
    margin
}

/// Chi-square statistic for observed counts against expected probabilities.
pub fn chi_square_stat(counts: &[usize], probs: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let expected = n as f64 * p;
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum()
}

/// Critical value of the chi-square distribution at p = 0.01 via the
/// Wilson-Hilferty approximation (z_{0.99} = 2.3263).
pub fn chi_square_critical_p01(dof: usize) -> f64 {
    let k = dof as f64;
    let z = 2.326_347_874_040_841;
    let t = 1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt();
    k * t * t * t
}

/// Finite-horizon optimal failure probability for the adversary against a
/// fixed blue policy: backward induction over the joint state space with
/// the transition distribution re-derived from the documented dynamics
/// (0.7 intended, 0.3 spread over the other reachable cells; the adversary
/// moves deterministically; collision beats goal arrival).
///
/// Returns the mean over the uniform initial distribution (distinct
/// non-goal spawn cells) of the optimal probability of forcing a collision
/// within `horizon` steps.
pub fn adversary_optimal_failure_probability(
    cfg: &GridworldConfig,
    blue: &TabularPolicy,
    horizon: usize,
) -> f64 {
    const DELTAS: [(i32, i32); 9] = [
        (0, 1),
        (0, -1),
        (-1, 0),
        (1, 0),
        (1, 1),
        (-1, 1),
        (1, -1),
        (-1, -1),
        (0, 0),
    ];
    let w = cfg.width as i32;
    let h = cfg.height as i32;
    let free = |c: (i32, i32)| -> bool {
        c.0 >= 0 && c.1 >= 0 && c.0 < w && c.1 < h && !cfg.walls.contains(&c)
    };
    let resolve = |c: (i32, i32), mv: usize| -> (i32, i32) {
        let t = (c.0 + DELTAS[mv].0, c.1 + DELTAS[mv].1);
        if free(t) {
            t
        } else {
            c
        }
    };
    let idx = |c: (i32, i32)| (c.1 * w + c.0) as usize;
    let ncells = (w * h) as usize;

    let cells: Vec<(i32, i32)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&c| free(c))
        .collect();

    // Blue landing distribution per (cell, intended move).
    let mut blue_dist: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ncells * 9];
    for &b in &cells {
        for mv in 0..9 {
            let intended = resolve(b, mv);
            let mut reachable = BTreeSet::new();
            for a in 0..9 {
                reachable.insert(resolve(b, a));
            }
            reachable.remove(&intended);
            let mut dist = vec![(idx(intended), 1.0 - cfg.slip_prob)];
            if reachable.is_empty() {
                dist[0].1 += cfg.slip_prob;
            } else {
                let share = cfg.slip_prob / reachable.len() as f64;
                for c in reachable {
                    dist.push((idx(c), share));
                }
            }
            blue_dist[idx(b) * 9 + mv] = dist;
        }
    }

    let is_goal = |i: usize| {
        cfg.goal_rewards
            .contains_key(&((i as i32 % w), (i as i32 / w)))
    };
    let mut value = vec![0.0_f64; ncells * ncells];
    let mut next = value.clone();
    for _ in 0..horizon {
        for &b in &cells {
            for &o in &cells {
                let (bi, oi) = (idx(b), idx(o));
                if bi == oi || is_goal(bi) {
                    continue; // terminal states have no continuation
                }
                let intent = blue.action(b, o);
                let dist = &blue_dist[bi * 9 + intent];
                let mut best = 0.0_f64;
                for mv in 0..9 {
                    let op = idx(resolve(o, mv));
                    let mut v = 0.0;
                    for &(bp, p) in dist {
                        if bp == op {
                            v += p; // collision pays 1
                        } else if !is_goal(bp) {
                            v += p * value[bp * ncells + op];
                        }
                    }
                    if v > best {
                        best = v;
                    }
                }
                next[bi * ncells + oi] = best;
            }
        }
        std::mem::swap(&mut value, &mut next);
    }

    // Uniform over ordered distinct non-goal spawn pairs.
    let spawns: Vec<usize> = cells
        .iter()
        .map(|&c| idx(c))
        .filter(|&i| !is_goal(i))
        .collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for &b in &spawns {
        for &o in &spawns {
            if b != o {
                total += value[b * ncells + o];
                count += 1;
            }
        }
    }
    total / count as f64
}
