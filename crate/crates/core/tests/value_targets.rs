//! Value targets against independent n-step return oracles.

use grasp::model::{discounted_targets, EpisodeSegment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn segment(rng: &mut ChaCha8Rng, len: usize, options: bool, dyadic: bool) -> EpisodeSegment {
    let reward = |rng: &mut ChaCha8Rng| {
        if dyadic {
            // multiples of 1/8 keep every product and sum exact
            rng.gen_range(-16i32..=16) as f64 / 8.0
        } else {
            rng.gen_range(-1.0..1.0)
        }
    };
    let terminal_at = if rng.gen_bool(0.3) { Some(rng.gen_range(0..len)) } else { None };
    EpisodeSegment {
        observations: vec![vec![0.0]; len + 1],
        goal: vec![],
        actions: vec![vec![0.0]; len],
        rewards: (0..len).map(|_| reward(rng)).collect(),
        durations: (0..len).map(|_| if options { rng.gen_range(1..=12) } else { 1 }).collect(),
        terminal: (0..len).map(|i| Some(i) == terminal_at).collect(),
    }
}

/// Forward sum for position `j`: `sum_i gamma^(i-j) r_i + gamma^(L-j) boot`,
/// truncated at a terminal.
fn n_step_oracle(seg: &EpisodeSegment, j: usize, boot: f64, gamma: f64) -> f64 {
    if let Some(t) = seg.first_terminal() {
        if j > t {
            return 0.0;
        }
    }
    let mut g = 0.0;
    let mut disc = 1.0;
    for i in j..seg.len() {
        g += disc * seg.rewards[i];
        disc *= gamma;
        if seg.terminal[i] {
            return g;
        }
    }
    g + disc * boot
}

/// Same sum with the exponent accumulated from observed durations.
fn option_oracle(seg: &EpisodeSegment, j: usize, boot: f64, gamma: f64) -> f64 {
    if seg.first_terminal().is_some_and(|t| j > t) {
        return 0.0;
    }
    let mut g = 0.0;
    let mut elapsed = 0u32;
    for i in j..seg.len() {
        g += gamma.powi(elapsed as i32) * seg.rewards[i];
        elapsed += seg.durations[i] as u32;
        if seg.terminal[i] {
            return g;
        }
    }
    g + gamma.powi(elapsed as i32) * boot
}

#[test]
fn primitive_targets_equal_n_step_returns_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let len = rng.gen_range(1..=8);
        let seg = segment(&mut rng, len, false, true);
        let boot = rng.gen_range(-64i32..=64) as f64 / 16.0;
        let gamma = [0.5, 0.75, 0.25][rng.gen_range(0..3)];
        let got = discounted_targets(&seg, boot, gamma);
        for j in 0..len {
            assert_eq!(got[j], n_step_oracle(&seg, j, boot, gamma), "{seg:?} j={j}");
        }
    }
}

#[test]
fn primitive_targets_at_agent_discount() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let len = rng.gen_range(1..=8);
        let seg = segment(&mut rng, len, false, false);
        let boot = rng.gen_range(-5.0..5.0);
        let got = discounted_targets(&seg, boot, 0.99);
        for j in 0..len {
            assert!((got[j] - n_step_oracle(&seg, j, boot, 0.99)).abs() < 1e-12);
        }
    }
}

#[test]
fn option_targets_match_accumulated_discount() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..1000 {
        let len = rng.gen_range(1..=8);
        let seg = segment(&mut rng, len, true, false);
        let boot = rng.gen_range(-5.0..5.0);
        let got = discounted_targets(&seg, boot, 0.99);
        for j in 0..len {
            let want = option_oracle(&seg, j, boot, 0.99);
            assert!((got[j] - want).abs() < 1e-12, "{got:?} vs {want} at {j}");
        }
    }
}
