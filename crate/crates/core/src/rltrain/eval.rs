use serde::{Deserialize, Serialize};

use crate::distributions::sample_from_probs;
use crate::gridworld::{encode_obs_into, generate_level, Action, GridState, LevelSpec, OBS_LEN};
use crate::netblocks::MultiroomNet;
use crate::rng::{streams, SeedTree, Stream};

use super::rollout::suspended_heads;
use super::RlError;

/// How evaluation levels choose their room count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalRooms {
    /// Episode `i` uses `1 + i % 3` rooms.
    Cycle,
    /// The generator draws the room count.
    Random,
    Fixed(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomStats {
    pub n_rooms: u8,
    pub episodes: usize,
    pub successes: usize,
    /// NaN (serialized as null) when `episodes` is 0.
    pub success_rate: f64,
    pub success_se: f64,
    pub mean_return: f64,
    pub return_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_rate: f64,
    pub success_se: f64,
    pub mean_return: f64,
    pub return_se: f64,
    /// One entry per room count 1, 2, 3.
    pub by_rooms: Vec<RoomStats>,
}

fn summarize(n_rooms: u8, outcomes: &[(bool, f64)]) -> RoomStats {
    let n = outcomes.len();
    let successes = outcomes.iter().filter(|o| o.0).count();
    if n == 0 {
        return RoomStats { n_rooms, episodes: 0, successes: 0, success_rate: f64::NAN, success_se: f64::NAN, mean_return: f64::NAN, return_se: f64::NAN };
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let mean = outcomes.iter().map(|o| o.1).sum::<f64>() / nf;
    let return_se = if n > 1 { (outcomes.iter().map(|o| (o.1 - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt() / nf.sqrt() } else { 0.0 };
    RoomStats { n_rooms, episodes: n, successes, success_rate: p, success_se: (p * (1.0 - p) / nf).sqrt(), mean_return: mean, return_se }
}

/// Success probability and return of the bar-policy on fresh levels.
///
/// `seed` roots a tree used only for evaluation, so its levels never coincide
/// with training streams.
pub fn evaluate_policy(net: &MultiroomNet, n_episodes: usize, per_room: bool, seed: u64) -> Result<EvalReport, RlError> {
    let rooms = if per_room { EvalRooms::Cycle } else { EvalRooms::Random };
    evaluate_policy_with(net, n_episodes, rooms, &SeedTree::new(seed))
}

/// Concurrent evaluation slots.
const SLOTS: usize = 16;

pub fn evaluate_policy_with(net: &MultiroomNet, n_episodes: usize, rooms: EvalRooms, seeds: &SeedTree) -> Result<EvalReport, RlError> {
    let levels = (0..n_episodes)
        .map(|i| {
            let n = match rooms {
                EvalRooms::Cycle => Some(1 + (i % 3) as u8),
                EvalRooms::Random => None,
                EvalRooms::Fixed(n) => Some(n),
            };
            generate_level(seeds.seed(streams::EVAL_GEN, i as u64), n)
        })
        .collect::<Result<Vec<_>, _>>()?;
    evaluate_levels(net, &levels, &mut seeds.stream(streams::EVAL_ACTIONS, 0))
}

/// One episode per level, actions sampled from the bar-policy.
pub fn evaluate_levels(net: &MultiroomNet, levels: &[LevelSpec], action_rng: &mut Stream) -> Result<EvalReport, RlError> {
    let n_episodes = levels.len();
    let na = net.n_actions();
    let mut outcomes: Vec<Option<(u8, bool, f64)>> = vec![None; n_episodes];
    let mut active: Vec<(usize, GridState)> = Vec::new();
    let mut next = 0;
    while next < n_episodes && active.len() < SLOTS {
        active.push((next, GridState::new(levels[next].clone())));
        next += 1;
    }
    let mut obs = Vec::new();
    while !active.is_empty() {
        obs.resize(active.len() * OBS_LEN, 0.0);
        for ((_, s), o) in active.iter().zip(obs.chunks_exact_mut(OBS_LEN)) {
            encode_obs_into(s, o);
        }
        let (log_probs, _) = suspended_heads(net, &obs, action_rng)?;
        let mut k = 0;
        let mut row = 0;
        while k < active.len() {
            let probs: Vec<f64> = log_probs[row * na..(row + 1) * na].iter().map(|l| l.exp()).collect();
            row += 1;
            let a = Action::from_index(sample_from_probs(&probs, action_rng))?;
            let (ep, state) = &mut active[k];
            let t = state.step(a)?;
            if t.done {
                outcomes[*ep] = Some((state.level.n_rooms, t.success, t.reward));
                if next < n_episodes {
                    active[k] = (next, GridState::new(levels[next].clone()));
                    next += 1;
                    k += 1;
                } else {
                    active.remove(k);
                }
            } else {
                k += 1;
            }
        }
    }
    let all: Vec<(u8, bool, f64)> = outcomes.into_iter().map(|o| o.expect("every episode finishes")).collect();
    let overall = summarize(0, &all.iter().map(|o| (o.1, o.2)).collect::<Vec<_>>());
    let by_rooms = (1..=3u8).map(|r| summarize(r, &all.iter().filter(|o| o.0 == r).map(|o| (o.1, o.2)).collect::<Vec<_>>())).collect();
    Ok(EvalReport {
        episodes: n_episodes,
        success_rate: overall.success_rate,
        success_se: overall.success_se,
        mean_return: overall.mean_return,
        return_se: overall.return_se,
        by_rooms,
    })
}
