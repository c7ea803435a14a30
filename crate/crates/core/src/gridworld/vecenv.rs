use rand::RngCore;

use super::{encode_obs_into, generate_level, Action, GridError, GridState, OBS_LEN};
use crate::rng::{SeedTree, Stream};

/// A finished episode reported by [`VecEnv::step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeEnd {
    pub env: usize,
    pub n_rooms: u8,
    pub level_seed: u64,
    pub episode_return: f64,
    pub length: usize,
    pub success: bool,
}

/// Batched transition. `obs` is `[B, 11, 11, 3]` flattened; for envs that
/// finished this step it already shows the next level, while `rewards` and
/// `dones` keep the terminal values.
#[derive(Clone, Debug, PartialEq)]
pub struct VecStep {
    pub obs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub finished: Vec<EpisodeEnd>,
}

/// Independent environments that auto-reset with fresh levels.
///
/// Env `i` draws its level seeds from its own substream, so its sequence of
/// levels does not depend on how the other envs behave.
#[derive(Clone, Debug)]
pub struct VecEnv {
    states: Vec<GridState>,
    rngs: Vec<Stream>,
    n_rooms: Option<u8>,
}

impl VecEnv {
    pub fn new(n_envs: usize, seeds: &SeedTree, stream: &str, n_rooms: Option<u8>) -> Result<Self, GridError> {
        let mut rngs: Vec<Stream> = (0..n_envs as u64).map(|i| seeds.stream(stream, i)).collect();
        let states = rngs.iter_mut().map(|r| generate_level(r.next_u64(), n_rooms).map(GridState::new)).collect::<Result<_, _>>()?;
        Ok(Self { states, rngs, n_rooms })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[GridState] {
        &self.states
    }

    pub fn observations(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len() * OBS_LEN];
        for (s, o) in self.states.iter().zip(out.chunks_exact_mut(OBS_LEN)) {
            encode_obs_into(s, o);
        }
        out
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<VecStep, GridError> {
        if actions.len() != self.len() {
            return Err(GridError::ActionCount { expected: self.len(), got: actions.len() });
        }
        let mut rewards = Vec::with_capacity(self.len());
        let mut dones = Vec::with_capacity(self.len());
        let mut finished = Vec::new();
        for (i, &a) in actions.iter().enumerate() {
            let t = self.states[i].step(Action::from_index(a)?)?;
            rewards.push(t.reward);
            dones.push(t.done);
            if t.done {
                let s = &self.states[i];
                finished.push(EpisodeEnd {
                    env: i,
                    n_rooms: s.level.n_rooms,
                    level_seed: s.level.seed,
                    episode_return: t.reward,
                    length: s.step_count,
                    success: t.success,
                });
                let seed = self.rngs[i].next_u64();
                self.states[i] = GridState::new(generate_level(seed, self.n_rooms)?);
            }
        }
        Ok(VecStep { obs: self.observations(), rewards, dones, finished })
    }
}
