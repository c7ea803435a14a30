//! Independent reference computations used by the test suites and `verify`.
//!
//! Nothing here calls into the differentiation core or the training code:
//! each oracle recomputes its quantity by a different route (finite
//! differences, enumeration, Monte Carlo, straight-line reference code).

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// Breadth-first distance on a `width × height` row-major grid of passable
/// flags, 4-connected. `None` if `goal` is unreachable.
pub fn bfs_distance(passable: &[bool], width: usize, height: usize, start: (usize, usize), goal: (usize, usize)) -> Option<usize> {
    assert_eq!(passable.len(), width * height);
    let mut dist = vec![usize::MAX; passable.len()];
    let mut queue = std::collections::VecDeque::new();
    dist[start.1 * width + start.0] = 0;
    queue.push_back(start);
    while let Some((x, y)) = queue.pop_front() {
        let d = dist[y * width + x];
        if (x, y) == goal {
            return Some(d);
        }
        let mut visit = |nx: usize, ny: usize| {
            let i = ny * width + nx;
            if passable[i] && dist[i] == usize::MAX {
                dist[i] = d + 1;
                queue.push_back((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if x + 1 < width {
            visit(x + 1, y);
        }
        if y + 1 < height {
            visit(x, y + 1);
        }
    }
    None
}

pub mod ppo;

/// Success rate of a uniformly random policy, one episode per level.
pub fn uniform_random_success(levels: &[crate::gridworld::LevelSpec], rng: &mut dyn rand::RngCore) -> f64 {
    use crate::gridworld::{Action, GridState};
    use rand::Rng;
    let mut wins = 0;
    for l in levels {
        let mut s = GridState::new(l.clone());
        loop {
            let t = s.step(Action::ALL[rng.gen_range(0..4)]).expect("episode still running");
            if t.done {
                wins += t.success as usize;
                break;
            }
        }
    }
    wins as f64 / levels.len() as f64
}
