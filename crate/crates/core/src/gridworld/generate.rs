use rand::Rng;

use super::{AgentPose, Cell, CellKind, Direction, GridError, LevelSpec, Room, GRID, N_COLORS};
use crate::rng::{stream_from_seed, Stream};

/// Layout attempts per seed before falling back to `seed + 1`.
pub const MAX_ATTEMPTS: usize = 1000;
/// Outer room side lengths (walls included), so interiors are 2 to 6 cells.
const MIN_SIDE: usize = 4;
const MAX_SIDE: usize = 8;

/// Generates the level for `seed`. With `n_rooms` unset the room count is
/// drawn uniformly from `{1, 2, 3}`.
pub fn generate_level(seed: u64, n_rooms: Option<u8>) -> Result<LevelSpec, GridError> {
    if let Some(n) = n_rooms {
        if !(1..=3).contains(&n) {
            return Err(GridError::InvalidRooms(n));
        }
    }
    let mut s = seed;
    loop {
        let mut rng = stream_from_seed(s);
        let n = n_rooms.unwrap_or_else(|| rng.gen_range(1..=3));
        for _ in 0..MAX_ATTEMPTS {
            if let Some(level) = try_layout(&mut rng, n, s) {
                return Ok(level);
            }
        }
        log::warn!("no valid {n}-room layout for seed {s} after {MAX_ATTEMPTS} attempts; trying seed {}", s.wrapping_add(1));
        s = s.wrapping_add(1);
    }
}

/// Whether the interior of `a` meets any cell of `b`.
fn overlaps(a: &Room, b: &Room) -> bool {
    (a.x0 + 1).max(b.x0) <= (a.x1 - 1).min(b.x1) && (a.y0 + 1).max(b.y0) <= (a.y1 - 1).min(b.y1)
}

fn try_layout(rng: &mut Stream, n_rooms: u8, seed: u64) -> Option<LevelSpec> {
    let side = |rng: &mut Stream| rng.gen_range(MIN_SIDE..=MAX_SIDE);
    let (w, h) = (side(rng), side(rng));
    let x0 = rng.gen_range(0..=GRID - w);
    let y0 = rng.gen_range(0..=GRID - h);
    let mut rooms = vec![Room { x0, y0, x1: x0 + w - 1, y1: y0 + h - 1 }];
    let mut doors = Vec::new();
    let mut colors = Vec::new();

    for _ in 1..n_rooms {
        let prev = *rooms.last().unwrap();
        let dir = Direction::ALL[rng.gen_range(0..4)];
        let (w, h) = (side(rng) as i64, side(rng) as i64);
        let (px0, py0, px1, py1) = (prev.x0 as i64, prev.y0 as i64, prev.x1 as i64, prev.y1 as i64);
        // Door on the shared wall, away from both rooms' corners.
        let (door, rect) = match dir {
            Direction::E | Direction::W => {
                let dy = rng.gen_range(py0 + 1..py1);
                let ny0 = rng.gen_range(dy - (h - 2)..dy);
                let (nx0, dx) = if dir == Direction::E { (px1, px1) } else { (px0 - (w - 1), px0) };
                ((dx, dy), (nx0, ny0, nx0 + w - 1, ny0 + h - 1))
            }
            Direction::N | Direction::S => {
                let dx = rng.gen_range(px0 + 1..px1);
                let nx0 = rng.gen_range(dx - (w - 2)..dx);
                let (ny0, dy) = if dir == Direction::S { (py1, py1) } else { (py0 - (h - 1), py0) };
                ((dx, dy), (nx0, ny0, nx0 + w - 1, ny0 + h - 1))
            }
        };
        let (rx0, ry0, rx1, ry1) = rect;
        if rx0 < 0 || ry0 < 0 || rx1 >= GRID as i64 || ry1 >= GRID as i64 {
            return None;
        }
        let room = Room { x0: rx0 as usize, y0: ry0 as usize, x1: rx1 as usize, y1: ry1 as usize };
        if rooms.iter().any(|r| overlaps(&room, r) || overlaps(r, &room)) {
            return None;
        }
        let door = (door.0 as usize, door.1 as usize);
        if rooms[..rooms.len() - 1].iter().any(|r| r.contains(door.0, door.1)) {
            return None;
        }
        rooms.push(room);
        doors.push(door);
        colors.push(rng.gen_range(1..=N_COLORS));
    }

    let mut grid = vec![Cell::WALL; GRID * GRID];
    for r in &rooms {
        for (x, y) in r.interior_cells() {
            grid[y * GRID + x] = Cell::EMPTY;
        }
    }
    for (&(x, y), &color) in doors.iter().zip(&colors) {
        grid[y * GRID + x] = Cell { kind: CellKind::Door, color, door_open: false };
    }
    let first = rooms[0].interior_cells();
    let (ax, ay) = first[rng.gen_range(0..first.len())];
    let dir = Direction::ALL[rng.gen_range(0..4)];
    let last: Vec<_> = rooms.last().unwrap().interior_cells().into_iter().filter(|&c| c != (ax, ay)).collect();
    let goal_pos = last[rng.gen_range(0..last.len())];
    grid[goal_pos.1 * GRID + goal_pos.0] = Cell { kind: CellKind::Goal, color: super::GOAL_COLOR, door_open: false };

    Some(LevelSpec { grid, n_rooms, rooms, doors, agent_start: AgentPose { x: ax, y: ay, dir }, goal_pos, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_room_count() {
        assert_eq!(generate_level(0, Some(0)), Err(GridError::InvalidRooms(0)));
        assert_eq!(generate_level(0, Some(4)), Err(GridError::InvalidRooms(4)));
    }

    #[test]
    fn same_seed_same_bytes() {
        for seed in 0..20 {
            let a = serde_json::to_vec(&generate_level(seed, None).unwrap()).unwrap();
            let b = serde_json::to_vec(&generate_level(seed, None).unwrap()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn one_room_has_no_doors() {
        for seed in 0..50 {
            let l = generate_level(seed, Some(1)).unwrap();
            assert!(l.doors.is_empty());
            let r = l.rooms[0];
            assert!(r.interior_contains(l.agent_start.x, l.agent_start.y));
            assert!(r.interior_contains(l.goal_pos.0, l.goal_pos.1));
            assert_ne!((l.agent_start.x, l.agent_start.y), l.goal_pos);
        }
    }
}
