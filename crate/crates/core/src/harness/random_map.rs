//! Seeded random layouts. The generator is ours; maps it produces are not
//! the ones behind any published table.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::grid::{Cell, GridMap};

use super::HarnessError;

/// Tries up to this many layouts before giving up.
const ATTEMPTS: usize = 10_000;

/// A `rows x cols` map where each cell is blocked with probability
/// `density`, redrawn until the free cells form one connected region of at
/// least `min_free` cells.
pub fn random_map(
    rows: usize,
    cols: usize,
    density: f64,
    min_free: usize,
    seed: u64,
) -> Result<GridMap, HarnessError> {
    if !(0.0..1.0).contains(&density) {
        return Err(HarnessError::InvalidSpec(format!(
            "obstacle density {density} outside [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..ATTEMPTS {
        let blocked: Vec<Cell> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| Cell::new(r, c)))
            .filter(|_| rng.gen_bool(density))
            .collect();
        let Ok(map) = GridMap::new(rows, cols, blocked) else {
            continue;
        };
        if map.free_count() < min_free.max(1) {
            continue;
        }
        let reach = map.bfs_from(0, &vec![false; map.free_count()]);
        if reach.iter().all(Option::is_some) {
            return Ok(map);
        }
    }
    Err(HarnessError::InvalidSpec(format!(
        "no connected {rows}x{cols} layout with {min_free} free cells after {ATTEMPTS} draws"
    )))
}
