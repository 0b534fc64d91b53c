//! Compares BFS leaf masking with uniform random masking on one cohort.

use fedni::datagen::{generate_population, CohortSpec};
use fedni::masking::{is_connected, mask_leaves, random_mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fedni::Result<()> {
    let g = generate_population(&CohortSpec {
        n: 80,
        d: 10,
        ..Default::default()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 100;
    let (mut bfs_ok, mut random_ok) = (0, 0);
    for _ in 0..trials {
        let root = rng.random_range(0..g.node_count());
        let a = mask_leaves(&g, root, 0.125, 5, &mut rng)?;
        let b = random_mask(&g, 0.125, 5, &mut rng)?;
        bfs_ok += usize::from(is_connected(&a.corrupted.adjacency));
        random_ok += usize::from(is_connected(&b.corrupted.adjacency));
    }
    println!("retained graph connected: bfs {bfs_ok}/{trials}, random {random_ok}/{trials}");

    let ep = mask_leaves(&g, 0, 0.125, 5, &mut rng)?;
    println!(
        "root 0: hid {} of {} nodes ({:.3}), {} hidden edges",
        ep.masked.len(),
        g.node_count(),
        ep.achieved_fraction,
        ep.hidden_total()
    );
    for (pos, hidden) in ep
        .hidden
        .iter()
        .enumerate()
        .filter(|(_, h)| !h.is_empty())
        .take(5)
    {
        println!(
            "  node {} lost {:?}",
            ep.retained[pos],
            hidden.iter().map(|&p| ep.masked[p]).collect::<Vec<_>>()
        );
    }
    Ok(())
}
