//! Solves a random assignment problem and checks it against brute force.
//!
//! cargo run --release --example lap_solve -- [n]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rebasin::lap::{solve_lap, Sense};

fn main() -> rebasin::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(6, |s| s.parse().expect("size"));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(0.0..10.0_f64).round()).collect()).collect();
    for row in &cost {
        println!("{row:?}");
    }
    for sense in [Sense::Minimize, Sense::Maximize] {
        let a = solve_lap(&cost, sense)?;
        println!("{sense:?}: {:?} objective {}", a.perm, a.objective);
    }
    if n <= 8 {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| best = best.min(p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()));
        println!("brute-force minimum: {best}");
    }
    Ok(())
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}
