use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lap::{solve_lap_flat, Sense};
use crate::nn::{Boundary, ModelGraph};
use crate::tensor::dgemm;

use super::perm::{apply_perm, PermSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightMatchOptions {
    /// Seeds the boundary order of every sweep.
    pub seed: u64,
    pub max_sweeps: usize,
}

impl Default for WeightMatchOptions {
    fn default() -> Self {
        WeightMatchOptions { seed: 0, max_sweeps: 100 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub method: String,
    /// Distance ‖θ_a − π(θ_b)‖ over learnable parameters after each sweep.
    pub objective: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub distance_before: f64,
    pub distance_after: f64,
    /// Boundary order of each sweep.
    pub sweep_orders: Vec<Vec<usize>>,
    /// Mean matched correlation per boundary (activation matching).
    pub correlation: Vec<f64>,
    /// `(boundary, side, unit)` with zero variance; side 0 is model A.
    pub dead_units: Vec<(usize, usize, usize)>,
}

/// Euclidean distance over learnable parameters.
pub fn param_distance(a: &ModelGraph, b: &ModelGraph) -> Result<f64> {
    a.ensure_same_architecture(b)?;
    let sq: f64 = a
        .params()
        .iter()
        .zip(b.params())
        .filter(|((_, role, _), _)| role.is_learnable())
        .map(|((_, _, x), (_, _, y))| {
            x.data().iter().zip(y.data()).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum::<f64>()
        })
        .sum();
    Ok(sq.sqrt())
}

pub fn weight_match(a: &ModelGraph, b: &ModelGraph) -> Result<(PermSpec, MatchReport)> {
    weight_match_with(a, b, &WeightMatchOptions::default())
}

/// Coordinate descent over boundaries; each step solves one boundary's
/// assignment exactly with the others held fixed.
pub fn weight_match_with(a: &ModelGraph, b: &ModelGraph, opts: &WeightMatchOptions) -> Result<(PermSpec, MatchReport)> {
    a.ensure_same_architecture(b)?;
    if opts.max_sweeps == 0 {
        return Err(Error::InvalidArgument("max_sweeps must be positive".into()));
    }
    let mut perm = PermSpec::identity(a);
    let distance_before = param_distance(a, b)?;
    let mut report = MatchReport {
        method: "weight".into(),
        distance_before,
        ..Default::default()
    };
    if a.boundaries().is_empty() {
        report.converged = true;
        report.distance_after = distance_before;
        return Ok((perm, report));
    }
    let slices_a: Vec<UnitSlices> = a.boundaries().iter().map(|bd| UnitSlices::gather(a, bd)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..a.boundaries().len()).collect();
    for _ in 0..opts.max_sweeps {
        order.shuffle(&mut rng);
        let mut changed = false;
        for &k in &order {
            let bd = &a.boundaries()[k];
            let mut others = perm.clone();
            others.set(bd.id, (0..bd.units).collect())?;
            let moved = apply_perm(b, &others)?;
            let sb = UnitSlices::gather(&moved, bd);
            let c = slices_a[k].scores(&sb);
            let next = solve_lap_flat(bd.units, &c, Sense::Maximize)?.perm;
            if perm.get(bd.id) != Some(next.as_slice()) {
                changed = true;
                perm.set(bd.id, next)?;
            }
        }
        report.sweeps += 1;
        report.sweep_orders.push(order.clone());
        report.objective.push(param_distance(a, &apply_perm(b, &perm)?)?);
        if !changed {
            report.converged = true;
            break;
        }
    }
    report.distance_after = *report.objective.last().expect("at least one sweep");
    log::debug!(
        "weight matching: {} sweeps, distance {:.4} -> {:.4}",
        report.sweeps,
        report.distance_before,
        report.distance_after
    );
    Ok((perm, report))
}

/// Every learnable value tied to each unit of a boundary, one row per unit.
struct UnitSlices {
    units: usize,
    len: usize,
    data: Vec<f64>,
}

impl UnitSlices {
    fn gather(model: &ModelGraph, bd: &Boundary) -> UnitSlices {
        let n = bd.units;
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); n];
        let layers = model.layers();
        for (role, t) in layers[bd.producer].tensors() {
            if role.is_learnable() {
                let w = t.len() / n;
                for (i, row) in rows.iter_mut().enumerate() {
                    row.extend(t.data()[i * w..(i + 1) * w].iter().map(|&v| v as f64));
                }
            }
        }
        for &att in &bd.attached {
            for (role, t) in layers[att].tensors() {
                if role.is_learnable() {
                    for (i, row) in rows.iter_mut().enumerate() {
                        row.push(t.data()[i] as f64);
                    }
                }
            }
        }
        let (_, w) = layers[bd.consumer].tensors().swap_remove(0);
        let out = w.dim(0);
        let g = w.len() / (out * n);
        for r in 0..out {
            let base = r * n * g;
            for (j, row) in rows.iter_mut().enumerate() {
                row.extend(w.data()[base + j * g..base + (j + 1) * g].iter().map(|&v| v as f64));
            }
        }
        let len = rows[0].len();
        UnitSlices {
            units: n,
            len,
            data: rows.concat(),
        }
    }

    /// `C[i][j] = ⟨self_i, other_j⟩`.
    fn scores(&self, other: &UnitSlices) -> Vec<f64> {
        let n = self.units;
        let mut c = vec![0.0; n * n];
        dgemm(n, self.len, n, 1.0, &self.data, (self.len, 1), &other.data, (1, other.len), 0.0, &mut c, (n, 1));
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ArchDescriptor, Norm};
    use crate::train::{init_params, InitScheme};
    use std::collections::BTreeMap;

    fn random_model(arch: &ArchDescriptor, seed: u64) -> ModelGraph {
        init_params(&ModelGraph::build(arch).unwrap(), InitScheme::KaimingUniform, seed)
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn four_units_match_exhaustive_minimum() {
        let arch = ArchDescriptor::mlp(&[5], &[4], 3);
        for seed in 0..10 {
            let (a, b) = (random_model(&arch, seed), random_model(&arch, 100 + seed));
            let (p, report) = weight_match(&a, &b).unwrap();
            let all = permutations(4);
            assert_eq!(all.len(), 24);
            let best = all
                .into_iter()
                .map(|q| {
                    let spec = PermSpec::new(BTreeMap::from([(0, q)])).unwrap();
                    param_distance(&a, &apply_perm(&b, &spec).unwrap()).unwrap()
                })
                .fold(f64::INFINITY, f64::min);
            let got = param_distance(&a, &apply_perm(&b, &p).unwrap()).unwrap();
            assert!((got - best).abs() < 1e-9, "{got} vs {best}");
            assert!((report.distance_after - got).abs() < 1e-12);
        }
    }

    #[test]
    fn planted_permutation_is_recovered() {
        let archs = [
            ArchDescriptor::mlp(&[20], &[32, 24, 16], 5),
            ArchDescriptor::mlp_with(&[20], &[16, 16], 5, Norm::Batch, true),
            ArchDescriptor::vgg([3, 8, 8], &[Some(8), None, Some(6)], 4, Norm::Layer),
        ];
        for (k, arch) in archs.iter().enumerate() {
            let a = random_model(arch, k as u64);
            let pi = PermSpec::random(&a, 50 + k as u64);
            let b = apply_perm(&a, &pi).unwrap();
            let (p, report) = weight_match(&a, &b).unwrap();
            assert_eq!(p, pi.invert(), "arch {k}");
            assert_eq!(report.distance_after, 0.0);
            assert!(report.converged);
        }
    }

    #[test]
    fn self_match_is_identity() {
        let a = random_model(&ArchDescriptor::mlp(&[6], &[10, 10], 3), 9);
        let (p, report) = weight_match(&a, &a).unwrap();
        assert!(p.is_identity());
        assert_eq!(report.sweeps, 1);
    }

    #[test]
    fn objective_never_increases() {
        let arch = ArchDescriptor::mlp(&[12], &[24, 24, 24], 4);
        for seed in 0..4 {
            let (a, b) = (random_model(&arch, seed), random_model(&arch, 40 + seed));
            let (_, r) = weight_match_with(&a, &b, &WeightMatchOptions { seed, max_sweeps: 100 }).unwrap();
            assert!(r.objective[0] <= r.distance_before + 1e-9);
            for w in r.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", r.objective);
            }
            assert_eq!(r.sweep_orders.len(), r.sweeps);
        }
    }

    #[test]
    fn architecture_mismatch() {
        let a = random_model(&ArchDescriptor::mlp(&[6], &[10], 3), 0);
        let b = random_model(&ArchDescriptor::mlp(&[6], &[11], 3), 0);
        assert!(matches!(weight_match(&a, &b), Err(Error::ArchMismatch(_))));
    }

    #[test]
    fn single_boundary_result_ignores_prepermutation() {
        let arch = ArchDescriptor::mlp(&[8], &[12], 3);
        let (a, b) = (random_model(&arch, 1), random_model(&arch, 2));
        let (_, r0) = weight_match(&a, &b).unwrap();
        let b2 = apply_perm(&b, &PermSpec::random(&b, 3)).unwrap();
        let (_, r1) = weight_match(&a, &b2).unwrap();
        assert!((r0.distance_after - r1.distance_after).abs() < 1e-9);
    }
}
