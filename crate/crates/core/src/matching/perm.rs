use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, ModelGraph};
use crate::tensor::Tensor;

/// One permutation per boundary. Applying it makes new unit `i` of a
/// boundary the old unit `perm[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PermSpec {
    perms: BTreeMap<usize, Vec<usize>>,
}

impl PermSpec {
    pub fn new(perms: BTreeMap<usize, Vec<usize>>) -> Result<Self> {
        for (b, p) in &perms {
            check_bijection(*b, p)?;
        }
        Ok(PermSpec { perms })
    }

    pub fn identity(model: &ModelGraph) -> Self {
        PermSpec {
            perms: model.boundary_map().into_iter().map(|(b, n)| (b, (0..n).collect())).collect(),
        }
    }

    pub fn random(model: &ModelGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = Self::identity(model);
        for p in spec.perms.values_mut() {
            p.shuffle(&mut rng);
        }
        spec
    }

    pub fn get(&self, boundary: usize) -> Option<&[usize]> {
        self.perms.get(&boundary).map(Vec::as_slice)
    }

    pub fn set(&mut self, boundary: usize, perm: Vec<usize>) -> Result<()> {
        let slot = self
            .perms
            .get_mut(&boundary)
            .ok_or_else(|| Error::BoundaryMismatch(format!("no boundary {boundary}")))?;
        if slot.len() != perm.len() {
            return Err(Error::BoundaryMismatch(format!(
                "boundary {boundary}: {} units, permutation of {}",
                slot.len(),
                perm.len()
            )));
        }
        check_bijection(boundary, &perm)?;
        *slot = perm;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.perms.iter().map(|(&b, p)| (b, p.as_slice()))
    }

    pub fn is_identity(&self) -> bool {
        self.perms.values().all(|p| p.iter().enumerate().all(|(i, &j)| i == j))
    }

    /// Units that do not map to themselves, summed over boundaries.
    pub fn moved_units(&self) -> usize {
        self.perms.values().map(|p| p.iter().enumerate().filter(|(i, j)| i != *j).count()).sum()
    }

    pub fn invert(&self) -> PermSpec {
        let perms = self
            .perms
            .iter()
            .map(|(&b, p)| {
                let mut inv = vec![0; p.len()];
                for (i, &j) in p.iter().enumerate() {
                    inv[j] = i;
                }
                (b, inv)
            })
            .collect();
        PermSpec { perms }
    }

    /// The permutation equivalent to applying `other` first, then `self`.
    pub fn compose(&self, other: &PermSpec) -> Result<PermSpec> {
        self.ensure_same_boundaries(other)?;
        let perms = self
            .perms
            .iter()
            .map(|(&b, p)| {
                let q = &other.perms[&b];
                (b, p.iter().map(|&j| q[j]).collect())
            })
            .collect();
        Ok(PermSpec { perms })
    }

    /// Checks that boundaries and unit counts match the model.
    pub fn validate(&self, model: &ModelGraph) -> Result<()> {
        let map = model.boundary_map();
        if map.len() != self.perms.len() {
            return Err(Error::BoundaryMismatch(format!(
                "model has {} boundaries, permutation has {}",
                map.len(),
                self.perms.len()
            )));
        }
        for (b, n) in map {
            match self.perms.get(&b) {
                None => return Err(Error::BoundaryMismatch(format!("no permutation for boundary {b}"))),
                Some(p) if p.len() != n => {
                    return Err(Error::BoundaryMismatch(format!(
                        "boundary {b}: {n} units, permutation of {}",
                        p.len()
                    )))
                }
                Some(p) => check_bijection(b, p)?,
            }
        }
        Ok(())
    }

    fn ensure_same_boundaries(&self, other: &PermSpec) -> Result<()> {
        let same = self.perms.len() == other.perms.len()
            && self
                .perms
                .iter()
                .all(|(b, p)| other.perms.get(b).is_some_and(|q| q.len() == p.len()));
        if same {
            Ok(())
        } else {
            Err(Error::BoundaryMismatch("permutations cover different boundaries".into()))
        }
    }
}

fn check_bijection(boundary: usize, p: &[usize]) -> Result<()> {
    let mut seen = vec![false; p.len()];
    for &j in p {
        if j >= p.len() || std::mem::replace(&mut seen[j], true) {
            return Err(Error::BoundaryMismatch(format!("boundary {boundary}: not a bijection")));
        }
    }
    Ok(())
}

/// Relabels hidden units without changing the function the model computes.
/// Running statistics and corrections move with their channels.
pub fn apply_perm(model: &ModelGraph, perm: &PermSpec) -> Result<ModelGraph> {
    perm.validate(model)?;
    let mut out = model.clone();
    let boundaries = model.boundaries().to_vec();
    let layers = out.layers_mut();
    for b in &boundaries {
        let p = &perm.perms[&b.id];
        if p.iter().enumerate().all(|(i, &j)| i == j) {
            continue;
        }
        match &mut layers[b.producer] {
            Layer::Dense(d) => {
                d.weight = permute_rows(&d.weight, p);
                d.bias = d.bias.as_ref().map(|t| permute_rows(t, p));
            }
            Layer::Conv2d(c) => {
                c.weight = permute_rows(&c.weight, p);
                c.bias = c.bias.as_ref().map(|t| permute_rows(t, p));
            }
            _ => unreachable!("producer is a weight layer"),
        }
        for &a in &b.attached {
            for (_, t) in layers[a].tensors_mut() {
                *t = permute_rows(t, p);
            }
        }
        match &mut layers[b.consumer] {
            Layer::Dense(d) => d.weight = permute_columns(&d.weight, p),
            Layer::Conv2d(c) => c.weight = permute_columns(&c.weight, p),
            _ => unreachable!("consumer is a weight layer"),
        }
    }
    Ok(out)
}

/// Reorders the leading axis: row `i` of the result is row `perm[i]`.
pub(crate) fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let row = t.len() / perm.len();
    let src = t.data();
    let mut data = Vec::with_capacity(t.len());
    for &j in perm {
        data.extend_from_slice(&src[j * row..(j + 1) * row]);
    }
    Tensor::from_vec(t.shape(), data).expect("same size")
}

/// Reorders unit blocks along the second axis of `[out, units·g, …]`.
pub(crate) fn permute_columns(t: &Tensor, perm: &[usize]) -> Tensor {
    let rows = t.dim(0);
    let g = t.len() / (rows * perm.len());
    let row = perm.len() * g;
    let src = t.data();
    let mut data = Vec::with_capacity(t.len());
    for r in 0..rows {
        let base = r * row;
        for &j in perm {
            data.extend_from_slice(&src[base + j * g..base + (j + 1) * g]);
        }
    }
    Tensor::from_vec(t.shape(), data).expect("same size")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ArchDescriptor, Mode, Norm};
    use crate::train::{init_params, InitScheme};
    use rand::{Rng, SeedableRng};

    fn spec(p: Vec<usize>) -> PermSpec {
        PermSpec::new(BTreeMap::from([(0, p)])).unwrap()
    }

    fn random_input(shape: &[usize], n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut full = vec![n];
        full.extend_from_slice(shape);
        let len = full.iter().product();
        Tensor::from_vec(&full, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Random non-trivial running stats and corrections so that every
    /// tensor kind is exercised.
    fn randomize_state(model: &mut ModelGraph, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, role, t) in model.params_mut() {
            use crate::nn::ParamRole::*;
            match role {
                RunningVar | AffineScale | NormScale => t.map_inplace(|_| 0.5 + rng.random::<f32>()),
                RunningMean | AffineShift | NormShift => t.map_inplace(|_| rng.random::<f32>() - 0.5),
                _ => {}
            }
        }
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
    }

    fn with_affines(arch: &ArchDescriptor) -> ArchDescriptor {
        let mut layers = Vec::new();
        for (i, l) in arch.layers.iter().enumerate() {
            layers.push(l.clone());
            let next_is_relu = matches!(arch.layers.get(i + 1), Some(crate::LayerDesc::Relu));
            if let crate::LayerDesc::BatchNorm { channels, .. } = l {
                if next_is_relu {
                    layers.push(crate::LayerDesc::ChannelAffine { channels: *channels });
                }
            }
        }
        ArchDescriptor {
            input_shape: arch.input_shape.clone(),
            layers,
        }
    }

    #[test]
    fn inverse_of_a_cycle() {
        assert_eq!(spec(vec![2, 0, 1]).invert(), spec(vec![1, 2, 0]));
        assert_eq!(spec(vec![0, 1, 2]).invert(), spec(vec![0, 1, 2]));
    }

    #[test]
    fn group_axioms() {
        let m = ModelGraph::build(&ArchDescriptor::mlp(&[3], &[9, 7, 5], 2)).unwrap();
        for s in 0..20 {
            let (p, q, r) = (PermSpec::random(&m, s), PermSpec::random(&m, s + 100), PermSpec::random(&m, s + 200));
            assert!(p.compose(&p.invert()).unwrap().is_identity());
            assert!(p.invert().compose(&p).unwrap().is_identity());
            let left = p.compose(&q).unwrap().compose(&r).unwrap();
            let right = p.compose(&q.compose(&r).unwrap()).unwrap();
            assert_eq!(left, right);
        }
    }

    #[test]
    fn compose_matches_sequential_application() {
        let arch = ArchDescriptor::mlp(&[4], &[6, 5], 3);
        let m = init_params(&ModelGraph::build(&arch).unwrap(), InitScheme::KaimingUniform, 0);
        let (p, q) = (PermSpec::random(&m, 1), PermSpec::random(&m, 2));
        let twice = apply_perm(&apply_perm(&m, &q).unwrap(), &p).unwrap();
        assert_eq!(twice, apply_perm(&m, &p.compose(&q).unwrap()).unwrap());
    }

    #[test]
    fn identity_and_roundtrip_are_bitwise() {
        let arch = with_affines(&ArchDescriptor::vgg([2, 6, 6], &[Some(5), None, Some(4)], 3, Norm::Batch));
        let mut m = init_params(&ModelGraph::build(&arch).unwrap(), InitScheme::KaimingUniform, 3);
        randomize_state(&mut m, 4);
        assert_eq!(apply_perm(&m, &PermSpec::identity(&m)).unwrap(), m);
        let p = PermSpec::random(&m, 5);
        let moved = apply_perm(&m, &p).unwrap();
        assert_ne!(moved, m);
        assert_eq!(apply_perm(&moved, &p.invert()).unwrap(), m);
    }

    #[test]
    fn function_is_preserved() {
        let archs = [
            ArchDescriptor::mlp_with(&[1, 4, 4], &[12, 9], 5, Norm::Batch, true),
            ArchDescriptor::mlp_with(&[10], &[8, 8], 4, Norm::Layer, false),
            with_affines(&ArchDescriptor::vgg([3, 8, 8], &[Some(6), None, Some(5), Some(4)], 4, Norm::Batch)),
            ArchDescriptor::vgg([3, 8, 8], &[Some(6), Some(5), None], 4, Norm::Layer),
        ];
        for (k, arch) in archs.iter().enumerate() {
            let mut m = init_params(&ModelGraph::build(arch).unwrap(), InitScheme::KaimingUniform, k as u64);
            randomize_state(&mut m, 10 + k as u64);
            let x = random_input(m.input_shape(), 100, 20 + k as u64);
            let base = m.forward(&x, Mode::Eval).unwrap();
            for s in 0..3 {
                let moved = apply_perm(&m, &PermSpec::random(&m, s)).unwrap();
                let y = moved.forward(&x, Mode::Eval).unwrap();
                assert!(max_diff(&base, &y) <= 1e-5, "arch {k}: {}", max_diff(&base, &y));
                let yt = moved.forward(&x, Mode::Train).unwrap();
                let bt = m.forward(&x, Mode::Train).unwrap();
                assert!(max_diff(&bt, &yt) <= 1e-5);
            }
        }
    }

    #[test]
    fn mismatched_specs_are_rejected() {
        let m = ModelGraph::build(&ArchDescriptor::mlp(&[3], &[4, 4], 2)).unwrap();
        let other = ModelGraph::build(&ArchDescriptor::mlp(&[3], &[4], 2)).unwrap();
        let p = PermSpec::identity(&other);
        assert!(matches!(apply_perm(&m, &p), Err(Error::BoundaryMismatch(_))));
        assert!(PermSpec::identity(&m).compose(&p).is_err());
        assert!(PermSpec::new(BTreeMap::from([(0, vec![0, 0])])).is_err());
        let bad: PermSpec = serde_json::from_str(r#"{"0":[0,1,2,3],"1":[0,1,2,9]}"#).unwrap();
        assert!(apply_perm(&m, &bad).is_err());
    }

    #[test]
    fn json_is_a_map_of_arrays() {
        let s = serde_json::to_string(&spec(vec![1, 0, 2])).unwrap();
        assert_eq!(s, r#"{"0":[1,0,2]}"#);
        assert_eq!(serde_json::from_str::<PermSpec>(&s).unwrap(), spec(vec![1, 0, 2]));
    }
}
