use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::ModelGraph;

use super::activation::{activation_match_with, ActivationMatchOptions};
use super::perm::{apply_perm, PermSpec};
use super::weight::{weight_match_with, MatchReport, WeightMatchOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Every model is matched to the first.
    #[default]
    Reference,
    /// Each model is matched to the permuted previous one.
    Sequential,
    /// Random-order passes matching each model to the mean of the others.
    Iterative,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Strategy::Reference),
            "sequential" => Ok(Strategy::Sequential),
            "iterative" => Ok(Strategy::Iterative),
            _ => Err(Error::InvalidArgument(format!("unknown strategy {s:?}"))),
        }
    }
}

/// Pairwise matching procedure used inside the strategies.
#[derive(Clone, Debug)]
pub enum Matcher<'a> {
    Weight(WeightMatchOptions),
    Activation { data: &'a Dataset, opts: ActivationMatchOptions },
}

impl Matcher<'_> {
    /// Permutation aligning `b` to `a`.
    pub fn run(&self, a: &ModelGraph, b: &ModelGraph) -> Result<(PermSpec, MatchReport)> {
        match self {
            Matcher::Weight(o) => weight_match_with(a, b, o),
            Matcher::Activation { data, opts } => activation_match_with(a, b, data, opts),
        }
    }
}

pub const ITERATIVE_CAP: usize = 30;

#[derive(Clone, Debug)]
pub struct MultiMatch {
    pub merged: ModelGraph,
    /// Permutation applied to each input model.
    pub perms: Vec<PermSpec>,
    /// Full passes for the iterative strategy, 1 otherwise.
    pub iterations: usize,
    pub converged: bool,
}

/// Elementwise mean of every tensor, running statistics included.
pub fn average_models(models: &[ModelGraph]) -> Result<ModelGraph> {
    let first = models.first().ok_or_else(|| Error::InvalidArgument("no models to average".into()))?;
    let mut sums: Vec<Vec<f64>> = first.params().iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
    for m in models {
        first.ensure_same_architecture(m)?;
        for (acc, (_, _, t)) in sums.iter_mut().zip(m.params()) {
            for (s, &v) in acc.iter_mut().zip(t.data()) {
                *s += v as f64;
            }
        }
    }
    let k = models.len() as f64;
    let mut out = first.clone();
    for (acc, (_, _, t)) in sums.iter().zip(out.params_mut()) {
        for (v, s) in t.data_mut().iter_mut().zip(acc) {
            *v = (s / k) as f32;
        }
    }
    Ok(out)
}

pub fn multi_match(models: &[ModelGraph], strategy: Strategy, matcher: &Matcher, iter_cap: usize, seed: u64) -> Result<MultiMatch> {
    let first = models.first().ok_or_else(|| Error::InvalidArgument("multi_match needs at least one model".into()))?;
    for m in &models[1..] {
        first.ensure_same_architecture(m)?;
    }
    let n = models.len();
    let mut perms = vec![PermSpec::identity(first); n];
    let mut aligned = models.to_vec();
    let (mut iterations, mut converged) = (1, true);
    match strategy {
        Strategy::Reference => {
            for i in 1..n {
                perms[i] = matcher.run(first, &models[i])?.0;
                aligned[i] = apply_perm(&models[i], &perms[i])?;
            }
        }
        Strategy::Sequential => {
            for i in 1..n {
                perms[i] = matcher.run(&aligned[i - 1], &models[i])?.0;
                aligned[i] = apply_perm(&models[i], &perms[i])?;
            }
        }
        Strategy::Iterative if n > 1 => {
            if iter_cap == 0 {
                return Err(Error::InvalidArgument("iter_cap must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..n).collect();
            converged = false;
            iterations = 0;
            while iterations < iter_cap {
                iterations += 1;
                order.shuffle(&mut rng);
                let mut changed = false;
                for &i in &order {
                    let rest: Vec<ModelGraph> = (0..n).filter(|&j| j != i).map(|j| aligned[j].clone()).collect();
                    let center = average_models(&rest)?;
                    let (step, _) = matcher.run(&center, &aligned[i])?;
                    if !step.is_identity() {
                        changed = true;
                        aligned[i] = apply_perm(&aligned[i], &step)?;
                        perms[i] = step.compose(&perms[i])?;
                    }
                }
                log::debug!("iterative matching pass {iterations}: changed = {changed}");
                if !changed {
                    converged = true;
                    break;
                }
            }
            if !converged {
                log::warn!("iterative matching stopped at the cap of {iter_cap} passes");
            }
        }
        Strategy::Iterative => {}
    }
    Ok(MultiMatch {
        merged: average_models(&aligned)?,
        perms,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchDescriptor;
    use crate::train::{init_params, InitScheme};

    fn random_model(seed: u64) -> ModelGraph {
        let arch = ArchDescriptor::mlp(&[12], &[16, 16], 4);
        init_params(&ModelGraph::build(&arch).unwrap(), InitScheme::KaimingUniform, seed)
    }

    fn max_diff(a: &ModelGraph, b: &ModelGraph) -> f32 {
        a.params()
            .iter()
            .zip(b.params())
            .flat_map(|((_, _, x), (_, _, y))| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>())
            .fold(0.0, f32::max)
    }

    #[test]
    fn single_model_is_unchanged() {
        let m = random_model(0);
        for s in [Strategy::Reference, Strategy::Sequential, Strategy::Iterative] {
            let r = multi_match(std::slice::from_ref(&m), s, &Matcher::Weight(Default::default()), ITERATIVE_CAP, 0).unwrap();
            assert_eq!(r.merged, m);
            assert!(r.perms[0].is_identity());
        }
        assert!(multi_match(&[], Strategy::Reference, &Matcher::Weight(Default::default()), 30, 0).is_err());
    }

    #[test]
    fn two_models_reference_equals_sequential() {
        let ms = [random_model(1), random_model(2)];
        let w = Matcher::Weight(Default::default());
        let r = multi_match(&ms, Strategy::Reference, &w, 30, 0).unwrap();
        let s = multi_match(&ms, Strategy::Sequential, &w, 30, 0).unwrap();
        assert_eq!(r.merged, s.merged);
    }

    #[test]
    fn planted_copies_are_realigned() {
        let base = random_model(3);
        let mut models = vec![base.clone()];
        let mut planted = vec![PermSpec::identity(&base)];
        for s in 1..8 {
            let p = PermSpec::random(&base, 100 + s);
            models.push(apply_perm(&base, &p).unwrap());
            planted.push(p);
        }
        let w = Matcher::Weight(Default::default());
        for strategy in [Strategy::Reference, Strategy::Sequential] {
            let r = multi_match(&models, strategy, &w, ITERATIVE_CAP, 0).unwrap();
            for (p, q) in r.perms.iter().zip(&planted) {
                assert_eq!(p, &q.invert(), "{strategy:?}");
            }
            assert!(max_diff(&r.merged, &base) <= 1e-6);
        }
        let r = multi_match(&models, Strategy::Iterative, &w, ITERATIVE_CAP, 0).unwrap();
        assert!(r.converged);
        // all copies land in one common labelling, that of the first model's result
        let frame = apply_perm(&base, &r.perms[0]).unwrap();
        for (m, p) in models.iter().zip(&r.perms) {
            assert_eq!(apply_perm(m, p).unwrap(), frame);
        }
        assert!(max_diff(&r.merged, &frame) <= 1e-6);
    }

    #[test]
    fn strategy_names() {
        assert_eq!("iterative".parse::<Strategy>().unwrap(), Strategy::Iterative);
        assert!("other".parse::<Strategy>().is_err());
    }
}
