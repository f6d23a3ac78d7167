//! Permutations of hidden units and the procedures that find them.

mod activation;
mod multi;
mod perm;
mod weight;

pub use activation::{activation_match, activation_match_with, ActivationMatchOptions};
pub use multi::{average_models, multi_match, Matcher, MultiMatch, Strategy, ITERATIVE_CAP};
pub use perm::{apply_perm, PermSpec};
pub use weight::{param_distance, weight_match, weight_match_with, MatchReport, WeightMatchOptions};
