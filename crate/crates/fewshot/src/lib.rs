//! Few-shot intent classification with episodically trained prototypical
//! networks, feature-space data augmentation (a jointly trained conditional
//! generator and a random-perturbation baseline), a conventional
//! transfer-learning baseline, and a trial-based evaluation harness.

pub mod augment;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod numerics;
pub mod protonet;
pub mod selfcheck;
pub mod train;
