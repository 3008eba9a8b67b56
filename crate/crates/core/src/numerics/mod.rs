//! Dense linear algebra, seeded random streams, a small MLP with exact
//! reverse-mode gradients, and SGD with momentum.

mod matrix;
mod mlp;
mod optim;
mod rng;

pub use matrix::{dot, sq_dist, Matrix};
pub use mlp::{Activation, Dense, Mlp, MlpCache, MlpGrads};
pub use optim::{annealed_lr, Parameters, SgdMomentum};
pub use rng::{chain_rngs, normal_rows, Rng, Stream};
