//! Numerical substrate: dense tensors, a reverse-mode tape, special functions,
//! the adaptive-moment optimizer and seeded random streams.

pub mod optim;
pub mod rng;
pub mod special;
pub mod tape;
pub mod tensor;

pub use optim::{Adam, AdamConfig, Param};
pub use rng::{derive_seed, seeded_rng, Rng};
pub use special::{digamma, lgamma};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
