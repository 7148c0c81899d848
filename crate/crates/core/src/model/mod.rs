//! Trainable representation model: projection head, losses, optimizer and
//! checkpoints.

pub mod checkpoint;
pub mod head;
pub mod loss;
pub mod optim;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
pub use head::{HeadCache, ProjectionHead};
pub use loss::{
    batch_loss, corrected_scores, loss_coarse_global, loss_global, loss_local, BatchLoss,
    GlobalTerm, LocalTerm, LossConfig, Objective, PrototypeBank, SignConvention, TrainItem,
};
pub use optim::AdamW;

/// Jitter applied to the identity start of a fresh head.
pub const INIT_JITTER: f64 = 1e-3;

/// Head parameters with their optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub head: ProjectionHead,
    first_moment: ProjectionHead,
    second_moment: ProjectionHead,
    step: u64,
    pub seed: u64,
}

impl ModelState {
    pub fn new(head: ProjectionHead, seed: u64) -> Self {
        ModelState {
            first_moment: head.zeros_like(),
            second_moment: head.zeros_like(),
            head,
            step: 0,
            seed,
        }
    }

    /// Near-identity head of width `dim`, jitter drawn from `seed`.
    pub fn init(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(ProjectionHead::near_identity(dim, INIT_JITTER, &mut rng), seed)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, grads: &ProjectionHead, opt: &AdamW) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient at step {}",
                self.step + 1
            )));
        }
        self.step += 1;
        let [w1, b1, w2, b2] = self.head.params_mut();
        let [mw1, mb1, mw2, mb2] = self.first_moment.params_mut();
        let [vw1, vb1, vw2, vb2] = self.second_moment.params_mut();
        let [gw1, gb1, gw2, gb2] = grads.params();
        opt.update(w1, gw1, mw1, vw1, self.step);
        opt.update(b1, gb1, mb1, vb1, self.step);
        opt.update(w2, gw2, mw2, vw2, self.step);
        opt.update(b2, gb2, mb2, vb2, self.step);
        if !self.head.is_finite() {
            return Err(Error::Training(format!(
                "parameters became non-finite at step {}",
                self.step
            )));
        }
        Ok(())
    }
}
