//! Fixtures shared by the criterion benchmarks.

use bbfdr::benchmark::{generate, AlternativeKind, PriorKind, SyntheticDataset};
use bbfdr::{Alternative, FoldAssignment, LikelihoodTable, TrainConfig, TwoGroupsDensities};

/// A linear-prior dataset with the well-separated alternative.
pub fn linear_fixture(n: usize, seed: u64) -> SyntheticDataset {
    generate(PriorKind::Linear, n, 50, 25, AlternativeKind::Ws, seed).expect("fixture generation")
}

pub fn likelihoods(data: &SyntheticDataset) -> LikelihoodTable {
    TwoGroupsDensities::new(Alternative::WellSeparated).likelihoods(&data.z)
}

pub fn folds(n: usize) -> FoldAssignment {
    FoldAssignment::random(n, 3, 0).expect("fold assignment")
}

/// Default training settings cut to `epochs` passes.
pub fn short_training(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, ..TrainConfig::default() }
}
