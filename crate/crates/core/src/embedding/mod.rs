mod fixture;
mod subspace;

pub use fixture::{EmbeddingFixture, FixtureHeader, NORM_TOLERANCE};
pub use subspace::{cosine, BasisMode, Embedding, ExpressionSubspace, RANK_TOLERANCE};
