mod adam;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use params::{NamedTensor, ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
