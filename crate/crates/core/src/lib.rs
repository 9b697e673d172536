//! Expression grammar, reward quantization, constant fitting, benchmark data
//! and search-history collection for formula distillation.

pub mod constopt;
pub mod datagen;
pub mod expr;
pub mod formula;
pub mod history;
pub mod registry;
pub mod reward;
pub mod rl;
pub mod seed;
pub mod vocab;
