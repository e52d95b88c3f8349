//! A compiler from a small SSA tensor language to an HLO-style IR, with a
//! reference interpreter, optimizer and reverse-mode differentiation.

pub mod builtins;
pub mod frontend;
pub mod grad;
pub mod hlo;
pub mod infer;
pub mod structurize;
pub mod interp;
pub mod lower;
pub mod opt;
pub mod text;
pub mod types;
pub mod value;
