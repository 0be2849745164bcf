pub mod abelian;
pub mod error;
pub mod estimates;
pub mod fieldlang;
pub mod grid;
pub mod krylov;
pub mod legendre;
pub mod potential;
pub mod solver;

pub use error::{Error, Result};
