pub mod balloon;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod par;
pub mod render;
pub mod scene;
pub mod solver;
pub mod synthetic;

pub use error::{Error, Result};
