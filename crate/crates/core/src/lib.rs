//! Coupled soil-root water flow: virtual elements in the soil, mixed finite
//! elements on a growing xylem network, and an optimization-based coupling.

pub mod error;
pub mod geom;
pub mod interface;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod network;
pub mod quad;
pub mod rsa;
pub mod scenario;
pub mod soil;
pub mod tp1;
pub mod solver;
pub mod vem;
pub mod xylem;

pub use error::{Error, Result};
