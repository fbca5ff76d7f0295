pub mod bernoulli;
pub mod blowup;
pub mod error;
pub mod free_boundary;
pub mod grid;
pub mod harmonic;
pub mod instances;
pub mod io;
pub mod obstacle;
pub mod oracles;
pub(crate) mod relax;
pub mod thin_obstacle;
pub mod verify;

pub use error::{LabError, Result};
