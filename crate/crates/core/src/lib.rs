pub mod constitutive;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod problem;
pub mod schemes;
pub mod cli;
pub mod config;
pub mod driver;
pub mod output;
pub mod verification;
