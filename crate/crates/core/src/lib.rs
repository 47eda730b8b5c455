pub mod cli;
pub mod coefficients;
pub mod matcore;
pub mod mollify;
pub mod quad;
pub mod solver;
pub mod symbol;
pub mod symmetrizer;
pub mod verify;
