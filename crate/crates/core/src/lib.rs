pub mod autoencoder;
pub mod canon;
pub mod cli;
pub mod config;
pub mod crystal;
pub mod diffusion;
pub mod elements;
pub mod eval;
pub mod featurize;
pub mod gns;
pub mod io;
pub mod nn;
pub mod tensor;
