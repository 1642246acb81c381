pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod greens;
pub mod grid;
pub mod io;
pub mod kleingordon;
pub mod measurement;
pub mod numerics;
pub mod params;
pub mod spectral;
pub mod schrodinger;
pub mod trajectory;
