pub mod cli;
pub mod detection;
pub mod experiments;
pub mod integrator;
pub mod meanfield;
pub mod oscillator;
pub mod params;
pub mod quadrature;
