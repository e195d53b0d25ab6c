//! Training of small deep-network ensembles whose components are pushed
//! apart by anti-distillation losses, plus a suite of prediction-difference
//! metrics for quantifying model irreproducibility across independently
//! trained replicas.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod harness;
pub mod hashing;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod pd;
pub mod predfile;
pub mod report;
pub mod rng;

pub use matrix::Matrix;
pub use rng::SeededRng;
