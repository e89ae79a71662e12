pub mod signals;
pub mod costs;
pub mod svm;
pub mod tuner;
pub mod simulator;
pub mod diagnose;
