pub mod numcore;
pub mod envlab;
pub mod oracle;
pub mod rbt;
pub mod baselines;
pub mod agent;
pub mod harness;
