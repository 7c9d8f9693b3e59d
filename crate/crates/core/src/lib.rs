pub mod autodiff;
pub mod checkpoint;
pub mod distributions;
pub mod envs;
pub mod harness;
pub mod learner;
pub mod networks;
pub mod policy;
pub mod world_model;
