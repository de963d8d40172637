pub mod checker;
pub mod corpus;
pub mod detector;
pub mod env;
pub mod fixtures;
pub mod ir;
pub mod optimizer;
pub mod orchestrator;
pub mod sim;
