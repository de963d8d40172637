//! Pipeline control: workflow intake, checking, monitored execution and operator replanning.

mod bench;
mod provider;
mod session;

pub use bench::*;
pub use provider::*;
pub use session::*;
