//! Active object existence prediction on a simulated tabletop.
//!
//! A camera circles a round table holding one or two boxes. Given a query
//! word, an agent decides when to move and when to answer whether the queried
//! object is on the table. The crate contains the simulator, a small
//! recurrent model with hand-written gradients, a curriculum trainer and the
//! evaluation protocols used to compare the agent with scripted policies.

pub mod agent;
pub mod cli;
pub mod env;
pub mod geometry;
pub mod nn;
pub mod rng;
pub mod scenegen;
pub mod training;
