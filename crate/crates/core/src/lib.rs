//! Pursuit-evasion games on graphs.
//!
//! [`solver`] computes worst-case capture-distance tables over joint
//! pursuer/evader states; [`policy`] turns a table into pursuer and evader
//! decision rules; [`belief`] tracks where an unobserved evader may be;
//! [`sim`] plays and evaluates seeded episodes; [`oracle`] holds brute-force
//! references; [`env`] serves episodes over a JSON-lines protocol.

pub mod belief;
pub mod env;
pub mod error;
pub mod graph;
pub mod oracle;
pub mod par;
pub mod policy;
pub mod sim;
pub mod solver;

pub use error::{PegError, Result};
pub use graph::{Graph, NodeId, NodeSet};
pub use solver::{CaptureSpec, DistanceTable, JointState, INFINITY};
