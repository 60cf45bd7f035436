//! Model predictive control for tracking (MPCT) of impulsive spacecraft
//! rendezvous with a tumbling target.

pub mod attitude;
pub mod feasibility;
pub mod ltv_model;
pub mod mpct;
pub mod qp_solver;
pub mod relative_dynamics;
pub mod sim;
pub mod terminal_control;
