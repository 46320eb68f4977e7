//! Multi-agent electricity market simulator: investment equilibria under
//! energy-only, reserve demand curve and capacity mechanism designs, with an
//! insurance overlay that prices residual outage risk and sizes resilient
//! distributed resources.

#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod lp;
pub mod model;
pub mod scenario;
pub mod dispatch;
pub mod capacity;
pub mod risk;
pub mod equilibrium;
pub mod insurance;
pub mod report;
pub mod toy;
pub mod cli;

pub use error::{Error, Result};
