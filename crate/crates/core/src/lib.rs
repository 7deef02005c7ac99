//! Distributed performance testing of network services.
//!
//! A controller deploys tester agents to a set of nodes, each tester
//! invokes a client against the target service on a schedule and reports
//! timed records back, and an offline pipeline turns the records into
//! throughput, load, response time, utilization and fairness.

pub mod analysis;
pub mod cli;
pub mod controller;
pub mod mock;
pub mod model;
pub mod report;
pub mod tester;
pub mod timesync;
pub mod transport;
