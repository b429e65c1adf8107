pub mod assignment;
pub mod communicator;
pub mod control;
pub mod dynamics;
pub mod guidance;
pub mod lp;
pub mod mpc;
pub mod netgraph;
pub mod runtime;
pub mod simrunner;
