pub mod bidset;
pub mod cases;
pub mod cli;
pub mod coalition;
pub mod dispatch;
pub mod error;
pub mod market;
pub mod qp;
pub mod report;
pub mod setfunc;
pub mod vcg;
