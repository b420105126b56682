pub mod compare;
pub mod config;
pub mod replay;
pub mod report;
pub mod run;
pub mod runlog;
pub mod sweep;
