pub mod gen;
pub mod report;
pub mod trace;
