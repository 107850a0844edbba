pub mod base;
pub mod cake;
pub mod core_protocol;
pub mod error;
pub mod oracle;
pub mod significance;
pub mod goleft;
pub mod main_protocol;
pub mod prepare;
pub mod trace;
pub mod verify;
