pub mod generate;
pub mod report;
pub mod train;
pub mod verify;
