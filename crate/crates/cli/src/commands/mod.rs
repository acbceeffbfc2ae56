pub mod curves;
pub mod report;
pub mod reproduce;
pub mod saliency;
pub mod train;
