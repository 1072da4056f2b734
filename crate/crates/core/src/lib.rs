pub mod augment;
pub mod cli;
pub mod autodiff;
pub mod data;
pub mod metrics;
pub mod model;
pub mod tokenizer;
pub mod train;
