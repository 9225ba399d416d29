pub mod domain;
pub mod ingestion;
pub mod pipeline;
pub mod provider;
pub mod similarity;
pub mod stats;
pub mod simulate;
pub mod config;
pub mod runlog;
pub mod commands;
