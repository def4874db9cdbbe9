pub mod adlib;
pub mod analytics;
pub mod audience;
pub mod demo;
pub mod demographics;
pub mod domain;
pub mod pages;
pub mod pipeline;
pub mod reach;
pub mod report;
pub mod skew;
pub mod stats;
pub mod synthworld;
