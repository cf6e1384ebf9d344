pub mod autodiff;
pub mod classic;
pub mod data;
pub mod error;
pub mod experiment;
pub mod explain;
pub mod facts;
pub mod graph;
pub mod ground;
pub mod metrics;
pub mod model;
pub mod params;
pub mod template;
pub mod train;
