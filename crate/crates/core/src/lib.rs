pub mod camera;
pub mod error;
pub mod linalg;
pub mod manipulator;
pub mod parameterization;
pub mod observer;
pub mod controller;
pub mod analysis;
pub mod audit;
pub mod config;
pub mod output;
pub mod sim;
pub mod sweep;
