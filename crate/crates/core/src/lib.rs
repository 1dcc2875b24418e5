//! Single-image object localization by a reinforcement-learning agent that
//! moves, resizes and finally selects an observation frame.
//!
//! Pipeline: [`dataset`] loads or synthesizes annotated images, [`env`]
//! defines the frame MDP, [`encoder`] turns a frame into a state vector,
//! [`agent`] learns a Q-function over those states and [`inference`] runs
//! and scores trained policies. [`cli`] wires it together.

pub mod agent;
pub mod cli;
pub mod dataset;
pub mod encoder;
pub mod env;
pub mod inference;
pub mod raster;
