//! Curvature-aware blind docking.
//!
//! Pipeline: parse a complex ([`structio`]), build ligand/protein/cross graphs
//! ([`molgraph`]), compute Ollivier-Ricci curvature features ([`curvature`]),
//! encode nodes ([`encoder`]), predict the pocket ([`pocket`]) and refine
//! the ligand pose ([`docking`]) with degree-weighted equivariant layers
//! ([`net`]). [`trainer`] fits the model, [`metrics`] scores poses.

pub mod config;
pub mod curvature;
pub mod docking;
pub mod encoder;
pub mod error;
pub mod geom;
pub mod metrics;
pub mod model;
pub mod molgraph;
pub mod net;
pub mod output;
pub mod params;
pub mod pocket;
pub mod structio;
pub mod synth;
pub mod tape;
pub mod trainer;

pub use error::{Error, Result};
