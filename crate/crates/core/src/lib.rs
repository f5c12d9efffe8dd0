//! User geolocation from social graphs and text.
//!
//! The crate covers the whole pipeline: record ingestion and ground-truth
//! assignment ([`ingest`]), extended mention/follower networks ([`graph`]),
//! discrete location labels ([`labels`]), text features ([`textfeat`]), a
//! small reverse-mode autodiff engine ([`autograd`]), the RGCN, GraphSAGE,
//! Node2vec+ and transformer classifiers ([`models`]), metrics and
//! cross-validation ([`eval`]), synthetic data ([`synth`]) and the staged
//! pipeline driven by the CLI ([`pipeline`]).

pub mod autograd;
pub mod error;
pub mod geo;
pub mod graph;
pub mod ingest;
pub mod labels;
pub mod eval;
pub mod models;
pub mod pipeline;
pub mod synth;
pub mod textfeat;

pub use error::{Error, Result};
pub use geo::{haversine_km, BoundingBox, GeoPoint, ACC_THRESHOLD_KM, EARTH_RADIUS_KM};
