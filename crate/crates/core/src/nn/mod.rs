//! A small two-pipeline feedforward network with hand-derived backpropagation.

pub mod adam;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod network;

pub use adam::{Adam, AdamConfig};
pub use layers::{Batch, Layer, LayerSpec};
pub use network::{Architecture, NetworkShape, ForwardCache, ForwardMode, Gradients, QNetwork, networks_constructed};
