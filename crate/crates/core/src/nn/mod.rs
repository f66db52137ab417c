//! Small neural-network toolkit: flat parameter vectors, dense and
//! convolutional layers with hand-written backward passes, losses, Adam,
//! mixed second-order products and binary checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod jvp;
pub mod loss;
pub mod network;
pub mod params;

pub use adam::AdamState;
pub use jvp::{jacobian_vector_products, jacobian_vector_products_transpose, Bilinear, MixedProducts, Quadratic};
pub use network::{Activation, Cache, Network};
pub use params::{Layout, ParamVector, Segment};
