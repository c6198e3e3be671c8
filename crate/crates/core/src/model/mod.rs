//! Network representation, evaluation, composition and file I/O.

mod fnn;
mod gadget;
mod matrix;
mod network;

pub use fnn::{load_network, load_network_str, network_to_string, save_network};
pub use gadget::max_gadget_layer;
pub use matrix::{Matrix, RowEntries};
pub(crate) use network::argmax;
pub use network::{concatenate, AffineLayer, ForwardTrace, Label, Network};
