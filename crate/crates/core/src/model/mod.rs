//! The shared-decoder segmentation network.

mod checkpoint;
mod config;
mod network;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{SideOutput, SpnetConfig};
pub use network::{backward, forward, BnUpdate, ForwardCache, ForwardPass, Mode};
pub use params::{
    count_parameters, layout, GradStore, Param, ParamKind, ParamSpec, ParameterStore,
};
