//! The four U-Net variants as explicit layer graphs, and their ensembles.

pub mod blocks;
pub mod ensemble;
pub mod graph;
pub mod params;
pub mod probes;

pub use blocks::{Block, ConvUnit, NormUnit, PlainUnit, PreActUnit, ResidualUnit, UpConvUnit};
pub use ensemble::{combine_maps, ensemble_predict, normalize_weights, EnsembleScheme, EnsembleSpec, ENSEMBLE_MEMBERS};
pub use graph::{
    build_rd_unet, build_resunet, build_sd_unet, build_unet, Architecture, ModelConfig, ModelGraph, Trace, DEFAULT_DROPOUT, DEPTH,
    SIZE_MULTIPLE,
};
pub use params::{NormId, ParamId, ParamStore};
pub use probes::{ModelProbe, ResidualUnitProbe};
