//! Rasters, preprocessing, augmentation, dataset splits, the phantom
//! generator and PNG I/O.

pub mod augment;
pub mod io;
pub mod phantom;
pub mod preprocess;
pub mod raster;
pub mod split;

pub use augment::{augment, derive_seed, AugmentParams};
pub use io::{read_dataset, read_mask_png, read_png, write_dataset, write_mask_png, write_png, Manifest, SplitRecord};
pub use phantom::{generate_phantoms, PhantomSetSpec, PhantomSpec};
pub use preprocess::{binarize_raster, normalize, resize, ResizeKind};
pub use raster::{Raster, SamplePair};
pub use split::{carve_validation, partition, split_dataset, split_grouped, DatasetSplit};
