//! Approximate nearest-neighbour search over local descriptors.

mod io;
mod ivf;
mod opq;

pub use io::{read_index, read_index_file, write_index, write_index_file, INDEX_MAGIC, INDEX_VERSION};
pub use ivf::{
    adc_distance, adc_table, build_index, sample_descriptors, search, DescriptorMatch, IndexConfig, IvfEntry,
    OpqIvfIndex, SearchParams, DEFAULT_COARSE_K, DEFAULT_KNN, DEFAULT_NPROBE,
};
pub use opq::{train_opq, Code, OpqConfig, OpqModel, TrainedOpq, CENTROIDS, DIM, SUBSPACES, SUB_DIM};
