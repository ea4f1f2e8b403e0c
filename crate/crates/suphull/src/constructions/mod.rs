//! Cover constructions: separated nets, block and rotation covers of the
//! Euclidean ball, dyadic ellipsoid decompositions, l_q embeddings, and
//! partition-tree extraction.

mod ellipsoid;
mod gamma;
mod nets;

pub use ellipsoid::{
    ellipsoid_blocks, ellipsoid_cover, lq_cover, lq_embed, BlockDecomposition, EllipsoidBlock,
    EllipsoidDiagnostics, LqEmbedding,
};
pub use gamma::{
    brute_force_gamma, extract_cover_from_partition, gamma_partition, Cell, PartitionTree,
    MAX_GAMMA_POINTS, MAX_GAMMA_POINTS_MC,
};
pub use nets::{
    auto_block_size, block_cover_b2, net_cover, rotation_cover_b2, rotation_cover_with,
    separated_net, RotationConfig, RotationDiagnostics, MAX_NET_DIM,
};
