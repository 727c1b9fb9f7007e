//! Cell partitions of U, multi-indices, slices of the manifold and the slice
//! catalog.

mod catalog;
mod partition;
mod slice;

pub use catalog::{acceptance_constant, build_catalog, inner_net, CatalogSource, InnerEntry, OuterEntry, SliceCatalog};
pub use partition::{build_partition, validate, CellPartition, SmallnessPolicy};
pub use slice::{
    annulus, direct_slice_integral, inclusion_exclusion_terms, slice_functional, slice_membership, MultiIndex,
    SliceVariant,
};
