//! Cluster assignment: entropic optimal transport and the k-means baseline.

mod kmeans;
mod sinkhorn;

pub use kmeans::{assign_nearest, kmeans_cluster, KMeansResult};
pub use sinkhorn::{sinkhorn_assign, AssignmentMatrix, MarginalMode, SinkhornConfig};
