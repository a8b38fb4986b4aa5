//! Depth-aware SLIC superpixels and their k-means grouping into candidate
//! rigid clusters.

mod color;
mod kmeans;
mod slic;

pub use color::{rgb_image_to_lab, srgb_to_lab, LabImage};
pub use kmeans::{kmeans, kmeans_clusters, superpixel_features, ClusterAssignment, KMeansParams};
pub use slic::{
    cluster_distance, compute_stats, extract_superpixels, extract_superpixels_lab, Descriptor, DepthTerm, Norms,
    SlicParams, SuperPixel, SuperPixelMap,
};

use crate::grid::{Grid, LabelMap};

/// Per-pixel cluster id.
pub fn cluster_map(map: &SuperPixelMap, assignment: &ClusterAssignment) -> LabelMap {
    map.labels.map(|&l| assignment.labels[l as usize] as u32)
}

/// Boolean map of the pixels whose cluster is in `clusters`.
pub fn cluster_pixels(map: &SuperPixelMap, assignment: &ClusterAssignment, clusters: &[usize]) -> Grid<bool> {
    let mut selected = vec![false; assignment.m_clusters()];
    for &c in clusters {
        if c < selected.len() {
            selected[c] = true;
        }
    }
    map.labels.map(|&l| selected[assignment.labels[l as usize]])
}
