use std::collections::VecDeque;

use crate::volume::{linear_index, Dims, Mask3};

/// Cluster label per voxel: 0 is background, clusters are numbered from 1 in
/// order of their first voxel in linear order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clusters {
    pub dims: Dims,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl Clusters {
    /// Voxel coordinates of every cluster, index `label - 1`, linear order.
    pub fn members(&self) -> Vec<Vec<[usize; 3]>> {
        let mut out = vec![Vec::new(); self.count];
        let [nx, ny, _] = self.dims;
        for (i, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                out[l as usize - 1].push([i % nx, (i / nx) % ny, i / (nx * ny)]);
            }
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in &self.labels {
            if l > 0 {
                sizes[l as usize - 1] += 1;
            }
        }
        sizes
    }
}

/// 26-connected components of the positive voxels.
pub fn connected_components(mask: &Mask3) -> Clusters {
    let dims = mask.dims();
    let [nx, ny, nz] = dims;
    let src = mask.labels();
    let mut labels = vec![0u32; src.len()];
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..src.len() {
        if src[start] == 0 || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
            for z2 in z.saturating_sub(1)..=(z + 1).min(nz - 1) {
                for y2 in y.saturating_sub(1)..=(y + 1).min(ny - 1) {
                    for x2 in x.saturating_sub(1)..=(x + 1).min(nx - 1) {
                        let j = linear_index(dims, x2, y2, z2);
                        if src[j] != 0 && labels[j] == 0 {
                            labels[j] = count;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
    }
    Clusters { dims, labels, count: count as usize }
}
