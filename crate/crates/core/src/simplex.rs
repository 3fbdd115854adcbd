//! Uniform grids on the probability simplex.
//!
//! The grid of resolution `r` over `d` states holds every vector with
//! coordinates in `{0, 1/r, ..., 1}` summing to one. Points are ordered
//! lexicographically by their integer numerators, which lets
//! [`SimplexGrid::rank`] map a composition back to its index without a table.

use crate::model::Belief;

#[derive(Debug, Clone)]
pub struct SimplexGrid {
    dim: usize,
    resolution: usize,
    /// `table[k][m]` = number of compositions of `m` into `k` nonnegative parts.
    table: Vec<Vec<usize>>,
    len: usize,
}

impl SimplexGrid {
    /// Panics when `dim == 0` or `resolution == 0`.
    pub fn new(dim: usize, resolution: usize) -> Self {
        assert!(dim > 0 && resolution > 0, "empty simplex grid");
        let mut table = vec![vec![0usize; resolution + 1]; dim + 1];
        table[0][0] = 1;
        for k in 1..=dim {
            let mut acc = 0usize;
            for m in 0..=resolution {
                acc += table[k - 1][m];
                table[k][m] = acc;
            }
        }
        let len = table[dim][resolution];
        SimplexGrid {
            dim,
            resolution,
            table,
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Index of an integer composition of `resolution`.
    pub fn rank(&self, counts: &[usize]) -> usize {
        debug_assert_eq!(counts.len(), self.dim);
        let mut remaining = self.resolution;
        let mut index = 0;
        for (i, &c) in counts.iter().enumerate().take(self.dim - 1) {
            let parts_after = self.dim - i - 1;
            // compositions whose i-th count is smaller than c
            for smaller in 0..c {
                index += self.table[parts_after][remaining - smaller];
            }
            remaining -= c;
        }
        index
    }

    /// Integer numerators of the point with the given index.
    pub fn counts(&self, mut index: usize) -> Vec<usize> {
        let mut counts = Vec::with_capacity(self.dim);
        let mut remaining = self.resolution;
        for i in 0..self.dim - 1 {
            let parts_after = self.dim - i - 1;
            let mut c = 0;
            while index >= self.table[parts_after][remaining - c] {
                index -= self.table[parts_after][remaining - c];
                c += 1;
            }
            counts.push(c);
            remaining -= c;
        }
        counts.push(remaining);
        counts
    }

    pub fn point(&self, index: usize) -> Belief {
        let r = self.resolution as f64;
        Belief::from_weights(
            self.counts(index)
                .into_iter()
                .map(|c| c as f64 / r)
                .collect(),
        )
        .expect("grid point has unit mass")
    }

    pub fn points(&self) -> Vec<Belief> {
        (0..self.len).map(|i| self.point(i)).collect()
    }

    /// Index of a grid point closest to `p`.
    ///
    /// Rounds `r * p` down and hands the leftover units to the coordinates
    /// with the largest fractional parts; ties go to the lower coordinate.
    pub fn nearest(&self, p: &[f64]) -> usize {
        let r = self.resolution as f64;
        let mut counts = Vec::with_capacity(self.dim);
        let mut fracs = Vec::with_capacity(self.dim);
        let mut used = 0usize;
        for (i, &v) in p.iter().enumerate() {
            let scaled = (v * r).max(0.0);
            let floor = scaled.floor();
            counts.push(floor as usize);
            used += floor as usize;
            fracs.push((scaled - floor, i));
        }
        if used > self.resolution {
            // only reachable through rounding noise above 1
            let mut excess = used - self.resolution;
            for c in counts.iter_mut().rev() {
                let take = excess.min(*c);
                *c -= take;
                excess -= take;
                if excess == 0 {
                    break;
                }
            }
        } else {
            let leftover = self.resolution - used;
            fracs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, i) in fracs.iter().take(leftover) {
                counts[i] += 1;
            }
        }
        self.rank(&counts)
    }
}
