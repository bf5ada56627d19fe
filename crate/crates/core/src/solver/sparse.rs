use std::io::Write;

use rayon::prelude::*;

/// Rows per rayon task in the matrix-vector product.
const PAR_CHUNK: usize = 2048;

/// Square compressed-sparse-row matrix meant to hold symmetric positive
/// (semi)definite systems. Columns are sorted within each row and
/// duplicates are merged.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSpd {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSpd {
    /// Sums duplicate entries in input order, so the result is deterministic.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(r, c, _) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            counts[r + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut bucket = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            bucket[next[r]] = (c, v);
            next[r] += 1;
        }
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(triplets.len() / 2);
        let mut values = Vec::with_capacity(triplets.len() / 2);
        row_offsets.push(0);
        for r in 0..n {
            let row = &mut bucket[counts[r]..counts[r + 1]];
            row.sort_by_key(|&(c, _)| c);
            let mut last = usize::MAX;
            for &(c, v) in row.iter() {
                if c == last {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_indices.push(c);
                    values.push(v);
                    last = c;
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            n,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// From a dense row-major matrix, keeping nonzeros.
    pub fn from_dense(n: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), n * n);
        let triplets: Vec<_> = (0..n * n)
            .filter(|&i| dense[i] != 0.0)
            .map(|i| (i / n, i % n, dense[i]))
            .collect();
        Self::from_triplets(n, &triplets)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        (&self.col_indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |k| vals[k])
    }

    /// Diagonal entries, zero where none is stored.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`. Each row is summed sequentially, so the result does not
    /// depend on the thread count.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        let row_dot = |r: usize| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum::<f64>()
        };
        if self.n >= 2 * PAR_CHUNK {
            y.par_chunks_mut(PAR_CHUNK)
                .enumerate()
                .for_each(|(chunk, ys)| {
                    for (k, yi) in ys.iter_mut().enumerate() {
                        *yi = row_dot(chunk * PAR_CHUNK + k);
                    }
                });
        } else {
            for (r, yi) in y.iter_mut().enumerate() {
                *yi = row_dot(r);
            }
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A - Aᵀ| / max |A|`.
    pub fn symmetry_error(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst / scale
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// Dense row-major copy, for small oracle checks.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.n];
        for (r, c, v) in self.triplets() {
            d[r * self.n + c] = v;
        }
        d
    }

    pub fn write_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (r, c, v) in self.triplets() {
            writeln!(out, "{r} {c} {v:.17e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_and_sorted() {
        let a = SparseSpd::from_triplets(
            2,
            &[(0, 1, 1.0), (0, 0, 2.0), (0, 1, 0.5), (1, 1, 3.0), (1, 0, 1.5)],
        );
        assert_eq!(a.row(0), (&[0usize, 1][..], &[2.0, 1.5][..]));
        assert_eq!(a.nnz(), 4);
        assert_eq!(a.symmetry_error(), 0.0);
        assert_eq!(a.mul(&[1.0, 2.0]), vec![5.0, 7.5]);
    }

    #[test]
    fn missing_diagonal_reads_zero() {
        let a = SparseSpd::from_triplets(3, &[(0, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]);
        assert_eq!(a.diagonal(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn parallel_matvec_matches_serial() {
        let n = 10_000;
        let triplets: Vec<_> = (0..n)
            .flat_map(|i| {
                let mut t = vec![(i, i, 4.0 + (i % 7) as f64)];
                if i + 1 < n {
                    t.push((i, i + 1, -1.0 / (1 + i % 3) as f64));
                    t.push((i + 1, i, -1.0 / (1 + i % 3) as f64));
                }
                t
            })
            .collect();
        let a = SparseSpd::from_triplets(n, &triplets);
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = a.mul(&x);
        for r in 0..n {
            let (cols, vals) = a.row(r);
            let expect: f64 = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
            assert_eq!(y[r], expect);
        }
    }
}
