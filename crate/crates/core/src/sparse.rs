//! Compressed sparse row matrices assembled from triplets.

use std::io::Write;

#[derive(Clone, Debug, Default)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Triplets {
        Triplets {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    /// Adds `v` at (i, j) and, off the diagonal, at (j, i).
    #[inline]
    pub fn push_sym(&mut self, i: usize, j: usize, v: f64) {
        self.push(i, j, v);
        if i != j {
            self.push(j, i, v);
        }
    }

    pub fn to_csr(&self) -> Csr {
        Csr::from_triplets(self.nrows, self.ncols, &self.entries)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds the matrix, summing duplicates in input order so the result is
    /// bitwise reproducible for a fixed triplet sequence.
    pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> Csr {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, _, _) in entries {
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        // bucket by row, keeping input order within each row
        let mut next = counts.clone();
        let mut bucket = vec![(0usize, 0.0f64); entries.len()];
        for &(i, j, v) in entries {
            bucket[next[i]] = (j, v);
            next[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        row_ptr.push(0);
        for i in 0..nrows {
            let row = &mut bucket[counts[i]..counts[i + 1]];
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut s = 0.0;
                while k < row.len() && row[k].0 == j {
                    s += row[k].1;
                    k += 1;
                }
                col_idx.push(j);
                values.push(s);
            }
            row_ptr.push(col_idx.len());
        }
        Csr {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, v)| v * x[j]).sum();
        }
    }

    pub fn transpose(&self) -> Csr {
        let mut entries = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                entries.push((j, i, v));
            }
        }
        Csr::from_triplets(self.ncols, self.nrows, &entries)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest |a_ij - a_ji| relative to the largest entry.
    pub fn symmetry_defect(&self) -> f64 {
        let t = self.transpose();
        let mut worst: f64 = 0.0;
        for (i, j, v) in self.triplets() {
            worst = worst.max((v - t.get(i, j)).abs());
        }
        for (i, j, v) in t.triplets() {
            worst = worst.max((v - self.get(i, j)).abs());
        }
        worst / self.max_abs().max(f64::MIN_POSITIVE)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Sub-matrix with the given rows and columns (index lists).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Csr {
        let mut cmap = vec![usize::MAX; self.ncols];
        for (k, &j) in cols.iter().enumerate() {
            cmap[j] = k;
        }
        let mut entries = Vec::new();
        for (r, &i) in rows.iter().enumerate() {
            let (cs, vs) = self.row(i);
            for (&j, &v) in cs.iter().zip(vs) {
                if cmap[j] != usize::MAX {
                    entries.push((r, cmap[j], v));
                }
            }
        }
        Csr::from_triplets(rows.len(), cols.len(), &entries)
    }

    /// Writes `nrows ncols nnz` followed by one `row col value` line per
    /// stored entry (zero-based, 17 significant digits).
    pub fn write_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "% sparse triplets: first line nrows ncols nnz, then zero-based row col value"
        )?;
        writeln!(out, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(out, "{i} {j} {v:.16e}")?;
        }
        Ok(())
    }
}
