use super::tensor::Tensor;

/// Row-major sparse matrix; each row is sorted by column.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_cols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    /// Sorts each row by column. Duplicate columns are summed.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let rows = rows
            .into_iter()
            .map(|mut row| {
                row.sort_by_key(|&(c, _)| c);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
                for (c, v) in row {
                    assert!(c < n_cols, "column {c} out of range {n_cols}");
                    match merged.last_mut() {
                        Some((last, acc)) if *last == c => *acc += v,
                        _ => merged.push((c, v)),
                    }
                }
                merged
            })
            .collect();
        SparseMatrix { n_cols, rows }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseMatrix {
            n_cols,
            rows: vec![Vec::new(); n_rows],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.rows[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let row = &self.rows[r];
        row.binary_search_by_key(&c, |&(col, _)| col)
            .map_or(0.0, |i| row[i].1)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.rows[r].iter().map(|(_, v)| v).sum()
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.n_rows(), self.n_cols);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                t.set(r, c, v);
            }
        }
        t
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, v)| (r, c, v)))
    }
}
