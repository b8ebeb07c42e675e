//! Minimum-cost rectangular assignment (Hungarian method with potentials).

/// Marks a pair that must never be matched.
pub const GATED: f64 = f64::INFINITY;

/// Dense row-major cost matrix; rows are tracks, columns are detections.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Panics if rows have different lengths.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost matrix");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn is_gated(&self, row: usize, col: usize) -> bool {
        !self.get(row, col).is_finite()
    }

    pub fn transposed(&self) -> Self {
        let mut t = Self::filled(self.cols, self.rows, 0.0);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    /// `(track index, detection index)`, sorted by track index.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

impl Assignment {
    pub fn total_cost(&self, cost: &CostMatrix) -> f64 {
        self.matches.iter().map(|&(r, c)| cost.get(r, c)).sum()
    }
}

/// Solves the assignment problem over non-gated entries.
///
/// The result has the largest possible number of non-gated matches and, among
/// those, the minimum total cost. Gated pairs are never matched.
pub fn solve_assignment(cost: &CostMatrix) -> Assignment {
    let (rows, cols) = (cost.rows(), cost.cols());
    let mut row_to_col: Vec<Option<usize>> = vec![None; rows];
    if rows > 0 && cols > 0 {
        if rows <= cols {
            for (r, c) in hungarian(cost).into_iter().enumerate() {
                row_to_col[r] = Some(c);
            }
        } else {
            for (c, r) in hungarian(&cost.transposed()).into_iter().enumerate() {
                row_to_col[r] = Some(c);
            }
        }
    }

    let mut assignment = Assignment::default();
    let mut col_used = vec![false; cols];
    for (r, c) in row_to_col.into_iter().enumerate() {
        match c {
            Some(c) if !cost.is_gated(r, c) => {
                assignment.matches.push((r, c));
                col_used[c] = true;
            }
            _ => assignment.unmatched_tracks.push(r),
        }
    }
    assignment.unmatched_detections = (0..cols).filter(|c| !col_used[*c]).collect();
    assignment
}

/// Shortest augmenting path with row/column potentials, O(rows^2 * cols).
/// Requires `rows <= cols`; returns the column assigned to every row.
fn hungarian(cost: &CostMatrix) -> Vec<usize> {
    let (n, m) = (cost.rows(), cost.cols());
    debug_assert!(n <= m);

    // Gated entries get a penalty larger than any difference between feasible
    // matchings, so cardinality of feasible pairs is maximized first.
    let (lo, hi) = cost
        .data
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let penalty = if lo.is_finite() {
        n as f64 * (hi - lo) + hi.abs() + lo.abs() + 1.0
    } else {
        1.0
    };
    let at = |i: usize, j: usize| {
        let v = cost.get(i - 1, j - 1);
        if v.is_finite() {
            v
        } else {
            penalty
        }
    };

    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row matched to column j (1-based, 0 = free).
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = at(i0, j) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut result = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            result[p[j] - 1] = j - 1;
        }
    }
    result
}
