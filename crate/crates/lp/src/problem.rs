use crate::error::LpError;

/// Sense of a linear constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

/// A sparse constraint row `lower <= a.x <= upper` with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    cols: Vec<usize>,
    vals: Vec<f64>,
    lower: f64,
    upper: f64,
}

impl Row {
    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn vals(&self) -> &[f64] {
        &self.vals
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.cols.iter().copied().zip(self.vals.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    /// Coefficient of column `j` (zero when absent).
    pub fn coeff(&self, j: usize) -> f64 {
        match self.cols.binary_search(&j) {
            Ok(p) => self.vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (j, a) in self.entries() {
            s += a * x[j];
        }
        s
    }
}

/// Row description used by [`LinearProgram::add_rows`].
#[derive(Debug, Clone, PartialEq)]
pub struct RowSpec {
    pub entries: Vec<(usize, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

impl RowSpec {
    pub fn new(entries: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) -> Self {
        Self { entries, cmp, rhs }
    }
}

/// Column description used by [`LinearProgram::add_columns`]. `entries`
/// refer to existing rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub obj: f64,
    pub direction: f64,
    pub lower: f64,
    pub upper: f64,
    pub entries: Vec<(usize, f64)>,
}

/// Maximize `(c + beta * dc) . x` subject to row and column bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    obj: Vec<f64>,
    dir: Vec<f64>,
    beta: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<Row>,
}

fn check_bounds(lower: f64, upper: f64, what: &str) -> Result<(), LpError> {
    if lower.is_nan() || upper.is_nan() || lower > upper || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
        return Err(LpError::Bounds(format!("{what}: [{lower}, {upper}]")));
    }
    Ok(())
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.obj.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_beta(&mut self, beta: f64) {
        self.beta = beta;
    }

    /// Effective objective coefficient `c_j + beta * dc_j`.
    pub fn cost(&self, j: usize) -> f64 {
        if self.dir[j] == 0.0 {
            self.obj[j]
        } else {
            self.obj[j] + self.beta * self.dir[j]
        }
    }

    pub fn base_objective(&self) -> &[f64] {
        &self.obj
    }

    pub fn direction(&self) -> &[f64] {
        &self.dir
    }

    pub fn col_lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn col_upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Row {
        &self.rows[i]
    }

    /// Adds a variable without constraint entries and returns its index.
    pub fn add_var(&mut self, obj: f64, lower: f64, upper: f64) -> Result<usize, LpError> {
        if !obj.is_finite() {
            return Err(LpError::NonFinite(format!("objective of column {}", self.obj.len())));
        }
        check_bounds(lower, upper, "column")?;
        self.obj.push(obj);
        self.dir.push(0.0);
        self.lower.push(lower);
        self.upper.push(upper);
        Ok(self.obj.len() - 1)
    }

    pub fn set_objective(&mut self, j: usize, obj: f64) -> Result<(), LpError> {
        if j >= self.obj.len() {
            return Err(LpError::Dimension(format!("column {j} out of range")));
        }
        if !obj.is_finite() {
            return Err(LpError::NonFinite(format!("objective of column {j}")));
        }
        self.obj[j] = obj;
        Ok(())
    }

    /// Sets the parametric direction entry `dc_j`.
    pub fn set_direction(&mut self, j: usize, d: f64) -> Result<(), LpError> {
        if j >= self.dir.len() {
            return Err(LpError::Dimension(format!("column {j} out of range")));
        }
        if !d.is_finite() {
            return Err(LpError::NonFinite(format!("direction of column {j}")));
        }
        self.dir[j] = d;
        Ok(())
    }

    pub fn set_col_bounds(&mut self, j: usize, lower: f64, upper: f64) -> Result<(), LpError> {
        if j >= self.obj.len() {
            return Err(LpError::Dimension(format!("column {j} out of range")));
        }
        check_bounds(lower, upper, "column")?;
        self.lower[j] = lower;
        self.upper[j] = upper;
        Ok(())
    }

    pub fn set_row_bounds(&mut self, i: usize, lower: f64, upper: f64) -> Result<(), LpError> {
        if i >= self.rows.len() {
            return Err(LpError::Dimension(format!("row {i} out of range")));
        }
        check_bounds(lower, upper, "row")?;
        self.rows[i].lower = lower;
        self.rows[i].upper = upper;
        Ok(())
    }

    fn make_row(&self, entries: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) -> Result<Row, LpError> {
        if !rhs.is_finite() {
            return Err(LpError::NonFinite(format!("right-hand side of row {}", self.rows.len())));
        }
        let mut entries = entries;
        for &(j, a) in &entries {
            if j >= self.obj.len() {
                return Err(LpError::Dimension(format!(
                    "row references column {j} but the program has {} columns",
                    self.obj.len()
                )));
            }
            if !a.is_finite() {
                return Err(LpError::NonFinite(format!("coefficient of column {j}")));
            }
        }
        entries.sort_by_key(|e| e.0);
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(entries.len());
        for (j, a) in entries {
            if cols.last() == Some(&j) {
                *vals.last_mut().unwrap() += a;
            } else {
                cols.push(j);
                vals.push(a);
            }
        }
        let mut k = 0;
        for p in 0..cols.len() {
            if vals[p] != 0.0 {
                cols[k] = cols[p];
                vals[k] = vals[p];
                k += 1;
            }
        }
        cols.truncate(k);
        vals.truncate(k);
        let (lower, upper) = match cmp {
            Cmp::Le => (f64::NEG_INFINITY, rhs),
            Cmp::Ge => (rhs, f64::INFINITY),
            Cmp::Eq => (rhs, rhs),
        };
        Ok(Row { cols, vals, lower, upper })
    }

    /// Adds one constraint. Duplicate column entries are summed.
    pub fn add_row(&mut self, entries: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) -> Result<usize, LpError> {
        let row = self.make_row(entries, cmp, rhs)?;
        self.rows.push(row);
        Ok(self.rows.len() - 1)
    }

    /// Adds several constraints atomically: on error nothing is added.
    pub fn add_rows(&mut self, rows: Vec<RowSpec>) -> Result<std::ops::Range<usize>, LpError> {
        let start = self.rows.len();
        let mut built = Vec::with_capacity(rows.len());
        for r in rows {
            built.push(self.make_row(r.entries, r.cmp, r.rhs)?);
        }
        self.rows.extend(built);
        Ok(start..self.rows.len())
    }

    /// Adds several columns atomically, inserting their entries into
    /// existing rows.
    pub fn add_columns(&mut self, cols: Vec<ColumnSpec>) -> Result<std::ops::Range<usize>, LpError> {
        for (c, spec) in cols.iter().enumerate() {
            if !spec.obj.is_finite() || !spec.direction.is_finite() {
                return Err(LpError::NonFinite(format!("objective of new column {c}")));
            }
            check_bounds(spec.lower, spec.upper, "column")?;
            for &(i, a) in &spec.entries {
                if i >= self.rows.len() {
                    return Err(LpError::Dimension(format!(
                        "column references row {i} but the program has {} rows",
                        self.rows.len()
                    )));
                }
                if !a.is_finite() {
                    return Err(LpError::NonFinite(format!("coefficient in row {i}")));
                }
            }
        }
        let start = self.obj.len();
        for spec in cols {
            let j = self.obj.len();
            self.obj.push(spec.obj);
            self.dir.push(spec.direction);
            self.lower.push(spec.lower);
            self.upper.push(spec.upper);
            let mut entries = spec.entries;
            entries.sort_by_key(|e| e.0);
            let mut p = 0;
            while p < entries.len() {
                let i = entries[p].0;
                let mut a = 0.0;
                while p < entries.len() && entries[p].0 == i {
                    a += entries[p].1;
                    p += 1;
                }
                if a != 0.0 {
                    self.rows[i].cols.push(j);
                    self.rows[i].vals.push(a);
                }
            }
        }
        Ok(start..self.obj.len())
    }

    /// Objective value of `x` at the current `beta`.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        (0..self.obj.len()).map(|j| self.cost(j) * x[j]).sum()
    }

    /// Largest bound violation of `x` over columns and rows.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for j in 0..self.obj.len() {
            v = v.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        for r in &self.rows {
            let a = r.dot(x);
            v = v.max(r.lower - a).max(a - r.upper);
        }
        v
    }
}
