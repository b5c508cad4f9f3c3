use crate::error::LpError;

/// Status of a column or row activity in a basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    Free,
}

impl VarStatus {
    pub fn is_basic(self) -> bool {
        self == VarStatus::Basic
    }
}

/// Basis statuses for every column and every row activity. A row whose
/// activity is nonbasic is tight at the indicated bound.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Basis {
    pub cols: Vec<VarStatus>,
    pub rows: Vec<VarStatus>,
}

impl Basis {
    /// Stable 64-bit fingerprint of the column and row statuses (FNV-1a).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut feed = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        };
        for s in self.cols.iter().chain(std::iter::once(&VarStatus::Free)).chain(self.rows.iter()) {
            feed(match s {
                VarStatus::Basic => 1,
                VarStatus::AtLower => 2,
                VarStatus::AtUpper => 3,
                VarStatus::Free => 4,
            });
        }
        h
    }
}

/// True when the column statuses of `a` and `b`, restricted to `subset`,
/// differ by at most one entering/leaving exchange (or a single bound
/// flip). Columns missing from the shorter basis count as nonbasic at
/// their lower bound.
pub fn adjacent(a: &Basis, b: &Basis, subset: &[usize]) -> Result<bool, LpError> {
    let n = a.cols.len().max(b.cols.len());
    let get = |bs: &Basis, j: usize| bs.cols.get(j).copied().unwrap_or(VarStatus::AtLower);
    let mut entering = 0usize;
    let mut leaving = 0usize;
    let mut flips = 0usize;
    for &j in subset {
        if j >= n {
            return Err(LpError::Incomparable(format!("column {j} is absent from both bases")));
        }
        let (sa, sb) = (get(a, j), get(b, j));
        match (sa.is_basic(), sb.is_basic()) {
            (true, false) => leaving += 1,
            (false, true) => entering += 1,
            (false, false) if sa != sb => flips += 1,
            _ => {}
        }
    }
    Ok((entering <= 1 && leaving <= 1 && flips == 0) || (entering == 0 && leaving == 0 && flips <= 1))
}
