use crate::basis::VarStatus;
use crate::error::LpError;
use crate::problem::LinearProgram;
use crate::simplex::{basis_reduced_costs, SolveResult};

/// Closed interval of the objective parameter; endpoints may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeInterval {
    pub lower: f64,
    pub upper: f64,
}

impl RangeInterval {
    pub fn contains(&self, beta: f64) -> bool {
        self.lower <= beta && beta <= self.upper
    }
}

const ZERO_RATE: f64 = 1e-12;
const BOUNDARY_TOL: f64 = 1e-9;

/// Interval of `beta` over which the basis of `res` stays optimal for the
/// objective `c + beta * dir`. `res` must be an optimal result of `lp` at
/// `lp.beta()`.
pub fn objective_ranging(lp: &LinearProgram, res: &SolveResult, dir: &[f64]) -> Result<RangeInterval, LpError> {
    if !res.is_optimal() {
        return Err(LpError::NotOptimal);
    }
    if dir.len() != lp.num_vars() {
        return Err(LpError::Dimension(format!(
            "direction has {} entries, program has {} columns",
            dir.len(),
            lp.num_vars()
        )));
    }
    let beta0 = lp.beta();
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (status, fixed, d0, dd) in basis_reduced_costs(lp, &res.basis, dir)? {
        if fixed || dd.abs() <= ZERO_RATE {
            continue;
        }
        // sign condition: s * d(beta) <= 0 with s = +1 at lower, -1 at upper
        let conds: &[f64] = match status {
            VarStatus::AtLower => &[1.0],
            VarStatus::AtUpper => &[-1.0],
            VarStatus::Free => &[1.0, -1.0],
            VarStatus::Basic => &[],
        };
        for &s in conds {
            let a = s * d0;
            let b = s * dd;
            // a + t b <= 0, with a clipped into the feasible side
            let a = a.min(0.0);
            let t = -a / b;
            if b > 0.0 {
                hi = hi.min(beta0 + t);
            } else {
                lo = lo.max(beta0 + t);
            }
        }
    }
    if lo > hi {
        if lo - hi <= BOUNDARY_TOL * (1.0 + beta0.abs()) {
            let mid = 0.5 * (lo + hi);
            return Ok(RangeInterval { lower: mid, upper: mid });
        }
        return Err(LpError::Numerical(format!("empty ranging interval [{lo}, {hi}]")));
    }
    Ok(RangeInterval { lower: lo, upper: hi })
}
