use std::io::{self, Write};

use crate::problem::LinearProgram;

fn num(v: f64) -> String {
    format!("{v:.12e}")
}

/// Writes `lp` in fixed-column MPS format. The objective sense is recorded
/// in an `OBJSENSE MAX` section; the objective uses the current `beta`.
pub fn write_mps<W: Write>(lp: &LinearProgram, name: &str, mut w: W) -> io::Result<()> {
    writeln!(w, "NAME          {name}")?;
    writeln!(w, "OBJSENSE")?;
    writeln!(w, "    MAX")?;
    writeln!(w, "ROWS")?;
    writeln!(w, " N  OBJ")?;
    let mut ranged = Vec::new();
    for (i, r) in lp.rows().iter().enumerate() {
        let kind = match (r.lower().is_finite(), r.upper().is_finite()) {
            (true, true) if r.lower() == r.upper() => "E",
            (true, true) => {
                ranged.push(i);
                "L"
            }
            (false, true) => "L",
            (true, false) => "G",
            (false, false) => "N",
        };
        writeln!(w, " {kind:<2} R{i}")?;
    }
    let n = lp.num_vars();
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, r) in lp.rows().iter().enumerate() {
        for (j, a) in r.entries() {
            by_col[j].push((i, a));
        }
    }
    writeln!(w, "COLUMNS")?;
    for (j, entries) in by_col.iter().enumerate() {
        let c = lp.cost(j);
        if c != 0.0 {
            writeln!(w, "    {:<8}  {:<8}  {:>20}", format!("C{j}"), "OBJ", num(c))?;
        }
        for &(i, a) in entries {
            writeln!(w, "    {:<8}  {:<8}  {:>20}", format!("C{j}"), format!("R{i}"), num(a))?;
        }
    }
    writeln!(w, "RHS")?;
    for (i, r) in lp.rows().iter().enumerate() {
        let rhs = if r.upper().is_finite() { r.upper() } else { r.lower() };
        if rhs.is_finite() && rhs != 0.0 {
            writeln!(w, "    {:<8}  {:<8}  {:>20}", "RHS", format!("R{i}"), num(rhs))?;
        }
    }
    if !ranged.is_empty() {
        writeln!(w, "RANGES")?;
        for i in ranged {
            let r = lp.row(i);
            writeln!(w, "    {:<8}  {:<8}  {:>20}", "RNG", format!("R{i}"), num(r.upper() - r.lower()))?;
        }
    }
    writeln!(w, "BOUNDS")?;
    for j in 0..n {
        let (lo, up) = (lp.col_lower()[j], lp.col_upper()[j]);
        let c = format!("C{j}");
        match (lo.is_finite(), up.is_finite()) {
            (false, false) => writeln!(w, " FR BND       {c:<8}")?,
            _ if lo == up => writeln!(w, " FX BND       {c:<8}  {:>20}", num(lo))?,
            (lo_f, up_f) => {
                if !lo_f {
                    writeln!(w, " MI BND       {c:<8}")?;
                } else if lo != 0.0 {
                    writeln!(w, " LO BND       {c:<8}  {:>20}", num(lo))?;
                }
                if up_f {
                    writeln!(w, " UP BND       {c:<8}  {:>20}", num(up))?;
                }
            }
        }
    }
    writeln!(w, "ENDATA")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Cmp;

    #[test]
    fn writes_sections() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(1.0, 0.0, 4.0).unwrap();
        let y = lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        lp.add_row(vec![(x, 1.0), (y, 2.0)], Cmp::Le, 3.0).unwrap();
        let mut buf = Vec::new();
        write_mps(&lp, "t", &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        for key in ["ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA", " FR BND", " UP BND", " L  R0"] {
            assert!(s.contains(key), "missing {key}");
        }
    }
}
