//! Dense two-phase simplex with Bland's rule. Sized for desk-scale problems
//! (tens of variables and constraints).

use crate::error::{Error, Result};

const EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub cmp: Cmp,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>, cmp: Cmp, rhs: f64) -> Self {
        Constraint { coeffs, cmp, rhs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub objective: f64,
    pub x: Vec<f64>,
}

struct Tableau {
    /// rows x (cols + 1); last column is the right-hand side.
    a: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.a[r][c];
        for v in self.a[r].iter_mut() {
            *v /= p;
        }
        let row = self.a[r].clone();
        for (i, other) in self.a.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = other[c];
            if f != 0.0 {
                for (v, &rv) in other.iter_mut().zip(&row) {
                    *v -= f * rv;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Maximizes `obj . x` over the current basis using only columns with
    /// `allowed[c]`. Returns false when unbounded.
    fn optimize(&mut self, obj: &[f64], allowed: &[bool]) -> bool {
        loop {
            // Reduced costs: obj_c - sum_r obj_{basis r} a[r][c].
            let reduced = |t: &Tableau, c: usize| -> f64 {
                obj[c]
                    - t.basis
                        .iter()
                        .enumerate()
                        .map(|(r, &b)| obj[b] * t.a[r][c])
                        .sum::<f64>()
            };
            let Some(enter) = (0..self.cols)
                .find(|&c| allowed[c] && !self.basis.contains(&c) && reduced(self, c) > EPS)
            else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.a.len() {
                let coef = self.a[r][enter];
                if coef > EPS {
                    let ratio = self.a[r][self.cols] / coef;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - EPS
                                || (ratio <= lratio + EPS && self.basis[r] < self.basis[lr])
                            {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    }
                }
            }
            match leave {
                None => return false,
                Some((r, _)) => self.pivot(r, enter),
            }
        }
    }
}

/// Maximizes `c . x` subject to `constraints` and `x >= 0`.
pub fn maximize(c: &[f64], constraints: &[Constraint]) -> Result<LpSolution> {
    let n = c.len();
    if constraints.iter().any(|k| k.coeffs.len() != n) {
        return Err(Error::Lp("constraint width does not match objective"));
    }
    // Normalize to non-negative right-hand sides.
    let rows: Vec<(Vec<f64>, Cmp, f64)> = constraints
        .iter()
        .map(|k| {
            if k.rhs < 0.0 {
                let flipped = match k.cmp {
                    Cmp::Le => Cmp::Ge,
                    Cmp::Ge => Cmp::Le,
                    Cmp::Eq => Cmp::Eq,
                };
                (k.coeffs.iter().map(|v| -v).collect(), flipped, -k.rhs)
            } else {
                (k.coeffs.clone(), k.cmp, k.rhs)
            }
        })
        .collect();
    let m = rows.len();
    let slacks = rows.iter().filter(|r| r.1 != Cmp::Eq).count();
    let artificials = rows.iter().filter(|r| r.1 != Cmp::Le).count();
    let cols = n + slacks + artificials;
    let art_start = n + slacks;

    let mut t = Tableau {
        a: vec![vec![0.0; cols + 1]; m],
        basis: vec![0; m],
        cols,
    };
    let (mut s, mut art) = (n, art_start);
    for (i, (coeffs, cmp, rhs)) in rows.iter().enumerate() {
        t.a[i][..n].copy_from_slice(coeffs);
        t.a[i][cols] = *rhs;
        match cmp {
            Cmp::Le => {
                t.a[i][s] = 1.0;
                t.basis[i] = s;
                s += 1;
            }
            Cmp::Ge => {
                t.a[i][s] = -1.0;
                s += 1;
                t.a[i][art] = 1.0;
                t.basis[i] = art;
                art += 1;
            }
            Cmp::Eq => {
                t.a[i][art] = 1.0;
                t.basis[i] = art;
                art += 1;
            }
        }
    }

    if artificials > 0 {
        let mut phase1 = vec![0.0; cols];
        for v in phase1.iter_mut().skip(art_start) {
            *v = -1.0;
        }
        t.optimize(&phase1, &vec![true; cols]);
        let infeas: f64 = (0..m)
            .filter(|&r| t.basis[r] >= art_start)
            .map(|r| t.a[r][cols])
            .sum();
        if infeas > 1e-8 {
            return Err(Error::Lp("infeasible"));
        }
        // Drive artificial variables out of the basis; drop redundant rows.
        let mut r = 0;
        while r < t.a.len() {
            if t.basis[r] >= art_start {
                match (0..art_start).find(|&c| t.a[r][c].abs() > EPS && !t.basis.contains(&c)) {
                    Some(c) => t.pivot(r, c),
                    None => {
                        t.a.remove(r);
                        t.basis.remove(r);
                        continue;
                    }
                }
            }
            r += 1;
        }
    }

    let mut obj = vec![0.0; cols];
    obj[..n].copy_from_slice(c);
    let allowed: Vec<bool> = (0..cols).map(|c| c < art_start).collect();
    if !t.optimize(&obj, &allowed) {
        return Err(Error::Lp("unbounded"));
    }
    let mut x = vec![0.0; n];
    for (r, &b) in t.basis.iter().enumerate() {
        if b < n {
            x[b] = t.a[r][cols].max(0.0);
        }
    }
    let objective = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok(LpSolution { objective, x })
}
