//! Model containers consumed by the simplex and branch-and-bound engines.

use std::fmt::Write as _;

/// Index of a variable inside a [`LinearProgram`].
pub type VarId = usize;
/// Index of a row inside a [`LinearProgram`].
pub type RowId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    pub coeffs: Vec<(VarId, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

impl Row {
    /// Left-hand side value at `x`.
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates this row (zero when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.sense {
            RowSense::Le => (lhs - self.rhs).max(0.0),
            RowSense::Ge => (self.rhs - lhs).max(0.0),
            RowSense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// A linear program `opt c'x  s.t.  rows, lower <= x <= upper`.
///
/// Bounds may be infinite; a variable with both bounds infinite is free.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    pub vars: Vec<Variable>,
    pub rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            vars: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        objective: f64,
    ) -> VarId {
        self.vars.push(Variable {
            name: name.into(),
            lower,
            upper,
            objective,
        });
        self.vars.len() - 1
    }

    /// Adds a row; duplicate variable entries are merged and zeros dropped.
    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        coeffs: impl IntoIterator<Item = (VarId, f64)>,
        sense: RowSense,
        rhs: f64,
    ) -> RowId {
        let mut merged: Vec<(VarId, f64)> = coeffs.into_iter().collect();
        merged.sort_by_key(|&(j, _)| j);
        let mut out: Vec<(VarId, f64)> = Vec::with_capacity(merged.len());
        for (j, a) in merged {
            debug_assert!(
                j < self.vars.len(),
                "row references undeclared variable {j}"
            );
            match out.last_mut() {
                Some(last) if last.0 == j => last.1 += a,
                _ => out.push((j, a)),
            }
        }
        out.retain(|&(_, a)| a != 0.0);
        self.rows.push(Row {
            name: name.into(),
            coeffs: out,
            sense,
            rhs,
        });
        self.rows.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.vars
            .iter()
            .zip(x)
            .map(|(v, &xi)| v.objective * xi)
            .sum()
    }

    /// Largest row or bound violation at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(x));
        let bounds = self
            .vars
            .iter()
            .zip(x)
            .map(|(v, &xi)| (v.lower - xi).max(xi - v.upper).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }

    /// Renders the model in the CPLEX-style LP text format.
    pub fn to_lp_format(&self, integer: Option<&[bool]>) -> String {
        let mut out = String::new();
        let names: Vec<String> = self
            .vars
            .iter()
            .enumerate()
            .map(|(j, v)| lp_name(&v.name, 'x', j))
            .collect();
        out.push_str(match self.sense {
            Sense::Minimize => "Minimize\n",
            Sense::Maximize => "Maximize\n",
        });
        out.push_str(" obj:");
        let obj: Vec<(VarId, f64)> = self
            .vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.objective != 0.0)
            .map(|(j, v)| (j, v.objective))
            .collect();
        write_terms(&mut out, &obj, &names);
        out.push_str("\nSubject To\n");
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(out, " {}:", lp_name(&row.name, 'c', i));
            write_terms(&mut out, &row.coeffs, &names);
            let op = match row.sense {
                RowSense::Le => "<=",
                RowSense::Ge => ">=",
                RowSense::Eq => "=",
            };
            let _ = writeln!(out, " {op} {}", fmt_num(row.rhs));
        }
        out.push_str("Bounds\n");
        for (j, v) in self.vars.iter().enumerate() {
            let name = &names[j];
            match (v.lower.is_finite(), v.upper.is_finite()) {
                (false, false) => {
                    let _ = writeln!(out, " {name} free");
                }
                (true, true) if v.lower == v.upper => {
                    let _ = writeln!(out, " {name} = {}", fmt_num(v.lower));
                }
                (true, true) => {
                    let _ = writeln!(
                        out,
                        " {} <= {name} <= {}",
                        fmt_num(v.lower),
                        fmt_num(v.upper)
                    );
                }
                (true, false) => {
                    let _ = writeln!(out, " {name} >= {}", fmt_num(v.lower));
                }
                (false, true) => {
                    let _ = writeln!(out, " -inf <= {name} <= {}", fmt_num(v.upper));
                }
            }
        }
        if let Some(flags) = integer {
            let ints: Vec<&String> = names
                .iter()
                .zip(flags)
                .filter(|(_, &f)| f)
                .map(|(n, _)| n)
                .collect();
            if !ints.is_empty() {
                out.push_str("General\n");
                for n in ints {
                    let _ = writeln!(out, " {n}");
                }
            }
        }
        out.push_str("End\n");
        out
    }
}

fn lp_name(name: &str, prefix: char, idx: usize) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "_.[]".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    if cleaned.is_empty() || cleaned.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        format!("{prefix}{idx}{cleaned}")
    } else {
        cleaned
    }
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn write_terms(out: &mut String, terms: &[(VarId, f64)], names: &[String]) {
    if terms.is_empty() {
        out.push_str(" 0");
        return;
    }
    for (k, &(j, a)) in terms.iter().enumerate() {
        let sign = if a < 0.0 { '-' } else { '+' };
        if k == 0 && a >= 0.0 {
            out.push(' ');
        } else {
            let _ = write!(out, " {sign} ");
        }
        let mag = a.abs();
        if mag != 1.0 {
            let _ = write!(out, "{} ", fmt_num(mag));
        }
        out.push_str(&names[j]);
    }
}

/// A linear program with integrality flags.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedIntegerProgram {
    pub lp: LinearProgram,
    pub integer: Vec<bool>,
}

impl MixedIntegerProgram {
    pub fn new(sense: Sense) -> Self {
        Self {
            lp: LinearProgram::new(sense),
            integer: Vec::new(),
        }
    }

    pub fn add_continuous(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        objective: f64,
    ) -> VarId {
        self.integer.push(false);
        self.lp.add_var(name, lower, upper, objective)
    }

    pub fn add_binary(&mut self, name: impl Into<String>, objective: f64) -> VarId {
        self.integer.push(true);
        self.lp.add_var(name, 0.0, 1.0, objective)
    }

    pub fn add_integer(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        objective: f64,
    ) -> VarId {
        self.integer.push(true);
        self.lp.add_var(name, lower, upper, objective)
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        coeffs: impl IntoIterator<Item = (VarId, f64)>,
        sense: RowSense,
        rhs: f64,
    ) -> RowId {
        self.lp.add_row(name, coeffs, sense, rhs)
    }

    pub fn num_integer(&self) -> usize {
        self.integer.iter().filter(|&&f| f).count()
    }

    pub fn to_lp_format(&self) -> String {
        self.lp.to_lp_format(Some(&self.integer))
    }
}
