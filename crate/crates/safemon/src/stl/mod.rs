//! Signal temporal logic: formula AST, parser, and quantitative semantics.
//!
//! Formulas are evaluated over discrete-time [`Trace`]s with inclusive,
//! step-indexed temporal windows. The robustness value is positive iff the
//! formula is satisfied; a robustness of exactly zero counts as violating.

mod parse;

pub use parse::{parse_formula, ParseError};

use crate::trace::Trace;
use serde::{Deserialize, Serialize};

/// Arithmetic expression over the components of a single state vector.
///
/// Comparisons are rewritten by the parser into the canonical margin form
/// `expr > 0`, so a predicate is just an expression whose sign decides
/// satisfaction and whose value is the robustness margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(f64),
    /// `s[i]`: component `i` of the state vector.
    State(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Abs(Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    /// Euclidean distance between the points `(a, b)` and `(c, d)`.
    Dist(Box<Expr>, Box<Expr>, Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Evaluates the expression on one state vector.
    pub fn eval(&self, state: &[f64]) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::State(i) => {
                *state.get(*i).ok_or(EvalError::StateIndexOutOfRange {
                    index: *i,
                    dim: state.len(),
                })?
            }
            Expr::Neg(e) => -e.eval(state)?,
            Expr::Add(a, b) => a.eval(state)? + b.eval(state)?,
            Expr::Sub(a, b) => a.eval(state)? - b.eval(state)?,
            Expr::Mul(a, b) => a.eval(state)? * b.eval(state)?,
            Expr::Div(a, b) => {
                let den = b.eval(state)?;
                if den.abs() < 1e-12 {
                    return Err(EvalError::DivisionByZero);
                }
                a.eval(state)? / den
            }
            Expr::Abs(e) => e.eval(state)?.abs(),
            Expr::Min(a, b) => a.eval(state)?.min(b.eval(state)?),
            Expr::Max(a, b) => a.eval(state)?.max(b.eval(state)?),
            Expr::Dist(ax, ay, bx, by) => {
                let dx = ax.eval(state)? - bx.eval(state)?;
                let dy = ay.eval(state)? - by.eval(state)?;
                dx.hypot(dy)
            }
        };
        Ok(v)
    }

    /// Largest `s[i]` index referenced, if any.
    pub fn max_state_index(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::State(i) => Some(*i),
            Expr::Neg(e) | Expr::Abs(e) => e.max_state_index(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b) => match (a.max_state_index(), b.max_state_index()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
            Expr::Dist(a, b, c, d) => [a, b, c, d]
                .iter()
                .filter_map(|e| e.max_state_index())
                .max(),
        }
    }
}

/// STL formula AST with inclusive integer-interval temporal operators.
///
/// Temporal bounds satisfy `b >= a >= 0`; a degenerate window `b == a`
/// evaluates the sub-formula at a single offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StlFormula {
    /// Signal predicate in margin form: satisfied iff the expression is > 0.
    Atom(Expr),
    Not(Box<StlFormula>),
    And(Box<StlFormula>, Box<StlFormula>),
    Or(Box<StlFormula>, Box<StlFormula>),
    Always(usize, usize, Box<StlFormula>),
    Eventually(usize, usize, Box<StlFormula>),
    Until(usize, usize, Box<StlFormula>, Box<StlFormula>),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("state index {index} out of range for dimension {dim}")]
    StateIndexOutOfRange { index: usize, dim: usize },
    #[error("division by a value smaller than 1e-12 in magnitude")]
    DivisionByZero,
    #[error(
        "formula horizon {horizon} from time {t} exceeds trace length {trace_len}"
    )]
    HorizonOverflow {
        t: usize,
        horizon: usize,
        trace_len: usize,
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

impl StlFormula {
    /// Maximum lookahead (in steps beyond `t`) needed to evaluate the formula.
    pub fn required_horizon(&self) -> usize {
        match self {
            StlFormula::Atom(_) => 0,
            StlFormula::Not(f) => f.required_horizon(),
            StlFormula::And(a, b) | StlFormula::Or(a, b) => {
                a.required_horizon().max(b.required_horizon())
            }
            StlFormula::Always(_, b, f) | StlFormula::Eventually(_, b, f) => {
                b + f.required_horizon()
            }
            StlFormula::Until(_, b, f1, f2) => {
                b + f1.required_horizon().max(f2.required_horizon())
            }
        }
    }
}

/// Quantitative robustness `rho(phi, s, t)`.
///
/// Requires `t + required_horizon(phi) <= T - 1` so every temporal window is
/// fully observed.
pub fn robustness(phi: &StlFormula, trace: &Trace, t: usize) -> Result<f64, EvalError> {
    let horizon = phi.required_horizon();
    if t + horizon > trace.len() - 1 {
        return Err(EvalError::HorizonOverflow {
            t,
            horizon,
            trace_len: trace.len(),
        });
    }
    rob_unchecked(phi, trace, t)
}

fn rob_unchecked(phi: &StlFormula, trace: &Trace, t: usize) -> Result<f64, EvalError> {
    match phi {
        StlFormula::Atom(e) => e.eval(trace.state(t)),
        StlFormula::Not(f) => Ok(-rob_unchecked(f, trace, t)?),
        StlFormula::And(a, b) => {
            Ok(rob_unchecked(a, trace, t)?.min(rob_unchecked(b, trace, t)?))
        }
        StlFormula::Or(a, b) => {
            Ok(rob_unchecked(a, trace, t)?.max(rob_unchecked(b, trace, t)?))
        }
        StlFormula::Always(a, b, f) => {
            let mut m = f64::INFINITY;
            for tp in t + a..=t + b {
                m = m.min(rob_unchecked(f, trace, tp)?);
            }
            Ok(m)
        }
        StlFormula::Eventually(a, b, f) => {
            let mut m = f64::NEG_INFINITY;
            for tp in t + a..=t + b {
                m = m.max(rob_unchecked(f, trace, tp)?);
            }
            Ok(m)
        }
        StlFormula::Until(a, b, f1, f2) => {
            // Running min over rho(f1) on [t, t'] avoids re-scanning the prefix
            // for each candidate t'.
            let mut best = f64::NEG_INFINITY;
            let mut prefix_min = f64::INFINITY;
            for tpp in t..t + a {
                prefix_min = prefix_min.min(rob_unchecked(f1, trace, tpp)?);
            }
            for tp in t + a..=t + b {
                prefix_min = prefix_min.min(rob_unchecked(f1, trace, tp)?);
                let r2 = rob_unchecked(f2, trace, tp)?;
                best = best.max(r2.min(prefix_min));
            }
            Ok(best)
        }
    }
}

/// Boolean satisfaction: `rho > 0` strictly.
pub fn satisfies(phi: &StlFormula, trace: &Trace, t: usize) -> Result<bool, EvalError> {
    Ok(robustness(phi, trace, t)? > 0.0)
}

/// Fast path for the collision-avoidance robustness
/// `min_t min_i d(pos_t, obs_i) - c`.
///
/// Algebraically identical to evaluating the always/conjunction collision
/// formula on the same data.
pub fn collision_robustness(
    positions: &[(f64, f64)],
    obstacles: &[(f64, f64)],
    c: f64,
) -> Result<f64, EvalError> {
    if positions.is_empty() {
        return Err(EvalError::EmptyInput("positions"));
    }
    if obstacles.is_empty() {
        return Err(EvalError::EmptyInput("obstacles"));
    }
    let mut m = f64::INFINITY;
    for &(px, py) in positions {
        for &(ox, oy) in obstacles {
            m = m.min((px - ox).hypot(py - oy) - c);
        }
    }
    Ok(m)
}
