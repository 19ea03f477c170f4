//! Arithmetic expressions used by quantitative rules.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::same_name;
use crate::teach::lexer::format_ident;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "-")]
    Sub,
    #[serde(rename = "*")]
    Mul,
    #[serde(rename = "/")]
    Div,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }
}

/// Expression tree. Variables name numeric features of the owning frame;
/// constants name entries of the knowledge base's constant table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expression {
    Number(f64),
    Constant(String),
    Variable(String),
    Binary { op: BinOp, lhs: Box<Expression>, rhs: Box<Expression> },
}

impl Expression {
    pub fn var(name: impl Into<String>) -> Self {
        Expression::Variable(name.into())
    }

    pub fn constant(name: impl Into<String>) -> Self {
        Expression::Constant(name.into())
    }

    pub fn binary(op: BinOp, lhs: Expression, rhs: Expression) -> Self {
        Expression::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    pub fn product(lhs: Expression, rhs: Expression) -> Self {
        Expression::binary(BinOp::Mul, lhs, rhs)
    }

    pub fn quotient(lhs: Expression, rhs: Expression) -> Self {
        Expression::binary(BinOp::Div, lhs, rhs)
    }

    /// Variable names in left-to-right order, without duplicates.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        self.walk(&mut |e| {
            if let Expression::Variable(v) = e {
                if !out.iter().any(|o| same_name(o, v)) {
                    out.push(v.clone());
                }
            }
        });
        out
    }

    /// Named constants referenced by the expression.
    pub fn constants(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let Expression::Constant(c) = e {
                if !out.contains(c) {
                    out.push(c.clone());
                }
            }
        });
        out
    }

    fn walk(&self, visit: &mut impl FnMut(&Expression)) {
        visit(self);
        if let Expression::Binary { lhs, rhs, .. } = self {
            lhs.walk(visit);
            rhs.walk(visit);
        }
    }

    /// Rewrites every variable for which `is_constant` holds into a named
    /// constant.
    pub fn resolve_constants(&self, is_constant: &impl Fn(&str) -> bool) -> Expression {
        match self {
            Expression::Variable(v) if is_constant(v) => Expression::Constant(v.clone()),
            Expression::Binary { op, lhs, rhs } => Expression::binary(
                *op,
                lhs.resolve_constants(is_constant),
                rhs.resolve_constants(is_constant),
            ),
            other => other.clone(),
        }
    }

    /// Structural equality with names compared by lookup key.
    pub fn same_as(&self, other: &Expression) -> bool {
        match (self, other) {
            (Expression::Number(a), Expression::Number(b)) => a == b,
            (Expression::Constant(a), Expression::Constant(b)) => a == b,
            (Expression::Variable(a), Expression::Variable(b)) => same_name(a, b),
            (
                Expression::Binary { op: o1, lhs: l1, rhs: r1 },
                Expression::Binary { op: o2, lhs: l2, rhs: r2 },
            ) => o1 == o2 && l1.same_as(l2) && r1.same_as(r2),
            _ => false,
        }
    }

    /// Divisors not covered by a `nonzero` guard.
    ///
    /// A divisor is covered when it is a non-zero literal, a constant for
    /// which `nonzero_constant` holds, an expression equal to one of
    /// `guarded`, or a product/quotient of covered factors.
    pub fn unguarded_divisors(
        &self,
        guarded: &[&Expression],
        nonzero_constant: &impl Fn(&str) -> bool,
    ) -> Vec<Expression> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let Expression::Binary { op: BinOp::Div, rhs, .. } = e {
                if !rhs.is_covered(guarded, nonzero_constant) {
                    out.push((**rhs).clone());
                }
            }
        });
        out
    }

    fn is_covered(&self, guarded: &[&Expression], nonzero_constant: &impl Fn(&str) -> bool) -> bool {
        if guarded.iter().any(|g| g.same_as(self)) {
            return true;
        }
        match self {
            Expression::Number(x) => *x != 0.0,
            Expression::Constant(c) => nonzero_constant(c),
            Expression::Variable(_) => false,
            Expression::Binary { op: BinOp::Mul | BinOp::Div, lhs, rhs } => {
                lhs.is_covered(guarded, nonzero_constant) && rhs.is_covered(guarded, nonzero_constant)
            }
            Expression::Binary { .. } => false,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
        match self {
            Expression::Number(x) if *x < 0.0 || (*x == 0.0 && x.is_sign_negative()) => {
                write!(f, "({x})")
            }
            Expression::Number(x) => write!(f, "{x}"),
            Expression::Constant(name) | Expression::Variable(name) => {
                f.write_str(&format_ident(name))
            }
            Expression::Binary { op, lhs, rhs } => {
                let prec = op.precedence();
                let wrap = prec < parent;
                if wrap {
                    f.write_str("(")?;
                }
                lhs.fmt_prec(f, prec)?;
                write!(f, " {} ", op.symbol())?;
                // Operators associate to the left, so an equal-precedence
                // right operand needs parentheses.
                rhs.fmt_prec(f, prec + 1)?;
                if wrap {
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}
