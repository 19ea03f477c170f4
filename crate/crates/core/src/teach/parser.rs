//! Recursive-descent parser for teaching statements, and the matching
//! pretty-printer (`Display` on [`Command`]).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::lexer::{format_ident, tokenize, Token, TokenKind};
use crate::expr::{BinOp, Expression};
use crate::model::{Binding, Value};

/// Position and expectation of a syntax error.
#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("line {line}, column {column}: expected {} but found {found}", .expected.join(" or "))]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub expected: Vec<String>,
    pub found: String,
}

/// Domain of a declared adjective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AdjectiveDomain {
    Categorical { values: Vec<String> },
    Ordered { values: Vec<String> },
    Numeric { unit: String, bounds: Option<(f64, f64)> },
}

/// One conjunct of a rule clause or guard list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "item", rename_all = "lowercase")]
pub enum ClauseItem {
    /// `feature = value` in a categorical rule, `target = formula` in a
    /// quantitative one.
    Assign { feature: String, value: Expression },
    Given { features: Vec<String> },
    NonZero { expr: Expression },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    DeclareNoun {
        name: String,
        under: Option<String>,
    },
    DeclareVerb {
        name: String,
        source: String,
        target: String,
        inputs: Vec<String>,
        outputs: Vec<String>,
        externals: Vec<String>,
    },
    DeclareAdjective {
        name: String,
        domain: AdjectiveDomain,
    },
    DeclareRule {
        frame: String,
        lhs: Vec<ClauseItem>,
        reciprocal: bool,
        rhs: Vec<ClauseItem>,
        guards: Vec<ClauseItem>,
    },
    StateFact {
        feature: String,
        value: Value,
    },
    Ask {
        goal: String,
        given: Vec<Binding>,
    },
    Confirm {
        yes: bool,
    },
}

/// A parsed command with the position of its first token.
#[derive(Clone, Debug, PartialEq)]
pub struct Statement {
    pub command: Command,
    pub line: usize,
    pub column: usize,
}

/// Parses one statement.
pub fn parse_statement(text: &str) -> Result<Statement, ParseError> {
    parse_statement_at(text, 1)
}

/// Parses one statement whose first line is numbered `line`.
pub fn parse_statement_at(text: &str, line: usize) -> Result<Statement, ParseError> {
    let tokens = tokenize(text, line).map_err(|e| ParseError {
        line: e.line,
        column: e.column,
        expected: e.expected,
        found: e.found,
    })?;
    let mut p = Parser { tokens, pos: 0 };
    let first = p.peek().clone();
    let command = p.statement()?;
    p.expect_eof()?;
    Ok(Statement { command, line: first.line, column: first.column })
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

const IDENT: &str = "identifier";

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, offset: usize) -> &TokenKind {
        &self.tokens[(self.pos + offset).min(self.tokens.len() - 1)].kind
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        let t = self.peek();
        ParseError {
            line: t.line,
            column: t.column,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: match &t.kind {
                TokenKind::Eof => "end of input".into(),
                other => format!("'{other}'"),
            },
        }
    }

    fn is_word(&self, word: &str) -> bool {
        matches!(&self.peek().kind, TokenKind::Word(w) if w == word)
    }

    fn eat_word(&mut self, word: &str) -> bool {
        if self.is_word(word) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, word: &str) -> PResult<()> {
        if self.eat_word(word) {
            Ok(())
        } else {
            Err(self.error(&[&format!("'{word}'")]))
        }
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if &self.peek().kind == kind {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: &TokenKind) -> PResult<()> {
        if self.eat(kind) {
            Ok(())
        } else {
            Err(self.error(&[&format!("'{kind}'")]))
        }
    }

    fn expect_eof(&self) -> PResult<()> {
        if self.peek().kind == TokenKind::Eof {
            Ok(())
        } else {
            Err(self.error(&["end of statement"]))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match &self.peek().kind {
            TokenKind::Word(w) => {
                let w = w.clone();
                self.advance();
                Ok(w)
            }
            TokenKind::Quoted(s) if !s.trim().is_empty() => {
                let s = s.clone();
                self.advance();
                Ok(s)
            }
            _ => Err(self.error(&[IDENT])),
        }
    }

    fn idlist(&mut self) -> PResult<Vec<String>> {
        let mut out = vec![self.ident()?];
        while self.eat(&TokenKind::Comma) {
            out.push(self.ident()?);
        }
        Ok(out)
    }

    fn paren_idlist(&mut self) -> PResult<Vec<String>> {
        self.expect(&TokenKind::LParen)?;
        let list = self.idlist()?;
        self.expect(&TokenKind::RParen)?;
        Ok(list)
    }

    fn number(&mut self) -> PResult<f64> {
        let negative = self.eat(&TokenKind::Minus);
        match self.peek().kind {
            TokenKind::Number(x) => {
                self.advance();
                Ok(if negative { -x } else { x })
            }
            _ => Err(self.error(&["number"])),
        }
    }

    fn value(&mut self) -> PResult<Value> {
        match &self.peek().kind {
            TokenKind::Number(_) | TokenKind::Minus => Ok(Value::Number(self.number()?)),
            TokenKind::Word(_) | TokenKind::Quoted(_) => Ok(Value::Label(self.ident()?)),
            _ => Err(self.error(&[IDENT, "number"])),
        }
    }

    fn statement(&mut self) -> PResult<Command> {
        let keyword = match &self.peek().kind {
            TokenKind::Word(w) => w.clone(),
            _ => return Err(self.statement_error()),
        };
        match keyword.as_str() {
            "noun" => {
                self.advance();
                let name = self.ident()?;
                let under = if self.eat_word("under") { Some(self.ident()?) } else { None };
                Ok(Command::DeclareNoun { name, under })
            }
            "verb" => {
                self.advance();
                let name = self.ident()?;
                self.expect_word("from")?;
                let source = self.ident()?;
                self.expect_word("to")?;
                let target = self.ident()?;
                self.expect_word("in")?;
                let inputs = self.paren_idlist()?;
                self.expect_word("out")?;
                let outputs = self.paren_idlist()?;
                let externals = if self.eat_word("ext") { self.paren_idlist()? } else { Vec::new() };
                Ok(Command::DeclareVerb { name, source, target, inputs, outputs, externals })
            }
            "adj" => {
                self.advance();
                let name = self.ident()?;
                self.expect(&TokenKind::Colon)?;
                let domain = if self.is_word("numeric") && self.peek_at(1) == &TokenKind::LParen {
                    self.advance();
                    self.advance();
                    let unit = self.ident()?;
                    let bounds = if self.eat(&TokenKind::Comma) {
                        let lo = self.number()?;
                        self.expect(&TokenKind::Comma)?;
                        Some((lo, self.number()?))
                    } else {
                        None
                    };
                    self.expect(&TokenKind::RParen)?;
                    AdjectiveDomain::Numeric { unit, bounds }
                } else {
                    let values = self.idlist()?;
                    if self.eat_word("ordered") {
                        AdjectiveDomain::Ordered { values }
                    } else {
                        AdjectiveDomain::Categorical { values }
                    }
                };
                Ok(Command::DeclareAdjective { name, domain })
            }
            "rule" => {
                self.advance();
                let frame = self.ident()?;
                self.expect(&TokenKind::Colon)?;
                let lhs = self.clause()?;
                let reciprocal = match self.peek().kind {
                    TokenKind::Iff => true,
                    TokenKind::Arrow => false,
                    _ => return Err(self.error(&["'<=>'", "'->'", "'and'"])),
                };
                self.advance();
                let rhs = self.clause()?;
                let guards = if self.eat_word("if") { self.guards()? } else { Vec::new() };
                Ok(Command::DeclareRule { frame, lhs, reciprocal, rhs, guards })
            }
            "fact" => {
                self.advance();
                let feature = self.ident()?;
                self.expect(&TokenKind::Eq)?;
                let value = self.value()?;
                Ok(Command::StateFact { feature, value })
            }
            "ask" => {
                self.advance();
                let goal = self.ident()?;
                let mut given = Vec::new();
                if self.eat_word("given") {
                    loop {
                        let feature = self.ident()?;
                        self.expect(&TokenKind::Eq)?;
                        given.push(Binding::new(feature, self.value()?));
                        if !(self.eat(&TokenKind::Comma) || self.eat_word("and")) {
                            break;
                        }
                    }
                }
                Ok(Command::Ask { goal, given })
            }
            "yes" | "no" => {
                self.advance();
                Ok(Command::Confirm { yes: keyword == "yes" })
            }
            _ => Err(self.statement_error()),
        }
    }

    fn statement_error(&self) -> ParseError {
        self.error(&["'noun'", "'verb'", "'adj'", "'rule'", "'fact'", "'ask'", "'yes'", "'no'"])
    }

    fn clause(&mut self) -> PResult<Vec<ClauseItem>> {
        let mut out = vec![self.clause_item()?];
        while self.eat_word("and") {
            out.push(self.clause_item()?);
        }
        Ok(out)
    }

    fn guards(&mut self) -> PResult<Vec<ClauseItem>> {
        let mut out = vec![self.guard()?];
        while self.eat_word("and") || self.eat(&TokenKind::Comma) {
            out.push(self.guard()?);
        }
        Ok(out)
    }

    fn guard(&mut self) -> PResult<ClauseItem> {
        if self.peek_at(1) == &TokenKind::LParen {
            if self.eat_word("given") {
                return Ok(ClauseItem::Given { features: self.paren_idlist()? });
            }
            if self.eat_word("nonzero") {
                self.expect(&TokenKind::LParen)?;
                let expr = self.expr()?;
                self.expect(&TokenKind::RParen)?;
                return Ok(ClauseItem::NonZero { expr });
            }
        }
        Err(self.error(&["'given('", "'nonzero('"]))
    }

    fn clause_item(&mut self) -> PResult<ClauseItem> {
        if (self.is_word("given") || self.is_word("nonzero")) && self.peek_at(1) == &TokenKind::LParen {
            return self.guard();
        }
        let feature = self.ident()?;
        self.expect(&TokenKind::Eq)?;
        Ok(ClauseItem::Assign { feature, value: self.expr()? })
    }

    fn expr(&mut self) -> PResult<Expression> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().kind {
                TokenKind::Plus => BinOp::Add,
                TokenKind::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance();
            lhs = Expression::binary(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> PResult<Expression> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek().kind {
                TokenKind::Star => BinOp::Mul,
                TokenKind::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.advance();
            lhs = Expression::binary(op, lhs, self.factor()?);
        }
    }

    fn factor(&mut self) -> PResult<Expression> {
        match &self.peek().kind {
            TokenKind::Number(x) => {
                let x = *x;
                self.advance();
                Ok(Expression::Number(x))
            }
            TokenKind::Minus => {
                self.advance();
                match self.factor()? {
                    Expression::Number(x) => Ok(Expression::Number(-x)),
                    e => Ok(Expression::binary(BinOp::Sub, Expression::Number(0.0), e)),
                }
            }
            TokenKind::LParen => {
                self.advance();
                let e = self.expr()?;
                self.expect(&TokenKind::RParen)?;
                Ok(e)
            }
            TokenKind::Word(_) | TokenKind::Quoted(_) => Ok(Expression::Variable(self.ident()?)),
            _ => Err(self.error(&[IDENT, "number", "'('", "'-'"])),
        }
    }
}

// ----- printing -------------------------------------------------------------

fn ids(list: &[String]) -> String {
    list.iter().map(|s| format_ident(s)).collect::<Vec<_>>().join(", ")
}

fn fmt_number(x: f64) -> String {
    format!("{x}")
}

fn fmt_value(v: &Value) -> String {
    match v {
        Value::Number(x) => fmt_number(*x),
        Value::Label(l) => format_ident(l),
    }
}

impl fmt::Display for ClauseItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClauseItem::Assign { feature, value } => write!(f, "{} = {value}", format_ident(feature)),
            ClauseItem::Given { features } => write!(f, "given({})", ids(features)),
            ClauseItem::NonZero { expr } => write!(f, "nonzero({expr})"),
        }
    }
}

fn items(list: &[ClauseItem]) -> String {
    list.iter().map(ToString::to_string).collect::<Vec<_>>().join(" and ")
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::DeclareNoun { name, under } => {
                write!(f, "noun {}", format_ident(name))?;
                if let Some(c) = under {
                    write!(f, " under {}", format_ident(c))?;
                }
                Ok(())
            }
            Command::DeclareVerb { name, source, target, inputs, outputs, externals } => {
                write!(
                    f,
                    "verb {} from {} to {} in({}) out({})",
                    format_ident(name),
                    format_ident(source),
                    format_ident(target),
                    ids(inputs),
                    ids(outputs)
                )?;
                if !externals.is_empty() {
                    write!(f, " ext({})", ids(externals))?;
                }
                Ok(())
            }
            Command::DeclareAdjective { name, domain } => {
                write!(f, "adj {} : ", format_ident(name))?;
                match domain {
                    AdjectiveDomain::Categorical { values } => f.write_str(&ids(values)),
                    AdjectiveDomain::Ordered { values } => write!(f, "{} ordered", ids(values)),
                    AdjectiveDomain::Numeric { unit, bounds: None } => write!(f, "numeric({})", format_ident(unit)),
                    AdjectiveDomain::Numeric { unit, bounds: Some((lo, hi)) } => {
                        write!(f, "numeric({}, {}, {})", format_ident(unit), fmt_number(*lo), fmt_number(*hi))
                    }
                }
            }
            Command::DeclareRule { frame, lhs, reciprocal, rhs, guards } => {
                let arrow = if *reciprocal { "<=>" } else { "->" };
                write!(f, "rule {} : {} {arrow} {}", format_ident(frame), items(lhs), items(rhs))?;
                if !guards.is_empty() {
                    write!(f, " if {}", items(guards))?;
                }
                Ok(())
            }
            Command::StateFact { feature, value } => {
                write!(f, "fact {} = {}", format_ident(feature), fmt_value(value))
            }
            Command::Ask { goal, given } => {
                write!(f, "ask {}", format_ident(goal))?;
                if !given.is_empty() {
                    let list: Vec<String> = given
                        .iter()
                        .map(|b| format!("{} = {}", format_ident(&b.feature), fmt_value(&b.value)))
                        .collect();
                    write!(f, " given {}", list.join(", "))?;
                }
                Ok(())
            }
            Command::Confirm { yes } => f.write_str(if *yes { "yes" } else { "no" }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Command {
        parse_statement(s).unwrap().command
    }

    #[test]
    fn adjective() {
        assert_eq!(
            parse("adj Breakable : No, Yes"),
            Command::DeclareAdjective {
                name: "Breakable".into(),
                domain: AdjectiveDomain::Categorical { values: vec!["No".into(), "Yes".into()] },
            }
        );
    }

    #[test]
    fn missing_colon_points_at_first_value() {
        let err = parse_statement("adj Breakable No Yes").unwrap_err();
        assert_eq!((err.line, err.column), (1, 15));
        assert_eq!(err.expected, vec!["':'".to_string()]);
        assert_eq!(err.found, "'No'");
    }

    #[test]
    fn verb() {
        assert_eq!(
            parse(r#"verb "TO SEE" from Humans to "See well" in(OwnsGlasses) out(QualityVision)"#),
            Command::DeclareVerb {
                name: "TO SEE".into(),
                source: "Humans".into(),
                target: "See well".into(),
                inputs: vec!["OwnsGlasses".into()],
                outputs: vec!["QualityVision".into()],
                externals: vec![],
            }
        );
    }

    #[test]
    fn quantitative_rule() {
        let c = parse("rule Evaporation : given(n, V) -> P = n * R * T / V if nonzero(V)");
        let Command::DeclareRule { lhs, reciprocal, rhs, guards, .. } = &c else { panic!() };
        assert!(!reciprocal);
        assert_eq!(lhs, &vec![ClauseItem::Given { features: vec!["n".into(), "V".into()] }]);
        assert!(matches!(&rhs[0], ClauseItem::Assign { feature, .. } if feature == "P"));
        assert_eq!(guards, &vec![ClauseItem::NonZero { expr: Expression::var("V") }]);
        assert_eq!(c.to_string(), "rule Evaporation : given(n, V) -> P = n * R * T / V if nonzero(V)");
    }

    #[test]
    fn keywords_are_contextual() {
        assert_eq!(parse("noun under"), Command::DeclareNoun { name: "under".into(), under: None });
        assert_eq!(parse("yes"), Command::Confirm { yes: true });
        assert_eq!(
            parse("ask QualityVision given PainAtEyes = Yes"),
            Command::Ask { goal: "QualityVision".into(), given: vec![Binding::label("PainAtEyes", "Yes")] }
        );
    }

    #[test]
    fn fact_values() {
        assert_eq!(parse("fact T = -3.5"), Command::StateFact { feature: "T".into(), value: Value::Number(-3.5) });
        assert!(parse_statement("fact T =").is_err());
    }

    #[test]
    fn unicode_aliases() {
        assert_eq!(parse("rule F : a = x ⇔ b = y"), parse("rule F : a = x <=> b = y"));
        assert_eq!(parse("rule F : a = x → b = y"), parse("rule F : a = x -> b = y"));
    }
}
