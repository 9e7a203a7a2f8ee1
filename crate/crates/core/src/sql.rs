//! The statement language: a small SQL subset for single-table
//! UPDATE / INSERT / DELETE, plus the printer that produces its canonical text.

use std::fmt;

use crate::condition::{CmpOp, Condition};
use crate::expr::Expr;
use crate::value::{ArithOp, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{msg} at position {pos}")]
pub struct ParseError {
    /// Character offset into the input.
    pub pos: usize,
    pub msg: String,
}

impl ParseError {
    fn new(pos: usize, msg: impl Into<String>) -> ParseError {
        ParseError { pos, msg: msg.into() }
    }

    /// Two-line diagnostic: the input followed by a caret under the error.
    pub fn render(&self, input: &str) -> String {
        let line: String = input.chars().map(|c| if c == '\n' { ' ' } else { c }).collect();
        format!("error: {}\n  {}\n  {}^", self.msg, line, " ".repeat(self.pos))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    /// Double-quoted identifier; never a keyword.
    Quoted(String),
    Num(String),
    Str(String),
    LParen,
    RParen,
    Comma,
    Semi,
    Op(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn lex(input: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = input.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            '(' => {
                i += 1;
                Tok::LParen
            }
            ')' => {
                i += 1;
                Tok::RParen
            }
            ',' => {
                i += 1;
                Tok::Comma
            }
            ';' => {
                i += 1;
                Tok::Semi
            }
            '+' | '-' | '*' | '/' | '=' => {
                i += 1;
                Tok::Op(match c {
                    '+' => "+",
                    '-' => "-",
                    '*' => "*",
                    '/' => "/",
                    _ => "=",
                })
            }
            '<' => {
                i += 1;
                match chars.get(i) {
                    Some('=') => {
                        i += 1;
                        Tok::Op("<=")
                    }
                    Some('>') => {
                        i += 1;
                        Tok::Op("<>")
                    }
                    _ => Tok::Op("<"),
                }
            }
            '>' => {
                i += 1;
                if chars.get(i) == Some(&'=') {
                    i += 1;
                    Tok::Op(">=")
                } else {
                    Tok::Op(">")
                }
            }
            '!' => {
                if chars.get(i + 1) == Some(&'=') {
                    i += 2;
                    Tok::Op("<>")
                } else {
                    return Err(ParseError::new(i, "unexpected `!`"));
                }
            }
            '\'' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None => return Err(ParseError::new(start, "unterminated string literal")),
                        Some('\'') if chars.get(i + 1) == Some(&'\'') => {
                            s.push('\'');
                            i += 2;
                        }
                        Some('\'') => {
                            i += 1;
                            break;
                        }
                        Some(ch) => {
                            s.push(*ch);
                            i += 1;
                        }
                    }
                }
                Tok::Str(s)
            }
            '"' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None => return Err(ParseError::new(start, "unterminated quoted identifier")),
                        Some('"') if chars.get(i + 1) == Some(&'"') => {
                            s.push('"');
                            i += 2;
                        }
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some(ch) => {
                            s.push(*ch);
                            i += 1;
                        }
                    }
                }
                if s.is_empty() {
                    return Err(ParseError::new(start, "empty quoted identifier"));
                }
                Tok::Quoted(s)
            }
            d if d.is_ascii_digit() || (d == '.' && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())) => {
                let mut s = String::new();
                let mut dot = false;
                while let Some(&ch) = chars.get(i) {
                    if ch.is_ascii_digit() {
                        s.push(ch);
                    } else if ch == '.' && !dot {
                        dot = true;
                        s.push(ch);
                    } else {
                        break;
                    }
                    i += 1;
                }
                if chars.get(i).is_some_and(|ch| ch.is_alphanumeric() || *ch == '_') {
                    return Err(ParseError::new(i, "malformed number"));
                }
                Tok::Num(s)
            }
            a if a.is_alphabetic() || a == '_' => {
                let mut s = String::new();
                while let Some(&ch) = chars.get(i) {
                    if ch.is_alphanumeric() || ch == '_' {
                        s.push(ch);
                        i += 1;
                    } else {
                        break;
                    }
                }
                Tok::Ident(s)
            }
            '.' => return Err(ParseError::new(i, format!("qualified column names are not supported; {JOIN_HINT}"))),
            other => return Err(ParseError::new(i, format!("unexpected character `{other}`"))),
        };
        out.push(Token { tok, pos: start });
    }
    out.push(Token { tok: Tok::Eof, pos: chars.len() });
    Ok(out)
}

const KEYWORDS: &[&str] = &[
    "UPDATE", "SET", "WHERE", "DELETE", "FROM", "INSERT", "INTO", "VALUES", "AND", "OR", "NOT", "IN", "NULL", "TRUE",
    "FALSE", "JOIN", "SELECT",
];

fn is_keyword(s: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(s))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Statement {
    Update {
        table: String,
        target: String,
        expr: Expr,
        pred: Condition,
    },
    Delete {
        table: String,
        pred: Condition,
    },
    /// `columns` empty means every column in schema order.
    Insert {
        table: String,
        columns: Vec<String>,
        values: Vec<Value>,
    },
}

impl Statement {
    pub fn table(&self) -> &str {
        match self {
            Statement::Update { table, .. } | Statement::Delete { table, .. } | Statement::Insert { table, .. } => {
                table
            }
        }
    }
}

const JOIN_HINT: &str =
    "joins are not supported; rewrite the other table's keys as a literal list, e.g. `WHERE Id IN (1, 2, 3)`";

struct Parser {
    toks: Vec<Token>,
    at: usize,
}

impl Parser {
    fn new(input: &str) -> Result<Parser, ParseError> {
        Ok(Parser { toks: lex(input)?, at: 0 })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn pos(&self) -> usize {
        self.toks[self.at].pos
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].tok.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.is_kw("JOIN") {
            return Err(ParseError::new(self.pos(), JOIN_HINT));
        }
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("expected {kw}")))
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == t {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&format!("expected {what}")))
        }
    }

    fn unexpected(&self, msg: &str) -> ParseError {
        let found = match self.peek() {
            Tok::Eof => "end of input".to_string(),
            Tok::Ident(s) | Tok::Num(s) => format!("`{s}`"),
            Tok::Quoted(s) => format!("\"{s}\""),
            Tok::Str(s) => format!("'{s}'"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Op(o) => format!("`{o}`"),
        };
        ParseError::new(self.pos(), format!("{msg}, found {found}"))
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Quoted(s) => {
                self.bump();
                Ok(s)
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("JOIN") => Err(ParseError::new(self.pos(), JOIN_HINT)),
            Tok::Ident(s) if !is_keyword(&s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected("expected an identifier")),
        }
    }

    fn finish(&mut self) -> Result<(), ParseError> {
        while *self.peek() == Tok::Semi {
            self.bump();
        }
        if self.is_kw("JOIN") || self.is_kw("FROM") {
            return Err(ParseError::new(self.pos(), JOIN_HINT));
        }
        if *self.peek() != Tok::Eof {
            return Err(self.unexpected("expected end of statement"));
        }
        Ok(())
    }

    fn statement(&mut self) -> Result<Statement, ParseError> {
        if self.eat_kw("UPDATE") {
            let table = self.ident()?;
            self.expect_kw("SET")?;
            let target = self.ident()?;
            self.expect(Tok::Op("="), "`=`")?;
            let expr = self.expr()?;
            if *self.peek() == Tok::Comma {
                return Err(ParseError::new(self.pos(), "only one assignment per UPDATE is supported"));
            }
            let pred = self.where_clause()?;
            Ok(Statement::Update { table, target, expr, pred })
        } else if self.eat_kw("DELETE") {
            self.expect_kw("FROM")?;
            let table = self.ident()?;
            let pred = self.where_clause()?;
            Ok(Statement::Delete { table, pred })
        } else if self.eat_kw("INSERT") {
            self.expect_kw("INTO")?;
            let table = self.ident()?;
            let mut columns = Vec::new();
            if *self.peek() == Tok::LParen {
                self.bump();
                loop {
                    columns.push(self.ident()?);
                    if *self.peek() == Tok::Comma {
                        self.bump();
                    } else {
                        break;
                    }
                }
                self.expect(Tok::RParen, "`)`")?;
            }
            self.expect_kw("VALUES")?;
            self.expect(Tok::LParen, "`(`")?;
            let values = self.literal_list()?;
            self.expect(Tok::RParen, "`)`")?;
            if !columns.is_empty() && columns.len() != values.len() {
                return Err(ParseError::new(
                    self.pos(),
                    format!("{} columns but {} values", columns.len(), values.len()),
                ));
            }
            Ok(Statement::Insert { table, columns, values })
        } else if self.is_kw("SELECT") {
            Err(ParseError::new(self.pos(), "queries are not statements; use UPDATE, INSERT or DELETE"))
        } else {
            Err(self.unexpected("expected UPDATE, INSERT or DELETE"))
        }
    }

    fn where_clause(&mut self) -> Result<Condition, ParseError> {
        if self.is_kw("JOIN") || self.is_kw("FROM") {
            return Err(ParseError::new(self.pos(), JOIN_HINT));
        }
        if self.eat_kw("WHERE") {
            self.cond()
        } else {
            Ok(Condition::True)
        }
    }

    fn literal_list(&mut self) -> Result<Vec<Value>, ParseError> {
        let mut out = Vec::new();
        if *self.peek() == Tok::RParen {
            return Ok(out);
        }
        loop {
            out.push(self.literal()?);
            if *self.peek() == Tok::Comma {
                self.bump();
            } else {
                return Ok(out);
            }
        }
    }

    fn literal(&mut self) -> Result<Value, ParseError> {
        let pos = self.pos();
        let neg = if *self.peek() == Tok::Op("-") {
            self.bump();
            true
        } else {
            false
        };
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                number(&n, neg, pos)
            }
            Tok::Str(s) if !neg => {
                self.bump();
                Ok(Value::str(&s))
            }
            Tok::Ident(s) if !neg && s.eq_ignore_ascii_case("NULL") => {
                self.bump();
                Ok(Value::Null)
            }
            _ => Err(self.unexpected("expected a literal")),
        }
    }

    fn cond(&mut self) -> Result<Condition, ParseError> {
        let mut parts = vec![self.conj()?];
        while self.eat_kw("OR") {
            parts.push(self.conj()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Condition::Or(parts) })
    }

    fn conj(&mut self) -> Result<Condition, ParseError> {
        let mut parts = vec![self.negation()?];
        while self.eat_kw("AND") {
            parts.push(self.negation()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Condition::And(parts) })
    }

    fn negation(&mut self) -> Result<Condition, ParseError> {
        if self.eat_kw("NOT") {
            return Ok(Condition::not(self.negation()?));
        }
        self.primary_cond()
    }

    fn primary_cond(&mut self) -> Result<Condition, ParseError> {
        if self.eat_kw("TRUE") {
            return Ok(Condition::True);
        }
        if self.eat_kw("FALSE") {
            return Ok(Condition::False);
        }
        if *self.peek() == Tok::LParen {
            // Either a parenthesized condition or an atom starting with a
            // parenthesized expression; try the former first.
            let save = self.at;
            self.bump();
            if let Ok(c) = self.cond() {
                if *self.peek() == Tok::RParen {
                    self.bump();
                    if !self.at_comparison() {
                        return Ok(c);
                    }
                }
            }
            self.at = save;
        }
        self.atom()
    }

    fn at_comparison(&self) -> bool {
        matches!(self.peek(), Tok::Op("=" | "<>" | "<" | "<=" | ">" | ">=" | "+" | "-" | "*" | "/")) || self.is_kw("IN")
    }

    fn atom(&mut self) -> Result<Condition, ParseError> {
        let lhs = self.expr()?;
        let negated = if self.is_kw("NOT") {
            self.bump();
            if !self.is_kw("IN") {
                return Err(self.unexpected("expected IN after NOT"));
            }
            true
        } else {
            false
        };
        if self.eat_kw("IN") {
            self.expect(Tok::LParen, "`(`")?;
            if self.is_kw("SELECT") {
                return Err(ParseError::new(self.pos(), "subqueries are not supported; list the values literally"));
            }
            let vals = self.literal_list()?;
            self.expect(Tok::RParen, "`)`")?;
            let c = Condition::In(lhs, vals);
            return Ok(if negated { Condition::not(c) } else { c });
        }
        let op = match self.peek() {
            Tok::Op("=") => CmpOp::Eq,
            Tok::Op("<>") => CmpOp::Ne,
            Tok::Op("<") => CmpOp::Lt,
            Tok::Op("<=") => CmpOp::Le,
            Tok::Op(">") => CmpOp::Gt,
            Tok::Op(">=") => CmpOp::Ge,
            _ => return Err(self.unexpected("expected a comparison operator")),
        };
        self.bump();
        let rhs = self.expr()?;
        Ok(Condition::Cmp(op, lhs, rhs))
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op("+") => ArithOp::Add,
                Tok::Op("-") => ArithOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Op("*") => ArithOp::Mul,
                Tok::Op("/") => ArithOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Op("-") => {
                self.bump();
                match self.peek().clone() {
                    Tok::Num(n) => {
                        self.bump();
                        Ok(Expr::Lit(number(&n, true, pos)?))
                    }
                    _ => {
                        let inner = self.factor()?;
                        Ok(Expr::bin(ArithOp::Sub, Expr::lit(0), inner))
                    }
                }
            }
            Tok::Num(n) => {
                self.bump();
                Ok(Expr::Lit(number(&n, false, pos)?))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Lit(Value::str(&s)))
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("NULL") => {
                self.bump();
                Ok(Expr::Lit(Value::Null))
            }
            Tok::Ident(_) | Tok::Quoted(_) => Ok(Expr::attr(&self.ident()?)),
            _ => Err(self.unexpected("expected an expression")),
        }
    }
}

fn number(text: &str, neg: bool, pos: usize) -> Result<Value, ParseError> {
    let t = if neg { format!("-{text}") } else { text.to_string() };
    Value::parse_number(&t).ok_or_else(|| ParseError::new(pos, format!("number `{t}` out of range")))
}

pub fn parse_statement(text: &str) -> Result<Statement, ParseError> {
    let mut p = Parser::new(text)?;
    let s = p.statement()?;
    p.finish()?;
    Ok(s)
}

pub fn parse_condition(text: &str) -> Result<Condition, ParseError> {
    let mut p = Parser::new(text)?;
    let c = p.cond()?;
    p.finish()?;
    Ok(c)
}

pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text)?;
    let e = p.expr()?;
    p.finish()?;
    Ok(e)
}

pub fn parse_literal(text: &str) -> Result<Value, ParseError> {
    let mut p = Parser::new(text)?;
    let v = p.literal()?;
    p.finish()?;
    Ok(v)
}

// ---- printing ----

pub fn quote_ident(name: &str) -> String {
    let simple = name.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_alphanumeric() || c == '_')
        && !is_keyword(name);
    if simple {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

fn prec(op: ArithOp) -> u8 {
    match op {
        ArithOp::Add | ArithOp::Sub => 1,
        ArithOp::Mul | ArithOp::Div => 2,
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Lit(v) => f.write_str(&v.to_sql()),
        Expr::Attr(a) => f.write_str(&quote_ident(a)),
        Expr::Bin(op, l, r) => {
            let p = prec(*op);
            let lp = matches!(&**l, Expr::Bin(o, ..) if prec(*o) < p);
            let rp = matches!(&**r, Expr::Bin(o, ..) if prec(*o) <= p)
                || matches!(&**r, Expr::Lit(v) if v.to_sql().starts_with('-'));
            wrap(f, lp, |f| write_expr(f, l))?;
            write!(f, " {} ", op.symbol())?;
            wrap(f, rp, |f| write_expr(f, r))
        }
    }
}

fn wrap(
    f: &mut fmt::Formatter<'_>,
    parens: bool,
    inner: impl FnOnce(&mut fmt::Formatter<'_>) -> fmt::Result,
) -> fmt::Result {
    if parens {
        f.write_str("(")?;
        inner(f)?;
        f.write_str(")")
    } else {
        inner(f)
    }
}

fn cond_prec(c: &Condition) -> u8 {
    match c {
        Condition::Or(xs) if xs.len() > 1 => 1,
        Condition::And(xs) if xs.len() > 1 => 2,
        Condition::Or(_) | Condition::And(_) => 0,
        Condition::Not(_) => 3,
        _ => 4,
    }
}

fn write_cond(f: &mut fmt::Formatter<'_>, c: &Condition) -> fmt::Result {
    match c {
        Condition::True => f.write_str("TRUE"),
        Condition::False => f.write_str("FALSE"),
        Condition::Cmp(op, l, r) => {
            write_expr(f, l)?;
            write!(f, " {} ", op.symbol())?;
            write_expr(f, r)
        }
        Condition::In(e, vs) => {
            write_expr(f, e)?;
            f.write_str(" IN (")?;
            for (i, v) in vs.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                f.write_str(&v.to_sql())?;
            }
            f.write_str(")")
        }
        // Degenerate junctions have no surface syntax of their own.
        Condition::And(xs) if xs.is_empty() => f.write_str("TRUE"),
        Condition::Or(xs) if xs.is_empty() => f.write_str("FALSE"),
        Condition::And(xs) | Condition::Or(xs) if xs.len() == 1 => write_cond(f, &xs[0]),
        Condition::And(xs) | Condition::Or(xs) => {
            let p = cond_prec(c);
            let kw = if p == 2 { " AND " } else { " OR " };
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    f.write_str(kw)?;
                }
                wrap(f, cond_prec(x) <= p, |f| write_cond(f, x))?;
            }
            Ok(())
        }
        Condition::Not(x) => {
            f.write_str("NOT ")?;
            let parens =
                cond_prec(x) < 3 || matches!(&**x, Condition::Cmp(..) | Condition::In(..)) && starts_with_paren(x);
            wrap(f, parens, |f| write_cond(f, x))
        }
    }
}

/// An atom whose text begins with `(` would be re-read as a parenthesized
/// condition after NOT; the printer keeps such atoms unambiguous.
fn starts_with_paren(c: &Condition) -> bool {
    let lhs = match c {
        Condition::Cmp(_, l, _) | Condition::In(l, _) => l,
        _ => return false,
    };
    lhs.to_string().starts_with('(')
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_cond(f, self)
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Update { table, target, expr, pred } => {
                write!(f, "UPDATE {} SET {} = {} WHERE {}", quote_ident(table), quote_ident(target), expr, pred)
            }
            Statement::Delete { table, pred } => {
                write!(f, "DELETE FROM {} WHERE {}", quote_ident(table), pred)
            }
            Statement::Insert { table, columns, values } => {
                write!(f, "INSERT INTO {}", quote_ident(table))?;
                if !columns.is_empty() {
                    let cols: Vec<String> = columns.iter().map(|c| quote_ident(c)).collect();
                    write!(f, " ({})", cols.join(", "))?;
                }
                let vals: Vec<String> = values.iter().map(|v| v.to_sql()).collect();
                write!(f, " VALUES ({})", vals.join(", "))
            }
        }
    }
}
