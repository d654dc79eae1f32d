//! Declarative checks against a results CSV.
//!
//! One assertion per line, `#` starts a comment, an optional `label:` prefix
//! names the check:
//!
//! ```text
//! full accuracy: accuracy[full] in [0.977, 0.983]
//! accuracy[imp,level=10] - accuracy[random,level=10] >= 0.004
//! data_order_distance[random,level=10] / data_order_distance[imp,level=10] >= 1.5
//! max_by(k, accuracy[imp,level=5]) >= accuracy[imp,level=5,k=0]
//! data_order_distance[imp,level=5] nonincreasing over k
//! budget
//! ```
//!
//! A reference `column[filters]` selects the rows matching every filter
//! (`key=value`, or a bare variant name) and stands for the mean of the
//! non-empty cells. `mean`, `min`, `max`, `sum` and `count` wrap a reference;
//! `max_by(col, ref)` and `min_by(col, ref)` group by `col` and take the
//! largest or smallest group mean. Expressions combine with `+ - * /` and
//! parentheses. Comparisons are `>= <= > < ==`; `in [lo, hi]` is inclusive.
//! Trends (`increasing`, `decreasing`, `nonincreasing`, `nondecreasing`)
//! compare group means ordered by the grouping column. `budget` checks that
//! every pruned row trained for exactly `total_iterations - k` steps, in its
//! accuracy run and in every stability run.

use std::fmt;

use anyhow::{bail, Result};

use crate::results::Table;

#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub column: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub column: String,
    pub filters: Vec<Filter>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Mean,
    Min,
    Max,
    Sum,
    Count,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pick {
    Largest,
    Smallest,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Agg(Aggregate, Reference),
    GroupBest(Pick, String, Reference),
    Binary(char, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Increasing,
    Decreasing,
    NonIncreasing,
    NonDecreasing,
}

impl Trend {
    fn name(self) -> &'static str {
        match self {
            Trend::Increasing => "increasing",
            Trend::Decreasing => "decreasing",
            Trend::NonIncreasing => "nonincreasing",
            Trend::NonDecreasing => "nondecreasing",
        }
    }

    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Trend::Increasing => b > a,
            Trend::Decreasing => b < a,
            Trend::NonIncreasing => b <= a,
            Trend::NonDecreasing => b >= a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Check {
    Compare(Expr, String, Expr),
    Within(Expr, f64, f64),
    Trend(Reference, Trend, String),
    Budget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assertion {
    pub line: usize,
    pub label: String,
    pub check: Check,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ParseError {}

/// Accepts the compact spelling `dataorder_` for `data_order_`.
fn canonical_column(name: &str) -> String {
    match name.strip_prefix("dataorder_") {
        Some(rest) => format!("data_order_{rest}"),
        None => name.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Sym(&'static str),
}

fn tokenize(s: &str) -> Result<Vec<Token>, String> {
    const SYMS: [&str; 15] = [">=", "<=", "==", ">", "<", "=", "+", "-", "*", "/", "(", ")", "[", "]", ","];
    let mut out = Vec::new();
    let mut rest = s.trim_start();
    while !rest.is_empty() {
        let c = rest.chars().next().unwrap();
        if c.is_ascii_digit() || (c == '.' && rest[1..].starts_with(|d: char| d.is_ascii_digit())) {
            let end = rest
                .char_indices()
                .find(|&(i, ch)| {
                    !(ch.is_ascii_digit()
                        || ch == '.'
                        || ch == 'e'
                        || ch == 'E'
                        || ((ch == '-' || ch == '+') && i > 0 && matches!(rest.as_bytes()[i - 1], b'e' | b'E')))
                })
                .map_or(rest.len(), |(i, _)| i);
            let text = &rest[..end];
            out.push(Token::Number(text.parse().map_err(|_| format!("bad number `{text}`"))?));
            rest = &rest[end..];
        } else if c.is_ascii_alphabetic() || c == '_' {
            let end = rest
                .char_indices()
                .find(|&(_, ch)| !(ch.is_ascii_alphanumeric() || ch == '_' || ch == '-' || ch == '.'))
                .map_or(rest.len(), |(i, _)| i);
            out.push(Token::Ident(rest[..end].to_string()));
            rest = &rest[end..];
        } else if let Some(sym) = SYMS.iter().find(|s| rest.starts_with(**s)) {
            out.push(Token::Sym(sym));
            rest = &rest[sym.len()..];
        } else {
            return Err(format!("unexpected character `{c}`"));
        }
        rest = rest.trim_start();
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eat(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Some(Token::Sym(s)) if *s == sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, sym: &str) -> Result<(), String> {
        if self.eat(sym) {
            Ok(())
        } else {
            Err(format!("expected `{sym}`"))
        }
    }

    fn ident(&mut self) -> Result<String, String> {
        match self.next() {
            Some(Token::Ident(s)) => Ok(s),
            _ => Err("expected a name".into()),
        }
    }

    fn number(&mut self) -> Result<f64, String> {
        let negative = self.eat("-");
        match self.next() {
            Some(Token::Number(v)) => Ok(if negative { -v } else { v }),
            _ => Err("expected a number".into()),
        }
    }

    fn reference_after(&mut self, column: String) -> Result<Reference, String> {
        let mut filters = Vec::new();
        if self.eat("[") {
            loop {
                let key = match self.next() {
                    Some(Token::Ident(s)) => s,
                    Some(Token::Number(v)) => v.to_string(),
                    _ => return Err("expected a filter".into()),
                };
                let filter = if self.eat("=") {
                    let value = match self.next() {
                        Some(Token::Ident(s)) => s,
                        Some(Token::Number(v)) => v.to_string(),
                        _ => return Err(format!("expected a value for `{key}`")),
                    };
                    Filter {
                        column: canonical_column(&key),
                        value,
                    }
                } else {
                    Filter {
                        column: "variant".into(),
                        value: key,
                    }
                };
                filters.push(filter);
                if self.eat("]") {
                    break;
                }
                self.expect(",")?;
            }
        }
        Ok(Reference {
            column: canonical_column(&column),
            filters,
        })
    }

    fn reference(&mut self) -> Result<Reference, String> {
        let column = self.ident()?;
        self.reference_after(column)
    }

    fn primary(&mut self) -> Result<Expr, String> {
        match self.next() {
            Some(Token::Number(v)) => Ok(Expr::Number(v)),
            Some(Token::Sym("-")) => Ok(Expr::Binary('-', Box::new(Expr::Number(0.0)), Box::new(self.primary()?))),
            Some(Token::Sym("(")) => {
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                let agg = match name.as_str() {
                    "mean" => Some(Aggregate::Mean),
                    "min" => Some(Aggregate::Min),
                    "max" => Some(Aggregate::Max),
                    "sum" => Some(Aggregate::Sum),
                    "count" => Some(Aggregate::Count),
                    _ => None,
                };
                let pick = match name.as_str() {
                    "max_by" => Some(Pick::Largest),
                    "min_by" => Some(Pick::Smallest),
                    _ => None,
                };
                if let Some(agg) = agg.filter(|_| self.peek() == Some(&Token::Sym("("))) {
                    self.expect("(")?;
                    let r = self.reference()?;
                    self.expect(")")?;
                    Ok(Expr::Agg(agg, r))
                } else if let Some(pick) = pick {
                    self.expect("(")?;
                    let by = canonical_column(&self.ident()?);
                    self.expect(",")?;
                    let r = self.reference()?;
                    self.expect(")")?;
                    Ok(Expr::GroupBest(pick, by, r))
                } else {
                    Ok(Expr::Agg(Aggregate::Mean, self.reference_after(name)?))
                }
            }
            _ => Err("expected a value".into()),
        }
    }

    fn term(&mut self) -> Result<Expr, String> {
        let mut e = self.primary()?;
        loop {
            let op = if self.eat("*") {
                '*'
            } else if self.eat("/") {
                '/'
            } else {
                return Ok(e);
            };
            e = Expr::Binary(op, Box::new(e), Box::new(self.primary()?));
        }
    }

    fn expr(&mut self) -> Result<Expr, String> {
        let mut e = self.term()?;
        loop {
            let op = if self.eat("+") {
                '+'
            } else if self.eat("-") {
                '-'
            } else {
                return Ok(e);
            };
            e = Expr::Binary(op, Box::new(e), Box::new(self.term()?));
        }
    }

    fn done(&self) -> Result<(), String> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(format!("unexpected {t:?} at the end")),
        }
    }
}

fn parse_check(body: &str) -> Result<Check, String> {
    let body = body.trim();
    if body == "budget" {
        return Ok(Check::Budget);
    }
    let tokens = tokenize(body)?;
    let mut p = Parser { tokens, pos: 0 };

    // Trend: `ref <trend> over <col>`.
    let trend_at = p.tokens.iter().position(|t| {
        matches!(t, Token::Ident(s) if ["increasing", "decreasing", "nonincreasing", "nondecreasing"].contains(&s.as_str()))
    });
    if let Some(at) = trend_at {
        let r = p.reference()?;
        if p.pos != at {
            return Err("a trend applies to a single column reference".into());
        }
        let trend = match p.ident()?.as_str() {
            "increasing" => Trend::Increasing,
            "decreasing" => Trend::Decreasing,
            "nonincreasing" => Trend::NonIncreasing,
            _ => Trend::NonDecreasing,
        };
        if p.ident()? != "over" {
            return Err("expected `over <column>` after the trend".into());
        }
        let by = canonical_column(&p.ident()?);
        p.done()?;
        return Ok(Check::Trend(r, trend, by));
    }

    let lhs = p.expr()?;
    if matches!(p.peek(), Some(Token::Ident(s)) if s == "in") {
        p.next();
        p.expect("[")?;
        let lo = p.number()?;
        p.expect(",")?;
        let hi = p.number()?;
        p.expect("]")?;
        p.done()?;
        if lo > hi {
            return Err(format!("empty interval [{lo}, {hi}]"));
        }
        return Ok(Check::Within(lhs, lo, hi));
    }
    let op = match p.next() {
        Some(Token::Sym(s)) if [">=", "<=", ">", "<", "=="].contains(&s) => s.to_string(),
        _ => return Err("expected a comparison (>=, <=, >, <, ==), `in [lo, hi]` or a trend".into()),
    };
    let rhs = p.expr()?;
    p.done()?;
    Ok(Check::Compare(lhs, op, rhs))
}

pub fn parse_expectations(text: &str) -> Result<Vec<Assertion>, ParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (label, body) = match content.split_once(':') {
            Some((l, b)) => (l.trim().to_string(), b.trim()),
            None => (content.to_string(), content),
        };
        let check = parse_check(body).map_err(|message| ParseError { line, message })?;
        out.push(Assertion { line, label, check });
    }
    Ok(out)
}

fn references(check: &Check) -> Vec<(&Reference, Option<&str>)> {
    fn walk<'a>(e: &'a Expr, out: &mut Vec<(&'a Reference, Option<&'a str>)>) {
        match e {
            Expr::Number(_) => {}
            Expr::Agg(_, r) => out.push((r, None)),
            Expr::GroupBest(_, by, r) => out.push((r, Some(by))),
            Expr::Binary(_, a, b) => {
                walk(a, out);
                walk(b, out);
            }
        }
    }
    let mut out = Vec::new();
    match check {
        Check::Compare(a, _, b) => {
            walk(a, &mut out);
            walk(b, &mut out);
        }
        Check::Within(e, _, _) => walk(e, &mut out),
        Check::Trend(r, _, by) => out.push((r, Some(by))),
        Check::Budget => {}
    }
    out
}

/// Rejects assertions naming columns the table does not have.
pub fn check_columns(assertions: &[Assertion], table: &Table) -> Result<(), ParseError> {
    let err = |a: &Assertion, name: &str| ParseError {
        line: a.line,
        message: format!("unknown column `{name}`"),
    };
    for a in assertions {
        for (r, by) in references(&a.check) {
            let names = std::iter::once(r.column.as_str())
                .chain(r.filters.iter().map(|f| f.column.as_str()))
                .chain(by);
            for name in names {
                if table.column(name).is_err() {
                    return Err(err(a, name));
                }
            }
        }
        if a.check == Check::Budget {
            for name in ["variant", "k", "iterations", "total_iterations", "stability_iterations"] {
                if table.column(name).is_err() {
                    return Err(err(a, name));
                }
            }
        }
    }
    Ok(())
}

fn cell_matches(cell: &str, want: &str) -> bool {
    if cell == want {
        return true;
    }
    match (cell.parse::<f64>(), want.parse::<f64>()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

/// Selected (group cell, value) pairs with non-empty values.
fn select(table: &Table, r: &Reference, by: Option<&str>) -> Result<Vec<(String, f64)>> {
    let col = table.column(&r.column)?;
    let filters: Vec<(usize, &str)> = r
        .filters
        .iter()
        .map(|f| Ok((table.column(&f.column)?, f.value.as_str())))
        .collect::<Result<_>>()?;
    let by = by.map(|b| table.column(b)).transpose()?;
    let mut out = Vec::new();
    for row in 0..table.rows.len() {
        if !filters.iter().all(|&(c, v)| cell_matches(&table.rows[row][c], v)) {
            continue;
        }
        if let Some(v) = table.number(row, col)? {
            out.push((by.map_or(String::new(), |b| table.rows[row][b].clone()), v));
        }
    }
    Ok(out)
}

fn describe_ref(r: &Reference) -> String {
    if r.filters.is_empty() {
        return r.column.clone();
    }
    let f: Vec<String> = r.filters.iter().map(|f| format!("{}={}", f.column, f.value)).collect();
    format!("{}[{}]", r.column, f.join(","))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Group means ordered by the numeric value of the grouping cell.
fn group_means(pairs: Vec<(String, f64)>) -> Result<Vec<(f64, f64)>> {
    let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
    for (key, v) in pairs {
        let x: f64 = key
            .parse()
            .map_err(|_| anyhow::anyhow!("grouping value `{key}` is not a number"))?;
        match groups.iter_mut().find(|(g, _)| *g == x) {
            Some((_, vs)) => vs.push(v),
            None => groups.push((x, vec![v])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(groups.into_iter().map(|(x, vs)| (x, mean(&vs))).collect())
}

fn eval(table: &Table, e: &Expr) -> Result<f64> {
    Ok(match e {
        Expr::Number(v) => *v,
        Expr::Agg(agg, r) => {
            let vals: Vec<f64> = select(table, r, None)?.into_iter().map(|p| p.1).collect();
            match agg {
                Aggregate::Count => return Ok(vals.len() as f64),
                Aggregate::Sum => return Ok(vals.iter().sum()),
                _ => {}
            }
            if vals.is_empty() {
                bail!("no values for {}", describe_ref(r));
            }
            match agg {
                Aggregate::Mean => mean(&vals),
                Aggregate::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
                Aggregate::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Aggregate::Sum | Aggregate::Count => unreachable!(),
            }
        }
        Expr::GroupBest(pick, by, r) => {
            let groups = group_means(select(table, r, Some(by))?)?;
            if groups.is_empty() {
                bail!("no values for {}", describe_ref(r));
            }
            let means = groups.iter().map(|g| g.1);
            match pick {
                Pick::Largest => means.fold(f64::NEG_INFINITY, f64::max),
                Pick::Smallest => means.fold(f64::INFINITY, f64::min),
            }
        }
        Expr::Binary(op, a, b) => {
            let (a, b) = (eval(table, a)?, eval(table, b)?);
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                _ => a / b,
            }
        }
    })
}

fn compare(a: f64, op: &str, b: f64) -> bool {
    match op {
        ">=" => a >= b,
        "<=" => a <= b,
        ">" => a > b,
        "<" => a < b,
        _ => a == b,
    }
}

fn budget(table: &Table) -> Result<(bool, String)> {
    let [variant, k, its, total, stab] =
        ["variant", "k", "iterations", "total_iterations", "stability_iterations"].map(|c| table.column(c));
    let (variant, k, its, total, stab) = (variant?, k?, its?, total?, stab?);
    let mut checked = 0;
    for (i, row) in table.rows.iter().enumerate() {
        if row[variant] == "full" {
            continue;
        }
        let num = |c: usize| -> Result<u64> {
            row[c]
                .parse()
                .map_err(|_| anyhow::anyhow!("row {}: `{}` is not an integer", i + 1, row[c]))
        };
        let want = num(total)?
            .checked_sub(num(k)?)
            .ok_or_else(|| anyhow::anyhow!("row {}: k exceeds total_iterations", i + 1))?;
        if num(its)? != want {
            return Ok((false, format!("row {}: {} iterations, expected {want}", i + 1, row[its])));
        }
        checked += 1;
        for s in row[stab].split(';').filter(|s| !s.is_empty()) {
            if s.parse::<u64>().ok() != Some(want) {
                return Ok((false, format!("row {}: stability run of {s} iterations, expected {want}", i + 1)));
            }
            checked += 1;
        }
    }
    if checked == 0 {
        return Ok((false, "no pruned runs to check".into()));
    }
    Ok((true, format!("{checked} pruned runs trained for T* - k iterations")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub label: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.label, self.detail)
    }
}

fn show(v: f64) -> String {
    crate::results::format_number(v)
}

/// Evaluates one assertion; evaluation problems count as failures.
pub fn evaluate(table: &Table, a: &Assertion) -> Outcome {
    let result: Result<(bool, String)> = (|| match &a.check {
        Check::Compare(l, op, r) => {
            let (x, y) = (eval(table, l)?, eval(table, r)?);
            Ok((compare(x, op, y), format!("{} {op} {}", show(x), show(y))))
        }
        Check::Within(e, lo, hi) => {
            let x = eval(table, e)?;
            Ok(((*lo..=*hi).contains(&x), format!("{} in [{}, {}]", show(x), show(*lo), show(*hi))))
        }
        Check::Trend(r, trend, by) => {
            let groups = group_means(select(table, r, Some(by))?)?;
            if groups.len() < 2 {
                bail!("a trend needs at least two values of `{by}`, found {}", groups.len());
            }
            let ok = groups.windows(2).all(|w| trend.holds(w[0].1, w[1].1));
            let series: Vec<String> = groups.iter().map(|(x, v)| format!("{}:{}", show(*x), show(*v))).collect();
            Ok((ok, format!("{} over {by} ({})", trend.name(), series.join(", "))))
        }
        Check::Budget => budget(table),
    })();
    match result {
        Ok((passed, detail)) => Outcome {
            label: a.label.clone(),
            passed,
            detail,
        },
        Err(e) => Outcome {
            label: a.label.clone(),
            passed: false,
            detail: format!("{e:#}"),
        },
    }
}

/// Parses, checks columns and evaluates every assertion.
pub fn verify(table: &Table, expectations: &str) -> Result<Vec<Outcome>, ParseError> {
    let assertions = parse_expectations(expectations)?;
    check_columns(&assertions, table)?;
    Ok(assertions.iter().map(|a| evaluate(table, a)).collect())
}
