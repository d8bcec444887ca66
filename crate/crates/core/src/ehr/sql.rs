//! Interpreter for the restricted SQL dialect the compiler emits.
//!
//! Supported: `SELECT [DISTINCT] pat_id FROM <table> [WHERE cond AND ...]`
//! with `col = lit`, `col <op> lit` and `col IN (lit, ...)` conditions,
//! combined with `UNION`, `INTERSECT` and `EXCEPT` (INTERSECT binds tighter,
//! the others associate left). Set operators have set semantics.

use std::collections::HashSet;

use chrono::NaiveDate;
use thiserror::Error;

use super::{CohortRegistry, EhrStore, EventRow, EventTable, PatientRow, PatientSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SqlError {
    #[error("sql syntax error at {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{column}` in table `{table}`")]
    UnknownColumn { table: String, column: String },
    #[error("cannot compare column `{column}` with {literal}")]
    TypeMismatch { column: String, literal: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Num(f64),
    LParen,
    RParen,
    Comma,
    Op(CmpOp),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

fn lex(sql: &str) -> Result<Vec<(usize, Tok)>, SqlError> {
    let bytes = sql.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        match c {
            _ if c.is_ascii_whitespace() => i += 1,
            '(' => {
                out.push((start, Tok::LParen));
                i += 1;
            }
            ')' => {
                out.push((start, Tok::RParen));
                i += 1;
            }
            ',' => {
                out.push((start, Tok::Comma));
                i += 1;
            }
            '\'' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match sql[i..].find('\'') {
                        None => {
                            return Err(SqlError::Syntax {
                                position: start,
                                message: "unterminated string".into(),
                            })
                        }
                        Some(off) => {
                            s.push_str(&sql[i..i + off]);
                            i += off + 1;
                            if bytes.get(i) == Some(&b'\'') {
                                s.push('\'');
                                i += 1;
                            } else {
                                break;
                            }
                        }
                    }
                }
                out.push((start, Tok::Str(s)));
            }
            '=' => {
                out.push((start, Tok::Op(CmpOp::Eq)));
                i += 1;
            }
            '<' | '>' => {
                let next = bytes.get(i + 1).copied();
                let (op, len) = match (c, next) {
                    ('<', Some(b'=')) => (CmpOp::Le, 2),
                    ('<', Some(b'>')) => (CmpOp::Ne, 2),
                    ('<', _) => (CmpOp::Lt, 1),
                    ('>', Some(b'=')) => (CmpOp::Ge, 2),
                    _ => (CmpOp::Gt, 1),
                };
                out.push((start, Tok::Op(op)));
                i += len;
            }
            _ if c.is_ascii_digit() || c == '-' || c == '.' => {
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                let n = sql[start..i].parse().map_err(|_| SqlError::Syntax {
                    position: start,
                    message: "bad number".into(),
                })?;
                out.push((start, Tok::Num(n)));
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Word(sql[start..i].to_string())));
            }
            _ => {
                return Err(SqlError::Syntax {
                    position: start,
                    message: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
enum Literal {
    Str(String),
    Num(f64),
    Bool(bool),
}

impl std::fmt::Display for Literal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Literal::Str(s) => write!(f, "'{s}'"),
            Literal::Num(n) => write!(f, "{n}"),
            Literal::Bool(b) => write!(f, "{}", if *b { "TRUE" } else { "FALSE" }),
        }
    }
}

#[derive(Debug, Clone)]
enum Cond {
    Cmp(String, CmpOp, Literal),
    In(String, Vec<Literal>),
}

#[derive(Debug, Clone)]
enum SetQuery {
    Select {
        table: String,
        column: String,
        conds: Vec<Cond>,
    },
    Union(Box<SetQuery>, Box<SetQuery>),
    Intersect(Box<SetQuery>, Box<SetQuery>),
    Except(Box<SetQuery>, Box<SetQuery>),
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn err<T>(&self, message: &str) -> Result<T, SqlError> {
        Err(SqlError::Syntax {
            position: self.toks.get(self.at).map(|(p, _)| *p).unwrap_or(self.len),
            message: message.to_string(),
        })
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.is_kw(kw) {
            self.at += 1;
            Ok(())
        } else {
            self.err(&format!("expected {kw}"))
        }
    }

    fn ident(&mut self) -> Result<String, SqlError> {
        match self.peek() {
            Some(Tok::Word(w)) => {
                let w = w.clone();
                self.at += 1;
                Ok(w)
            }
            _ => self.err("expected identifier"),
        }
    }

    fn query(&mut self) -> Result<SetQuery, SqlError> {
        let mut left = self.intersect()?;
        loop {
            if self.is_kw("UNION") {
                self.at += 1;
                left = SetQuery::Union(Box::new(left), Box::new(self.intersect()?));
            } else if self.is_kw("EXCEPT") {
                self.at += 1;
                left = SetQuery::Except(Box::new(left), Box::new(self.intersect()?));
            } else {
                return Ok(left);
            }
        }
    }

    fn intersect(&mut self) -> Result<SetQuery, SqlError> {
        let mut left = self.primary()?;
        while self.is_kw("INTERSECT") {
            self.at += 1;
            left = SetQuery::Intersect(Box::new(left), Box::new(self.primary()?));
        }
        Ok(left)
    }

    fn primary(&mut self) -> Result<SetQuery, SqlError> {
        if self.peek() == Some(&Tok::LParen) {
            self.at += 1;
            let q = self.query()?;
            if self.peek() != Some(&Tok::RParen) {
                return self.err("expected `)`");
            }
            self.at += 1;
            return Ok(q);
        }
        self.expect_kw("SELECT")?;
        if self.is_kw("DISTINCT") {
            self.at += 1;
        }
        let column = self.ident()?;
        self.expect_kw("FROM")?;
        let table = self.ident()?;
        let mut conds = Vec::new();
        if self.is_kw("WHERE") {
            self.at += 1;
            conds.push(self.cond()?);
            while self.is_kw("AND") {
                self.at += 1;
                conds.push(self.cond()?);
            }
        }
        Ok(SetQuery::Select {
            table,
            column,
            conds,
        })
    }

    fn literal(&mut self) -> Result<Literal, SqlError> {
        let lit = match self.peek() {
            Some(Tok::Str(s)) => Literal::Str(s.clone()),
            Some(Tok::Num(n)) => Literal::Num(*n),
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("TRUE") => Literal::Bool(true),
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("FALSE") => Literal::Bool(false),
            _ => return self.err("expected literal"),
        };
        self.at += 1;
        Ok(lit)
    }

    fn cond(&mut self) -> Result<Cond, SqlError> {
        let column = self.ident()?;
        if self.is_kw("IN") {
            self.at += 1;
            if self.peek() != Some(&Tok::LParen) {
                return self.err("expected `(` after IN");
            }
            self.at += 1;
            let mut list = vec![self.literal()?];
            while self.peek() == Some(&Tok::Comma) {
                self.at += 1;
                list.push(self.literal()?);
            }
            if self.peek() != Some(&Tok::RParen) {
                return self.err("expected `)` closing IN list");
            }
            self.at += 1;
            return Ok(Cond::In(column, list));
        }
        let op = match self.peek() {
            Some(Tok::Op(op)) => *op,
            _ => return self.err("expected comparison operator"),
        };
        self.at += 1;
        Ok(Cond::Cmp(column, op, self.literal()?))
    }
}

fn parse(sql: &str) -> Result<SetQuery, SqlError> {
    let mut p = Parser {
        toks: lex(sql)?,
        at: 0,
        len: sql.len(),
    };
    let q = p.query()?;
    if p.at != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq)]
enum Value<'a> {
    Str(&'a str),
    Date(NaiveDate),
    Bool(bool),
    Num(Option<f64>),
}

trait Row {
    fn value(&self, column: &str) -> Option<Value<'_>>;
    fn pat_id(&self) -> &str;
}

impl Row for PatientRow {
    fn value(&self, column: &str) -> Option<Value<'_>> {
        Some(match column {
            "pat_id" => Value::Str(&self.pat_id),
            "birth_date" => Value::Date(self.birth_date),
            "sex" => Value::Str(self.sex.as_str()),
            "practice_id" => Value::Str(&self.practice_id),
            "district" => Value::Str(&self.district),
            "active" => Value::Bool(self.active),
            _ => return None,
        })
    }
    fn pat_id(&self) -> &str {
        &self.pat_id
    }
}

impl Row for EventRow {
    fn value(&self, column: &str) -> Option<Value<'_>> {
        Some(match column {
            "pat_id" => Value::Str(&self.pat_id),
            "code" => Value::Str(&self.code),
            "event_date" => Value::Date(self.event_date),
            "value" => Value::Num(self.value),
            _ => return None,
        })
    }
    fn pat_id(&self) -> &str {
        &self.pat_id
    }
}

struct CohortRow<'a> {
    cohort_id: &'a str,
    pat_id: &'a str,
}

impl Row for CohortRow<'_> {
    fn value(&self, column: &str) -> Option<Value<'_>> {
        match column {
            "cohort_id" => Some(Value::Str(self.cohort_id)),
            "pat_id" => Some(Value::Str(self.pat_id)),
            _ => None,
        }
    }
    fn pat_id(&self) -> &str {
        self.pat_id
    }
}

/// Condition compiled against a concrete column type.
enum Test {
    StrEq(String, bool),
    StrIn(HashSet<String>),
    Date(CmpOp, NaiveDate),
    DateIn(HashSet<NaiveDate>),
    Bool(bool, bool),
    Num(CmpOp, f64),
}

fn cmp<T: PartialOrd>(op: CmpOp, a: T, b: T) -> bool {
    match op {
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::Lt => a < b,
        CmpOp::Le => a <= b,
        CmpOp::Gt => a > b,
        CmpOp::Ge => a >= b,
    }
}

fn as_date(lit: &Literal) -> Option<NaiveDate> {
    match lit {
        Literal::Str(s) => NaiveDate::parse_from_str(s, "%Y-%m-%d").ok(),
        _ => None,
    }
}

fn prepare(cond: &Cond, sample: &Value<'_>) -> Result<Test, SqlError> {
    let column = match cond {
        Cond::Cmp(c, ..) | Cond::In(c, _) => c,
    };
    let mismatch = |lit: &Literal| SqlError::TypeMismatch {
        column: column.clone(),
        literal: lit.to_string(),
    };
    match (cond, sample) {
        (Cond::Cmp(_, op, lit), Value::Str(_)) => match (op, lit) {
            (CmpOp::Eq | CmpOp::Ne, Literal::Str(s)) => Ok(Test::StrEq(s.clone(), *op == CmpOp::Eq)),
            _ => Err(mismatch(lit)),
        },
        (Cond::In(_, list), Value::Str(_)) => list
            .iter()
            .map(|l| match l {
                Literal::Str(s) => Ok(s.clone()),
                other => Err(mismatch(other)),
            })
            .collect::<Result<_, _>>()
            .map(Test::StrIn),
        (Cond::Cmp(_, op, lit), Value::Date(_)) => {
            as_date(lit).map(|d| Test::Date(*op, d)).ok_or_else(|| mismatch(lit))
        }
        (Cond::In(_, list), Value::Date(_)) => list
            .iter()
            .map(|l| as_date(l).ok_or_else(|| mismatch(l)))
            .collect::<Result<_, _>>()
            .map(Test::DateIn),
        (Cond::Cmp(_, op @ (CmpOp::Eq | CmpOp::Ne), Literal::Bool(b)), Value::Bool(_)) => {
            Ok(Test::Bool(*b, *op == CmpOp::Eq))
        }
        (Cond::Cmp(_, op, Literal::Num(n)), Value::Num(_)) => Ok(Test::Num(*op, *n)),
        (Cond::Cmp(_, _, lit), _) => Err(mismatch(lit)),
        (Cond::In(_, list), _) => Err(mismatch(list.first().unwrap_or(&Literal::Bool(false)))),
    }
}

fn passes(test: &Test, v: &Value<'_>) -> bool {
    match (test, v) {
        (Test::StrEq(s, eq), Value::Str(x)) => (*x == s) == *eq,
        (Test::StrIn(set), Value::Str(x)) => set.contains(*x),
        (Test::Date(op, d), Value::Date(x)) => cmp(*op, *x, *d),
        (Test::DateIn(set), Value::Date(x)) => set.contains(x),
        (Test::Bool(b, eq), Value::Bool(x)) => (x == b) == *eq,
        (Test::Num(op, n), Value::Num(Some(x))) => cmp(*op, *x, *n),
        _ => false,
    }
}

fn scan<'r, R: Row + 'r>(
    table: &str,
    column: &str,
    conds: &[Cond],
    rows: impl Iterator<Item = &'r R>,
    probe: &R,
) -> Result<PatientSet, SqlError> {
    let unknown = |c: &str| SqlError::UnknownColumn {
        table: table.to_string(),
        column: c.to_string(),
    };
    if column != "pat_id" {
        return Err(unknown(column));
    }
    let mut tests = Vec::with_capacity(conds.len());
    for cond in conds {
        let col = match cond {
            Cond::Cmp(c, ..) | Cond::In(c, _) => c.as_str(),
        };
        let sample = probe.value(col).ok_or_else(|| unknown(col))?;
        tests.push((col, prepare(cond, &sample)?));
    }
    Ok(rows
        .filter(|r| {
            tests
                .iter()
                .all(|(col, t)| r.value(col).is_some_and(|v| passes(t, &v)))
        })
        .map(|r| r.pat_id().to_string())
        .collect())
}

fn probe_patient() -> PatientRow {
    PatientRow {
        pat_id: String::new(),
        birth_date: NaiveDate::MIN,
        sex: super::Sex::Female,
        practice_id: String::new(),
        district: String::new(),
        active: false,
    }
}

fn probe_event() -> EventRow {
    EventRow {
        pat_id: String::new(),
        table: EventTable::Conditions,
        code: String::new(),
        event_date: NaiveDate::MIN,
        value: None,
    }
}

fn run(q: &SetQuery, store: &EhrStore, cohorts: &CohortRegistry) -> Result<PatientSet, SqlError> {
    match q {
        SetQuery::Union(a, b) => {
            let mut l = run(a, store, cohorts)?;
            l.extend(run(b, store, cohorts)?);
            Ok(l)
        }
        SetQuery::Intersect(a, b) => {
            let l = run(a, store, cohorts)?;
            let r = run(b, store, cohorts)?;
            Ok(l.intersection(&r).cloned().collect())
        }
        SetQuery::Except(a, b) => {
            let l = run(a, store, cohorts)?;
            let r = run(b, store, cohorts)?;
            Ok(l.difference(&r).cloned().collect())
        }
        SetQuery::Select {
            table,
            column,
            conds,
        } => {
            let event_table = match table.to_ascii_lowercase().as_str() {
                "patient" => {
                    return scan(table, column, conds, store.patients().iter(), &probe_patient())
                }
                "cohort" => {
                    let records = cohorts.snapshot();
                    let rows: Vec<CohortRow<'_>> = records
                        .iter()
                        .flat_map(|rec| {
                            rec.patient_ids.iter().map(|p| CohortRow {
                                cohort_id: &rec.cohort_id,
                                pat_id: p,
                            })
                        })
                        .collect();
                    let probe = CohortRow {
                        cohort_id: "",
                        pat_id: "",
                    };
                    return scan(table, column, conds, rows.iter(), &probe);
                }
                "conditions" => EventTable::Conditions,
                "medications" => EventTable::Medications,
                "observations" => EventTable::Observations,
                _ => return Err(SqlError::UnknownTable(table.clone())),
            };
            scan(
                table,
                column,
                conds,
                store.events().iter().filter(|e| e.table == event_table),
                &probe_event(),
            )
        }
    }
}

/// Parse and execute `sql`, returning the distinct `pat_id`s it selects.
pub fn execute_sql(
    sql: &str,
    store: &EhrStore,
    cohorts: &CohortRegistry,
) -> Result<PatientSet, SqlError> {
    run(&parse(sql)?, store, cohorts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::Sex;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn store() -> EhrStore {
        let p = |id: &str, sex, active| PatientRow {
            pat_id: id.into(),
            birth_date: d("1980-01-01"),
            sex,
            practice_id: "P001".into(),
            district: "North".into(),
            active,
        };
        let e = |id: &str, code: &str, date: &str| EventRow {
            pat_id: id.into(),
            table: EventTable::Medications,
            code: code.into(),
            event_date: d(date),
            value: None,
        };
        EhrStore::new(
            vec![p("A", Sex::Female, true), p("B", Sex::Male, true), p("C", Sex::Male, false)],
            vec![e("A", "1", "2025-05-01"), e("B", "1", "2024-01-01"), e("B", "2", "2025-06-01")],
            None,
        )
        .unwrap()
    }

    fn q(sql: &str) -> Vec<String> {
        execute_sql(sql, &store(), &CohortRegistry::default())
            .unwrap()
            .into_iter()
            .collect()
    }

    #[test]
    fn select_with_in_and_date() {
        assert_eq!(
            q("SELECT DISTINCT pat_id FROM Medications WHERE code IN ('1','3') AND event_date >= '2025-01-01'"),
            vec!["A"]
        );
        assert_eq!(q("SELECT pat_id FROM Medications WHERE code IN ('1')"), vec!["A", "B"]);
    }

    #[test]
    fn set_operators() {
        assert_eq!(
            q("SELECT pat_id FROM Patient EXCEPT (SELECT pat_id FROM Patient WHERE active = TRUE)"),
            vec!["C"]
        );
        assert_eq!(
            q("(SELECT pat_id FROM Patient WHERE sex = 'male') INTERSECT (SELECT pat_id FROM Medications WHERE code IN ('2'))"),
            vec!["B"]
        );
        // INTERSECT binds tighter than UNION
        assert_eq!(
            q("SELECT pat_id FROM Patient WHERE sex = 'female' UNION SELECT pat_id FROM Patient WHERE active = FALSE INTERSECT SELECT pat_id FROM Patient WHERE sex = 'female'"),
            vec!["A"]
        );
    }

    #[test]
    fn errors() {
        let s = store();
        let c = CohortRegistry::default();
        assert!(matches!(
            execute_sql("SELECT pat_id FROM Nope", &s, &c),
            Err(SqlError::UnknownTable(_))
        ));
        assert!(matches!(
            execute_sql("SELECT pat_id FROM Patient WHERE colour = 'x'", &s, &c),
            Err(SqlError::UnknownColumn { .. })
        ));
        assert!(matches!(
            execute_sql("SELECT pat_id FROM Patient WHERE active = 'yes'", &s, &c),
            Err(SqlError::TypeMismatch { .. })
        ));
        assert!(matches!(
            execute_sql("SELECT pat_id FROM Patient WHERE", &s, &c),
            Err(SqlError::Syntax { .. })
        ));
        assert!(matches!(
            execute_sql("SELECT pat_id FROM Patient WHERE sex = 'fem", &s, &c),
            Err(SqlError::Syntax { .. })
        ));
    }

    #[test]
    fn quoted_quotes() {
        assert!(q("SELECT pat_id FROM Patient WHERE district = 'O''Neil'").is_empty());
    }
}
