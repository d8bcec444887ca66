use thiserror::Error;

use super::{QueryExpr, MAX_DEPTH, MAX_EXPR_CHARS};

/// Nesting of parentheses/NOT tolerated while parsing, before the AST depth
/// check runs. Bounds recursion on hostile input.
const MAX_NESTING: usize = 2 * MAX_DEPTH;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at position {position}: expected {expected}")]
    SyntaxError { position: usize, expected: String },
    #[error("expression nests deeper than {MAX_DEPTH}")]
    DepthExceeded,
    #[error("expression longer than {MAX_EXPR_CHARS} characters")]
    TooLong,
}

pub fn is_keyword(word: &str) -> bool {
    ["AND", "OR", "NOT"]
        .iter()
        .any(|k| k.eq_ignore_ascii_case(word))
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok<'a> {
    LParen,
    RParen,
    And,
    Or,
    Not,
    Ident(&'a str),
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '-' | '_' | '.' | ':')
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok<'_>)>, ParseError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '(' {
            out.push((pos, Tok::LParen));
            chars.next();
        } else if c == ')' {
            out.push((pos, Tok::RParen));
            chars.next();
        } else if is_ident_char(c) {
            let mut end = pos;
            while let Some(&(p, c)) = chars.peek() {
                if !is_ident_char(c) {
                    break;
                }
                end = p + c.len_utf8();
                chars.next();
            }
            let word = &text[pos..end];
            let tok = if word.eq_ignore_ascii_case("AND") {
                Tok::And
            } else if word.eq_ignore_ascii_case("OR") {
                Tok::Or
            } else if word.eq_ignore_ascii_case("NOT") {
                Tok::Not
            } else {
                Tok::Ident(word)
            };
            out.push((pos, tok));
        } else {
            return Err(ParseError::SyntaxError {
                position: pos,
                expected: "concept id, NOT, '(' or ')'".into(),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    at: usize,
    end: usize,
    nesting: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok<'a>> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn position(&self) -> usize {
        self.toks.get(self.at).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn fail<T>(&self, expected: &str) -> Result<T, ParseError> {
        Err(ParseError::SyntaxError {
            position: self.position(),
            expected: expected.to_string(),
        })
    }

    fn or_expr(&mut self) -> Result<QueryExpr, ParseError> {
        let mut terms = vec![self.and_expr()?];
        while self.peek() == Some(&Tok::Or) {
            self.at += 1;
            terms.push(self.and_expr()?);
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            QueryExpr::Or(terms)
        })
    }

    fn and_expr(&mut self) -> Result<QueryExpr, ParseError> {
        let mut terms = vec![self.term()?];
        while self.peek() == Some(&Tok::And) {
            self.at += 1;
            terms.push(self.term()?);
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            QueryExpr::And(terms)
        })
    }

    fn term(&mut self) -> Result<QueryExpr, ParseError> {
        self.nesting += 1;
        if self.nesting > MAX_NESTING {
            return Err(ParseError::DepthExceeded);
        }
        let out = match self.peek() {
            Some(Tok::Not) => {
                self.at += 1;
                QueryExpr::Not(Box::new(self.term()?))
            }
            Some(Tok::LParen) => {
                self.at += 1;
                let inner = self.or_expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.fail("AND, OR or ')'");
                }
                self.at += 1;
                inner
            }
            Some(Tok::Ident(word)) => {
                let word = *word;
                let r = match split_cohort(word) {
                    Some("") => return self.fail("cohort id after COHORT:"),
                    Some(id) => QueryExpr::CohortRef(id.to_string()),
                    None => QueryExpr::ConceptRef(word.to_string()),
                };
                self.at += 1;
                r
            }
            _ => return self.fail("concept id, NOT or '('"),
        };
        self.nesting -= 1;
        Ok(out)
    }
}

fn split_cohort(word: &str) -> Option<&str> {
    let prefix = "COHORT:";
    if word.len() >= prefix.len() && word[..prefix.len()].eq_ignore_ascii_case(prefix) {
        Some(&word[prefix.len()..])
    } else {
        None
    }
}

/// Parse the infix wire format into an expression tree.
pub fn parse_expr(text: &str) -> Result<QueryExpr, ParseError> {
    if text.chars().count() > MAX_EXPR_CHARS {
        return Err(ParseError::TooLong);
    }
    let mut p = Parser {
        toks: tokenize(text)?,
        at: 0,
        end: text.len(),
        nesting: 0,
    };
    let expr = p.or_expr()?;
    if p.at != p.toks.len() {
        return p.fail("AND, OR or end of input");
    }
    if expr.depth() > MAX_DEPTH {
        return Err(ParseError::DepthExceeded);
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::format_expr;

    fn c(id: &str) -> QueryExpr {
        QueryExpr::concept(id)
    }

    #[test]
    fn parses_conjunction() {
        assert_eq!(
            parse_expr("(C-DM2 AND C-SEMA-3M)").unwrap(),
            QueryExpr::and([c("C-DM2"), c("C-SEMA-3M")])
        );
    }

    #[test]
    fn parses_double_negation() {
        assert_eq!(
            parse_expr("NOT (NOT C-1)").unwrap(),
            QueryExpr::not(QueryExpr::not(c("C-1")))
        );
    }

    #[test]
    fn and_binds_tighter_than_or() {
        assert_eq!(
            parse_expr("C-1 AND C-2 OR C-3").unwrap(),
            QueryExpr::or([QueryExpr::and([c("C-1"), c("C-2")]), c("C-3")])
        );
        assert_eq!(
            parse_expr("C-1 OR C-2 AND C-3").unwrap(),
            QueryExpr::or([c("C-1"), QueryExpr::and([c("C-2"), c("C-3")])])
        );
    }

    #[test]
    fn chains_are_nary() {
        assert_eq!(
            parse_expr("(C-DM2 AND C-SEMA-3M AND C-ACTIVE)").unwrap(),
            QueryExpr::and([c("C-DM2"), c("C-SEMA-3M"), c("C-ACTIVE")])
        );
    }

    #[test]
    fn keywords_case_insensitive_and_cohort_refs() {
        assert_eq!(
            parse_expr("c-1 and not cohort:K2").unwrap(),
            QueryExpr::and([c("c-1"), QueryExpr::not(QueryExpr::cohort("K2"))])
        );
    }

    #[test]
    fn syntax_errors_carry_position() {
        assert_eq!(
            parse_expr("C-1 AND").unwrap_err(),
            ParseError::SyntaxError {
                position: 7,
                expected: "concept id, NOT or '('".into()
            }
        );
        assert!(matches!(
            parse_expr("(C-1 OR C-2"),
            Err(ParseError::SyntaxError { position: 11, .. })
        ));
        assert!(matches!(
            parse_expr("C-1 C-2"),
            Err(ParseError::SyntaxError { position: 4, .. })
        ));
        assert!(matches!(
            parse_expr("C-1 & C-2"),
            Err(ParseError::SyntaxError { position: 4, .. })
        ));
        assert!(matches!(
            parse_expr(""),
            Err(ParseError::SyntaxError { position: 0, .. })
        ));
        assert!(matches!(
            parse_expr("COHORT:"),
            Err(ParseError::SyntaxError { .. })
        ));
    }

    #[test]
    fn depth_limits() {
        let ok = format!("{}C-1", "NOT ".repeat(MAX_DEPTH - 1));
        assert_eq!(parse_expr(&ok).unwrap().depth(), MAX_DEPTH);
        let deep = format!("{}C-1", "NOT ".repeat(MAX_DEPTH));
        assert_eq!(parse_expr(&deep).unwrap_err(), ParseError::DepthExceeded);
        let parens = format!("{}C-1{}", "(".repeat(500), ")".repeat(500));
        assert_eq!(parse_expr(&parens).unwrap_err(), ParseError::DepthExceeded);
    }

    #[test]
    fn length_limit() {
        let long = vec!["C-1"; 1100].join(" OR ");
        assert_eq!(parse_expr(&long).unwrap_err(), ParseError::TooLong);
    }

    #[test]
    fn format_round_trip_example() {
        let e = parse_expr("C-1 AND C-2 OR C-3").unwrap();
        let text = format_expr(&e);
        assert_eq!(text, "((C-1 AND C-2) OR C-3)");
        assert_eq!(parse_expr(&text).unwrap(), e);
    }
}
