use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::ast::*;
use super::lexer::{lex, logical_lines, LogicalLine, Tok};
use super::{ParseError, ParseErrorKind, MAX_DEPTH};

const RESERVED: &[&str] = &[
    "def",
    "assert",
    "else",
    "while",
    "if",
    "break",
    "not",
    "to",
    "final_answer",
];

/// Parses one plan starting with a `def name():` header.
pub fn parse_plan(source: &str) -> Result<PlanAst, ParseError> {
    let lines = logical_lines(source)?;
    let Some(header) = lines.first() else {
        return Err(ParseError::new(
            1,
            ParseErrorKind::BadHeader,
            "missing `def <name>():` header",
        ));
    };
    if header.indent != 0 {
        return Err(ParseError::new(
            header.line,
            ParseErrorKind::BadHeader,
            "header must start at column 0",
        ));
    }
    let name = parse_header(header)?;
    let Some(first) = lines.get(1) else {
        return Err(ParseError::new(
            header.line,
            ParseErrorKind::EmptyBody,
            "plan has no body",
        ));
    };
    if first.indent == 0 {
        return Err(ParseError::new(
            first.line,
            ParseErrorKind::BadIndent,
            "plan body must be indented",
        ));
    }
    let mut parser = Parser { lines: &lines, pos: 1 };
    let items = parser.block(first.indent, 1)?;
    let body = no_breaks(items)?;
    if let Some(rest) = lines.get(parser.pos) {
        return Err(ParseError::new(
            rest.line,
            ParseErrorKind::BadIndent,
            "unexpected dedent after plan body",
        ));
    }
    Ok(PlanAst { name, body })
}

/// `true` for names matching `[a-z][a-z0-9_]*`.
pub fn is_plan_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some('a'..='z')) && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn parse_header(header: &LogicalLine) -> Result<String, ParseError> {
    let bad = |msg: &str| ParseError::new(header.line, ParseErrorKind::BadHeader, msg);
    let toks = lex(&header.text, header.line).map_err(|e| bad(&e.message))?;
    match toks.as_slice() {
        [Tok::Ident(def), Tok::Ident(name), Tok::LParen, Tok::RParen, Tok::Colon] if def == "def" => {
            if is_plan_name(name) {
                Ok(name.clone())
            } else {
                Err(bad("plan name must match [a-z][a-z0-9_]*"))
            }
        }
        _ => Err(bad("expected `def <name>():`")),
    }
}

enum Item {
    Stmt(Statement),
    Break { line: usize, condition: Condition },
}

fn no_breaks(items: Vec<Item>) -> Result<Vec<Statement>, ParseError> {
    items
        .into_iter()
        .map(|item| match item {
            Item::Stmt(s) => Ok(s),
            Item::Break { line, .. } => Err(ParseError::new(
                line,
                ParseErrorKind::UnknownConstruct,
                "`break` is only allowed as the last statement of a loop",
            )),
        })
        .collect()
}

struct Parser<'a> {
    lines: &'a [LogicalLine],
    pos: usize,
}

impl Parser<'_> {
    fn block(&mut self, indent: usize, depth: usize) -> Result<Vec<Item>, ParseError> {
        if depth > MAX_DEPTH {
            let line = self.lines.get(self.pos).map_or(0, |l| l.line);
            return Err(ParseError::new(
                line,
                ParseErrorKind::BadIndent,
                "plan nested deeper than 4 levels",
            ));
        }
        let mut items = Vec::new();
        while let Some(line) = self.lines.get(self.pos) {
            if line.indent < indent {
                break;
            }
            if line.indent > indent {
                return Err(ParseError::new(
                    line.line,
                    ParseErrorKind::BadIndent,
                    "unexpected indent",
                ));
            }
            self.pos += 1;
            self.statement(line, depth, &mut items)?;
        }
        Ok(items)
    }

    /// Parses the indented block opened by `opener`.
    fn nested(&mut self, opener: &LogicalLine, depth: usize) -> Result<Vec<Item>, ParseError> {
        match self.lines.get(self.pos) {
            Some(next) if next.indent > opener.indent => self.block(next.indent, depth),
            _ => Err(ParseError::new(
                opener.line,
                ParseErrorKind::EmptyBody,
                "block has no statements",
            )),
        }
    }

    fn statement(&mut self, line: &LogicalLine, depth: usize, out: &mut Vec<Item>) -> Result<(), ParseError> {
        let mut toks = lex(&line.text, line.line)?;
        if let Some(Tok::Comment(text)) = toks.last().cloned() {
            toks.pop();
            out.push(Item::Stmt(Statement::new(line.line, StmtKind::Comment(text))));
            if toks.is_empty() {
                return Ok(());
            }
        }
        let mut cur = Cursor::new(&toks, line.line);
        let Some(Tok::Ident(head)) = cur.peek().cloned() else {
            return Err(cur.unknown("statement must start with an identifier"));
        };
        match head.as_str() {
            "else" => Err(ParseError::new(
                line.line,
                ParseErrorKind::DanglingElse,
                "`else` without a matching `assert` or `if`",
            )),
            "assert" => {
                let predicate = cur.assertion()?;
                let recovery = if cur.at_end() {
                    self.detached_else(line, depth)?
                } else {
                    cur.expect_ident("else")?;
                    cur.expect(&Tok::Colon)?;
                    if cur.at_end() {
                        // `assert(...) else:` with the recovery block below
                        no_breaks(self.nested(line, depth + 1)?)?
                    } else {
                        alloc::vec![inline_statement(&mut cur, depth + 1)?]
                    }
                };
                out.push(Item::Stmt(Statement::new(
                    line.line,
                    StmtKind::AssertRecover { predicate, recovery },
                )));
                Ok(())
            }
            "while" => {
                cur.bump();
                let guard = cur.predicate()?;
                cur.expect(&Tok::Colon)?;
                cur.finish()?;
                let mut items = self.nested(line, depth + 1)?;
                let break_if = match items.last() {
                    Some(Item::Break { .. }) => match items.pop() {
                        Some(Item::Break { condition, .. }) => Some(condition),
                        _ => None,
                    },
                    _ => None,
                };
                let body = no_breaks(items)?;
                if body.is_empty() {
                    return Err(ParseError::new(
                        line.line,
                        ParseErrorKind::EmptyBody,
                        "loop body has no statements",
                    ));
                }
                out.push(Item::Stmt(Statement::new(
                    line.line,
                    StmtKind::Loop { guard, body, break_if },
                )));
                Ok(())
            }
            "if" => {
                cur.bump();
                let condition = cur.condition()?;
                cur.expect(&Tok::Colon)?;
                if !cur.at_end() {
                    cur.expect_ident("break")?;
                    cur.finish()?;
                    out.push(Item::Break {
                        line: line.line,
                        condition,
                    });
                    return Ok(());
                }
                let then_body = no_breaks(self.nested(line, depth + 1)?)?;
                let else_body = match self.lines.get(self.pos) {
                    Some(next) if next.indent == line.indent && is_else_line(next) => {
                        self.pos += 1;
                        let toks = lex(&next.text, next.line)?;
                        if toks.len() != 2 {
                            return Err(ParseError::new(
                                next.line,
                                ParseErrorKind::UnknownConstruct,
                                "`else:` of an `if` takes an indented block",
                            ));
                        }
                        no_breaks(self.nested(next, depth + 1)?)?
                    }
                    _ => Vec::new(),
                };
                out.push(Item::Stmt(Statement::new(
                    line.line,
                    StmtKind::Conditional {
                        condition,
                        then_body,
                        else_body,
                    },
                )));
                Ok(())
            }
            _ => {
                let stmt = inline_statement(&mut cur, depth)?;
                out.push(Item::Stmt(stmt));
                Ok(())
            }
        }
    }

    /// An `else:` line following an `assert`, at the same or a deeper indent.
    fn detached_else(&mut self, assert_line: &LogicalLine, depth: usize) -> Result<Vec<Statement>, ParseError> {
        let Some(next) = self.lines.get(self.pos) else {
            return Ok(Vec::new());
        };
        if next.indent < assert_line.indent || !is_else_line(next) {
            return Ok(Vec::new());
        }
        self.pos += 1;
        let toks = lex(&next.text, next.line)?;
        let mut cur = Cursor::new(&toks, next.line);
        cur.expect_ident("else")?;
        cur.expect(&Tok::Colon)?;
        if cur.at_end() {
            no_breaks(self.nested(next, depth + 1)?)
        } else {
            if depth + 1 > MAX_DEPTH {
                return Err(ParseError::new(
                    next.line,
                    ParseErrorKind::BadIndent,
                    "plan nested deeper than 4 levels",
                ));
            }
            Ok(alloc::vec![inline_statement(&mut cur, depth + 1)?])
        }
    }
}

fn is_else_line(line: &LogicalLine) -> bool {
    line.text == "else:" || line.text.starts_with("else:") || line.text.starts_with("else :")
}

/// A single-line statement: call, binding, `final_answer`, or an `assert`
/// with its recovery on the same line.
fn inline_statement(cur: &mut Cursor<'_>, depth: usize) -> Result<Statement, ParseError> {
    if depth > MAX_DEPTH {
        return Err(ParseError::new(
            cur.line,
            ParseErrorKind::BadIndent,
            "plan nested deeper than 4 levels",
        ));
    }
    let line = cur.line;
    let Some(Tok::Ident(head)) = cur.peek().cloned() else {
        return Err(cur.unknown("statement must start with an identifier"));
    };
    let kind = match head.as_str() {
        "assert" => {
            let predicate = cur.assertion()?;
            let recovery = if cur.at_end() {
                Vec::new()
            } else {
                cur.expect_ident("else")?;
                cur.expect(&Tok::Colon)?;
                alloc::vec![inline_statement(cur, depth + 1)?]
            };
            StmtKind::AssertRecover { predicate, recovery }
        }
        "final_answer" => {
            cur.bump();
            cur.expect(&Tok::LParen)?;
            let expr = cur.expr()?;
            cur.expect(&Tok::RParen)?;
            StmtKind::Return(expr)
        }
        "else" => {
            return Err(ParseError::new(
                line,
                ParseErrorKind::DanglingElse,
                "`else` without a matching `assert` or `if`",
            ));
        }
        name if RESERVED.contains(&name) => return Err(cur.unknown("unexpected keyword")),
        _ => {
            if cur.peek_at(1) == Some(&Tok::Eq) {
                cur.bump();
                cur.bump();
                let value = cur.expr()?;
                StmtKind::Binding { target: head, value }
            } else {
                let call = cur.call()?;
                StmtKind::Action(call)
            }
        }
    };
    cur.finish()?;
    Ok(Statement::new(line, kind))
}

struct Cursor<'a> {
    toks: &'a [Tok],
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn new(toks: &'a [Tok], line: usize) -> Self {
        Cursor { toks, pos: 0, line }
    }

    fn unknown(&self, msg: &str) -> ParseError {
        ParseError::new(self.line, ParseErrorKind::UnknownConstruct, msg)
    }

    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, offset: usize) -> Option<&'a Tok> {
        self.toks.get(self.pos + offset)
    }

    fn bump(&mut self) -> Option<&'a Tok> {
        let tok = self.toks.get(self.pos);
        self.pos += 1;
        tok
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.unknown("unexpected trailing tokens"))
        }
    }

    fn expect(&mut self, tok: &Tok) -> Result<(), ParseError> {
        if self.peek() == Some(tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unknown("unexpected token"))
        }
    }

    fn expect_ident(&mut self, word: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Ident(w)) if w == word => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.unknown("unexpected token")),
        }
    }

    fn eat_ident(&mut self, word: &str) -> bool {
        self.expect_ident(word).is_ok()
    }

    fn assertion(&mut self) -> Result<Predicate, ParseError> {
        self.expect_ident("assert")?;
        self.expect(&Tok::LParen)?;
        let predicate = self.predicate()?;
        self.expect(&Tok::RParen)?;
        Ok(predicate)
    }

    fn word(&mut self) -> Option<String> {
        match self.peek() {
            Some(Tok::Str(s)) | Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Some(s)
            }
            _ => None,
        }
    }

    /// `[not] 'rel' to 'obj'`, `[not] rel('obj')` or
    /// `[not] TextInspectorTool.contains('probe')`.
    fn predicate(&mut self) -> Result<Predicate, ParseError> {
        let negated = self.eat_ident("not");
        if let (Some(Tok::Ident(tool)), Some(Tok::Dot)) = (self.peek(), self.peek_at(1)) {
            if tool != "TextInspectorTool" {
                return Err(self.unknown("only TextInspectorTool.contains is supported as a probe"));
            }
            self.pos += 2;
            self.expect_ident("contains")?;
            self.expect(&Tok::LParen)?;
            let Some(Tok::Str(probe)) = self.bump().cloned() else {
                return Err(self.unknown("contains() takes a string probe"));
            };
            self.expect(&Tok::RParen)?;
            return Ok(Predicate {
                relation: Relation::Contains,
                subject: probe,
                negated,
            });
        }
        let rel = self.word().ok_or_else(|| self.unknown("expected a relation"))?;
        let relation = Relation::from_name(&rel).ok_or_else(|| self.unknown("unknown relation"))?;
        let subject = if self.eat_ident("to") {
            self.word()
                .ok_or_else(|| self.unknown("expected an object after `to`"))?
        } else {
            self.expect(&Tok::LParen)?;
            let subject = self.word().ok_or_else(|| self.unknown("expected an object"))?;
            self.expect(&Tok::RParen)?;
            subject
        };
        Ok(Predicate {
            relation,
            subject,
            negated,
        })
    }

    fn condition(&mut self) -> Result<Condition, ParseError> {
        let start = self.pos;
        if let Ok(p) = self.predicate() {
            return Ok(Condition::Predicate(p));
        }
        self.pos = start;
        let negated = self.eat_ident("not");
        match self.bump() {
            Some(Tok::Ident(name)) if !RESERVED.contains(&name.as_str()) => Ok(Condition::Flag {
                name: name.clone(),
                negated,
            }),
            _ => Err(self.unknown("expected a predicate or a flag")),
        }
    }

    fn call(&mut self) -> Result<Call, ParseError> {
        let Some(Tok::Ident(name)) = self.bump().cloned() else {
            return Err(self.unknown("expected a call"));
        };
        if RESERVED.contains(&name.as_str()) {
            return Err(self.unknown("unexpected keyword"));
        }
        self.expect(&Tok::LParen)?;
        let mut args = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                args.push(self.arg()?);
                if self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        self.expect(&Tok::RParen)?;
        Ok(Call { name, args })
    }

    fn arg(&mut self) -> Result<Arg, ParseError> {
        if let (Some(Tok::Ident(k)), Some(Tok::Eq)) = (self.peek(), self.peek_at(1)) {
            let keyword = k.clone();
            self.pos += 2;
            return Ok(Arg {
                keyword: Some(keyword),
                value: self.value()?,
            });
        }
        Ok(Arg {
            keyword: None,
            value: self.value()?,
        })
    }

    fn value(&mut self) -> Result<Value, ParseError> {
        match self.bump() {
            Some(Tok::Str(s)) => Ok(Value::Str(s.clone())),
            Some(Tok::Int(i)) => Ok(Value::Int(*i)),
            Some(Tok::Ident(v)) if !RESERVED.contains(&v.as_str()) => Ok(Value::Var(v.clone())),
            _ => Err(self.unknown("expected a literal or variable")),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let base = match (self.peek(), self.peek_at(1)) {
            (Some(Tok::Ident(_)), Some(Tok::LParen)) => ExprBase::Call(self.call()?),
            _ => ExprBase::Value(self.value()?),
        };
        let mut path = Vec::new();
        while self.peek() == Some(&Tok::LBracket) {
            self.pos += 1;
            match self.bump() {
                Some(Tok::Int(i)) => path.push(Accessor::Index(*i)),
                Some(Tok::Str(k)) => path.push(Accessor::Key(k.to_string())),
                _ => return Err(self.unknown("accessor must be an integer or string")),
            }
            self.expect(&Tok::RBracket)?;
        }
        Ok(Expr { base, path })
    }
}
