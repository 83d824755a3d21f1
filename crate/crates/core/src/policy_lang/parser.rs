use std::collections::HashMap;

use super::lexer::{tokenize, Spanned, Tok};
use crate::ast::*;
use crate::error::{Error, Result, SyntaxError};

/// Predicates whose prioritized and unprioritized forms coexist.
const MULTI_ARITY: &[(&str, &[usize])] = &[("permission", &[4, 5]), ("prohibition", &[4, 5])];

pub(crate) fn parse(text: &str) -> Result<PolicyProgram> {
    let (toks, mut errors) = tokenize(text);
    let mut parser = Parser { toks, pos: 0, errors: Vec::new() };
    let mut program = PolicyProgram::new();
    while parser.pos < parser.toks.len() {
        let line = parser.toks[parser.pos].line;
        match parser.statement() {
            Ok(stmt) => {
                program.statements.push(stmt);
                program.lines.push(line);
            }
            Err(e) => {
                parser.errors.push(e);
                parser.recover();
            }
        }
    }
    errors.append(&mut parser.errors);
    errors.extend(arity_errors(&program));
    if !errors.is_empty() {
        errors.sort_by_key(|e| (e.line, e.column));
        return Err(Error::Syntax(errors));
    }
    check_duplicates(&program)?;
    Ok(program)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    errors: Vec<SyntaxError>,
}

type PResult<T> = std::result::Result<T, SyntaxError>;

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, offset: usize) -> Option<&Tok> {
        self.toks.get(self.pos + offset).map(|t| &t.tok)
    }

    fn error_here(&self, message: impl Into<String>) -> SyntaxError {
        let (line, column) = match self.toks.get(self.pos).or_else(|| self.toks.last()) {
            Some(t) => (t.line, t.column),
            None => (1, 1),
        };
        SyntaxError { line, column, message: message.into() }
    }

    fn unexpected(&self, expected: &str) -> SyntaxError {
        match self.peek() {
            Some(t) => self.error_here(format!("expected {expected}, found {}", t.describe())),
            None => self.error_here(format!("expected {expected}, found end of input")),
        }
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: Tok) -> PResult<()> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected(&tok.describe()))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn keyword(&mut self, word: &str) -> PResult<()> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == word => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.unexpected(&format!("`{word}`"))),
        }
    }

    fn timestamp(&mut self) -> PResult<Timestamp> {
        match self.peek() {
            Some(Tok::Time(ts)) => {
                let ts = *ts;
                self.pos += 1;
                Ok(ts)
            }
            _ => Err(self.unexpected("timestamp YYYY-MM-DDTHH:MM:SSZ")),
        }
    }

    fn int(&mut self) -> PResult<i64> {
        match self.peek() {
            Some(Tok::Int(n)) => {
                let n = *n;
                self.pos += 1;
                Ok(n)
            }
            _ => Err(self.unexpected("integer")),
        }
    }

    /// Skips past the next statement terminator.
    fn recover(&mut self) {
        while let Some(t) = self.next() {
            if t == Tok::Dot {
                break;
            }
        }
    }

    fn statement(&mut self) -> PResult<Statement> {
        if let Some(Tok::Directive(name)) = self.peek() {
            let name = name.clone();
            self.pos += 1;
            let d = self.directive(&name)?;
            self.expect(Tok::Dot)?;
            return Ok(Statement::Directive(d));
        }
        let head = self.atom()?;
        if self.peek() == Some(&Tok::Turnstile) {
            self.pos += 1;
            let line = self.toks[self.pos.saturating_sub(1)].line;
            let body = self.conjunction()?;
            self.expect(Tok::Dot)?;
            let mut rule = Rule::new(head, body);
            rule.line = line;
            Ok(Statement::Rule(rule))
        } else {
            self.expect(Tok::Dot)?;
            Ok(Statement::Fact(head))
        }
    }

    fn conjunction(&mut self) -> PResult<Vec<Literal>> {
        let mut lits = vec![self.literal()?];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            lits.push(self.literal()?);
        }
        Ok(lits)
    }

    fn literal(&mut self) -> PResult<Literal> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == "not" && matches!(self.peek_at(1), Some(Tok::Ident(_))) => {
                self.pos += 1;
                Ok(Literal::Neg(self.atom()?))
            }
            Some(Tok::Ident(s)) if s == "count" && self.peek_at(1) == Some(&Tok::LParen) => {
                self.pos += 2;
                let var = match self.next() {
                    Some(Tok::Var(v)) => sym(&v),
                    _ => {
                        self.pos -= 1;
                        return Err(self.unexpected("counted variable"));
                    }
                };
                self.expect(Tok::Comma)?;
                let goal = if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    let g = self.conjunction()?;
                    self.expect(Tok::RParen)?;
                    g
                } else {
                    vec![self.literal()?]
                };
                self.expect(Tok::Comma)?;
                let result = self.term()?;
                self.expect(Tok::RParen)?;
                Ok(Literal::Count { var, goal, result })
            }
            Some(Tok::Ident(_)) => {
                let start = self.pos;
                let atom = self.atom()?;
                if let Some(op) = self.cmp_op() {
                    self.pos = start;
                    let lhs = self.term()?;
                    self.pos += 1;
                    let rhs = self.term()?;
                    Ok(Literal::Cmp(lhs, op, rhs))
                } else {
                    Ok(Literal::Pos(atom))
                }
            }
            Some(Tok::Var(_)) | Some(Tok::Int(_)) => {
                let lhs = self.term()?;
                let op = self.cmp_op().ok_or_else(|| self.unexpected("comparison operator"))?;
                self.pos += 1;
                let rhs = self.term()?;
                Ok(Literal::Cmp(lhs, op, rhs))
            }
            _ => Err(self.unexpected("literal")),
        }
    }

    fn cmp_op(&self) -> Option<CmpOp> {
        match self.peek()? {
            Tok::Lt => Some(CmpOp::Lt),
            Tok::Le => Some(CmpOp::Le),
            Tok::Gt => Some(CmpOp::Gt),
            Tok::Ge => Some(CmpOp::Ge),
            Tok::Eq => Some(CmpOp::Eq),
            Tok::Ne => Some(CmpOp::Ne),
            _ => None,
        }
    }

    fn atom(&mut self) -> PResult<Atom> {
        let name = self.ident("predicate name")?;
        if name == "not" || name == "count" {
            self.pos -= 1;
            return Err(self.error_here(format!("`{name}` is reserved")));
        }
        let args = if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            self.term_list()?
        } else {
            Vec::new()
        };
        Ok(Atom { pred: sym(&name), args })
    }

    fn term_list(&mut self) -> PResult<Vec<Term>> {
        let mut args = vec![self.term()?];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            args.push(self.term()?);
        }
        self.expect(Tok::RParen)?;
        Ok(args)
    }

    fn term(&mut self) -> PResult<Term> {
        let first = self.primary()?;
        if self.peek() != Some(&Tok::Amp) {
            return Ok(first);
        }
        let mut parts = vec![first];
        while self.peek() == Some(&Tok::Amp) {
            self.pos += 1;
            parts.push(self.primary()?);
        }
        Ok(Term::and(parts))
    }

    fn primary(&mut self) -> PResult<Term> {
        match self.next() {
            Some(Tok::Var(v)) => Ok(Term::Var(sym(&v))),
            Some(Tok::Int(n)) => Ok(Term::Int(n)),
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    Ok(Term::Param(sym(&name), self.term_list()?))
                } else {
                    Ok(Term::Sym(sym(&name)))
                }
            }
            _ => {
                self.pos -= 1;
                Err(self.unexpected("term"))
            }
        }
    }

    fn directive(&mut self, name: &str) -> PResult<Directive> {
        match name {
            "view" => {
                let view = self.ident("view name")?;
                self.keyword("sub_view_of")?;
                let parent = self.ident("parent view name")?;
                Ok(Directive::View { name: sym(&view), parent: sym(&parent) })
            }
            "context" => {
                let ctx = self.ident("context name")?;
                self.keyword("temporal")?;
                let start = self.timestamp()?;
                let end = self.timestamp()?;
                if end < start {
                    return Err(self.error_here(format!("context `{ctx}` ends before it starts")));
                }
                Ok(Directive::Temporal { name: sym(&ctx), start, end })
            }
            "priority" => {
                self.keyword("default")?;
                let n = self.int()?;
                if n < 0 {
                    return Err(self.error_here("default priority must be non-negative"));
                }
                Ok(Directive::DefaultPriority(n as u64))
            }
            "next-id" => {
                let n = self.int()?;
                if n < 0 {
                    return Err(self.error_here("identifier counter must be non-negative"));
                }
                Ok(Directive::NextId(n as u64))
            }
            "delegate" | "transfer" => {
                let kind = if name == "delegate" { DelegateKind::Delegate } else { DelegateKind::Transfer };
                let grantor = sym(&self.ident("grantor")?);
                let view = sym(&self.ident("view")?);
                let mut kv = self.key_values()?;
                let at = kv.at()?;
                let id = kv.optional_sym("id")?;
                let attrs = if kv.has("assignee") || kv.has("assignment") {
                    ObjectAttrs::Role { assignee: kv.sym("assignee")?, assignment: kv.sym("assignment")? }
                } else {
                    ObjectAttrs::License {
                        grantee: kv.sym("grantee")?,
                        privilege: kv.sym("privilege")?,
                        target: kv.sym("target")?,
                        context: kv.ground("context")?,
                    }
                };
                kv.finish()?;
                Ok(Directive::Event(Event::Delegate { kind, grantor, view, attrs, at, id }))
            }
            "grant-option" => {
                let grantor = sym(&self.ident("grantor")?);
                let mut kv = self.key_values()?;
                let event = Event::GrantOption {
                    grantor,
                    grantee: kv.sym("grantee")?,
                    target: kv.sym("target")?,
                    level: kv.int("level")?,
                    context: kv.ground("context")?,
                    at: kv.at()?,
                    id: kv.optional_sym("id")?,
                };
                kv.finish()?;
                Ok(Directive::Event(event))
            }
            "revoke" => {
                let actor = sym(&self.ident("actor")?);
                let object = sym(&self.ident("object id")?);
                let mut kv = self.key_values()?;
                let at = kv.at()?;
                kv.finish()?;
                Ok(Directive::Event(Event::Revoke { actor, object, at }))
            }
            other => {
                self.pos -= 1;
                Err(self.error_here(format!("unknown directive `#{other}`")))
            }
        }
    }

    fn key_values(&mut self) -> PResult<KeyValues> {
        let anchor = self.error_here("");
        let mut entries: Vec<(String, KvValue)> = Vec::new();
        while let Some(Tok::Ident(key)) = self.peek() {
            let key = key.clone();
            self.pos += 1;
            self.expect(Tok::Eq)?;
            let value = if key == "at" { KvValue::Time(self.timestamp()?) } else { KvValue::Term(self.term()?) };
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(self.error_here(format!("attribute `{key}` given twice")));
            }
            entries.push((key, value));
        }
        Ok(KeyValues { entries, anchor })
    }
}

enum KvValue {
    Term(Term),
    Time(Timestamp),
}

struct KeyValues {
    entries: Vec<(String, KvValue)>,
    anchor: SyntaxError,
}

impl KeyValues {
    fn err(&self, message: String) -> SyntaxError {
        SyntaxError { message, ..self.anchor.clone() }
    }

    fn has(&self, key: &str) -> bool {
        self.entries.iter().any(|(k, _)| k == key)
    }

    fn take(&mut self, key: &str) -> Option<KvValue> {
        let idx = self.entries.iter().position(|(k, _)| k == key)?;
        Some(self.entries.remove(idx).1)
    }

    fn at(&mut self) -> PResult<Timestamp> {
        match self.take("at") {
            Some(KvValue::Time(ts)) => Ok(ts),
            _ => Err(self.err("missing `at=<timestamp>`".into())),
        }
    }

    fn term(&mut self, key: &str) -> PResult<Term> {
        match self.take(key) {
            Some(KvValue::Term(t)) => Ok(t),
            _ => Err(self.err(format!("missing `{key}=...`"))),
        }
    }

    fn sym(&mut self, key: &str) -> PResult<Symbol> {
        match self.term(key)? {
            Term::Sym(s) => Ok(s),
            other => Err(self.err(format!("`{key}` must be a constant, found `{other}`"))),
        }
    }

    fn optional_sym(&mut self, key: &str) -> PResult<Option<Symbol>> {
        if self.has(key) {
            self.sym(key).map(Some)
        } else {
            Ok(None)
        }
    }

    fn int(&mut self, key: &str) -> PResult<i64> {
        match self.term(key)? {
            Term::Int(n) => Ok(n),
            other => Err(self.err(format!("`{key}` must be an integer, found `{other}`"))),
        }
    }

    fn ground(&mut self, key: &str) -> PResult<Value> {
        let t = self.term(key)?;
        t.to_value().ok_or_else(|| self.err(format!("`{key}` must be ground, found `{t}`")))
    }

    fn finish(self) -> PResult<()> {
        match self.entries.first() {
            Some((k, _)) => Err(self.err(format!("unexpected attribute `{k}`"))),
            None => Ok(()),
        }
    }
}

/// Arity consistency: every predicate is used with one arity, except that the
/// authorization predicates may also appear with an extra priority argument.
pub(crate) fn arity_errors(program: &PolicyProgram) -> Vec<SyntaxError> {
    let mut seen: HashMap<String, (usize, usize)> = HashMap::new();
    let mut errors = Vec::new();
    let mut check = |atom: &Atom, line: usize, errors: &mut Vec<SyntaxError>| {
        let name = atom.pred.to_string();
        let arity = atom.args.len();
        if MULTI_ARITY.iter().any(|(n, allowed)| *n == name && allowed.contains(&arity)) {
            return;
        }
        match seen.get(&name) {
            Some(&(expected, first_line)) if expected != arity => errors.push(SyntaxError {
                line,
                column: 1,
                message: format!(
                    "`{name}` used with {arity} argument(s); first used with {expected} on line {first_line}"
                ),
            }),
            Some(_) => {}
            None => {
                seen.insert(name, (arity, line));
            }
        }
    };
    fn visit_lit(lit: &Literal, line: usize, f: &mut dyn FnMut(&Atom, usize)) {
        match lit {
            Literal::Pos(a) | Literal::Neg(a) => f(a, line),
            Literal::Count { goal, .. } => goal.iter().for_each(|g| visit_lit(g, line, f)),
            Literal::Cmp(..) => {}
        }
    }
    for (stmt, &line) in program.statements.iter().zip(&program.lines) {
        let mut visit = |a: &Atom, l: usize| check(a, l, &mut errors);
        match stmt {
            Statement::Fact(a) => visit(a, line),
            Statement::Rule(r) => {
                visit(&r.head, line);
                for lit in &r.body {
                    visit_lit(lit, line, &mut visit);
                }
            }
            Statement::Directive(_) => {}
        }
    }
    errors
}

fn check_duplicates(program: &PolicyProgram) -> Result<()> {
    let mut views = HashMap::new();
    let mut contexts = HashMap::new();
    for (stmt, &line) in program.statements.iter().zip(&program.lines) {
        let (map, kind, name) = match stmt {
            Statement::Directive(Directive::View { name, .. }) => (&mut views, "view", name),
            Statement::Directive(Directive::Temporal { name, .. }) => (&mut contexts, "context", name),
            _ => continue,
        };
        if map.insert(name.clone(), line).is_some() {
            return Err(Error::DuplicateDeclaration { kind, name: name.to_string(), line });
        }
    }
    Ok(())
}
