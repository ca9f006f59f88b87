//! Concrete grammar for configurations and behavior definition files.
//!
//! ```text
//! P ::= 0 | x!y | x!y.P | x?(y).P | nu x. P
//!     | case x of { y1: P1, ..., yn: Pn }
//!     | tau.P | (a1 & ... & an).P | B<x1,x2; y1,...> | (P) | P | P
//! ```
//!
//! `|` has the lowest precedence and associates to the left; prefix bodies
//! (after `.`) and `nu` bodies extend over one prefix-level term, so
//! `x?(y).a!b | c!d` reads as `(x?(y).a!b) | c!d`. Comments run from `#` to
//! end of line. Definition files contain lines `def B(x1,x2; y1,...) = P`.

use super::{BehaviorDef, BehaviorId, Behaviors, Config, Name, Prefix};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown behavior `{0}`")]
    UnknownBehavior(BehaviorId),
    #[error("behavior `{id}` expects {expected_actors} actor and {expected_values} value arguments, got {got_actors} and {got_values}")]
    ArityMismatch {
        id: BehaviorId,
        expected_actors: usize,
        expected_values: usize,
        got_actors: usize,
        got_values: usize,
    },
    #[error("behavior `{0}` declares more than two actor parameters")]
    TooManyActorParams(BehaviorId),
    #[error("behavior `{0}` has repeated parameter names")]
    DuplicateParams(BehaviorId),
    #[error("behavior `{0}` body must be an input on its first actor parameter")]
    BadBehaviorBody(BehaviorId),
    #[error("behavior `{0}` defined twice")]
    DuplicateBehavior(BehaviorId),
    #[error("joint prefix needs at least two atomic prefixes")]
    ShortJointPrefix,
    #[error("joint prefix binders must be pairwise distinct")]
    SharedJointBinder,
    #[error("case needs at least one branch")]
    EmptyCase,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Zero,
    Bang,
    Query,
    Dot,
    Bar,
    Amp,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Lt,
    Gt,
    Comma,
    Semi,
    Colon,
    Eq,
    KwNu,
    KwCase,
    KwOf,
    KwTau,
    KwDef,
}

#[derive(Debug, Clone)]
struct Lexed {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Lexed>, ParseError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let (tline, tcol) = (line, col);
        let advance = |chars: &mut std::iter::Peekable<std::str::Chars>, line: &mut usize, col: &mut usize| {
            let c = chars.next().unwrap();
            if c == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            c
        };
        if c.is_whitespace() {
            advance(&mut chars, &mut line, &mut col);
            continue;
        }
        if c == '#' {
            while let Some(&c) = chars.peek() {
                if c == '\n' {
                    break;
                }
                advance(&mut chars, &mut line, &mut col);
            }
            continue;
        }
        let tok = match c {
            '!' => {
                advance(&mut chars, &mut line, &mut col);
                Tok::Bang
            }
            '?' => {
                advance(&mut chars, &mut line, &mut col);
                Tok::Query
            }
            '.' => {
                advance(&mut chars, &mut line, &mut col);
                Tok::Dot
            }
            '|' => {
                advance(&mut chars, &mut line, &mut col);
                Tok::Bar
            }
            '&' => {
                advance(&mut chars, &mut line, &mut col);
                Tok::Amp
            }
            '(' => {
                advance(&mut chars, &mut line, &mut col);
                Tok::LParen
            }
            ')' => {
                advance(&mut chars, &mut line, &mut col);
                Tok::RParen
            }
            '{' => {
                advance(&mut chars, &mut line, &mut col);
                Tok::LBrace
            }
            '}' => {
                advance(&mut chars, &mut line, &mut col);
                Tok::RBrace
            }
            '<' => {
                advance(&mut chars, &mut line, &mut col);
                Tok::Lt
            }
            '>' => {
                advance(&mut chars, &mut line, &mut col);
                Tok::Gt
            }
            ',' => {
                advance(&mut chars, &mut line, &mut col);
                Tok::Comma
            }
            ';' => {
                advance(&mut chars, &mut line, &mut col);
                Tok::Semi
            }
            ':' => {
                advance(&mut chars, &mut line, &mut col);
                Tok::Colon
            }
            '=' => {
                advance(&mut chars, &mut line, &mut col);
                Tok::Eq
            }
            '0' => {
                advance(&mut chars, &mut line, &mut col);
                Tok::Zero
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut ident = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_alphanumeric() || c == '_' || c == '\'' {
                        ident.push(advance(&mut chars, &mut line, &mut col));
                    } else {
                        break;
                    }
                }
                match ident.as_str() {
                    "nu" => Tok::KwNu,
                    "case" => Tok::KwCase,
                    "of" => Tok::KwOf,
                    "tau" => Tok::KwTau,
                    "def" => Tok::KwDef,
                    _ => Tok::Ident(ident),
                }
            }
            other => {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push(Lexed {
            tok,
            line: tline,
            col: tcol,
        });
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Lexed>,
    pos: usize,
}

impl Parser {
    fn new(toks: Vec<Lexed>) -> Parser {
        Parser { toks, pos: 0 }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|l| &l.tok)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|l| &l.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|l| (l.line, l.col))
            .unwrap_or((1, 1))
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        ParseError::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|l| l.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), ParseError> {
        if self.eat(&t) {
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn name(&mut self) -> Result<Name, ParseError> {
        Ok(Name::Src(self.ident("a name")?))
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn config(&mut self) -> Result<Config, ParseError> {
        let mut p = self.prefix_term()?;
        while self.eat(&Tok::Bar) {
            let q = self.prefix_term()?;
            p = Config::par(p, q);
        }
        Ok(p)
    }

    fn prefix_term(&mut self) -> Result<Config, ParseError> {
        match self.peek() {
            Some(Tok::Zero) => {
                self.pos += 1;
                Ok(Config::Nil)
            }
            Some(Tok::KwTau) => {
                self.pos += 1;
                self.expect(Tok::Dot, "`.` after tau")?;
                Ok(Config::tau(self.prefix_term()?))
            }
            Some(Tok::KwNu) => {
                self.pos += 1;
                let binder = self.name()?;
                self.expect(Tok::Dot, "`.` after nu binder")?;
                Ok(Config::restrict(binder, self.prefix_term()?))
            }
            Some(Tok::KwCase) => {
                self.pos += 1;
                let scrutinee = self.name()?;
                self.expect(Tok::KwOf, "`of`")?;
                self.expect(Tok::LBrace, "`{`")?;
                let mut branches = Vec::new();
                loop {
                    let guard = self.name()?;
                    self.expect(Tok::Colon, "`:` after branch guard")?;
                    let body = self.config()?;
                    branches.push((guard, body));
                    if self.eat(&Tok::Comma) {
                        continue;
                    }
                    break;
                }
                self.expect(Tok::RBrace, "`}`")?;
                if branches.is_empty() {
                    return Err(ParseError::EmptyCase);
                }
                Ok(Config::Case {
                    scrutinee,
                    branches,
                })
            }
            Some(Tok::LParen) => self.paren_term(),
            Some(Tok::Ident(_)) => {
                if self.peek2() == Some(&Tok::Lt) {
                    return self.instantiation();
                }
                let subject = self.name()?;
                match self.peek() {
                    Some(Tok::Bang) => {
                        self.pos += 1;
                        let object = self.name()?;
                        if self.eat(&Tok::Dot) {
                            let cont = self.prefix_term()?;
                            Ok(Config::Msg {
                                subject,
                                object,
                                cont: Some(Box::new(cont)),
                            })
                        } else {
                            Ok(Config::msg(subject, object))
                        }
                    }
                    Some(Tok::Query) => {
                        self.pos += 1;
                        self.expect(Tok::LParen, "`(` after `?`")?;
                        let binder = self.name()?;
                        self.expect(Tok::RParen, "`)` after input binder")?;
                        self.expect(Tok::Dot, "`.` after input prefix")?;
                        Ok(Config::input(subject, binder, self.prefix_term()?))
                    }
                    _ => Err(self.err("expected `!` or `?` after name")),
                }
            }
            _ => Err(self.err("expected a configuration")),
        }
    }

    /// After `(`: either a parenthesized configuration or a joint prefix
    /// `(a1 & a2 ...).P`, distinguished by the presence of `&`.
    fn paren_term(&mut self) -> Result<Config, ParseError> {
        let start = self.pos;
        self.expect(Tok::LParen, "`(`")?;
        if let Ok(prefixes) = self.try_joint_prefixes() {
            self.expect(Tok::RParen, "`)` closing joint prefix")?;
            self.expect(Tok::Dot, "`.` after joint prefix")?;
            let body = self.prefix_term()?;
            if prefixes.len() < 2 {
                return Err(ParseError::ShortJointPrefix);
            }
            let mut binders = BTreeSet::new();
            for pre in &prefixes {
                if let Prefix::In { binder, .. } = pre {
                    if !binders.insert(binder.clone()) {
                        return Err(ParseError::SharedJointBinder);
                    }
                }
            }
            return Ok(Config::Step {
                prefixes,
                body: Box::new(body),
            });
        }
        self.pos = start;
        self.expect(Tok::LParen, "`(`")?;
        let inner = self.config()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(inner)
    }

    /// Parse `a1 & a2 & ...` with at least one `&`; fails without consuming
    /// a decision if the content is not a joint prefix list.
    fn try_joint_prefixes(&mut self) -> Result<Vec<Prefix>, ParseError> {
        let start = self.pos;
        let mut prefixes = Vec::new();
        loop {
            match self.atomic_prefix() {
                Ok(p) => prefixes.push(p),
                Err(e) => {
                    self.pos = start;
                    return Err(e);
                }
            }
            if self.eat(&Tok::Amp) {
                continue;
            }
            break;
        }
        if prefixes.len() < 2 {
            self.pos = start;
            return Err(self.err("not a joint prefix"));
        }
        Ok(prefixes)
    }

    fn atomic_prefix(&mut self) -> Result<Prefix, ParseError> {
        let subject = self.name()?;
        match self.next() {
            Some(Tok::Bang) => {
                let object = self.name()?;
                Ok(Prefix::Out { subject, object })
            }
            Some(Tok::Query) => {
                self.expect(Tok::LParen, "`(`")?;
                let binder = self.name()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Prefix::In { subject, binder })
            }
            _ => Err(self.err("expected `!` or `?` in prefix")),
        }
    }

    fn instantiation(&mut self) -> Result<Config, ParseError> {
        let id = BehaviorId(self.ident("a behavior name")?);
        self.expect(Tok::Lt, "`<`")?;
        let mut actor_args = Vec::new();
        let mut param_args = Vec::new();
        let mut saw_semi = false;
        if !matches!(self.peek(), Some(Tok::Gt)) {
            loop {
                if self.eat(&Tok::Semi) {
                    saw_semi = true;
                    if matches!(self.peek(), Some(Tok::Gt)) {
                        break;
                    }
                    continue;
                }
                let n = self.name()?;
                if saw_semi {
                    param_args.push(n);
                } else {
                    actor_args.push(n);
                }
                if self.eat(&Tok::Comma) {
                    continue;
                }
                if matches!(self.peek(), Some(Tok::Semi)) {
                    continue;
                }
                break;
            }
        }
        self.expect(Tok::Gt, "`>` closing instantiation")?;
        Ok(Config::Inst {
            behavior: id,
            actor_args,
            param_args,
        })
    }

    fn behavior_def(&mut self) -> Result<BehaviorDef, ParseError> {
        self.expect(Tok::KwDef, "`def`")?;
        let id = BehaviorId(self.ident("a behavior name")?);
        self.expect(Tok::LParen, "`(`")?;
        let mut actor_params = Vec::new();
        let mut value_params = Vec::new();
        let mut saw_semi = false;
        if !matches!(self.peek(), Some(Tok::RParen)) {
            loop {
                if self.eat(&Tok::Semi) {
                    saw_semi = true;
                    if matches!(self.peek(), Some(Tok::RParen)) {
                        break;
                    }
                    continue;
                }
                let n = self.name()?;
                if saw_semi {
                    value_params.push(n);
                } else {
                    actor_params.push(n);
                }
                if self.eat(&Tok::Comma) {
                    continue;
                }
                if matches!(self.peek(), Some(Tok::Semi)) {
                    continue;
                }
                break;
            }
        }
        self.expect(Tok::RParen, "`)` closing parameter list")?;
        self.expect(Tok::Eq, "`=`")?;
        let body = self.prefix_term()?;
        let def = BehaviorDef {
            id: id.clone(),
            actor_params,
            value_params,
            body,
        };
        validate_def(&def)?;
        Ok(def)
    }
}

fn validate_def(def: &BehaviorDef) -> Result<(), ParseError> {
    if def.actor_params.is_empty() || def.actor_params.len() > 2 {
        return Err(ParseError::TooManyActorParams(def.id.clone()));
    }
    let mut seen = BTreeSet::new();
    for p in def.actor_params.iter().chain(&def.value_params) {
        if !seen.insert(p.clone()) {
            return Err(ParseError::DuplicateParams(def.id.clone()));
        }
    }
    match &def.body {
        Config::Input { subject, .. } if *subject == def.actor_params[0] => Ok(()),
        _ => Err(ParseError::BadBehaviorBody(def.id.clone())),
    }
}

fn validate_insts(p: &Config, defs: &Behaviors) -> Result<(), ParseError> {
    match p {
        Config::Nil => Ok(()),
        Config::Msg { cont, .. } => cont.as_deref().map_or(Ok(()), |c| validate_insts(c, defs)),
        Config::Input { body, .. } | Config::Restrict { body, .. } | Config::Tau(body) => {
            validate_insts(body, defs)
        }
        Config::Case { branches, .. } => {
            branches.iter().try_for_each(|(_, b)| validate_insts(b, defs))
        }
        Config::Par(l, r) => {
            validate_insts(l, defs)?;
            validate_insts(r, defs)
        }
        Config::Inst {
            behavior,
            actor_args,
            param_args,
        } => {
            let def = defs
                .get(behavior)
                .ok_or_else(|| ParseError::UnknownBehavior(behavior.clone()))?;
            if def.actor_params.len() != actor_args.len()
                || def.value_params.len() != param_args.len()
            {
                return Err(ParseError::ArityMismatch {
                    id: behavior.clone(),
                    expected_actors: def.actor_params.len(),
                    expected_values: def.value_params.len(),
                    got_actors: actor_args.len(),
                    got_values: param_args.len(),
                });
            }
            Ok(())
        }
        Config::Step { body, .. } => validate_insts(body, defs),
    }
}

/// Parse a configuration together with a definitions string; every
/// instantiation must refer to a defined behavior with matching arities.
pub fn parse(text: &str, defs: &str) -> Result<(Config, Behaviors), ParseError> {
    let table = parse_defs(defs)?;
    let config = parse_config(text)?;
    validate_insts(&config, &table)?;
    for def in table.values() {
        validate_insts(&def.body, &table)?;
    }
    Ok((config, table))
}

/// Parse a bare configuration (no instantiation validation).
pub fn parse_config(text: &str) -> Result<Config, ParseError> {
    let mut p = Parser::new(lex(text)?);
    let config = p.config()?;
    if !p.at_end() {
        return Err(p.err("trailing input after configuration"));
    }
    Ok(config)
}

/// Parse a definitions string: zero or more `def ...` items.
pub fn parse_defs(text: &str) -> Result<Behaviors, ParseError> {
    let mut p = Parser::new(lex(text)?);
    let mut table = Behaviors::new();
    while !p.at_end() {
        let def = p.behavior_def()?;
        if table.contains_key(&def.id) {
            return Err(ParseError::DuplicateBehavior(def.id));
        }
        table.insert(def.id.clone(), def);
    }
    Ok(table)
}

/// Parse a combined file: any number of `def` items followed by one main
/// configuration.
pub fn parse_file(text: &str) -> Result<(Config, Behaviors), ParseError> {
    let mut p = Parser::new(lex(text)?);
    let mut table = Behaviors::new();
    while matches!(p.peek(), Some(Tok::KwDef)) {
        let def = p.behavior_def()?;
        if table.contains_key(&def.id) {
            return Err(ParseError::DuplicateBehavior(def.id));
        }
        table.insert(def.id.clone(), def);
    }
    let config = p.config()?;
    if !p.at_end() {
        return Err(p.err("trailing input after configuration"));
    }
    validate_insts(&config, &table)?;
    for def in table.values() {
        validate_insts(&def.body, &table)?;
    }
    Ok((config, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::alpha_eq;

    fn n(s: &str) -> Name {
        Name::src(s)
    }

    #[test]
    fn single_output() {
        let p = parse_config("x!y").unwrap();
        assert_eq!(p, Config::msg(n("x"), n("y")));
    }

    #[test]
    fn restriction_example() {
        let p = parse_config("nu x. (x?(u).0 | x!x | y!x)").unwrap();
        let expect = Config::restrict(
            n("x"),
            Config::par(
                Config::par(
                    Config::input(n("x"), n("u"), Config::Nil),
                    Config::msg(n("x"), n("x")),
                ),
                Config::msg(n("y"), n("x")),
            ),
        );
        assert_eq!(p, expect);
    }

    #[test]
    fn diverge_definition() {
        let defs = parse_defs("def Diverge(x;) = x?(u).(x!u | Diverge<x;>)").unwrap();
        let def = &defs[&BehaviorId("Diverge".into())];
        assert_eq!(def.actor_params, vec![n("x")]);
        assert!(def.value_params.is_empty());
        let expect_body = Config::input(
            n("x"),
            n("u"),
            Config::par(
                Config::msg(n("x"), n("u")),
                Config::Inst {
                    behavior: BehaviorId("Diverge".into()),
                    actor_args: vec![n("x")],
                    param_args: vec![],
                },
            ),
        );
        assert_eq!(def.body, expect_body);
    }

    #[test]
    fn alpha_variants_parse_alpha_equivalent() {
        let p = parse_config("x?(u).u!u").unwrap();
        let q = parse_config("x?(v).v!v").unwrap();
        assert!(alpha_eq(&p, &q));
    }

    #[test]
    fn joint_prefix() {
        let p = parse_config("(x!y & u?(v)).(0 | v!v)").unwrap();
        match &p {
            Config::Step { prefixes, .. } => assert_eq!(prefixes.len(), 2),
            other => panic!("expected step prefix, got {other:?}"),
        }
    }

    #[test]
    fn grouping_parens_are_not_joint_prefixes() {
        let p = parse_config("(x!y)").unwrap();
        assert_eq!(p, Config::msg(n("x"), n("y")));
        let p = parse_config("(x!y | u!v)").unwrap();
        assert!(matches!(p, Config::Par(_, _)));
    }

    #[test]
    fn par_is_left_assoc() {
        let p = parse_config("a!a | b!b | c!c").unwrap();
        let expect = Config::par(
            Config::par(Config::msg(n("a"), n("a")), Config::msg(n("b"), n("b"))),
            Config::msg(n("c"), n("c")),
        );
        assert_eq!(p, expect);
    }

    #[test]
    fn case_branches() {
        let p = parse_config("case x of { a: 0, b: y!z }").unwrap();
        assert_eq!(
            p,
            Config::Case {
                scrutinee: n("x"),
                branches: vec![
                    (n("a"), Config::Nil),
                    (n("b"), Config::msg(n("y"), n("z"))),
                ],
            }
        );
    }

    #[test]
    fn unknown_behavior_rejected() {
        let err = parse("B<x;>", "").unwrap_err();
        assert!(matches!(err, ParseError::UnknownBehavior(_)));
    }

    #[test]
    fn arity_mismatch_rejected() {
        let err = parse("B<x,y;>", "def B(x;) = x?(u).0").unwrap_err();
        assert!(matches!(err, ParseError::ArityMismatch { .. }));
    }

    #[test]
    fn three_actor_params_rejected() {
        let err = parse_defs("def B(x,y,z;) = x?(u).0").unwrap_err();
        assert!(matches!(err, ParseError::TooManyActorParams(_)));
    }

    #[test]
    fn bad_body_rejected() {
        let err = parse_defs("def B(x;) = y?(u).0").unwrap_err();
        assert!(matches!(err, ParseError::BadBehaviorBody(_)));
    }

    #[test]
    fn syntax_error_carries_position() {
        match parse_config("x !") {
            Err(ParseError::Syntax { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn combined_file() {
        let (config, defs) =
            parse_file("# a file\ndef Sink(x;) = x?(u).Sink<x;>\nSink<a;> | a!b").unwrap();
        assert_eq!(defs.len(), 1);
        assert!(matches!(config, Config::Par(_, _)));
    }

    #[test]
    fn comments_ignored() {
        let p = parse_config("x!y # send\n").unwrap();
        assert_eq!(p, Config::msg(n("x"), n("y")));
    }

    #[test]
    fn tau_prefix() {
        let p = parse_config("tau.x!y").unwrap();
        assert_eq!(p, Config::tau(Config::msg(n("x"), n("y"))));
    }
}
