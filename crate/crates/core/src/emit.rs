//! Canonical RBR text: emitter, parser and the bit-op-free export.
//!
//! ```text
//! -- rbr
//! -- fields: 1
//! -- lmap: l0@64
//! -- md: md0@4
//! -- chain: caller
//!
//! block_0(g0,l0,md0,caller) => s0 = md0, s1 = 1, call(jump_0(s0,s1,g0,l0,md0,caller))
//!
//! jump_0(s0,s1,g0,l0,md0,caller) => gt(s1,s0) | call(block_9(g0,l0,md0,caller))
//! ```
//!
//! Lines starting with `--` are comments; the header lines above carry the
//! variable layout. Whitespace, including line breaks, is insignificant.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::opcode::Opcode;
use crate::rbr::{
    ArithOp, BitOp, BlockchainVar, Call, Expr, Guard, Operand, Program, Relation, Rule, RuleKind, RuleName, Statement,
    Var, VarLayout,
};
use crate::U256;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EmitOptions {
    pub nops: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at {line}:{column}: expected {expected}")]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub expected: String,
}

struct Atom<'a>(&'a Expr);

impl fmt::Display for Atom<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if matches!(self.0, Expr::Arith(..)) {
            write!(f, "({})", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(n) => write!(f, "{n}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Arith(op, a, b) => write!(f, "{} {} {}", Atom(a), op.symbol(), Atom(b)),
            Expr::Bit(op, a, b) => write!(f, "{}({a},{b})", op.name()),
            Expr::Not(a) => write!(f, "not({a})"),
        }
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Assign(v, e) => write!(f, "{v} = {e}"),
            Statement::Nop(m) => write!(f, "nop({m})"),
        }
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({},{})", self.relation.name(), self.lhs, self.rhs)
    }
}

fn write_params(out: &mut String, stack: usize, shared: &[Var]) {
    let names = (0..stack).map(Var::Stack).chain(shared.iter().copied());
    let list: Vec<String> = names.map(|v| v.to_string()).collect();
    out.push_str(&list.join(","));
}

fn write_header(out: &mut String, kind: &str, layout: &VarLayout) {
    let line = |out: &mut String, key: &str, items: Vec<String>| {
        let _ = writeln!(
            out,
            "-- {key}:{}{}",
            if items.is_empty() { "" } else { " " },
            items.join(", ")
        );
    };
    let _ = writeln!(out, "-- {kind}");
    line(out, "fields", vec![layout.fields.to_string()]);
    line(
        out,
        "lmap",
        layout
            .locals
            .iter()
            .enumerate()
            .map(|(i, a)| format!("l{i}@{a}"))
            .collect(),
    );
    line(
        out,
        "md",
        layout
            .calldata
            .iter()
            .enumerate()
            .map(|(i, o)| format!("md{i}@{o}"))
            .collect(),
    );
    line(
        out,
        "chain",
        layout.chain.iter().map(|b| b.name().to_string()).collect(),
    );
}

fn write_rule(out: &mut String, rule: &Rule, shared: &[Var], nops: bool) {
    let _ = write!(out, "{}(", rule.name);
    write_params(out, rule.stack_params, shared);
    out.push_str(") =>");
    let mut items: Vec<String> = Vec::new();
    for s in &rule.body {
        if nops || !matches!(s, Statement::Nop(_)) {
            items.push(s.to_string());
        }
    }
    if let Some(call) = &rule.call {
        let mut c = format!("call({}(", call.target);
        write_params(&mut c, call.stack_args, shared);
        c.push_str("))");
        items.push(c);
    }
    if let Some(g) = &rule.guard {
        let _ = write!(out, " {g} |");
    }
    if !items.is_empty() {
        out.push(' ');
        out.push_str(&items.join(", "));
    }
    out.push('\n');
}

fn emit_with_header(program: &Program, kind: &str, nops: bool) -> String {
    let mut out = String::new();
    write_header(&mut out, kind, &program.layout);
    let shared = program.layout.params();
    let mut rules: Vec<&Rule> = program.rules.iter().collect();
    rules.sort_by_key(|r| r.name);
    for rule in rules {
        out.push('\n');
        write_rule(&mut out, rule, &shared, nops);
    }
    out
}

/// Canonical text for `program`, rules in ascending name order.
pub fn emit_rbr(program: &Program, opts: EmitOptions) -> String {
    emit_with_header(program, "rbr", opts.nops)
}

/// `program` with nops dropped and every bit-operation assignment replaced by
/// a fresh value.
pub fn saco_program(program: &Program) -> Program {
    let rules = program
        .rules
        .iter()
        .map(|rule| {
            let mut next = rule.fresh_count();
            let body = rule
                .body
                .iter()
                .filter_map(|s| match s {
                    Statement::Nop(_) => None,
                    Statement::Assign(v, e) if e.has_bit_ops() => {
                        next += 1;
                        Some(Statement::copy(*v, Var::Fresh(next - 1)))
                    }
                    s => Some(s.clone()),
                })
                .collect();
            Rule { body, ..rule.clone() }
        })
        .collect();
    Program {
        layout: program.layout.clone(),
        rules,
    }
}

pub fn export_saco(program: &Program) -> String {
    emit_with_header(&saco_program(program), "saco", false)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Num(String),
    Punct(&'static str),
    Eof,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col: usize,
}

const PUNCT: [&str; 12] = ["=>", "(", ")", ",", "|", "=", "+", "-", "*", "/", "%", "^"];

impl<'a> Lexer<'a> {
    fn skip_trivia(&mut self) {
        loop {
            let rest = &self.src[self.pos..];
            if rest.starts_with("--") {
                let n = rest.find('\n').unwrap_or(rest.len());
                self.advance(n);
            } else if let Some(c) = rest.chars().next().filter(|c| c.is_whitespace()) {
                self.advance(c.len_utf8());
            } else {
                return;
            }
        }
    }

    fn advance(&mut self, n: usize) {
        for c in self.src[self.pos..self.pos + n].chars() {
            if c == '\n' {
                self.line += 1;
                self.col = 1;
            } else {
                self.col += 1;
            }
        }
        self.pos += n;
    }

    /// Next token with its (line, column).
    fn next(&mut self) -> Result<(Tok, usize, usize), SyntaxError> {
        self.skip_trivia();
        let (line, col) = (self.line, self.col);
        let rest = &self.src[self.pos..];
        let Some(c) = rest.chars().next() else {
            return Ok((Tok::Eof, line, col));
        };
        let word = |pred: fn(char) -> bool| rest.find(|c: char| !pred(c)).unwrap_or(rest.len());
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            let n = word(|c| c.is_ascii_alphanumeric() || c == '_');
            self.advance(n);
            Tok::Ident(rest[..n].to_string())
        } else if c.is_ascii_digit() {
            let n = word(|c| c.is_ascii_digit());
            self.advance(n);
            Tok::Num(rest[..n].to_string())
        } else if let Some(p) = PUNCT.iter().find(|p| rest.starts_with(**p)) {
            if *p == "=" && rest.starts_with("==") {
                return Err(SyntaxError {
                    line,
                    column: col,
                    expected: "'=' followed by an expression".into(),
                });
            }
            self.advance(p.len());
            Tok::Punct(p)
        } else {
            return Err(SyntaxError {
                line,
                column: col,
                expected: "a token".into(),
            });
        };
        Ok((tok, line, col))
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    line: usize,
    col: usize,
    layout: VarLayout,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, layout: VarLayout) -> Result<Self, SyntaxError> {
        let mut lexer = Lexer {
            src,
            pos: 0,
            line: 1,
            col: 1,
        };
        let (tok, line, col) = lexer.next()?;
        Ok(Parser {
            lexer,
            tok,
            line,
            col,
            layout,
        })
    }

    fn error(&self, expected: impl Into<String>) -> SyntaxError {
        SyntaxError {
            line: self.line,
            column: self.col,
            expected: expected.into(),
        }
    }

    fn bump(&mut self) -> Result<Tok, SyntaxError> {
        let (tok, line, col) = self.lexer.next()?;
        self.line = line;
        self.col = col;
        Ok(std::mem::replace(&mut self.tok, tok))
    }

    fn eat(&mut self, p: &'static str) -> Result<bool, SyntaxError> {
        if self.tok == Tok::Punct(p) {
            self.bump()?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn expect(&mut self, p: &'static str) -> Result<(), SyntaxError> {
        if self.eat(p)? {
            Ok(())
        } else {
            Err(self.error(format!("'{p}'")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, SyntaxError> {
        match &self.tok {
            Tok::Ident(s) => {
                let s = s.clone();
                self.bump()?;
                Ok(s)
            }
            _ => Err(self.error(what)),
        }
    }

    fn peek_ident(&self) -> Option<&str> {
        match &self.tok {
            Tok::Ident(s) => Some(s),
            _ => None,
        }
    }

    fn number(&mut self) -> Result<U256, SyntaxError> {
        let Tok::Num(s) = &self.tok else {
            return Err(self.error("a numeral"));
        };
        let n = U256::from_str_radix(s, 10).map_err(|_| self.error("a numeral below 2^256"))?;
        self.bump()?;
        Ok(n)
    }

    fn var(&mut self) -> Result<Var, SyntaxError> {
        let name = self.peek_ident().ok_or_else(|| self.error("a variable"))?;
        let v = Var::from_str(name).map_err(|_| self.error("a variable"))?;
        self.bump()?;
        Ok(v)
    }

    fn rule_name(&mut self) -> Result<RuleName, SyntaxError> {
        let name = self.peek_ident().ok_or_else(|| self.error("a rule name"))?;
        let n = RuleName::from_str(name).map_err(|_| self.error("a rule name block_<id> or jump_<id>"))?;
        self.bump()?;
        Ok(n)
    }

    /// `(s0,..,s<n-1>, shared...)`; returns `n`.
    fn params(&mut self) -> Result<usize, SyntaxError> {
        self.expect("(")?;
        let mut vars = Vec::new();
        if !self.eat(")")? {
            loop {
                vars.push((self.var()?, self.line, self.col));
                if self.eat(")")? {
                    break;
                }
                self.expect(",")?;
            }
        }
        let stack = vars.iter().take_while(|(v, ..)| matches!(v, Var::Stack(_))).count();
        let shared = self.layout.params();
        for (i, (v, line, column)) in vars.iter().enumerate() {
            let want = if i < stack {
                Some(Var::Stack(i))
            } else {
                shared.get(i - stack).copied()
            };
            if want != Some(*v) {
                let expected = want.map_or("')'".to_string(), |w| format!("parameter {w}"));
                return Err(SyntaxError {
                    line: *line,
                    column: *column,
                    expected,
                });
            }
        }
        if vars.len() - stack != shared.len() {
            return Err(self.error(format!("parameter {}", shared[vars.len() - stack])));
        }
        Ok(stack)
    }

    fn operand(&mut self) -> Result<Operand, SyntaxError> {
        if matches!(self.tok, Tok::Num(_)) {
            Ok(Operand::Num(self.number()?))
        } else {
            Ok(Operand::Var(self.var()?))
        }
    }

    fn term(&mut self) -> Result<Expr, SyntaxError> {
        if matches!(self.tok, Tok::Num(_)) {
            return Ok(Expr::Num(self.number()?));
        }
        if self.eat("(")? {
            let e = self.expr()?;
            self.expect(")")?;
            return Ok(e);
        }
        let bit = match self.peek_ident() {
            Some("and") => Some(BitOp::And),
            Some("or") => Some(BitOp::Or),
            Some("xor") => Some(BitOp::Xor),
            Some("not") => None,
            _ => return Ok(Expr::Var(self.var()?)),
        };
        self.bump()?;
        self.expect("(")?;
        let a = self.expr()?;
        let e = match bit {
            Some(op) => {
                self.expect(",")?;
                let b = self.expr()?;
                Expr::Bit(op, Box::new(a), Box::new(b))
            }
            None => Expr::Not(Box::new(a)),
        };
        self.expect(")")?;
        Ok(e)
    }

    fn expr(&mut self) -> Result<Expr, SyntaxError> {
        let a = self.term()?;
        let op = match &self.tok {
            Tok::Punct(p) => match *p {
                "+" => ArithOp::Add,
                "-" => ArithOp::Sub,
                "*" => ArithOp::Mul,
                "/" => ArithOp::Div,
                "%" => ArithOp::Mod,
                "^" => ArithOp::Pow,
                _ => return Ok(a),
            },
            _ => return Ok(a),
        };
        self.bump()?;
        let b = self.term()?;
        Ok(Expr::Arith(op, Box::new(a), Box::new(b)))
    }

    fn call(&mut self) -> Result<Call, SyntaxError> {
        self.expect("(")?;
        let target = self.rule_name()?;
        let stack_args = self.params()?;
        self.expect(")")?;
        Ok(Call { target, stack_args })
    }

    fn rule(&mut self) -> Result<Rule, SyntaxError> {
        let name = self.rule_name()?;
        let stack_params = self.params()?;
        self.expect("=>")?;
        let mut rule = Rule {
            name,
            stack_params,
            guard: None,
            body: Vec::new(),
            call: None,
        };
        if name.kind == RuleKind::Jump {
            let rel = self
                .peek_ident()
                .and_then(|s| Relation::ALL.into_iter().find(|r| r.name() == s));
            let relation = rel.ok_or_else(|| self.error("a guard"))?;
            self.bump()?;
            self.expect("(")?;
            let lhs = self.operand()?;
            self.expect(",")?;
            let rhs = self.operand()?;
            self.expect(")")?;
            self.expect("|")?;
            rule.guard = Some(Guard::new(relation, lhs, rhs));
            if self.peek_ident() != Some("call") {
                return Err(self.error("call(...)"));
            }
        }
        // A body item starts with an identifier followed by '=' or '('.
        while let Some(head) = self.peek_ident() {
            if rule.name.kind == RuleKind::Jump && head != "call" {
                return Err(self.error("call(...)"));
            }
            match head {
                "call" => {
                    self.bump()?;
                    rule.call = Some(self.call()?);
                    break;
                }
                "nop" => {
                    self.bump()?;
                    self.expect("(")?;
                    let m = self.ident("a mnemonic")?;
                    let op = Opcode::from_mnemonic(&m).ok_or_else(|| self.error("a mnemonic"))?;
                    self.expect(")")?;
                    rule.body.push(Statement::Nop(op.mnemonic()));
                }
                _ if RuleName::from_str(head).is_ok() => break,
                _ => {
                    let v = self.var()?;
                    self.expect("=")?;
                    let e = self.expr()?;
                    rule.body.push(Statement::Assign(v, e));
                }
            }
            if !self.eat(",")? {
                break;
            }
            if !matches!(self.tok, Tok::Ident(_)) {
                return Err(self.error("a statement or call(...)"));
            }
        }
        if rule.name.kind == RuleKind::Jump && rule.call.is_none() {
            return Err(self.error("call(...)"));
        }
        Ok(rule)
    }
}

fn header_error(line: usize, expected: &str) -> SyntaxError {
    SyntaxError {
        line,
        column: 1,
        expected: expected.into(),
    }
}

/// Reads the layout from `-- fields:`, `-- lmap:`, `-- md:` and `-- chain:` comments.
fn parse_header(text: &str) -> Result<VarLayout, SyntaxError> {
    let mut layout = VarLayout::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let Some(rest) = line.trim_start().strip_prefix("--") else {
            continue;
        };
        let Some((key, value)) = rest.trim().split_once(':') else {
            continue;
        };
        let items = value.split(',').map(str::trim).filter(|s| !s.is_empty());
        match key.trim() {
            "fields" => {
                layout.fields = value
                    .trim()
                    .parse()
                    .map_err(|_| header_error(line_no, "a field count"))?;
            }
            "lmap" | "md" => {
                let prefix = if key.trim() == "lmap" { "l" } else { "md" };
                let mut table = Vec::new();
                for (j, item) in items.enumerate() {
                    let addr = item
                        .split_once('@')
                        .filter(|(name, _)| *name == format!("{prefix}{j}"))
                        .and_then(|(_, a)| U256::from_str_radix(a, 10).ok())
                        .ok_or_else(|| header_error(line_no, &format!("{prefix}{j}@<address>")))?;
                    table.push(addr);
                }
                if prefix == "l" {
                    layout.locals = table;
                } else {
                    layout.calldata = table;
                }
            }
            "chain" => {
                for item in items {
                    let b = BlockchainVar::ALL
                        .into_iter()
                        .find(|b| b.name() == item)
                        .ok_or_else(|| header_error(line_no, "a blockchain variable"))?;
                    layout.chain.push(b);
                }
            }
            _ => {}
        }
    }
    Ok(layout)
}

/// Parses canonical RBR text back into a program.
pub fn parse_rbr(text: &str) -> Result<Program, SyntaxError> {
    let layout = parse_header(text)?;
    let mut p = Parser::new(text, layout)?;
    let mut rules = Vec::new();
    while p.tok != Tok::Eof {
        rules.push(p.rule()?);
    }
    Ok(Program {
        layout: p.layout,
        rules,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{disassemble, parse_hex};
    use crate::cfg::{resolve_cfg, split_blocks, BlockId};
    use crate::rbr::{translate_cfg, TranslateOptions};

    fn program(hex: &str, nops: bool) -> Program {
        let cfg = resolve_cfg(&split_blocks(&disassemble(&parse_hex(hex).unwrap()).unwrap()));
        translate_cfg(&cfg, TranslateOptions { nops }).unwrap().program
    }

    fn bare(rules: &str) -> String {
        format!("-- rbr\n{rules}")
    }

    #[test]
    fn add_sstore_text() {
        let text = emit_rbr(&program("600560040160005500", false), EmitOptions::default());
        assert_eq!(
            text,
            "-- rbr\n-- fields: 1\n-- lmap:\n-- md:\n-- chain:\n\n\
             block_0(g0) => s0 = 5, s1 = 4, s0 = s1 + s0, s1 = 0, g0 = s0\n"
        );
        assert!(!text.contains("call("));
    }

    #[test]
    fn jump_rule_text() {
        // CALLVALUE PUSH1 1 GT PUSH1 8 JUMPI STOP JUMPDEST STOP
        let text = emit_rbr(&program("34600111600857005b00", false), EmitOptions::default());
        assert!(text.contains("\nblock_0(callvalue) => s0 = callvalue, s1 = 1, call(jump_0(s0,s1,callvalue))\n"));
        assert!(text.contains("\njump_0(s0,s1,callvalue) => gt(s1,s0) | call(block_8(callvalue))\n"));
        assert!(text.contains("\njump_0(s0,s1,callvalue) => leq(s1,s0) | call(block_7(callvalue))\n"));
        assert!(text.contains("\nblock_7(callvalue) =>\n"));
    }

    #[test]
    fn nops_are_optional() {
        let p = program("600560040100", true);
        let with = emit_rbr(&p, EmitOptions { nops: true });
        assert!(with.contains("nop(PUSH1), s0 = 5, nop(PUSH1), s1 = 4, nop(ADD), s0 = s1 + s0, nop(STOP)"));
        let without = emit_rbr(&p, EmitOptions::default());
        assert!(!without.contains("nop("));
        assert_eq!(parse_rbr(&with).unwrap(), p);
    }

    #[test]
    fn round_trip() {
        for hex in [
            "600560040160005500",
            "6003565b00",
            "34600111600857005b00",
            "00",
            "3360e01c60043516196101005200",
        ] {
            for nops in [false, true] {
                let p = program(hex, nops);
                let text = emit_rbr(&p, EmitOptions { nops });
                assert_eq!(parse_rbr(&text).unwrap(), p, "{hex}");
            }
        }
    }

    #[test]
    fn parse_trivial_rule() {
        let p = parse_rbr(&bare("block_0() => s0 = 5")).unwrap();
        assert_eq!(p.rules.len(), 1);
        assert_eq!(
            p.rules[0].body,
            vec![Statement::assign(Var::Stack(0), Expr::Num(U256::from(5)))]
        );
    }

    #[test]
    fn parse_errors() {
        let e = parse_rbr("block_0() => s0 == 5").unwrap_err();
        assert_eq!((e.line, e.column), (1, 17));
        assert!(parse_rbr("block_0() => s0 = ").is_err());
        assert!(parse_rbr("block_0(s1) => s0 = 1").is_err());
        assert!(parse_rbr("block_0() => s0 = 1,").is_err());
        assert!(parse_rbr("jump_0() => s0 = 1").is_err());
        assert!(parse_rbr("jump_0() => gt(s0,s1)").is_err());
        assert!(parse_rbr("block_0() => gt(s0,s1) | call(block_1())").is_err());
        assert!(parse_rbr("block_0(g0) => s0 = 1").is_err());
        assert!(parse_rbr("-- fields: 1\nblock_0() => s0 = 1").is_err());
        assert!(parse_rbr("block_0() => x = 1").is_err());
        assert!(parse_rbr("block_0() => nop(FOO)").is_err());
        let e = parse_rbr("block_0() =>\n  s0 = 1 # 2").unwrap_err();
        assert_eq!((e.line, e.column), (2, 10));
    }

    #[test]
    fn parses_several_rules_without_separators() {
        let p = parse_rbr("block_0() => call(block_3())  block_3() => block_4() =>").unwrap();
        let names: Vec<_> = p.rules.iter().map(|r| r.name.id).collect();
        assert_eq!(names, vec![BlockId::new(0), BlockId::new(3), BlockId::new(4)]);
    }

    #[test]
    fn nested_expressions() {
        let text = bare("block_0() => s0 = (s1 + s0) * and(s2,not(3)), s1 = 2 ^ 255");
        let p = parse_rbr(&text).unwrap();
        let out = emit_rbr(&p, EmitOptions::default());
        assert!(out.ends_with("block_0() => s0 = (s1 + s0) * and(s2,not(3)), s1 = 2 ^ 255\n"));
        assert_eq!(parse_rbr(&out).unwrap(), p);
    }

    #[test]
    fn large_numerals_are_decimal() {
        let p = parse_rbr(&bare(&format!("block_0() => s0 = {}", U256::MAX))).unwrap();
        assert_eq!(
            p.rules[0].body[0],
            Statement::assign(Var::Stack(0), Expr::Num(U256::MAX))
        );
        let too_big = "115792089237316195423570985008687907853269984665640564039457584007913129639936";
        assert!(parse_rbr(&bare(&format!("block_0() => s0 = {too_big}"))).is_err());
    }

    #[test]
    fn header_layout() {
        let text = "-- rbr\n-- fields: 2\n-- lmap: l0@64, l1@96\n-- md: md0@4\n-- chain: caller, gas\n\n\
                    block_0(s0,g0,g1,l0,l1,md0,caller,gas) =>\n";
        let p = parse_rbr(text).unwrap();
        assert_eq!(p.layout.locals, vec![U256::from(64), U256::from(96)]);
        assert_eq!(p.layout.chain, vec![BlockchainVar::Caller, BlockchainVar::Gas]);
        assert_eq!(p.rules[0].stack_params, 1);
        assert_eq!(emit_rbr(&p, EmitOptions::default()), text);
        assert!(parse_rbr("-- lmap: l1@64\n").is_err());
    }

    #[test]
    fn saco_replaces_bit_ops() {
        let p = parse_rbr(&bare(
            "block_0(s0,s1) => nop(AND), s2 = and(s1,s0), s0 = fresh_0, s1 = not(s1), s0 = s1 + s0",
        ))
        .unwrap();
        let text = export_saco(&p);
        assert!(text.starts_with("-- saco\n"));
        assert!(text.ends_with("block_0(s0,s1) => s2 = fresh_1, s0 = fresh_0, s1 = fresh_2, s0 = s1 + s0\n"));
        for f in ["and(", "or(", "xor(", "not(", "nop("] {
            assert!(!text.contains(f));
        }
        assert_eq!(parse_rbr(&text).unwrap(), saco_program(&p));
    }

    #[test]
    fn saco_without_bit_ops_matches_rbr() {
        let p = program("600560040160005500", true);
        let rbr = emit_rbr(&p, EmitOptions::default());
        let saco = export_saco(&p);
        assert_eq!(saco.replacen("-- saco", "-- rbr", 1), rbr);
    }
}
