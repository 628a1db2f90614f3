//! Single-point mutations of translated programs, for checking that the
//! differential harness notices broken translations.

use std::collections::{BTreeMap, BTreeSet};

use crate::rbr::{Expr, Program, RuleKind, RuleName, Statement, Var};
use crate::U256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// Replace the guard relation of rule `rule` with its complement.
    GuardFlip { rule: usize },
    /// Read `s<to>` instead of `s<from>` in statement `stmt` of rule `rule`.
    StackIndex {
        rule: usize,
        stmt: usize,
        from: usize,
        to: usize,
    },
}

impl Mutation {
    pub fn rule(&self) -> usize {
        match self {
            Mutation::GuardFlip { rule } | Mutation::StackIndex { rule, .. } => *rule,
        }
    }

    pub fn apply(&self, program: &Program) -> Program {
        let mut p = program.clone();
        match *self {
            Mutation::GuardFlip { rule } => {
                let g = p.rules[rule].guard.as_mut().expect("guarded rule");
                g.relation = g.relation.negate();
            }
            Mutation::StackIndex { rule, stmt, from, to } => {
                let Statement::Assign(_, e) = &mut p.rules[rule].body[stmt] else {
                    panic!("statement {stmt} of rule {rule} is not an assignment");
                };
                e.map_vars(&mut |v| {
                    if *v == Var::Stack(from) {
                        *v = Var::Stack(to);
                    }
                });
            }
        }
        p
    }
}

/// Guard flips of every executed `jump_` rule.
pub fn guard_flips(program: &Program, executed: &[RuleName]) -> Vec<Mutation> {
    let executed: BTreeSet<_> = executed.iter().collect();
    program
        .rules
        .iter()
        .enumerate()
        .filter(|(_, r)| r.guard.is_some() && executed.contains(&r.name))
        .map(|(rule, _)| Mutation::GuardFlip { rule })
        .collect()
}

/// Symbolic value of a variable inside one rule body.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Value {
    Param(Var),
    Const(U256),
    /// Result of the statement with this index.
    Computed(usize),
}

/// Stack-index mutations of field and local stores in executed `block_`
/// rules. A store is a candidate when it is the last write to its target in
/// the rule; the replacement index must name a stack slot that is defined at
/// that point and holds a different value number than the original.
pub fn stack_index_mutations(program: &Program, executed: &[RuleName]) -> Vec<Mutation> {
    let executed: BTreeSet<_> = executed.iter().collect();
    let mut out = Vec::new();
    for (ri, rule) in program.rules.iter().enumerate() {
        if rule.name.kind != RuleKind::Block || !executed.contains(&rule.name) {
            continue;
        }
        let mut values: BTreeMap<Var, Value> = (0..rule.stack_params)
            .map(|i| (Var::Stack(i), Value::Param(Var::Stack(i))))
            .collect();
        let value_of = |values: &BTreeMap<Var, Value>, v: Var| values.get(&v).cloned().unwrap_or(Value::Param(v));
        for (si, s) in rule.body.iter().enumerate() {
            let Statement::Assign(target, e) = s else { continue };
            if let (Var::Field(_) | Var::Local(_), Expr::Var(Var::Stack(from))) = (target, e) {
                let last_write = !rule.body[si + 1..]
                    .iter()
                    .any(|later| matches!(later, Statement::Assign(t, _) if t == target));
                if last_write {
                    let original = value_of(&values, Var::Stack(*from));
                    for (v, val) in &values {
                        if let Var::Stack(to) = v {
                            if *to != *from && *val != original {
                                out.push(Mutation::StackIndex {
                                    rule: ri,
                                    stmt: si,
                                    from: *from,
                                    to: *to,
                                });
                            }
                        }
                    }
                }
            }
            let value = match e {
                Expr::Num(n) => Value::Const(*n),
                Expr::Var(v) => value_of(&values, *v),
                _ => Value::Computed(si),
            };
            values.insert(*target, value);
        }
    }
    out
}
