//! An interpreter for RBR programs over unbounded integers.

use std::collections::BTreeMap;

use num_bigint::{BigInt, Sign};
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::rbr::{ArithOp, BitOp, Expr, Guard, Operand, Program, Rule, RuleKind, RuleName, Statement, Var};
use crate::U256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RbrError {
    #[error("program has no entry rule")]
    NoEntry,
    #[error("no applicable rule for {0}")]
    NoApplicableRule(RuleName),
    #[error("more than one applicable rule for {0}")]
    AmbiguousRule(RuleName),
    #[error("unbound variable {var} in {rule}")]
    UnboundVariable { rule: RuleName, var: Var },
    #[error("{rule} calls {target} with {given} stack arguments, expected {expected}")]
    ArityMismatch {
        rule: RuleName,
        target: RuleName,
        given: usize,
        expected: usize,
    },
    #[error("exponent too large in {0}")]
    ExponentTooLarge(RuleName),
    #[error("step limit of {0} exceeded")]
    StepLimitExceeded(usize),
}

/// Variable bindings plus the rule being (or last) executed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RbrState {
    pub bindings: BTreeMap<Var, BigInt>,
    pub rule: Option<RuleName>,
}

impl RbrState {
    pub fn get(&self, v: Var) -> Option<&BigInt> {
        self.bindings.get(&v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RbrRun {
    pub state: RbrState,
    /// Every rule activation, in order.
    pub trace: Vec<RuleName>,
}

impl RbrRun {
    /// Start PCs of the `block_` rules visited, clone suffixes dropped.
    pub fn block_pcs(&self) -> Vec<usize> {
        self.trace
            .iter()
            .filter(|n| n.kind == RuleKind::Block)
            .map(|n| n.id.pc)
            .collect()
    }
}

pub fn big(v: U256) -> BigInt {
    BigInt::from_bytes_be(Sign::Plus, &v.to_be_bytes::<32>())
}

fn word_max() -> BigInt {
    (BigInt::one() << 256) - 1
}

/// Largest result size, in bits, an exponentiation may produce.
const MAX_POW_BITS: u64 = 1 << 16;

struct Frame<'a> {
    rule: RuleName,
    env: &'a mut BTreeMap<Var, BigInt>,
    rng: &'a mut ChaCha8Rng,
}

impl Frame<'_> {
    fn read(&mut self, v: Var) -> Result<BigInt, RbrError> {
        if let Var::Fresh(_) = v {
            let rng = &mut *self.rng;
            return Ok(self
                .env
                .entry(v)
                .or_insert_with(|| BigInt::from(rng.gen::<u64>()))
                .clone());
        }
        self.env.get(&v).cloned().ok_or(RbrError::UnboundVariable {
            rule: self.rule,
            var: v,
        })
    }

    fn operand(&mut self, o: &Operand) -> Result<BigInt, RbrError> {
        match o {
            Operand::Var(v) => self.read(*v),
            Operand::Num(n) => Ok(big(*n)),
        }
    }

    fn eval(&mut self, e: &Expr) -> Result<BigInt, RbrError> {
        Ok(match e {
            Expr::Num(n) => big(*n),
            Expr::Var(v) => self.read(*v)?,
            Expr::Not(a) => word_max() - self.eval(a)?,
            Expr::Bit(op, a, b) => {
                let (a, b) = (self.eval(a)?, self.eval(b)?);
                match op {
                    BitOp::And => a & b,
                    BitOp::Or => a | b,
                    BitOp::Xor => a ^ b,
                }
            }
            Expr::Arith(op, a, b) => {
                let (a, b) = (self.eval(a)?, self.eval(b)?);
                match op {
                    ArithOp::Add => a + b,
                    ArithOp::Sub => a - b,
                    ArithOp::Mul => a * b,
                    ArithOp::Div if b.is_zero() => BigInt::zero(),
                    ArithOp::Div => a / b,
                    ArithOp::Mod if b.is_zero() => BigInt::zero(),
                    ArithOp::Mod => a % b,
                    ArithOp::Pow => self.pow(a, b)?,
                }
            }
        })
    }

    fn pow(&self, a: BigInt, b: BigInt) -> Result<BigInt, RbrError> {
        if b.is_negative() {
            return Ok(BigInt::zero());
        }
        if a.is_zero() || a.abs().is_one() {
            let odd = b.bit(0);
            return Ok(if b.is_zero() || (a.is_negative() && !odd) {
                BigInt::one()
            } else {
                a
            });
        }
        let e = b
            .to_u32()
            .filter(|e| u64::from(*e) * a.bits() <= MAX_POW_BITS)
            .ok_or(RbrError::ExponentTooLarge(self.rule))?;
        Ok(num_traits::pow(a, e as usize))
    }

    fn holds(&mut self, g: &Guard) -> Result<bool, RbrError> {
        let (a, b) = (self.operand(&g.lhs)?, self.operand(&g.rhs)?);
        Ok(g.relation.holds(&a, &b))
    }
}

fn run_rule(rule: &Rule, frame: &mut Frame<'_>) -> Result<(), RbrError> {
    for s in &rule.body {
        if let Statement::Assign(v, e) = s {
            let value = frame.eval(e)?;
            frame.env.insert(*v, value);
        }
    }
    Ok(())
}

/// Runs `program` from its entry rule until a rule without continuation.
///
/// `init` must bind every shared parameter. Stack arguments are passed by
/// position: a call with `k` stack arguments keeps `s0..s<k-1>` and the
/// shared parameters and drops everything else. `fresh_<i>` reads draw from a
/// ChaCha stream seeded with `seed`, once per rule activation.
pub fn run_rbr(program: &Program, init: &RbrState, step_limit: usize, seed: u64) -> Result<RbrRun, RbrError> {
    run_rbr_with(program, init, step_limit, seed, &mut |_, _| {})
}

/// [`run_rbr`], calling `on_rule` with the bindings on entry to every rule activation.
pub fn run_rbr_with(
    program: &Program,
    init: &RbrState,
    step_limit: usize,
    seed: u64,
    on_rule: &mut dyn FnMut(RuleName, &BTreeMap<Var, BigInt>),
) -> Result<RbrRun, RbrError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = init.bindings.clone();
    let mut current = program.entry().ok_or(RbrError::NoEntry)?;
    let mut arity = 0;
    let mut trace = Vec::new();
    loop {
        if trace.len() == step_limit {
            return Err(RbrError::StepLimitExceeded(step_limit));
        }
        let candidates: Vec<&Rule> = program.rules_named(current).collect();
        let rule = {
            let mut frame = Frame {
                rule: current,
                env: &mut env,
                rng: &mut rng,
            };
            let mut chosen = None;
            for r in &candidates {
                let applies = match &r.guard {
                    Some(g) => frame.holds(g)?,
                    None => true,
                };
                if applies {
                    if chosen.is_some() {
                        return Err(RbrError::AmbiguousRule(current));
                    }
                    chosen = Some(*r);
                }
            }
            chosen.ok_or(RbrError::NoApplicableRule(current))?
        };
        if rule.stack_params != arity {
            return Err(RbrError::ArityMismatch {
                rule: trace.last().copied().unwrap_or(current),
                target: current,
                given: arity,
                expected: rule.stack_params,
            });
        }
        trace.push(current);
        on_rule(current, &env);
        let mut frame = Frame {
            rule: current,
            env: &mut env,
            rng: &mut rng,
        };
        run_rule(rule, &mut frame)?;
        let Some(call) = rule.call else {
            return Ok(RbrRun {
                state: RbrState {
                    bindings: env,
                    rule: Some(current),
                },
                trace,
            });
        };
        for k in 0..call.stack_args {
            if !env.contains_key(&Var::Stack(k)) {
                return Err(RbrError::UnboundVariable {
                    rule: current,
                    var: Var::Stack(k),
                });
            }
        }
        env.retain(|v, _| match v {
            Var::Stack(i) => *i < call.stack_args,
            v => !v.is_rule_local(),
        });
        current = call.target;
        arity = call.stack_args;
    }
}
