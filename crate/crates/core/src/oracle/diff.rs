use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::evm::{run_evm_with, EvmInput, MachineState, DEFAULT_STEP_LIMIT};
use super::interp::{big, run_rbr_with, RbrState};
use crate::asm::{disassemble, AsmError};
use crate::cfg::{resolve_cfg, split_blocks};
use crate::rbr::{
    translate_cfg, BlockchainVar, Program, RuleKind, RuleName, TranslateError, TranslateOptions, Var, VarLayout,
};
use crate::U256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error(transparent)]
    Translate(#[from] TranslateError),
}

/// Calldata offsets beyond this are left to read as zero.
const MAX_CALLDATA: usize = 4096;

/// Storage keys that always get a random initial value.
const SEEDED_KEYS: usize = 4;

/// Random inputs for one case: small words at every constant calldata
/// offset, small environment values and small initial storage.
pub fn case_input(layout: &VarLayout, rng: &mut impl Rng) -> EvmInput {
    let offsets: Vec<usize> = layout
        .calldata
        .iter()
        .filter_map(|o| usize::try_from(*o).ok())
        .filter(|o| *o < MAX_CALLDATA)
        .collect();
    let len = offsets.iter().map(|o| o + 32).max().unwrap_or(0).max(4 + 32 * 4);
    let mut calldata = vec![0u8; len];
    for o in offsets {
        let w = U256::from(rng.gen_range(0u64..1 << 16)).to_be_bytes::<32>();
        calldata[o..o + 32].copy_from_slice(&w);
    }
    let env = BlockchainVar::ALL
        .iter()
        .map(|b| (*b, U256::from(rng.gen_range(0u64..1 << 16))))
        .collect();
    let storage = (0..layout.fields.max(SEEDED_KEYS))
        .map(|k| (U256::from(k), U256::from(rng.gen_range(0u64..1 << 16))))
        .collect();
    EvmInput { calldata, env, storage }
}

/// The `n` inputs `differential_check` uses for `seed`.
pub fn case_inputs(layout: &VarLayout, n: usize, seed: u64) -> Vec<EvmInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| case_input(layout, &mut rng)).collect()
}

fn calldata_word(calldata: &[u8], offset: U256) -> U256 {
    let mut w = [0u8; 32];
    if let Ok(o) = usize::try_from(offset) {
        for (i, b) in w.iter_mut().enumerate() {
            *b = o.checked_add(i).and_then(|j| calldata.get(j)).copied().unwrap_or(0);
        }
    }
    U256::from_be_bytes(w)
}

/// The RBR state matching `input`: fields from storage, locals zero, calldata
/// words and blockchain values as the EVM would read them.
pub fn rbr_init(layout: &VarLayout, input: &EvmInput) -> RbrState {
    let mut bindings = BTreeMap::new();
    for i in 0..layout.fields {
        let v = input.storage.get(&U256::from(i)).copied().unwrap_or_default();
        bindings.insert(Var::Field(i), big(v));
    }
    for i in 0..layout.locals.len() {
        bindings.insert(Var::Local(i), BigInt::default());
    }
    for (i, o) in layout.calldata.iter().enumerate() {
        bindings.insert(Var::Calldata(i), big(calldata_word(&input.calldata, *o)));
    }
    for b in &layout.chain {
        let v = match b {
            BlockchainVar::Calldatasize => U256::from(input.calldata.len()),
            b => input.env.get(b).copied().unwrap_or_default(),
        };
        bindings.insert(Var::Chain(*b), big(v));
    }
    RbrState { bindings, rule: None }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub quantity: String,
    pub evm: String,
    pub rbr: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CaseOutcome {
    Agree,
    /// Outside the differential contract: an oracle error or out-of-regime arithmetic.
    Skipped(String),
    Diverged {
        mismatches: Vec<Mismatch>,
        evm_trace: Vec<usize>,
        rbr_trace: Vec<usize>,
    },
}

fn pcs(t: &[usize]) -> String {
    let items: Vec<String> = t.iter().map(|p| p.to_string()).collect();
    format!("[{}]", items.join(","))
}

/// Fields then locals, in layout order.
fn observed_vars(layout: &VarLayout) -> Vec<Var> {
    (0..layout.fields)
        .map(Var::Field)
        .chain((0..layout.locals.len()).map(Var::Local))
        .collect()
}

fn evm_values(layout: &VarLayout, st: &MachineState) -> Vec<U256> {
    let fields = (0..layout.fields).map(|i| st.storage.get(&U256::from(i)).copied().unwrap_or_default());
    fields.chain(layout.locals.iter().map(|a| st.memory_word(*a))).collect()
}

/// Runs one input through both interpreters and compares fields and locals
/// on entry to every block of the trace and at the end, and the trace itself.
pub fn compare_case(code: &[u8], program: &Program, input: &EvmInput, seed: u64) -> CaseOutcome {
    let layout = &program.layout;
    let vars = observed_vars(layout);
    let mut evm_seen = Vec::new();
    let evm = match run_evm_with(code, input, DEFAULT_STEP_LIMIT, &mut |st| {
        evm_seen.push(evm_values(layout, st))
    }) {
        Ok(r) => r,
        Err(e) => return CaseOutcome::Skipped(format!("evm: {e}")),
    };
    if !evm.in_regime {
        return CaseOutcome::Skipped("outside the overflow-free regime".into());
    }
    let mut rbr_seen = Vec::new();
    let mut on_rule = |name: RuleName, env: &BTreeMap<Var, BigInt>| {
        if name.kind == RuleKind::Block {
            rbr_seen.push(vars.iter().map(|v| env.get(v).cloned()).collect::<Vec<_>>());
        }
    };
    let rbr = match run_rbr_with(
        program,
        &rbr_init(layout, input),
        DEFAULT_STEP_LIMIT,
        seed,
        &mut on_rule,
    ) {
        Ok(r) => r,
        Err(e) => {
            return CaseOutcome::Diverged {
                mismatches: vec![Mismatch {
                    quantity: "halt".into(),
                    evm: format!("{:?}", evm.status).to_lowercase(),
                    rbr: e.to_string(),
                }],
                evm_trace: evm.trace,
                rbr_trace: Vec::new(),
            }
        }
    };
    let mut mismatches = Vec::new();
    let mismatch = |quantity: String, expected: &U256, got: Option<&BigInt>| {
        (got != Some(&big(*expected))).then(|| Mismatch {
            quantity,
            evm: expected.to_string(),
            rbr: got.map_or("unbound".into(), |v| v.to_string()),
        })
    };
    // The first block entry where the states part, if any.
    'blocks: for (k, (e, r)) in evm_seen.iter().zip(&rbr_seen).enumerate() {
        for ((v, want), got) in vars.iter().zip(e).zip(r) {
            if let Some(m) = mismatch(
                format!("{v} entering block {k} (pc {})", evm.trace[k]),
                want,
                got.as_ref(),
            ) {
                mismatches.push(m);
                break 'blocks;
            }
        }
    }
    let end = evm_values(layout, &evm.state);
    for (v, want) in vars.iter().zip(&end) {
        mismatches.extend(mismatch(v.to_string(), want, rbr.state.get(*v)));
    }
    let rbr_trace = rbr.block_pcs();
    if rbr_trace != evm.trace {
        mismatches.push(Mismatch {
            quantity: "trace".into(),
            evm: pcs(&evm.trace),
            rbr: pcs(&rbr_trace),
        });
    }
    if mismatches.is_empty() {
        CaseOutcome::Agree
    } else {
        CaseOutcome::Diverged {
            mismatches,
            evm_trace: evm.trace,
            rbr_trace,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    pub cases: usize,
    pub divergent: usize,
    pub skipped: usize,
    pub lines: Vec<String>,
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        if self.skipped > 0 {
            writeln!(f, "skipped: {}/{}", self.skipped, self.cases)?;
        }
        writeln!(f, "divergences: {}/{}", self.divergent, self.cases)
    }
}

/// Compares `program` against `code` on `n_cases` inputs drawn from `seed`.
pub fn check_program(code: &[u8], program: &Program, n_cases: usize, seed: u64) -> Report {
    let mut report = Report {
        cases: n_cases,
        ..Report::default()
    };
    for (n, input) in case_inputs(&program.layout, n_cases, seed).iter().enumerate() {
        match compare_case(code, program, input, seed.wrapping_add(n as u64)) {
            CaseOutcome::Agree => {}
            CaseOutcome::Skipped(why) => {
                report.skipped += 1;
                report.lines.push(format!("case {n}: skipped ({why})"));
            }
            CaseOutcome::Diverged {
                mismatches,
                evm_trace,
                rbr_trace,
            } => {
                report.divergent += 1;
                for m in mismatches {
                    report
                        .lines
                        .push(format!("case {n}: {} evm={} rbr={}", m.quantity, m.evm, m.rbr));
                }
                report.lines.push(format!(
                    "case {n}: traces evm={} rbr={}",
                    pcs(&evm_trace),
                    pcs(&rbr_trace)
                ));
            }
        }
    }
    report
}

/// Translates `code` and compares it against the EVM oracle.
pub fn differential_check(code: &[u8], n_cases: usize, seed: u64) -> Result<Report, CheckError> {
    let program = translate(code)?;
    Ok(check_program(code, &program, n_cases, seed))
}

/// The whole pipeline with default options.
pub fn translate(code: &[u8]) -> Result<Program, CheckError> {
    let cfg = resolve_cfg(&split_blocks(&disassemble(code)?));
    Ok(translate_cfg(&cfg, TranslateOptions::default())?.program)
}
