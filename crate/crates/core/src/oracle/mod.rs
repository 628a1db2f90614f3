//! Differential-testing ground truth: a concrete EVM interpreter, an RBR
//! interpreter, a comparator between the two, a program generator and a
//! loop detector over the rule call graph.

mod diff;
mod evm;
pub mod fixtures;
mod gen;
mod interp;
mod loops;
pub mod mutate;

pub use diff::{
    case_input, case_inputs, check_program, compare_case, differential_check, rbr_init, translate, CaseOutcome,
    CheckError, Mismatch, Report,
};
pub use evm::{
    run_evm, run_evm_with, EvmError, EvmInput, EvmRun, EvmStatus, MachineState, DEFAULT_STEP_LIMIT, MEMORY_LIMIT,
};
pub use gen::{in_regime, GenConfig, ProgramGenerator};
pub use interp::{big, run_rbr, run_rbr_with, RbrError, RbrRun, RbrState};
pub use loops::{call_graph, detect_loops, LoopReport};
