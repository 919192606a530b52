from .alu import step_alu
from .branch import step_branch
from .calls import check_helper_call, finalize
from .cfg import check_cfg
from .memory import step_ld_imm64, step_mem
from .scalar import Bounds, alu_bounds, refine
from .service import DEFAULT_MAX_STATES, StateObserver, VerifierService, from_bytecode_error, initial_state, verify
from .types import (
    RULE_CATEGORIES,
    ErrorCategory,
    RegState,
    RuleHistogram,
    VerifierEnv,
    VerifierError,
    VerifierState,
    VerifierSummary,
)

__all__ = [
    "step_alu",
    "step_branch",
    "check_helper_call",
    "finalize",
    "check_cfg",
    "step_ld_imm64",
    "step_mem",
    "Bounds",
    "alu_bounds",
    "refine",
    "DEFAULT_MAX_STATES",
    "StateObserver",
    "VerifierService",
    "from_bytecode_error",
    "initial_state",
    "verify",
    "RULE_CATEGORIES",
    "ErrorCategory",
    "RegState",
    "RuleHistogram",
    "VerifierEnv",
    "VerifierError",
    "VerifierState",
    "VerifierSummary",
]
