"""Exact martingales on fair-coin bit arrays, betting games with oracle
access, and a discretized Brownian-motion backend."""
from .bitspace import (
    DEFAULT_SUPPORT_CAP,
    BelowFunction,
    CylinderFunction,
    Explicit,
    LexPrefix,
    Position,
    RowPrefix,
    SupportCapError,
    Union,
    concat,
    cond_expectation,
    expectation,
    split,
)
from .martingale import (
    INF,
    MartingaleSpec,
    OracleMartingale,
    SavingsError,
    TimeChain,
    Trajectory,
    convert_oracle_martingale,
    extend_to_array,
    repair,
    repair_spec,
    restrict_rows,
    rows_spec,
    savings_path,
    savings_transform,
    upcrossing_path,
    upcrossing_transform,
    verify,
)

__all__ = [
    "DEFAULT_SUPPORT_CAP", "BelowFunction", "CylinderFunction", "Explicit", "LexPrefix", "Position",
    "RowPrefix", "SupportCapError", "Union", "concat", "cond_expectation", "expectation", "split",
    "INF", "MartingaleSpec", "OracleMartingale", "SavingsError", "TimeChain", "Trajectory",
    "convert_oracle_martingale", "extend_to_array", "repair", "repair_spec", "restrict_rows", "rows_spec", "savings_path",
    "savings_transform", "upcrossing_path", "upcrossing_transform", "verify",
]
