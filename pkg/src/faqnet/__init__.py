"""Sum-of-products queries evaluated by round-synchronous protocols on a network.

Modules: ``semiring`` (values, relations, centralized oracle), ``hypergraph``
(query structure), ``topology`` (network, cuts, Steiner packings),
``simulator`` (message passing engine), ``protocols`` (distributed
evaluation), ``bounds`` (round formulas and hard instances), ``cli``.
"""

from .errors import (
    CapacityViolation, DecompositionError, FaqnetError, IncompatibleInputError, ParseError,
    RoundCapExceeded, SchemaError,
)
from .semiring import (
    BOOLEAN, COUNTING, F2, MIN_PLUS, SEMIRINGS, FaqQuery, Relation, Semiring, eval_faq_bruteforce,
    eval_faq_centralized, get_semiring,
)
from .hypergraph import Ghd, Hypergraph, gyo_reduce, internal_node_width, md_ghd
from .topology import Assignment, Topology, min_cut, steiner_packing
from .simulator import SimulationTrace, run, verify_trace

__version__ = "0.1.0"

__all__ = [
    "Assignment", "BOOLEAN", "COUNTING", "CapacityViolation", "DecompositionError", "F2", "FaqQuery",
    "FaqnetError", "Ghd", "Hypergraph", "IncompatibleInputError", "MIN_PLUS", "ParseError", "Relation",
    "RoundCapExceeded", "SEMIRINGS", "SchemaError", "Semiring", "SimulationTrace", "Topology",
    "eval_faq_bruteforce", "eval_faq_centralized", "get_semiring", "gyo_reduce", "internal_node_width",
    "md_ghd", "min_cut", "run", "steiner_packing", "verify_trace",
]
