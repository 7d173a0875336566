"""Boolean secret sharing and GMW circuits for secure cohort pruning."""
from .circuit import Circuit, comparator_circuit, hamming_circuit, tournament_circuit
from .gmw import Party, run_parties
from .protocols import (
    PruneResult,
    greater_than_circuit,
    hamming_weight_circuit,
    key_width,
    plaintext_prune,
    prune_bytes,
    prune_rounds,
    prune_triple_bits,
    secure_and,
    secure_prune,
    top_n_select,
)
from .shares import (
    BeaverTriple,
    BooleanShare,
    SharedInteger,
    TriplePool,
    deal_triples,
    reconstruct,
    reconstruct_int,
    rerandomize,
    share_bits,
    share_int,
)
