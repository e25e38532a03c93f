"""Two-stream memory bank: storage, retrieval, fusion and consolidation."""

from .bank import (
    STREAMS,
    MemoryBank,
    MemoryEntry,
    consolidate,
    cosine,
    dumps_bank,
    loads_bank,
    merge_index,
    reset,
)
from .module import (
    AugmentedWorkingMemory,
    BankBatch,
    GateFusion,
    MemoryConfig,
    MemoryModule,
    RetrievalLayer,
    RetrievedContext,
    StreamRetriever,
    gate_fuse,
    timestep_encoding,
)

__all__ = [
    "STREAMS",
    "AugmentedWorkingMemory",
    "BankBatch",
    "GateFusion",
    "MemoryBank",
    "MemoryConfig",
    "MemoryEntry",
    "MemoryModule",
    "RetrievalLayer",
    "RetrievedContext",
    "StreamRetriever",
    "consolidate",
    "cosine",
    "dumps_bank",
    "gate_fuse",
    "loads_bank",
    "merge_index",
    "reset",
    "timestep_encoding",
]
