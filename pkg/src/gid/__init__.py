"""Graph-based intrusion detection: top-k anomalous event paths per host window."""
from .detect import AlertReport, DetectConfig, detect_graph, detect_window, topk_exhaustive, topk_optimized, validate
from .events import Entity, EntityType, Event, EventSequence, TimeWindow, group_by_window, read_events
from .graph import CompactGraph, build_graph
from .patterns import PathPattern, enumerate_valid_patterns
from .search import CandidateSet, find_candidates
from .scoring import ScoredPath, ScoreState, random_walk
from .tracegen import AttackSpec, TraceConfig, generate

__version__ = "0.1.0"
