"""Persona propagation over user-item purchase graphs."""
from .exact import AffinityMatrix, attention, exact_affinity, mc_attention
from .graph import BipartiteGraph, EdgeRecord, IdMap, PurchaseGraph, build_graph, load_edges, walk_step_distribution
from .personas import (
    LabelMatrix,
    Persona,
    PersonaCatalog,
    PersonaMatrix,
    build_label_matrix,
    debias_coefficients,
    persona_distribution,
)
from .labelers import RemoteLabeler, SyntheticLabeler, label_items, label_users
from .pipeline import PipelineConfig, assign_topk, run_gplr
from .prompts import parse_label_response, render_label_prompt
from .revaff import ApproximationReport, revaff_all, revaff_column
from .sampling import du_score, normalize_affinity_row, select_batch

__version__ = "0.1.0"
