"""Entity encoder: highway-gated GCN followed by relation-aware graph attention.

Stages, each producing a wider entity matrix:

* ``gcn_highway_forward``: weightless GCN layers mixed with their input by
  a sigmoid transform gate (``X_bna``, width ``d_e``).
* ``relation_representations``: relation vectors from attention over the
  projected head and tail entities of each relation (``R``, width ``d_r``).
* ``relation_aware_entities``: each entity attends over its out- and
  in-relations, ``X_rel = [X_bna | X_h | X_t]`` (width ``d_e + 2 d_r``).
* ``enhanced_entities``: one weightless graph-attention layer over
  undirected neighbours, ``X_out = [X_rel | agg]`` (width ``2 (d_e + 2 d_r)``).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from . import numerics as nx
from .kg import KnowledgeGraph, RelationIncidenceIndex, build_incidence_index, build_normalized_adjacency
from .numerics import DimensionError, Parameter, Tensor


@dataclass
class HyperParams:
    d_e: int = 300
    d_r: int = 100
    gcn_depth: int = 2
    leaky_slope: float = 0.2
    margin: float = 3.0
    neg_k: int = 5
    neg_refresh_p: int = 5
    learning_rate: float = 1e-3
    epochs: int = 100

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name == "epochs":
                if value < 0:
                    raise ValueError("epochs must be non-negative")
            elif not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Ablation:
    """Encoder switches. ``aggregate_self`` aggregates each node's own features."""

    no_bna: bool = False
    no_rgat: bool = False
    aggregate_self: bool = False


@dataclass
class ModelParams:
    """Trainable state. Everything except the entity tables is shared by both KGs."""

    emb1: Parameter
    emb2: Parameter
    gate_w: List[Parameter]
    gate_b: List[Parameter]
    w_head: Parameter
    w_tail: Parameter
    a_rel: Parameter
    a_out: Parameter
    a_in: Parameter
    a_gat: Parameter

    def named(self) -> Dict[str, Parameter]:
        out = {"emb1": self.emb1, "emb2": self.emb2}
        for l, (w, b) in enumerate(zip(self.gate_w, self.gate_b)):
            out[f"gate_w{l}"] = w
            out[f"gate_b{l}"] = b
        out.update(w_head=self.w_head, w_tail=self.w_tail, a_rel=self.a_rel,
                   a_out=self.a_out, a_in=self.a_in, a_gat=self.a_gat)
        return out

    def embeddings(self, side: int) -> Parameter:
        return self.emb1 if side == 1 else self.emb2

    @property
    def d_e(self) -> int:
        return self.emb1.shape[1]

    @property
    def d_r(self) -> int:
        return self.w_head.shape[1]

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "ModelParams":
        depth = sum(1 for k in arrays if k.startswith("gate_w"))
        p = {k: Parameter(np.array(v, dtype=np.float64)) for k, v in arrays.items()}
        return cls(
            emb1=p["emb1"], emb2=p["emb2"],
            gate_w=[p[f"gate_w{l}"] for l in range(depth)],
            gate_b=[p[f"gate_b{l}"] for l in range(depth)],
            w_head=p["w_head"], w_tail=p["w_tail"], a_rel=p["a_rel"],
            a_out=p["a_out"], a_in=p["a_in"], a_gat=p["a_gat"],
        )


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _row_normalize(x):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def init_params(emb1, emb2, hyper: HyperParams, rng: np.random.Generator) -> ModelParams:
    """Entity tables from row-L2-normalised input embeddings, Glorot-uniform
    projections and attention vectors, zero gate biases."""
    emb1 = _row_normalize(emb1)
    emb2 = _row_normalize(emb2)
    d_e, d_r = hyper.d_e, hyper.d_r
    if emb1.shape[1] != d_e or emb2.shape[1] != d_e:
        raise DimensionError(f"embedding widths {emb1.shape[1]}/{emb2.shape[1]} != d_e={d_e}")
    d_rel = d_e + 2 * d_r
    return ModelParams(
        emb1=Parameter(emb1),
        emb2=Parameter(emb2),
        gate_w=[Parameter(_glorot(rng, d_e, d_e, (d_e, d_e))) for _ in range(hyper.gcn_depth)],
        gate_b=[Parameter(np.zeros((1, d_e))) for _ in range(hyper.gcn_depth)],
        w_head=Parameter(_glorot(rng, d_e, d_r, (d_e, d_r))),
        w_tail=Parameter(_glorot(rng, d_e, d_r, (d_e, d_r))),
        a_rel=Parameter(_glorot(rng, 2 * d_r, 1, (2 * d_r, 1))),
        a_out=Parameter(_glorot(rng, d_e + d_r, 1, (d_e + d_r, 1))),
        a_in=Parameter(_glorot(rng, d_e + d_r, 1, (d_e + d_r, 1))),
        a_gat=Parameter(_glorot(rng, 2 * d_rel, 1, (2 * d_rel, 1))),
    )


@dataclass
class GraphInputs:
    """Per-KG structures the encoder reads; built once per graph."""

    adjacency: sp.csr_matrix
    index: RelationIncidenceIndex

    @classmethod
    def from_kg(cls, kg: KnowledgeGraph) -> "GraphInputs":
        return cls(build_normalized_adjacency(kg), build_incidence_index(kg))

    @property
    def entity_count(self) -> int:
        return self.index.entity_count


@dataclass
class PipelineActivations:
    x_bna: Tensor
    relations: Optional[Tensor] = None
    x_rel: Optional[Tensor] = None
    x_out: Optional[Tensor] = None
    attention: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @property
    def output(self) -> Tensor:
        if self.x_out is not None:
            return self.x_out
        return self.x_bna


def _attention_score(parts, vector, slope):
    return nx.leaky_relu(nx.matmul(nx.concat_cols(parts), vector), slope)


def gcn_highway_forward(x: Tensor, adjacency, gate_w, gate_b, depth=None) -> Tensor:
    """``depth`` rounds of ``T * ReLU(A X) + (1 - T) * X`` with ``T = sigmoid(X W + b)``."""
    depth = len(gate_w) if depth is None else depth
    if depth > len(gate_w):
        raise DimensionError(f"gcn_highway_forward: depth {depth} but {len(gate_w)} gates")
    if adjacency.shape != (x.shape[0], x.shape[0]):
        raise DimensionError(f"gcn_highway_forward: adjacency {adjacency.shape} vs X {x.shape}")
    for l in range(depth):
        conv = nx.relu(nx.sparse_dense_matmul(adjacency, x))
        gate = nx.sigmoid(nx.add(nx.matmul(x, gate_w[l]), gate_b[l]))
        x = nx.add(nx.mul(gate, conv), nx.mul(nx.one_minus(gate), x))
    return x


def relation_representations(x: Tensor, index: RelationIncidenceIndex, params: ModelParams,
                             slope: float = nx.LEAKY_SLOPE, attention: Optional[dict] = None) -> Tensor:
    """Relation matrix ``R = R_h + R_t`` (one row per relation).

    Attention for relation ``k`` is normalised jointly over all of its
    triples. The tail half reuses ``a_rel`` with the concatenation order
    swapped, so each half scores ``[own side | other side]``.
    """
    m = index.relation_count
    trip = index.triples
    heads, rels, tails = trip[:, 0], trip[:, 1], trip[:, 2]
    xh = nx.matmul(x, params.w_head)
    xt = nx.matmul(x, params.w_tail)
    xh_e = nx.gather_rows(xh, heads)
    xt_e = nx.gather_rows(xt, tails)

    alpha_h = nx.segment_softmax(_attention_score([xh_e, xt_e], params.a_rel, slope), rels, m)
    r_head = nx.relu(nx.segment_sum(nx.mul(alpha_h, xh_e), rels, m))
    alpha_t = nx.segment_softmax(_attention_score([xt_e, xh_e], params.a_rel, slope), rels, m)
    r_tail = nx.relu(nx.segment_sum(nx.mul(alpha_t, xt_e), rels, m))
    if attention is not None:
        attention["relation_head"] = (rels, alpha_h.value[:, 0])
        attention["relation_tail"] = (rels, alpha_t.value[:, 0])
    return nx.add(r_head, r_tail)


def relation_aware_entities(x: Tensor, relations: Tensor, index: RelationIncidenceIndex,
                            params: ModelParams, slope: float = nx.LEAKY_SLOPE,
                            attention: Optional[dict] = None) -> Tensor:
    """``X_rel = [X | X_h | X_t]``.

    ``X_h[i]`` attends over one term per triple with head ``i`` (a relation
    reached through two tails counts twice); ``X_t`` mirrors it over
    triples with tail ``i``. Entities without such triples get zeros.
    """
    n = index.entity_count
    trip = index.triples
    rel_e = nx.gather_rows(relations, trip[:, 1])
    halves = []
    for name, side, vector in (("entity_out", 0, params.a_out), ("entity_in", 2, params.a_in)):
        owner = trip[:, side]
        score = _attention_score([nx.gather_rows(x, owner), rel_e], vector, slope)
        alpha = nx.segment_softmax(score, owner, n)
        halves.append(nx.relu(nx.segment_sum(nx.mul(alpha, rel_e), owner, n)))
        if attention is not None:
            attention[name] = (owner, alpha.value[:, 0])
    return nx.concat_cols([x] + halves)


def enhanced_entities(x_rel: Tensor, index: RelationIncidenceIndex, params: ModelParams,
                      slope: float = nx.LEAKY_SLOPE, aggregate_self: bool = False,
                      attention: Optional[dict] = None) -> Tensor:
    """``X_out = [X_rel | ReLU(sum_j alpha_ij x_j)]`` over undirected neighbours ``j != i``.

    With ``aggregate_self`` the sum weights the node's own row instead of the
    neighbour's. Isolated entities aggregate to zero either way.
    """
    n = index.entity_count
    edges = index.neighbor_edges
    src, dst = edges[:, 0], edges[:, 1]
    x_src = nx.gather_rows(x_rel, src)
    x_dst = nx.gather_rows(x_rel, dst)
    alpha = nx.segment_softmax(_attention_score([x_src, x_dst], params.a_gat, slope), src, n)
    carried = x_src if aggregate_self else x_dst
    agg = nx.relu(nx.segment_sum(nx.mul(alpha, carried), src, n))
    if attention is not None:
        attention["neighbor"] = (src, alpha.value[:, 0])
    return nx.concat_cols([x_rel, agg])


def output_width(d_e: int, d_r: int, ablation: Ablation = Ablation()) -> int:
    if ablation.no_rgat:
        return d_e
    return 2 * (d_e + 2 * d_r)


def encode(graph: GraphInputs, embeddings: Tensor, params: ModelParams,
           hyper: HyperParams, ablation: Ablation = Ablation(),
           record_attention: bool = False) -> PipelineActivations:
    """Run every enabled stage for one KG.

    ``no_bna`` feeds the embeddings straight to the attention stages;
    ``no_rgat`` stops after the GCN stage so ``output`` is ``X_bna``.
    """
    if embeddings.shape[0] != graph.entity_count:
        raise DimensionError(
            f"encode: {embeddings.shape[0]} embedding rows for {graph.entity_count} entities")
    if embeddings.shape[1] != params.d_e:
        raise DimensionError(f"encode: embedding width {embeddings.shape[1]} != d_e={params.d_e}")
    slope = hyper.leaky_slope
    att: Optional[dict] = {} if record_attention else None
    if ablation.no_bna:
        x = embeddings
    else:
        x = gcn_highway_forward(embeddings, graph.adjacency, params.gate_w, params.gate_b, hyper.gcn_depth)
    acts = PipelineActivations(x_bna=x)
    if ablation.no_rgat:
        return acts
    acts.relations = relation_representations(x, graph.index, params, slope, att)
    acts.x_rel = relation_aware_entities(x, acts.relations, graph.index, params, slope, att)
    acts.x_out = enhanced_entities(acts.x_rel, graph.index, params, slope, ablation.aggregate_self, att)
    if att is not None:
        acts.attention = att
    return acts
