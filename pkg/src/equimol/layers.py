"""Layer types: updating, mixing, simple mixing, and gated readout.

Every layer keeps the invariant/equivariant split intact: scalar channels may
pass through biases and nonlinearities, vector channels only ever see
channel-linear maps, per-channel gates, and sums over neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import (
    Tensor,
    channel_inner,
    channel_linear,
    channel_norm,
    concat,
    expand_last,
    gather,
    matmul,
    mul,
    scatter_add,
)


class LayersError(Exception):
    pass


class EquivarianceViolationError(LayersError):
    """A bias or componentwise nonlinearity was about to touch a vector path."""


class LinearMap:
    """Single linear layer; optionally biased and activated on scalar inputs.

    Applying a biased or activated map to vector features (rank-3 input) is
    refused: that would break O(3) equivariance.
    """

    def __init__(self, weight, bias=None, activation="none"):
        if activation not in ("none", "silu", "sigmoid"):
            raise LayersError(f"unknown activation {activation!r}")
        self.weight = weight
        self.bias = bias
        self.activation = activation

    def __call__(self, x):
        if x.ndim == 3:
            if self.bias is not None or self.activation != "none":
                raise EquivarianceViolationError(
                    "vector features only admit bias-free, unactivated channel maps")
            return channel_linear(x, self.weight)
        out = matmul(x, self.weight)
        if self.bias is not None:
            out = ad.add(out, self.bias)
        if self.activation == "silu":
            out = ad.silu(out)
        elif self.activation == "sigmoid":
            out = ad.sigmoid(out)
        return out

    def tensors(self, prefix):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


def init_linear(rng, n_in, n_out, bias=False, activation="none"):
    w = Tensor(rng.normal(size=(n_in, n_out)) / np.sqrt(n_in), requires_grad=True)
    b = Tensor(np.zeros(n_out), requires_grad=True) if bias else None
    return LinearMap(w, b, activation)


class GatedMLP:
    """main-branch MLP elementwise multiplied by a sigmoid-gated twin."""

    def __init__(self, main, gate):
        self.main = main
        self.gate = gate

    def __call__(self, x):
        m = x
        for layer in self.main:
            m = layer(m)
        g = x
        for layer in self.gate:
            g = layer(g)
        return mul(m, g)

    def tensors(self, prefix):
        for i, layer in enumerate(self.main):
            yield from layer.tensors(f"{prefix}.main.{i}")
        for i, layer in enumerate(self.gate):
            yield from layer.tensors(f"{prefix}.gate.{i}")


def init_gmlp(rng, n_in, n_out, hidden=None):
    if hidden is None:
        hidden = max(n_out, n_in // 2)
    main = [init_linear(rng, n_in, hidden, bias=True, activation="silu"),
            init_linear(rng, hidden, n_out, bias=True)]
    gate = [init_linear(rng, n_in, hidden, bias=True, activation="silu"),
            init_linear(rng, hidden, n_out, bias=True, activation="sigmoid")]
    return GatedMLP(main, gate)


def _walk_fields(obj, prefix):
    for name in obj.__dataclass_fields__:
        child = getattr(obj, name)
        if child is None:
            continue
        yield from child.tensors(f"{prefix}.{name}")


@dataclass
class UpdatingLayerParams:
    phi_e1: LinearMap  # edge_w -> 2 * node_w
    gmlp: GatedMLP  # 2 * node_w -> node_w
    phi_e2: LinearMap  # gates for the node-vector contribution
    phi_e3: LinearMap  # gates for the edge-vector contribution
    phi_vec_up: LinearMap | None  # lifts edge vectors when widths differ

    tensors = _walk_fields


def init_updating(rng, node_w, edge_w):
    return UpdatingLayerParams(
        phi_e1=init_linear(rng, edge_w, 2 * node_w),
        gmlp=init_gmlp(rng, 2 * node_w, node_w),
        phi_e2=init_linear(rng, node_w, node_w),
        phi_e3=init_linear(rng, node_w, node_w),
        phi_vec_up=init_linear(rng, edge_w, node_w) if edge_w != node_w else None,
    )


def updating_layer(p, node_s, node_v, edge_s, edge_v, src, dst, n_nodes,
                   vec_from_source=True):
    """Edge-fusion message passing.

    Works on G (nodes = atoms, edges = bonds) and on L[G] (nodes = bonds,
    edges = triplets) alike.  Returns per-node aggregates and the per-edge
    messages; residual wiring is the caller's business.
    """
    h_dst = gather(node_s, dst)
    h_src = gather(node_s, src)
    pre = concat([h_dst, h_src], axis=1)
    msg_s = p.gmlp(mul(pre, p.phi_e1(edge_s)))
    agg_s = scatter_add(msg_s, dst, n_nodes)

    side_v = gather(node_v, src if vec_from_source else dst)
    ev_in = p.phi_vec_up(edge_v) if p.phi_vec_up is not None else edge_v
    msg_v = ad.add(mul(expand_last(p.phi_e2(msg_s)), side_v),
                   mul(expand_last(p.phi_e3(msg_s)), ev_in))
    agg_v = scatter_add(msg_v, dst, n_nodes)
    return agg_s, agg_v, msg_s, msg_v


@dataclass
class MixingLayerParams:
    phi_h1: LinearMap
    phi_h2: LinearMap
    phi_h3: LinearMap  # silu-activated scalar map
    phi_h4: LinearMap  # silu-activated scalar map
    phi_h5: LinearMap
    phi_h6: LinearMap  # 2d -> d on the concatenated invariants
    phi_h7: LinearMap
    phi_h8: LinearMap

    tensors = _walk_fields


def init_mixing(rng, d):
    return MixingLayerParams(
        phi_h1=init_linear(rng, d, d),
        phi_h2=init_linear(rng, d, d),
        phi_h3=init_linear(rng, d, d, bias=True, activation="silu"),
        phi_h4=init_linear(rng, d, d, bias=True, activation="silu"),
        phi_h5=init_linear(rng, d, d),
        phi_h6=init_linear(rng, 2 * d, d),
        phi_h7=init_linear(rng, d, d),
        phi_h8=init_linear(rng, d, d),
    )


def mixing_layer(p, node_s, node_v):
    """Full scalar/vector mixing on node features."""
    inner = channel_inner(p.phi_h1(node_v), p.phi_h2(node_v))
    s_new = ad.add(mul(inner, p.phi_h3(node_s)), p.phi_h4(node_s))
    gate = p.phi_h6(concat([channel_norm(p.phi_h5(node_v)), node_s], axis=1))
    v_new = ad.add(mul(expand_last(gate), p.phi_h7(node_v)), p.phi_h8(node_v))
    return s_new, v_new


@dataclass
class SimpleMixingParams:
    gmlp: GatedMLP  # 2w -> w
    phi_v: LinearMap

    tensors = _walk_fields


def init_simple_mixing(rng, w):
    return SimpleMixingParams(gmlp=init_gmlp(rng, 2 * w, w),
                              phi_v=init_linear(rng, w, w))


def simple_mixing_layer(p, s, v):
    """Cheap scalar/vector mixing used on bond and triplet features."""
    s_new = p.gmlp(concat([s, channel_norm(v)], axis=1))
    v_new = p.phi_v(v)
    return s_new, v_new


@dataclass
class ReadoutParams:
    phi_h9: LinearMap  # d -> out channel map on vectors
    phi_h10: LinearMap  # d -> d channel map feeding the norm
    gmlp_s: GatedMLP  # 2d -> out
    gmlp_v: GatedMLP  # 2d -> out, gates the vector head

    tensors = _walk_fields


def init_readout(rng, d, out_w):
    return ReadoutParams(
        phi_h9=init_linear(rng, d, out_w),
        phi_h10=init_linear(rng, d, d),
        gmlp_s=init_gmlp(rng, 2 * d, out_w, hidden=d),
        gmlp_v=init_gmlp(rng, 2 * d, out_w, hidden=d),
    )


def gated_readout(p, node_s, node_v):
    """Gated equivariant readout producing per-node scalar and vector heads."""
    cat = concat([node_s, channel_norm(p.phi_h10(node_v))], axis=1)
    s_out = p.gmlp_s(cat)
    v_out = mul(expand_last(p.gmlp_v(cat)), p.phi_h9(node_v))
    return s_out, v_out
