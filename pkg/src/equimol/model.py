"""Full model assembly: L interaction blocks (each an EGCL on the line graph
followed by an EGCL on the molecular graph), plus scalar, force, and
polarizability heads, and the binary checkpoint format."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, fields, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .featurize import RadialBasisConfig, init_edge, init_node, init_triplet
from .geometry import build_graph
from .linegraph import build_triplets
from . import layers as ly

CHECKPOINT_MAGIC = b"ENIN"
CHECKPOINT_VERSION = 1

HEADS = ("scalar", "scalar+force", "polarizability")
READOUTS = ("sum", "mean")


class ModelError(Exception):
    pass


class ConfigError(ModelError):
    pass


class CheckpointError(ModelError):
    pass


class AsymmetricTensorError(ModelError):
    pass


@dataclass
class ModelConfig:
    d: int = 128
    d_t: int | None = None  # defaults to d // 64
    n_blocks: int = 3
    r_c: float = 5.0
    n_max: int = 32
    n_bf: int = 20
    mu_max: float | None = None  # defaults to r_c
    sigma: float | None = None  # defaults to mu_max / (n_bf - 1)
    readout: str = "sum"
    head: str = "scalar"
    residual: bool = True
    use_triplets: bool = True  # False drops the line-graph stage (bond-only)
    edge_vector_source: bool = True  # gate the source bond vector on each edge
    readout_many_body: bool = False  # add a bond-level readout to the pool
    center_polarizability: bool = True  # centroid-center positions in the head
    z_table: int = 100

    def __post_init__(self):
        if self.d < 1 or self.n_blocks < 1:
            raise ConfigError("d and n_blocks must be positive")
        if self.d_t is None:
            if self.d % 64:
                raise ConfigError("d must be divisible by 64 to derive d_t = d / 64")
            self.d_t = self.d // 64
        if self.d_t < 1:
            raise ConfigError("d_t must be positive")
        if self.r_c <= 0 or self.n_max < 1:
            raise ConfigError("r_c must be positive and n_max at least 1")
        if self.readout not in READOUTS:
            raise ConfigError(f"readout must be one of {READOUTS}")
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}")
        if self.mu_max is None:
            self.mu_max = self.r_c
        if self.sigma is None:
            self.sigma = self.mu_max / (self.n_bf - 1)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    def radial_config(self):
        return RadialBasisConfig(self.n_bf, self.mu_max, self.sigma, self.r_c)

    def triplet_radial_config(self):
        # opposite-end distances reach 2 r_c by the triangle inequality
        return RadialBasisConfig(self.n_bf, 2.0 * self.mu_max, None, 2.0 * self.r_c)

    @property
    def out_width(self):
        return 1


@dataclass
class BlockParams:
    lg_upd: ly.UpdatingLayerParams  # nodes = bonds (d), edges = triplets (d_t)
    tri_down: ly.LinearMap  # d -> d_t, persistent triplet scalars
    tri_vdown: ly.LinearMap  # d -> d_t channel map, persistent triplet vectors
    bond_sm: ly.SimpleMixingParams  # width d
    tri_sm: ly.SimpleMixingParams  # width d_t
    g_upd: ly.UpdatingLayerParams  # nodes = atoms (d), edges = bonds (d)
    mix: ly.MixingLayerParams

    tensors = ly._walk_fields


@dataclass
class ModelParams:
    w_z: Tensor  # (z_table, d) element embedding
    w_e: Tensor  # (n_bf, d) bond radial weights
    w_t: Tensor  # (n_bf, d_t) triplet radial weights
    blocks: list
    readout: ly.ReadoutParams
    edge_readout: ly.ReadoutParams | None = None

    def named_tensors(self):
        yield "w_z", self.w_z
        yield "w_e", self.w_e
        yield "w_t", self.w_t
        for i, blk in enumerate(self.blocks):
            yield from blk.tensors(f"blocks.{i}")
        yield from self.readout.tensors("readout")
        if self.edge_readout is not None:
            yield from self.edge_readout.tensors("edge_readout")

    def copy_data(self):
        """Snapshot of every tensor's buffer, keyed by name."""
        return {name: t.data.copy() for name, t in self.named_tensors()}

    def load_data(self, snapshot):
        for name, t in self.named_tensors():
            t.data = snapshot[name].copy()


def init_params(cfg, seed=0):
    rng = np.random.default_rng(seed)
    d, d_t = cfg.d, cfg.d_t
    blocks = []
    for _ in range(cfg.n_blocks):
        blocks.append(BlockParams(
            lg_upd=ly.init_updating(rng, node_w=d, edge_w=d_t),
            tri_down=ly.init_linear(rng, d, d_t),
            tri_vdown=ly.init_linear(rng, d, d_t),
            bond_sm=ly.init_simple_mixing(rng, d),
            tri_sm=ly.init_simple_mixing(rng, d_t),
            g_upd=ly.init_updating(rng, node_w=d, edge_w=d),
            mix=ly.init_mixing(rng, d),
        ))
    return ModelParams(
        w_z=Tensor(rng.normal(size=(cfg.z_table, d)), requires_grad=True),
        w_e=Tensor(rng.normal(size=(cfg.n_bf, d)) / np.sqrt(cfg.n_bf), requires_grad=True),
        w_t=Tensor(rng.normal(size=(cfg.n_bf, d_t)) / np.sqrt(cfg.n_bf), requires_grad=True),
        blocks=blocks,
        readout=ly.init_readout(rng, d, cfg.out_width),
        edge_readout=ly.init_readout(rng, d, cfg.out_width) if cfg.readout_many_body else None,
    )


@dataclass
class ForwardResult:
    node_s: Tensor  # (N, out) per-atom scalar readout
    node_v: Tensor  # (N, out, 3) per-atom vector readout
    pooled_s: Tensor  # (out,)
    pooled_v: Tensor  # (out, 3)
    alpha: Tensor | None  # (3, 3) when the polarizability head is active
    positions: Tensor
    graph: object


def forward(mol, cfg, params, graph=None, positions=None, _vector_bias=None):
    """Run featurization, the block stack, and the readout.

    graph may be passed to reuse a topology (the finite-difference harness
    displaces positions without rebuilding neighbor lists); positions, when
    given, is the Tensor the pipeline differentiates through.
    """
    if graph is None:
        graph = build_graph(mol, cfg.r_c, cfg.n_max)
    triplets = build_triplets(graph) if cfg.use_triplets else None
    n = mol.n_atoms
    n_e = graph.n_edges
    pos = positions if positions is not None else Tensor(mol.positions)

    h, hv = init_node(mol.atomic_numbers, params.w_z)
    rb = cfg.radial_config()
    rb2 = cfg.triplet_radial_config()

    if n_e:
        rel = ad.sub(ad.gather(pos, graph.dst), ad.gather(pos, graph.src))
        dist = ad.channel_norm(rel)
        unit = ad.mul(rel, ad.reshape(ad.reciprocal(dist), (n_e, 1)))
        e, ev = init_edge(dist, unit, rb, params.w_e)
    else:
        e = ad.constant(np.zeros((0, cfg.d)))
        ev = ad.constant(np.zeros((0, cfg.d, 3)))

    if _vector_bias is not None:
        # deliberate equivariance break for negative-control certification
        ev = ad.add(ev, ad.constant(np.asarray(_vector_bias).reshape(1, 1, 3)))

    n_t = triplets.n_triplets if cfg.use_triplets else 0
    if n_t:
        j_idx = graph.src[triplets.edge_a]
        k_idx = graph.src[triplets.edge_b]
        tri_rel = ad.sub(ad.gather(pos, j_idx), ad.gather(pos, k_idx))
        tri_dist = ad.channel_norm(tri_rel)
        tri_unit = ad.mul(tri_rel, ad.reshape(ad.reciprocal(tri_dist), (n_t, 1)))
        t, tv = init_triplet(tri_dist, tri_unit, rb2, params.w_t)
    else:
        t = ad.constant(np.zeros((0, cfg.d_t)))
        tv = ad.constant(np.zeros((0, cfg.d_t, 3)))

    res = cfg.residual
    for blk in params.blocks:
        if cfg.use_triplets:
            # EGCL on the line graph: triplets -> bonds
            agg_es, agg_ev, tri_msg_s, tri_msg_v = ly.updating_layer(
                blk.lg_upd, e, ev, t, tv,
                src=triplets.edge_b, dst=triplets.edge_a, n_nodes=n_e,
                vec_from_source=cfg.edge_vector_source)
            e_u = ad.add(e, agg_es) if res else agg_es
            ev_u = ad.add(ev, agg_ev) if res else agg_ev
            t_new = blk.tri_down(tri_msg_s)
            tv_new = blk.tri_vdown(tri_msg_v)
            t_u = ad.add(t, t_new) if res else t_new
            tv_u = ad.add(tv, tv_new) if res else tv_new
            e_sm, ev_sm = ly.simple_mixing_layer(blk.bond_sm, e_u, ev_u)
            t, tv = ly.simple_mixing_layer(blk.tri_sm, t_u, tv_u)
        else:
            e_sm, ev_sm = ly.simple_mixing_layer(blk.bond_sm, e, ev)

        # EGCL on the molecular graph: bonds -> atoms
        agg_hs, agg_hv, e_msg_s, e_msg_v = ly.updating_layer(
            blk.g_upd, h, hv, e_sm, ev_sm,
            src=graph.src, dst=graph.dst, n_nodes=n,
            vec_from_source=cfg.edge_vector_source)
        h_u = ad.add(h, agg_hs) if res else agg_hs
        hv_u = ad.add(hv, agg_hv) if res else agg_hv
        h, hv = ly.mixing_layer(blk.mix, h_u, hv_u)
        e = ad.add(e_sm, e_msg_s) if res else e_msg_s
        ev = ad.add(ev_sm, e_msg_v) if res else e_msg_v

    node_s, node_v = ly.gated_readout(params.readout, h, hv)
    if cfg.readout == "sum":
        pooled_s = ad.reduce_sum(node_s, axis=0)
        pooled_v = ad.reduce_sum(node_v, axis=0)
    else:
        pooled_s = ad.reduce_mean(node_s, axis=0)
        pooled_v = ad.reduce_mean(node_v, axis=0)

    if cfg.readout_many_body and n_e:
        edge_s_out, edge_v_out = ly.gated_readout(params.edge_readout, e, ev)
        if cfg.readout == "sum":
            pooled_s = ad.add(pooled_s, ad.reduce_sum(edge_s_out, axis=0))
            pooled_v = ad.add(pooled_v, ad.reduce_sum(edge_v_out, axis=0))
        else:
            pooled_s = ad.add(pooled_s, ad.reduce_mean(edge_s_out, axis=0))
            pooled_v = ad.add(pooled_v, ad.reduce_mean(edge_v_out, axis=0))

    alpha = None
    if cfg.head == "polarizability":
        alpha = assemble_polarizability(node_s, node_v, pos, cfg.center_polarizability)

    return ForwardResult(node_s, node_v, pooled_s, pooled_v, alpha, pos, graph)


def assemble_polarizability(node_s, node_v, positions, center=True):
    """alpha = sum_i (I3 * h_i + hv_i x r_i + r_i x hv_i) with dyadic products.

    Positions are centroid-centered by default so the head is translation
    invariant; raw positions sit behind the flag for fidelity runs.
    """
    n = node_s.shape[0]
    hv3 = ad.reshape(node_v, (n, 3))
    r = positions
    if center:
        r = ad.sub(r, ad.reduce_mean(positions, axis=0, keepdims=True))
    iso = ad.mul(ad.constant(np.eye(3)), ad.reshape(ad.reduce_sum(node_s), (1, 1)))
    o1 = ad.reduce_sum(ad.mul(ad.reshape(hv3, (n, 3, 1)), ad.reshape(r, (n, 1, 3))), axis=0)
    o2 = ad.reduce_sum(ad.mul(ad.reshape(r, (n, 3, 1)), ad.reshape(hv3, (n, 1, 3))), axis=0)
    return ad.add(iso, ad.add(o1, o2))


def scalar_output(result):
    """Pooled scalar head as a 0-d tape scalar."""
    return ad.reduce_sum(result.pooled_s)


def energy_and_forces(mol, cfg, params, graph=None):
    """E from the pooled scalar head; F = -dE/dr through the whole pipeline."""
    if cfg.head != "scalar+force":
        raise ModelError("energy_and_forces requires head='scalar+force'")
    pos = Tensor(mol.positions, requires_grad=True)
    with ad.Tape() as tape:
        result = forward(mol, cfg, params, graph=graph, positions=pos)
        energy = scalar_output(result)
    grads = tape.backward(energy)
    # a graph with no edges never touches the positions
    g = grads.get(pos)
    forces = -g if g is not None else np.zeros((mol.n_atoms, 3))
    return energy.item(), forces


def polarizability(mol, cfg, params, graph=None):
    if cfg.head != "polarizability":
        raise ModelError("polarizability requires head='polarizability'")
    result = forward(mol, cfg, params, graph=graph)
    return result.alpha.data.copy()


SQRT2 = np.sqrt(2.0)
SQRT3 = np.sqrt(3.0)


def decompose_polarizability(alpha, tol=1e-8):
    """Irreducible decomposition of a symmetric rank-2 tensor.

    lam0 = trace / sqrt(3); lam2 is the five-component traceless part, scaled
    so that lam0^2 + |lam2|^2 reproduces the squared Frobenius norm exactly.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (3, 3):
        raise ModelError("polarizability must be 3x3")
    if np.max(np.abs(alpha - alpha.T)) > tol:
        raise AsymmetricTensorError("tensor is not symmetric within tolerance")
    lam0 = np.trace(alpha) / SQRT3
    lam2 = SQRT2 * np.array([
        alpha[0, 1],
        alpha[1, 2],
        alpha[0, 2],
        (2.0 * alpha[2, 2] - alpha[0, 0] - alpha[1, 1]) / (2.0 * SQRT3),
        (alpha[0, 0] - alpha[1, 1]) / 2.0,
    ])
    return lam0, lam2


# ---------------------------------------------------------------------------
# checkpoint serialization


def save_checkpoint(path, params, cfg, extra=None):
    """Binary layout: magic, u32 version, u64 metadata length, JSON metadata
    (config plus tensor directory), then raw little-endian float64 payloads.
    Offsets in the directory are relative to the end of the metadata."""
    directory = []
    payload = bytearray()
    for name, t in params.named_tensors():
        data = np.ascontiguousarray(t.data, dtype="<f8")
        directory.append({
            "name": name,
            "dtype": "<f8",
            "shape": list(data.shape),
            "offset": len(payload),
        })
        payload.extend(data.tobytes())
    meta = {
        "config": cfg.to_dict(),
        "tensors": directory,
        "extra": extra or {},
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(bytes(payload))


def load_checkpoint(path, expected_config=None):
    """Returns (params, config, extra).  Raises CheckpointError on corrupt
    files or version mismatch, ConfigError when the stored config disagrees
    with expected_config."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header = 4 + 4 + 8
    if len(blob) < header or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("corrupt checkpoint: bad magic or truncated header")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<Q", blob, 8)
    if header + meta_len > len(blob):
        raise CheckpointError("corrupt checkpoint: metadata truncated")
    try:
        meta = json.loads(blob[header:header + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"corrupt checkpoint metadata: {err}") from err
    cfg = ModelConfig.from_dict(meta["config"])
    if expected_config is not None and cfg.to_dict() != expected_config.to_dict():
        raise ConfigError("checkpoint config does not match the expected config")
    params = init_params(cfg, seed=0)
    by_name = dict(params.named_tensors())
    entries = meta["tensors"]
    if set(e["name"] for e in entries) != set(by_name):
        raise CheckpointError("checkpoint tensor directory does not match the config")
    base = header + meta_len
    for entry in entries:
        shape = tuple(entry["shape"])
        tensor = by_name[entry["name"]]
        if shape != tensor.data.shape:
            raise CheckpointError(
                f"shape mismatch for {entry['name']}: file {shape}, config {tensor.data.shape}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        start = base + entry["offset"]
        if start + nbytes > len(blob):
            raise CheckpointError("corrupt checkpoint: payload truncated")
        tensor.data = np.frombuffer(blob[start:start + nbytes],
                                    dtype=entry["dtype"]).reshape(shape).copy()
    return params, cfg, meta.get("extra", {})
