"""Fixed-architecture conditional MLPs with hand-rolled autodiff.

The network family is small enough to differentiate by hand: an input vector,
a set of scalar conditions (each passed through a sinusoidal frequency
embedding and a two-layer SiLU MLP), and a learned class-embedding table with
a reserved null row. All embeddings are summed into one condition vector that
is injected additively (through a learned projection) into every hidden layer
of a SiLU trunk. Three differentiation modes are provided:

- ``forward``      plain evaluation, batched;
- ``forward_jvp``  forward-mode directional derivative (tangents may enter
                   through the input and/or any scalar condition);
- ``forward_vjp``  reverse-mode parameter gradient for a given output
                   cotangent.

``grad_params`` wraps reverse mode in a tiny tape over a fixed set of loss
primitives (sums of squares, batch mean squares, batch mean inner products)
so that stop-gradient targets are explicit at the call site.

Everything is plain float64 numpy; parameters live in one flat vector with a
deterministic layout so checkpoints round-trip bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError

# Highest sinusoidal frequency (rad per unit scalar). Central finite
# differences at step 1e-3 must agree with the exact JVP to 1e-4 relative
# over random probes; truncation error grows like (omega*h)^2, so the ladder
# tops out low. 8 rad/unit still separates times on [0,1] comfortably.
MAX_EMBED_FREQ = 8.0


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture descriptor; hashable and JSON-friendly via to_dict()."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    scalar_conditions: tuple[str, ...]
    class_count: int
    embed_dim: int = 32
    n_frequencies: int = 16
    activation: str = "silu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        object.__setattr__(self, "scalar_conditions", tuple(self.scalar_conditions))
        if self.activation != "silu":
            raise ConfigurationError(f"unsupported activation {self.activation!r}")
        if len(set(self.scalar_conditions)) != len(self.scalar_conditions):
            raise ConfigurationError("duplicate scalar condition names")
        for n in (self.input_dim, self.output_dim, self.embed_dim, self.n_frequencies):
            if n <= 0:
                raise ConfigurationError("dimensions must be positive")
        if self.class_count < 0:
            raise ConfigurationError("class_count must be >= 0")

    @property
    def null_class(self) -> int:
        """Index of the reserved null-condition row in the class table."""
        return self.class_count

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "scalar_conditions": list(self.scalar_conditions),
            "class_count": self.class_count,
            "embed_dim": self.embed_dim,
            "n_frequencies": self.n_frequencies,
            "activation": self.activation,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        return NetworkSpec(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(d["hidden_dims"]),
            output_dim=int(d["output_dim"]),
            scalar_conditions=tuple(d["scalar_conditions"]),
            class_count=int(d["class_count"]),
            embed_dim=int(d["embed_dim"]),
            n_frequencies=int(d["n_frequencies"]),
            activation=d.get("activation", "silu"),
        )


class ParamBlock(NamedTuple):
    name: str
    shape: tuple[int, ...]
    offset: int
    size: int


@lru_cache(maxsize=64)
def param_layout(spec: NetworkSpec) -> tuple[ParamBlock, ...]:
    """Deterministic flat layout: scalar embeds (declared order), class table, trunk."""
    blocks: list[ParamBlock] = []
    offset = 0

    def add(name: str, shape: tuple[int, ...]):
        nonlocal offset
        size = int(np.prod(shape))
        blocks.append(ParamBlock(name, shape, offset, size))
        offset += size

    feat = 2 * spec.n_frequencies
    e = spec.embed_dim
    for s in spec.scalar_conditions:
        add(f"embed.{s}.w1", (feat, e))
        add(f"embed.{s}.b1", (e,))
        add(f"embed.{s}.w2", (e, e))
        add(f"embed.{s}.b2", (e,))
    add("class_embed", (spec.class_count + 1, e))
    dims = (spec.input_dim, *spec.hidden_dims, spec.output_dim)
    for i in range(len(dims) - 1):
        add(f"trunk.{i}.w", (dims[i], dims[i + 1]))
        add(f"trunk.{i}.b", (dims[i + 1],))
        if i < len(dims) - 2:  # condition feeds every hidden layer
            add(f"trunk.{i}.u", (e, dims[i + 1]))
    return tuple(blocks)


def param_count(spec: NetworkSpec) -> int:
    layout = param_layout(spec)
    return layout[-1].offset + layout[-1].size


def param_views(spec: NetworkSpec, params: np.ndarray) -> dict[str, np.ndarray]:
    """Named reshaped views into the flat vector (no copies)."""
    if params.ndim != 1 or params.size != param_count(spec):
        raise ConfigurationError(
            f"param vector has size {params.size}, spec wants {param_count(spec)}"
        )
    return {
        b.name: params[b.offset : b.offset + b.size].reshape(b.shape)
        for b in param_layout(spec)
    }


def init_params(
    spec: NetworkSpec,
    rng: np.random.Generator,
    zero_scalars: Sequence[str] = (),
) -> np.ndarray:
    """LeCun-normal trunk/embeds, small class table.

    Scalar conditions listed in ``zero_scalars`` start inert: the output
    layer of their embedding MLP is zeroed so they contribute nothing (and
    have exactly zero derivative), while the first layer stays random so the
    path still receives gradient. Zeroing both layers would leave the path
    stuck at a saddle where neither weight can ever train.
    """
    unknown = set(zero_scalars) - set(spec.scalar_conditions)
    if unknown:
        raise ConfigurationError(f"unknown scalar condition(s) {sorted(unknown)}")
    params = np.zeros(param_count(spec), dtype=np.float64)
    views = param_views(spec, params)
    for name, view in views.items():
        if name.endswith(".b1") or name.endswith(".b2") or name.endswith(".b"):
            continue
        if name == "class_embed":
            view[...] = 0.02 * rng.standard_normal(view.shape)
            continue
        draw = rng.standard_normal(view.shape) / np.sqrt(view.shape[0])
        if name.endswith(".w2") and name.split(".")[1] in zero_scalars:
            view[...] = 0.0  # draw consumed either way, for stream stability
        else:
            view[...] = draw
    return params


def transfer_params(
    dst_spec: NetworkSpec,
    src_spec: NetworkSpec,
    src_params: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Initialize a derived network from a source net.

    Trunk, class table, and scalar conditions present in both specs are
    copied (shapes must agree exactly); scalar conditions new to the
    destination start inert but trainable (zeroed output layer, random first
    layer) so the initial function equals the source's with those inputs
    ignored.
    """
    src_views = param_views(src_spec, np.asarray(src_params, dtype=np.float64))
    new_scalars = tuple(
        s for s in dst_spec.scalar_conditions if s not in src_spec.scalar_conditions
    )
    dst = init_params(dst_spec, rng, zero_scalars=new_scalars)
    for name, view in param_views(dst_spec, dst).items():
        if name not in src_views:
            continue
        if src_views[name].shape != view.shape:
            raise ConfigurationError(
                f"block {name}: shape {src_views[name].shape} != {view.shape}"
            )
        view[...] = src_views[name]
    return dst


def _silu(z: np.ndarray) -> np.ndarray:
    return z * expit(z)


def _silu_with_deriv(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = expit(z)
    return z * s, s * (1.0 + z * (1.0 - s))


@lru_cache(maxsize=64)
def _frequencies_cached(n: int) -> np.ndarray:
    if n == 1:
        return np.ones(1)
    return MAX_EMBED_FREQ ** (np.arange(n) / (n - 1))


def _frequencies(spec: NetworkSpec) -> np.ndarray:
    return _frequencies_cached(spec.n_frequencies)


def _as_batch_scalar(value, batch: int, name: str) -> np.ndarray:
    """Normalize to shape (1,) for batch-uniform scalars, (batch,) otherwise."""
    v = np.asarray(value, dtype=np.float64)
    if v.ndim == 0:
        return v.reshape(1)
    if v.shape == (1,):
        return v
    if v.shape != (batch,):
        raise ConfigurationError(f"scalar condition {name!r} has shape {v.shape}")
    return v


def _class_rows(spec: NetworkSpec, class_ids, batch: int) -> np.ndarray:
    """Normalize to (1,) for batch-uniform conditioning, (batch,) otherwise."""
    if class_ids is None:
        return np.array([spec.null_class], dtype=np.int64)
    ids = np.asarray(class_ids)
    if ids.ndim == 0:
        ids = ids.reshape(1)
    ids = ids.astype(np.int64, copy=False)
    if ids.shape not in ((1,), (batch,)):
        raise ConfigurationError(f"class ids have shape {ids.shape}, batch is {batch}")
    if ids.min(initial=0) < 0 or ids.max(initial=0) > spec.null_class:
        raise ConfigurationError("class id outside [0, class_count]")
    return ids


def _check_inputs(spec: NetworkSpec, x: np.ndarray, scalars: Mapping) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ConfigurationError(
            f"input has shape {x.shape}, expected (batch, {spec.input_dim})"
        )
    if set(scalars) != set(spec.scalar_conditions):
        raise ConfigurationError(
            f"scalar conditions {sorted(scalars)} != declared "
            f"{sorted(spec.scalar_conditions)}"
        )
    return x


def _forward_impl(spec, params, x, scalars, class_ids, want_cache: bool):
    x = _check_inputs(spec, x, scalars)
    b = x.shape[0]
    views = param_views(spec, np.asarray(params, dtype=np.float64))
    freqs = _frequencies(spec)

    embeds = {}
    e = 0.0  # stays at shape (1, embed_dim) while conditioning is uniform
    for s in spec.scalar_conditions:
        v = _as_batch_scalar(scalars[s], b, s)
        phase = v[:, None] * freqs[None, :]
        feats = np.concatenate([np.cos(phase), np.sin(phase)], axis=1)
        z1 = feats @ views[f"embed.{s}.w1"] + views[f"embed.{s}.b1"]
        if want_cache:
            h1, d1 = _silu_with_deriv(z1)
            embeds[s] = (feats, h1, d1)
        else:
            h1 = _silu(z1)
        e = e + (h1 @ views[f"embed.{s}.w2"] + views[f"embed.{s}.b2"])
    ids = _class_rows(spec, class_ids, b)
    e = e + views["class_embed"][ids]

    h = x
    acts = [h]
    dacts = []
    n_layers = len(spec.hidden_dims) + 1
    for i in range(n_layers):
        z = h @ views[f"trunk.{i}.w"] + views[f"trunk.{i}.b"]
        if i < n_layers - 1:
            z = z + e @ views[f"trunk.{i}.u"]
            if want_cache:
                h, dz = _silu_with_deriv(z)
                dacts.append(dz)
            else:
                h = _silu(z)
            acts.append(h)
        else:
            h = z
    if not want_cache:
        return h, None
    cache = {"views": views, "embeds": embeds, "ids": ids, "acts": acts,
             "dacts": dacts, "e": e}
    return h, cache


def forward(
    spec: NetworkSpec,
    params: np.ndarray,
    x: np.ndarray,
    scalars: Mapping[str, float | np.ndarray],
    class_ids=None,
) -> np.ndarray:
    """Evaluate the network on a batch. Scalars may be floats or (batch,) arrays."""
    out, _ = _forward_impl(spec, params, x, scalars, class_ids, want_cache=False)
    return out


def forward_jvp(
    spec: NetworkSpec,
    params: np.ndarray,
    x: np.ndarray,
    scalars: Mapping[str, float | np.ndarray],
    class_ids=None,
    *,
    x_tangent: np.ndarray | None = None,
    scalar_tangents: Mapping[str, float | np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Forward-mode directional derivative.

    The direction is given by ``x_tangent`` (same shape as ``x``; zero if
    omitted) together with per-scalar tangents. Returns (output, d_output).
    """
    x = _check_inputs(spec, x, scalars)
    b = x.shape[0]
    views = param_views(spec, np.asarray(params, dtype=np.float64))
    freqs = _frequencies(spec)
    scalar_tangents = dict(scalar_tangents or {})
    unknown = set(scalar_tangents) - set(spec.scalar_conditions)
    if unknown:
        raise ConfigurationError(f"tangent for unknown scalar(s) {sorted(unknown)}")

    e = 0.0
    de = np.zeros((1, spec.embed_dim))
    for s in spec.scalar_conditions:
        v = _as_batch_scalar(scalars[s], b, s)
        phase = v[:, None] * freqs[None, :]
        cos, sin = np.cos(phase), np.sin(phase)
        feats = np.concatenate([cos, sin], axis=1)
        z1 = feats @ views[f"embed.{s}.w1"] + views[f"embed.{s}.b1"]
        h1, d1 = _silu_with_deriv(z1)
        e = e + (h1 @ views[f"embed.{s}.w2"] + views[f"embed.{s}.b2"])
        if s in scalar_tangents:
            dv = _as_batch_scalar(scalar_tangents[s], max(v.shape[0], b), f"tangent of {s}")
            if dv.shape[0] > v.shape[0]:  # per-sample tangent of uniform scalar
                phase = np.broadcast_to(phase, (b, freqs.size))
                cos, sin = np.cos(phase), np.sin(phase)
                d1 = np.broadcast_to(d1, (b, d1.shape[1]))
            dfeats = np.concatenate(
                [-sin * freqs[None, :], cos * freqs[None, :]], axis=1
            ) * dv[:, None]
            dh1 = d1 * (dfeats @ views[f"embed.{s}.w1"])
            de = de + dh1 @ views[f"embed.{s}.w2"]
    ids = _class_rows(spec, class_ids, b)
    e = e + views["class_embed"][ids]

    if x_tangent is None:
        dx = np.zeros((1, spec.input_dim))
    else:
        dx = np.asarray(x_tangent, dtype=np.float64)
        if dx.shape != x.shape:
            raise ConfigurationError("x_tangent shape mismatch")

    h, dh = x, dx
    n_layers = len(spec.hidden_dims) + 1
    for i in range(n_layers):
        w = views[f"trunk.{i}.w"]
        z = h @ w + views[f"trunk.{i}.b"]
        dz = dh @ w
        if i < n_layers - 1:
            u_proj = views[f"trunk.{i}.u"]
            z = z + e @ u_proj
            dz = dz + de @ u_proj
            h, d = _silu_with_deriv(z)
            dh = d * dz
        else:
            h, dh = z, dz
    if dh.shape != h.shape:
        dh = np.broadcast_to(dh, h.shape).copy()
    return h, dh


def jvp_scalar(
    spec: NetworkSpec,
    params: np.ndarray,
    x: np.ndarray,
    scalars: Mapping[str, float | np.ndarray],
    class_ids=None,
    *,
    wrt: str,
) -> tuple[np.ndarray, np.ndarray]:
    """(output, exact d_output/d_scalar) for one named scalar condition."""
    if wrt not in spec.scalar_conditions:
        raise ConfigurationError(f"unknown scalar condition {wrt!r}")
    return forward_jvp(spec, params, x, scalars, class_ids, scalar_tangents={wrt: 1.0})


def forward_vjp(
    spec: NetworkSpec,
    params: np.ndarray,
    x: np.ndarray,
    scalars: Mapping[str, float | np.ndarray],
    class_ids,
    cotangent: np.ndarray,
) -> np.ndarray:
    """Reverse mode: flat parameter gradient of <cotangent, output>."""
    out, cache = _forward_impl(spec, params, x, scalars, class_ids, want_cache=True)
    g = np.asarray(cotangent, dtype=np.float64)
    if g.shape != out.shape:
        raise ConfigurationError(f"cotangent shape {g.shape} != output {out.shape}")

    views = cache["views"]
    e = np.broadcast_to(cache["e"], (out.shape[0], spec.embed_dim))
    grad = np.zeros(param_count(spec))
    gviews = param_views(spec, grad)

    n_layers = len(spec.hidden_dims) + 1
    ge = np.zeros((out.shape[0], spec.embed_dim))
    gz = g
    for i in reversed(range(n_layers)):
        h_in = cache["acts"][i]
        gviews[f"trunk.{i}.w"] += h_in.T @ gz
        gviews[f"trunk.{i}.b"] += gz.sum(axis=0)
        if i < n_layers - 1:
            gviews[f"trunk.{i}.u"] += e.T @ gz
            ge += gz @ views[f"trunk.{i}.u"].T
        if i > 0:
            gz = (gz @ views[f"trunk.{i}.w"].T) * cache["dacts"][i - 1]

    ids = cache["ids"]
    if ids.shape[0] == 1:
        gviews["class_embed"][ids[0]] += ge.sum(axis=0)
    else:
        np.add.at(gviews["class_embed"], ids, ge)
    ge_reduced = None
    for s in spec.scalar_conditions:
        feats, h1, d1 = cache["embeds"][s]
        if feats.shape[0] == 1 and ge.shape[0] > 1:
            if ge_reduced is None:
                ge_reduced = ge.sum(axis=0, keepdims=True)
            ge_s = ge_reduced  # batch-uniform scalar: fold the batch first
        else:
            ge_s = ge
        gviews[f"embed.{s}.w2"] += h1.T @ ge_s
        gviews[f"embed.{s}.b2"] += ge_s.sum(axis=0)
        gh1 = (ge_s @ views[f"embed.{s}.w2"].T) * d1
        gviews[f"embed.{s}.w1"] += feats.T @ gh1
        gviews[f"embed.{s}.b1"] += gh1.sum(axis=0)
    return grad


# ---------------------------------------------------------------------------
# Scalar-loss tape.


class Var:
    """Node in a scalar-loss reverse-mode graph.

    Supports exactly the compositions the training objectives need: network
    application, +/-, scaling by constants, and the reductions below. Using
    a Var where a plain array is expected (or vice versa) raises
    ConfigurationError; ``sg`` detaches explicitly.
    """

    __slots__ = ("value", "parents", "vjp")
    __array_ufunc__ = None  # keep numpy from silently consuming Vars

    def __init__(self, value, parents=(), vjp: Callable | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp

    def __array__(self, dtype=None):
        raise ConfigurationError("wrap constants with sg() instead of np.asarray(Var)")

    @staticmethod
    def _const(other) -> np.ndarray:
        if isinstance(other, Var):
            raise ConfigurationError("unsupported primitive: use +, - between Vars")
        return np.asarray(other, dtype=np.float64)

    def __add__(self, other):
        if isinstance(other, Var):
            return Var(self.value + other.value, (self, other), lambda g: (g, g))
        c = self._const(other)
        return Var(self.value + c, (self,), lambda g: (g,))

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other):
        if isinstance(other, Var):
            return Var(self.value - other.value, (self, other), lambda g: (g, -g))
        c = self._const(other)
        return Var(self.value - c, (self,), lambda g: (g,))

    def __rsub__(self, other):
        c = self._const(other)
        return Var(c - self.value, (self,), lambda g: (-g,))

    def __mul__(self, other):
        if isinstance(other, Var):
            raise ConfigurationError("unsupported primitive: Var * Var")
        c = self._const(other)
        return Var(self.value * c, (self,), lambda g: (g * c,))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise ConfigurationError("unsupported primitive: Var / Var")
        return self * (1.0 / self._const(other))


def sg(value) -> np.ndarray:
    """Stop-gradient: detach a Var (or pass an array through) as a constant."""
    if isinstance(value, Var):
        return value.value.copy()
    return np.asarray(value, dtype=np.float64)


def apply_net(spec: NetworkSpec, params: Var, x, scalars, class_ids=None) -> Var:
    """Network application as a tape node; gradient flows to params only."""
    if not isinstance(params, Var):
        raise ConfigurationError("apply_net expects the params Var from grad_params")
    out = forward(spec, params.value, x, scalars, class_ids)
    return Var(
        out,
        (params,),
        lambda g: (forward_vjp(spec, params.value, x, scalars, class_ids, g),),
    )


def sum_sq(v: Var) -> Var:
    """Sum of squares of all elements."""
    if not isinstance(v, Var):
        raise ConfigurationError("sum_sq expects a Var")
    return Var(np.sum(v.value**2), (v,), lambda g: (2.0 * g * v.value,))


def mean_sq(v: Var) -> Var:
    """Mean over the batch axis of per-row squared norms."""
    if not isinstance(v, Var) or v.value.ndim != 2:
        raise ConfigurationError("mean_sq expects a (batch, dim) Var")
    b = v.value.shape[0]
    return Var(np.sum(v.value**2) / b, (v,), lambda g: (2.0 * g * v.value / b,))


def mean_dot(v: Var, const) -> Var:
    """Mean over the batch axis of per-row inner products with a constant."""
    if not isinstance(v, Var) or v.value.ndim != 2:
        raise ConfigurationError("mean_dot expects a (batch, dim) Var")
    c = Var._const(const)
    if c.shape != v.value.shape:
        raise ConfigurationError("mean_dot constant shape mismatch")
    b = v.value.shape[0]
    return Var(np.sum(v.value * c) / b, (v,), lambda g: (g * c / b,))


def grad_params(loss_fn: Callable[[Var], Var], params: np.ndarray) -> np.ndarray:
    """Gradient of a scalar tape loss with respect to the flat parameters."""
    root = Var(np.asarray(params, dtype=np.float64))
    loss = loss_fn(root)
    if not isinstance(loss, Var):
        raise ConfigurationError("loss_fn must return a Var built from tape ops")
    if loss.value.ndim != 0:
        raise ConfigurationError("loss must be scalar")

    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg

    g_root = grads.get(id(root))
    if g_root is None:
        return np.zeros_like(root.value)
    return np.broadcast_to(g_root, root.value.shape).astype(np.float64, copy=True)
