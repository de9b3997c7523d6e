"""Two-stream recurrent interaction modeling.

The camera-wearer stream (global appearance + global motion) and the
interactor stream (local appearance + local motion) are projected to a
shared width and fed to two LSTM blocks that cross-gate each other: each
block's gate pre-activation receives a relu-modulated signal computed from
the other block's previous hidden state. A relation branch applies
tanh(F_ego + F_exo) per step and integrates it with a plain LSTM whose
final state feeds the classifier.

Ablation variants reuse the same machinery: single-stream and concat
variants run one plain LSTM, `sym` drops the relation branch, `rel` drops
the cross-gating.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import diffcore as dc
from .diffcore import ShapeError, Tensor
from .nn import Linear, Module, dropout, uniform_init

VARIANTS = ("ego", "exo", "concat", "sym", "rel", "full")
FEATURE_SETS = ("appearance", "motion", "both")

PROB_EPS = 1e-7


@dataclass
class DualState:
    """Recurrent state after one step; all (B, hidden) arrays."""

    f_ego: Tensor
    c_ego: Tensor
    f_exo: Tensor
    c_exo: Tensor
    j_ego: Tensor  # modulated signal entering the ego block's next gates
    j_exo: Tensor
    r: Tensor | None = None
    relation: Tensor | None = None
    c_rel: Tensor | None = None


def _zeros(batch: int, dim: int, dtype) -> Tensor:
    return Tensor(np.zeros((batch, dim), dtype=dtype))


def _split_gates(pre: Tensor, hidden: int):
    i = dc.sigmoid(pre[:, :hidden])
    o = dc.sigmoid(pre[:, hidden:2 * hidden])
    g = dc.sigmoid(pre[:, 2 * hidden:3 * hidden])
    a = dc.tanh_(pre[:, 3 * hidden:])
    return i, o, g, a


class GatedBlock(Module):
    """One of the two symmetric blocks; holds {W, U, V, b, v}."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.w = Tensor(uniform_init(rng, (in_dim, 4 * hidden), in_dim), requires_grad=True)
        self.u = Tensor(uniform_init(rng, (hidden, 4 * hidden), hidden), requires_grad=True)
        self.v = Tensor(uniform_init(rng, (hidden, 4 * hidden), hidden), requires_grad=True)
        self.b = Tensor(np.zeros(4 * hidden, np.float32), requires_grad=True)
        self.vb = Tensor(np.zeros(4 * hidden, np.float32), requires_grad=True)

    def gates(self, x: Tensor, f_prev: Tensor, j_prev: Tensor, c_prev: Tensor):
        pre = dc.matmul(x, self.w) + dc.matmul(f_prev, self.u) + j_prev + self.b
        i, o, g, a = _split_gates(pre, self.hidden)
        c = i * a + g * c_prev
        f = o * dc.tanh_(c)
        return f, c

    def modulate(self, dual_state: Tensor) -> Tensor:
        """Signal this block injects into its own gates next step."""
        return dc.relu(dc.matmul(dual_state, self.v) + self.vb)


class BasicLSTMCell(Module):
    """Plain LSTM with the shared [i; o; g; a] gate layout."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.w = Tensor(uniform_init(rng, (in_dim, 4 * hidden), in_dim), requires_grad=True)
        self.u = Tensor(uniform_init(rng, (hidden, 4 * hidden), hidden), requires_grad=True)
        self.b = Tensor(np.zeros(4 * hidden, np.float32), requires_grad=True)

    def step(self, x: Tensor, h: Tensor, c: Tensor):
        pre = dc.matmul(x, self.w) + dc.matmul(h, self.u) + self.b
        i, o, g, a = _split_gates(pre, self.hidden)
        c_new = i * a + g * c
        return o * dc.tanh_(c_new), c_new


class InteractiveClassifier(Module):
    """Projection + recurrent variant + classifier head.

    ``variant`` selects the recurrent structure, ``features`` which raw
    components feed each stream (appearance, motion, or both).
    """

    def __init__(self, appear_dim: int, motion_dim: int, num_classes: int,
                 rng: np.random.Generator, proj_dim: int = 32, hidden: int = 32,
                 variant: str = "full", features: str = "both",
                 dropout_ratio: float = 0.5, motion_dim_ego: int | None = None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        if features not in FEATURE_SETS:
            raise ValueError(f"unknown feature set {features!r}; choose from {FEATURE_SETS}")
        self.variant = variant
        self.features = features
        self.num_classes = num_classes
        self.proj_dim = proj_dim
        self.hidden = hidden
        self.dropout_ratio = dropout_ratio

        m_ego = motion_dim_ego if motion_dim_ego is not None else motion_dim
        dims = {"appearance": (appear_dim, appear_dim), "motion": (m_ego, motion_dim),
                "both": (appear_dim + m_ego, appear_dim + motion_dim)}[features]
        self.proj_ego = Linear(dims[0], proj_dim, rng)
        self.proj_exo = Linear(dims[1], proj_dim, rng)

        if variant in ("sym", "full"):
            self.block_ego = GatedBlock(proj_dim, hidden, rng)
            self.block_exo = GatedBlock(proj_dim, hidden, rng)
        elif variant == "rel":
            self.cell_ego = BasicLSTMCell(proj_dim, hidden, rng)
            self.cell_exo = BasicLSTMCell(proj_dim, hidden, rng)
        elif variant == "concat":
            self.cell = BasicLSTMCell(2 * proj_dim, hidden, rng)
        else:  # ego / exo single stream
            self.cell = BasicLSTMCell(proj_dim, hidden, rng)

        if variant in ("rel", "full"):
            self.relation_cell = BasicLSTMCell(hidden, hidden, rng)
        cls_in = 2 * hidden if variant == "sym" else hidden
        self.classifier = Linear(cls_in, num_classes, rng)

    # ------------------------------------------------------------------
    # spec surface: one dual step, one relation step, full sequence

    def initial_state(self, batch: int, dtype=np.float32) -> DualState:
        h = self.hidden
        z = lambda: _zeros(batch, h, dtype)
        return DualState(f_ego=z(), c_ego=z(), f_exo=z(), c_exo=z(),
                         j_ego=_zeros(batch, 4 * h, dtype), j_exo=_zeros(batch, 4 * h, dtype),
                         r=None, relation=z(), c_rel=z())

    def sym_step(self, state: DualState, ego_in: Tensor, exo_in: Tensor) -> DualState:
        """Advance both blocks; each consumes the other's previous modulation.

        Both blocks update from the step-(n-1) state before either new
        modulated signal is computed, so the result does not depend on
        block order.
        """
        f_e, c_e = self.block_ego.gates(ego_in, state.f_ego, state.j_ego, state.c_ego)
        f_x, c_x = self.block_exo.gates(exo_in, state.f_exo, state.j_exo, state.c_exo)
        j_e = self.block_ego.modulate(f_x)
        j_x = self.block_exo.modulate(f_e)
        return replace(state, f_ego=f_e, c_ego=c_e, f_exo=f_x, c_exo=c_x,
                       j_ego=j_e, j_exo=j_x)

    def relation_step(self, state: DualState) -> DualState:
        """tanh-combine the two states and integrate with the relation LSTM."""
        r = dc.tanh_(state.f_ego + state.f_exo)
        rel, c_rel = self.relation_cell.step(r, state.relation, state.c_rel)
        return replace(state, r=r, relation=rel, c_rel=c_rel)

    def run_sequence(self, ego_seq: Tensor, exo_seq: Tensor,
                     rng: np.random.Generator | None = None):
        """Classify a (B, S, P) pair of projected sequences.

        Returns (final read-out state, class probabilities (B, K)).
        ``rng`` enables dropout (training); None disables it (evaluation).
        """
        if ego_seq.ndim != 3 or ego_seq.shape != exo_seq.shape:
            raise ShapeError(f"run_sequence: bad sequence shapes {ego_seq.shape} / {exo_seq.shape}")
        batch, steps = ego_seq.shape[:2]
        if steps < 1:
            raise ShapeError("run_sequence: empty sequence")
        dtype = ego_seq.dtype.type
        variant = self.variant

        if variant in ("ego", "exo", "concat"):
            h = _zeros(batch, self.hidden, dtype)
            c = _zeros(batch, self.hidden, dtype)
            for n in range(steps):
                if variant == "ego":
                    x = ego_seq[:, n]
                elif variant == "exo":
                    x = exo_seq[:, n]
                else:
                    x = dc.concat([ego_seq[:, n], exo_seq[:, n]], axis=1)
                h, c = self.cell.step(x, h, c)
            readout = h
        elif variant == "rel":
            h_e = _zeros(batch, self.hidden, dtype)
            c_e = _zeros(batch, self.hidden, dtype)
            h_x = _zeros(batch, self.hidden, dtype)
            c_x = _zeros(batch, self.hidden, dtype)
            rel = _zeros(batch, self.hidden, dtype)
            c_r = _zeros(batch, self.hidden, dtype)
            for n in range(steps):
                h_e, c_e = self.cell_ego.step(ego_seq[:, n], h_e, c_e)
                h_x, c_x = self.cell_exo.step(exo_seq[:, n], h_x, c_x)
                r = dc.tanh_(h_e + h_x)
                rel, c_r = self.relation_cell.step(r, rel, c_r)
            readout = rel
        else:  # sym / full
            state = self.initial_state(batch, dtype)
            for n in range(steps):
                state = self.sym_step(state, ego_seq[:, n], exo_seq[:, n])
                if variant == "full":
                    state = self.relation_step(state)
            readout = (dc.concat([state.f_ego, state.f_exo], axis=1)
                       if variant == "sym" else state.relation)

        readout = dropout(readout, self.dropout_ratio, rng)
        logits = self.classifier(readout)
        return readout, dc.softmax(logits, axis=-1)

    # ------------------------------------------------------------------

    def project(self, appear: Tensor, motion: Tensor, stream: str,
                rng: np.random.Generator | None = None) -> Tensor:
        """Affine-project raw per-step features: (B, S, *) -> (B, S, P)."""
        if self.features == "appearance":
            raw = appear
        elif self.features == "motion":
            raw = motion
        else:
            raw = dc.concat([appear, motion], axis=2)
        b, s, d = raw.shape
        proj = self.proj_ego if stream == "ego" else self.proj_exo
        flat = proj(dc.reshape(raw, (b * s, d)))
        flat = dropout(flat, self.dropout_ratio, rng)
        return dc.reshape(flat, (b, s, self.proj_dim))

    def classify(self, f_ga: Tensor, f_gm: Tensor, f_la: Tensor, f_lm: Tensor,
                 rng: np.random.Generator | None = None):
        """Full path from raw stream features (each (B, S, *)) to probabilities."""
        ego = self.project(f_ga, f_gm, "ego", rng)
        exo = self.project(f_la, f_lm, "exo", rng)
        return self.run_sequence(ego, exo, rng)


def classification_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Cross entropy against integer labels; probabilities clamped at 1e-7."""
    labels = np.asarray(labels)
    k = probs.shape[-1]
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range for {k} classes: {labels}")
    onehot = np.zeros(probs.shape, dtype=probs.dtype.type)
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    ll = dc.log(dc.clip(probs, PROB_EPS, 1.0))
    return dc.mean(dc.sum_(Tensor(onehot) * ll, axis=-1)) * -1.0
