"""Graph-transformer denoiser predicting clean node/edge categories from a noisy graph.

Layout (hidden width ``h``, ``L`` blocks)::

    one-hot(state) ++ [t/T]  --Linear-ReLU-Linear-ReLU-->  node / edge embeddings
    L x block:
        Y_ij   = (Q_i * K_j) / sqrt(h)           feature-wise scores
        Y_ij  <- Y_ij * (1 + Wm E_ij) + Wa E_ij  edge FiLM
        X_i   <- LN(X_i + drop(Wo sum_j softmax_j(Y_ij) * V_j));  X <- LN(X + drop(FFN(X)))
        E_ij  <- LN(E_ij + drop(We Y_ij));                        E <- LN(E + drop(FFN(E)))
    node head on X, edge head on (E_ij + E_ji)/2 for i < j, softmax over 2 classes

Parameter count: ``4h^2 + 16h + 4 + L (11h^2 + 19h)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .diffusion import DiffusionSchedule, posterior_table

DTYPE = torch.float64


@dataclass(frozen=True)
class DenoiserHyper:
    hidden: int = 32
    layers: int = 2
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden < 2 or self.layers < 1 or not 0 <= self.dropout < 1:
            raise ValueError("need hidden >= 2, layers >= 1, 0 <= dropout < 1")


def param_count(hidden: int, layers: int) -> int:
    h = hidden
    return 4 * h * h + 16 * h + 4 + layers * (11 * h * h + 19 * h)


class _Dropout:
    """Dropout whose masks come from an explicit generator (or nothing at all)."""

    def __init__(self, rate: float, gen: Optional[torch.Generator]):
        self.rate = rate
        self.gen = gen

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        if self.gen is None or self.rate == 0.0:
            return x
        keep = torch.rand(x.shape, generator=self.gen, dtype=x.dtype) >= self.rate
        return x * keep / (1.0 - self.rate)


def _mlp(a: int, b: int, c: int, final_relu: bool = False) -> nn.Sequential:
    mods = [nn.Linear(a, b), nn.ReLU(), nn.Linear(b, c)]
    if final_relu:
        mods.append(nn.ReLU())
    return nn.Sequential(*mods)


class TransformerBlock(nn.Module):
    def __init__(self, h: int):
        super().__init__()
        self.h = h
        self.q = nn.Linear(h, h)
        self.k = nn.Linear(h, h)
        self.v = nn.Linear(h, h)
        self.e_mul = nn.Linear(h, h)
        self.e_add = nn.Linear(h, h)
        self.e_out = nn.Linear(h, h)
        self.x_out = nn.Linear(h, h)
        self.ffn_x = _mlp(h, h, h)
        self.ffn_e = _mlp(h, h, h)
        self.ln_x1 = nn.LayerNorm(h)
        self.ln_x2 = nn.LayerNorm(h)
        self.ln_e1 = nn.LayerNorm(h)
        self.ln_e2 = nn.LayerNorm(h)

    def forward(self, X, E, drop: _Dropout):
        Q, K, V = self.q(X), self.k(X), self.v(X)
        Y = Q.unsqueeze(2) * K.unsqueeze(1) / math.sqrt(self.h)  # (B, n, n, h)
        Y = Y * (self.e_mul(E) + 1.0) + self.e_add(E)
        attn = torch.softmax(Y, dim=2)
        agg = (attn * V.unsqueeze(1)).sum(dim=2)
        X = self.ln_x1(X + drop(self.x_out(agg)))
        X = self.ln_x2(X + drop(self.ffn_x(X)))
        E = self.ln_e1(E + drop(self.e_out(Y)))
        E = self.ln_e2(E + drop(self.ffn_e(E)))
        return X, E


class GraphTransformer(nn.Module):
    def __init__(self, hyper: DenoiserHyper):
        super().__init__()
        h = hyper.hidden
        self.hyper = hyper
        self.node_in = _mlp(3, h, h, final_relu=True)
        self.edge_in = _mlp(3, h, h, final_relu=True)
        self.blocks = nn.ModuleList(TransformerBlock(h) for _ in range(hyper.layers))
        self.node_out = _mlp(h, h, 2)
        self.edge_out = _mlp(h, h, 2)

    def logits(self, node_states, edge_states, t, T: int, dropout_gen: Optional[torch.Generator] = None):
        """Unnormalized class scores, shapes ``(B, n, 2)`` and ``(B, m, 2)``."""
        node_states = torch.as_tensor(np.asarray(node_states), dtype=torch.long)
        edge_states = torch.as_tensor(np.asarray(edge_states), dtype=torch.long)
        B, n = node_states.shape
        iu = torch.triu_indices(n, n, 1)
        tt = torch.as_tensor(np.broadcast_to(np.asarray(t, dtype=float), (B,)) / T, dtype=DTYPE)

        x0 = torch.cat([F.one_hot(node_states, 2).to(DTYPE), tt.view(B, 1, 1).expand(B, n, 1)], dim=-1)
        onehot_e = F.one_hot(edge_states, 2).to(DTYPE)
        dense = torch.zeros(B, n, n, 2, dtype=DTYPE)
        dense[:, iu[0], iu[1]] = onehot_e
        dense[:, iu[1], iu[0]] = onehot_e
        e0 = torch.cat([dense, tt.view(B, 1, 1, 1).expand(B, n, n, 1)], dim=-1)

        drop = _Dropout(self.hyper.dropout, dropout_gen)
        X, E = self.node_in(x0), self.edge_in(e0)
        for block in self.blocks:
            X, E = block(X, E, drop)
        E = 0.5 * (E + E.transpose(1, 2))
        return self.node_out(X), self.edge_out(E[:, iu[0], iu[1]])

    def forward(self, node_states, edge_states, t, T: int, dropout_gen: Optional[torch.Generator] = None):
        ln, le = self.logits(node_states, edge_states, t, T, dropout_gen)
        return torch.softmax(ln, -1), torch.softmax(le, -1)


def init(hyper: DenoiserHyper, seed: int) -> GraphTransformer:
    """Seeded fan-in uniform initialization; LayerNorms start at identity."""
    model = GraphTransformer(hyper).to(DTYPE)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for mod in model.modules():
            if isinstance(mod, nn.Linear):
                bound = 1.0 / math.sqrt(mod.in_features)
                mod.weight.copy_((torch.rand(mod.weight.shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound)
                mod.bias.copy_((torch.rand(mod.bias.shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound)
            elif isinstance(mod, nn.LayerNorm):
                mod.weight.fill_(1.0)
                mod.bias.zero_()
    return model


@torch.no_grad()
def predict(model: GraphTransformer, node_states, edge_states, t, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode class probabilities as numpy arrays (no dropout)."""
    if not np.all((1 <= np.asarray(t)) & (np.asarray(t) <= T)):
        raise ValueError(f"t must lie in [1, {T}]")
    pv, pe = model(node_states, edge_states, t, T)
    return pv.numpy(), pe.numpy()


@dataclass
class LossBatch:
    """Cross-entropy terms ``coef_k * CE(target_k || p(. | G^t_k))``.

    With ``kind == "x0"`` the prediction itself is scored against the target;
    with ``kind == "step"`` the target is ``G^{t-1}`` and is scored under the
    posterior mixture of one denoising step.
    """

    node_states: np.ndarray
    edge_states: np.ndarray
    t: np.ndarray
    target_nodes: np.ndarray
    target_edges: np.ndarray
    coef: np.ndarray
    kind: str = "x0"

    def __len__(self) -> int:
        return len(self.coef)


def _gather(logp: torch.Tensor, target: np.ndarray) -> torch.Tensor:
    idx = torch.as_tensor(np.asarray(target), dtype=torch.long).unsqueeze(-1)
    return logp.gather(-1, idx).squeeze(-1).sum(-1)


def term_losses(
    model: GraphTransformer,
    batch: LossBatch,
    T: int,
    sched: Optional[DiffusionSchedule] = None,
    dropout_gen: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Per-term negative log-likelihoods (before weighting)."""
    ln, le = model.logits(batch.node_states, batch.edge_states, batch.t, T, dropout_gen)
    lpv, lpe = torch.log_softmax(ln, -1), torch.log_softmax(le, -1)
    if batch.kind == "step":
        if sched is None:
            raise ValueError("step targets need the diffusion schedule")
        # log sum_z0 p(z0) q(z_prev | z_t, z0), P indexed [z_t, z0, z_prev]
        tables = torch.as_tensor(np.stack([posterior_table(sched, int(t)) for t in batch.t]), dtype=DTYPE)
        rows = torch.arange(len(batch))
        tv = tables[rows[:, None], torch.as_tensor(batch.node_states, dtype=torch.long)]
        te = tables[rows[:, None], torch.as_tensor(batch.edge_states, dtype=torch.long)]
        lpv = torch.logsumexp(lpv.unsqueeze(-1) + torch.log(tv), dim=-2)
        lpe = torch.logsumexp(lpe.unsqueeze(-1) + torch.log(te), dim=-2)
    elif batch.kind != "x0":
        raise ValueError(f"unknown loss kind {batch.kind!r}")
    return -(_gather(lpv, batch.target_nodes) + _gather(lpe, batch.target_edges))


def loss_tensor(model, batches, T, sched=None, dropout_seed: Optional[int] = None) -> torch.Tensor:
    gen = None if dropout_seed is None else torch.Generator().manual_seed(int(dropout_seed))
    total = torch.zeros((), dtype=DTYPE)
    for b in batches:
        if len(b) == 0:
            continue
        nll = term_losses(model, b, T, sched, gen)
        terms = torch.as_tensor(b.coef, dtype=DTYPE) * nll
        bad = ~torch.isfinite(terms)
        if bad.any():
            k = int(torch.nonzero(bad)[0])
            raise FloatingPointError(f"non-finite loss in {b.kind} term {k} (t={int(b.t[k])}, nll={float(nll[k].detach())})")
        total = total + terms.sum()
    return total


def loss_and_grad(
    model: GraphTransformer,
    batches: list[LossBatch],
    T: int,
    sched: Optional[DiffusionSchedule] = None,
    dropout_seed: Optional[int] = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Scalar loss and its exact gradient for every named parameter.

    ``dropout_seed`` fixes the dropout masks; ``None`` disables dropout.
    """
    model.zero_grad(set_to_none=True)
    loss = loss_tensor(model, batches, T, sched, dropout_seed)
    if loss.requires_grad:
        loss.backward()
    grads = {
        name: (p.grad.detach().numpy().copy() if p.grad is not None else np.zeros(tuple(p.shape)))
        for name, p in model.named_parameters()
    }
    return float(loss.detach()), grads


def save(model: GraphTransformer, path: str | Path, seed: int) -> None:
    """Write ``<path>.npz`` plus a ``<path>.json`` manifest."""
    path = Path(path)
    arrays = {name: p.detach().numpy() for name, p in model.named_parameters()}
    np.savez(path.with_suffix(".npz"), **arrays)
    manifest = {
        "hyper": asdict(model.hyper),
        "seed": int(seed),
        "dtype": "float64",
        "params": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load(path: str | Path) -> GraphTransformer:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    model = GraphTransformer(DenoiserHyper(**manifest["hyper"])).to(DTYPE)
    with np.load(path.with_suffix(".npz")) as data:
        state = {name: torch.from_numpy(data[name].copy()) for name in data.files}
    params = dict(model.named_parameters())
    for spec in manifest["params"]:
        if list(state[spec["name"]].shape) != spec["shape"]:
            raise ValueError(f"shape mismatch for {spec['name']}")
    with torch.no_grad():
        for name, tensor in state.items():
            params[name].copy_(tensor)
    return model
