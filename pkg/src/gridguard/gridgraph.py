"""Transformer-meter graph, a two-layer graph convolutional network and node ranking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
import pandas as pd

from .errors import ShapeMismatch, SingleClass, UnknownMeter, UsageError
from .features import FeatureFrame
from .numeric import Adam, bce_loss, glorot_uniform, load_checkpoint, relu, save_checkpoint, sigmoid
from .synthgrid import GridTopology, substream

NODE_FEATURES = (
    "power_mean",
    "power_std",
    "imbalance_mean",
    "imbalance_std",
    "loss_pct_mean",
    "loss_pct_std",
    "pf_mean",
    "pf_std",
    "ensemble_flag_rate",
    "clf_prob_mean",
)
_SOURCE = {"power": "power_kw", "imbalance": "imbalance_kw", "loss_pct": "loss_pct", "pf": "power_factor"}


@dataclass
class GridGraph:
    node_ids: list[str]
    node_types: list[str]  # "transformer" or "meter"
    adjacency: np.ndarray  # undirected, self-loops included
    features: np.ndarray  # (n_nodes, len(NODE_FEATURES))

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def meter_mask(self) -> np.ndarray:
        return np.array([t == "meter" for t in self.node_types])

    def normalized_adjacency(self) -> np.ndarray:
        return normalize_adjacency(self.adjacency)

    def edges_frame(self) -> pd.DataFrame:
        i, j = np.nonzero(np.triu(self.adjacency, k=1))
        return pd.DataFrame({"source": [self.node_ids[a] for a in i], "target": [self.node_ids[b] for b in j]})

    def nodes_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({"node": self.node_ids, "type": self.node_types})
        for k, name in enumerate(NODE_FEATURES):
            df[name] = self.features[:, k]
        return df


def normalize_adjacency(A) -> np.ndarray:
    """``D^-1/2 A D^-1/2`` for an adjacency that already carries self-loops."""
    A = np.asarray(A, float)
    d = A.sum(axis=1)
    inv = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    return inv[:, None] * A * inv[None, :]


def _meter_row(frame: FeatureFrame, horizon, flags, probs) -> list[float]:
    row = []
    for key in ("power", "imbalance", "loss_pct", "pf"):
        x = frame[_SOURCE[key]][horizon]
        row += [float(np.mean(x)), float(np.std(x))]
    row.append(float(np.mean(flags)) if flags is not None and len(flags) else 0.0)
    row.append(float(np.mean(probs)) if probs is not None and len(probs) else 0.0)
    return row


def build_graph(topology: GridTopology, frames: Mapping[str, FeatureFrame],
                ensemble_flags: Mapping[str, np.ndarray] | None = None,
                clf_probs: Mapping[str, np.ndarray] | None = None, horizon=slice(None)) -> GridGraph:
    """Nodes are transformers then meters, each sorted by id; transformer rows
    average their meters' rows."""
    unknown = sorted(set(frames) - set(topology.meters))
    if unknown:
        raise UnknownMeter(f"frames for meters not in the topology: {unknown[:5]}")
    missing = sorted(set(topology.meters) - set(frames))
    if missing:
        raise UnknownMeter(f"topology meters without frames: {missing[:5]}")
    transformers = sorted(topology.transformers)
    meters = sorted(topology.meters)
    ids = transformers + meters
    pos = {n: i for i, n in enumerate(ids)}
    A = np.eye(len(ids))
    for t, m in topology.edges:
        A[pos[t], pos[m]] = A[pos[m], pos[t]] = 1.0
    ensemble_flags = ensemble_flags or {}
    clf_probs = clf_probs or {}
    H = np.zeros((len(ids), len(NODE_FEATURES)))
    for m in meters:
        H[pos[m]] = _meter_row(frames[m], horizon, ensemble_flags.get(m), clf_probs.get(m))
    for t in transformers:
        kids = [pos[m] for m in topology.meters_of(t)]
        if kids:
            H[pos[t]] = H[kids].mean(axis=0)
    return GridGraph(ids, ["transformer"] * len(transformers) + ["meter"] * len(meters), A, H)


class GcnModel:
    """``H1 = relu(A_hat H0 W0 + b0)``, ``p = sigmoid(A_hat H1 W1 + b1)``.

    Node features are z-scored with statistics stored on the model.
    """

    def __init__(self, n_features: int, hidden: int = 32, seed: int = 0):
        rng = substream(seed, "init", "gcn")
        self.params = {
            "W0": glorot_uniform(rng, n_features, hidden, (n_features, hidden)),
            "b0": np.zeros(hidden),
            "W1": glorot_uniform(rng, hidden, 1, (hidden, 1)),
            "b1": np.zeros(1),
        }
        self.feat_mean = np.zeros(n_features)
        self.feat_std = np.ones(n_features)
        self.history: list[float] = []

    def set_scaler(self, H) -> None:
        std = H.std(axis=0)
        self.feat_mean = H.mean(axis=0)
        self.feat_std = np.where(std > 1e-12, std, 1.0)

    def _scale(self, H):
        return (np.asarray(H, float) - self.feat_mean) / self.feat_std

    def logits(self, A_hat, H0):
        A_hat = np.asarray(A_hat, float)
        H0 = self._scale(H0)
        if A_hat.shape != (len(H0), len(H0)):
            raise ShapeMismatch(f"adjacency {A_hat.shape} does not match {len(H0)} nodes")
        if H0.shape[1] != self.params["W0"].shape[0]:
            raise ShapeMismatch("feature width does not match W0")
        AX = A_hat @ H0
        Z0 = AX @ self.params["W0"] + self.params["b0"]
        H1 = relu(Z0)
        AH = A_hat @ H1
        Z1 = (AH @ self.params["W1"])[:, 0] + self.params["b1"][0]
        return Z1, (A_hat, AX, Z0, AH)

    def forward(self, A_hat, H0) -> np.ndarray:
        return sigmoid(self.logits(A_hat, H0)[0])

    def loss_and_grads(self, A_hat, H0, labels, mask, weights=None):
        """Masked, optionally weighted BCE over labelled nodes, with analytic gradients."""
        Z1, (A, AX, Z0, AH) = self.logits(A_hat, H0)
        idx = np.flatnonzero(mask)
        w = None if weights is None else np.asarray(weights, float)[idx]
        loss, dz_sel = bce_loss(Z1[idx], np.asarray(labels, float)[idx], w)
        dZ1 = np.zeros_like(Z1)
        dZ1[idx] = dz_sel
        grads = {
            "W1": AH.T @ dZ1[:, None],
            "b1": np.array([dZ1.sum()]),
        }
        dH1 = A.T @ (dZ1[:, None] @ self.params["W1"].T)
        dZ0 = dH1 * (Z0 > 0)
        grads["W0"] = AX.T @ dZ0
        grads["b0"] = dZ0.sum(axis=0)
        return loss, grads

    def save(self, path) -> None:
        tensors = dict(self.params, feat_mean=self.feat_mean, feat_std=self.feat_std)
        save_checkpoint(path, tensors, {"kind": "gcn", "history": self.history})

    @classmethod
    def load(cls, path) -> "GcnModel":
        t, meta = load_checkpoint(path)
        model = cls(t["W0"].shape[0], t["W0"].shape[1])
        for k in model.params:
            model.params[k][...] = t[k]
        model.feat_mean, model.feat_std = t["feat_mean"], t["feat_std"]
        model.history = list(meta.get("history", []))
        return model


def gcn_forward(model: GcnModel, A_hat, H0) -> np.ndarray:
    return model.forward(A_hat, H0)


def majority_labels(labels: Mapping[str, np.ndarray], horizon=slice(None)) -> dict[str, int]:
    """Node label of a meter: 1 when more than half of its intervals are labelled 1."""
    return {m: int(np.mean(lab[horizon]) > 0.5) for m, lab in labels.items()}


def node_label_vector(graph: GridGraph, node_labels: Mapping[str, int]) -> tuple[np.ndarray, np.ndarray]:
    y = np.zeros(graph.n_nodes)
    known = np.zeros(graph.n_nodes, dtype=bool)
    for i, (nid, kind) in enumerate(zip(graph.node_ids, graph.node_types)):
        if kind == "meter" and nid in node_labels:
            y[i] = node_labels[nid]
            known[i] = True
    return y, known


def gcn_train(graph: GridGraph, node_labels: Mapping[str, int], epochs: int = 300, seed: int = 0,
              hidden: int = 32, lr: float = 0.01, train_mask=None) -> GcnModel:
    """Class-weighted BCE on labelled meter nodes (optionally restricted by
    ``train_mask``); transformer nodes never enter the loss."""
    y, known = node_label_vector(graph, node_labels)
    mask = known if train_mask is None else known & np.asarray(train_mask, bool)
    if mask.sum() < 2 or len(np.unique(y[mask])) < 2:
        raise SingleClass("GCN training needs labelled meters of both classes")
    pos = y[mask].mean()
    weights = np.where(y > 0.5, 0.5 / pos, 0.5 / (1 - pos))
    model = GcnModel(graph.features.shape[1], hidden, seed)
    model.set_scaler(graph.features)
    A_hat = graph.normalized_adjacency()
    opt = Adam(lr)
    for _ in range(epochs):
        loss, grads = model.loss_and_grads(A_hat, graph.features, y, mask, weights)
        model.history.append(loss)
        opt.step(model.params, grads)
    if epochs:
        model.history.append(model.loss_and_grads(A_hat, graph.features, y, mask, weights)[0])
    return model


def rank_nodes(model: GcnModel, graph: GridGraph, k: int, probs=None) -> list[tuple[str, float, int]]:
    """Top-``k`` nodes by probability (ties by node id): ``(node, probability, label)``."""
    if k < 0:
        raise UsageError("k must be >= 0")
    p = model.forward(graph.normalized_adjacency(), graph.features) if probs is None else np.asarray(probs)
    order = sorted(range(graph.n_nodes), key=lambda i: (-p[i], graph.node_ids[i]))
    return [(graph.node_ids[i], float(p[i]), int(p[i] > 0.5)) for i in order[:k]]


def ranking_frame(ranking) -> pd.DataFrame:
    return pd.DataFrame(ranking, columns=["Node", "Probability", "Label"])
