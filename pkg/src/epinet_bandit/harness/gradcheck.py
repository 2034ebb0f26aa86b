"""Central finite-difference verification of every analytic gradient.

The oracle perturbs each parameter entry by ±h and differences the loss;
it never touches the backward code it checks. An entry passes when the
analytic/numeric difference is under the absolute floor or under the
relative tolerance; a component passes when all entries of all its
trainable tensors pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..enn import EpistemicIndex, build_epinet
from ..nn_core import DenseNet, ParameterStore, bce_with_logit
from ..retrieval_model import ModelSpec, build_model
from ..rng import SeedStream

__all__ = [
    "TensorReport",
    "finite_difference_grads",
    "check_component",
    "standard_suite",
    "DEFAULT_H",
    "DEFAULT_TOL",
    "DEFAULT_FLOOR",
]

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-4
DEFAULT_FLOOR = 1e-7


@dataclass
class TensorReport:
    component: str
    tensor: str
    entries: int
    max_rel_err: float
    max_abs_err: float
    passed: bool


def finite_difference_grads(loss_fn, store: ParameterStore,
                            h: float = DEFAULT_H) -> dict[str, np.ndarray]:
    """Numeric d(loss)/d(entry) for every parameter entry of ``store``."""
    out = {}
    for name, w in store.entries.items():
        fd = np.zeros_like(w)
        flat = w.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            fd_flat[i] = (lp - lm) / (2.0 * h)
        out[name] = fd
    return out


def check_component(component: str, eval_loss, stores: list[tuple[str, ParameterStore]],
                    h: float = DEFAULT_H, tol: float = DEFAULT_TOL,
                    floor: float = DEFAULT_FLOOR) -> list[TensorReport]:
    """Compare analytic grads against finite differences, tensor by tensor.

    ``eval_loss(accumulate)`` must return the scalar loss, populating
    parameter gradients only when ``accumulate`` is true, and must be
    deterministic (fixed data, fixed index).
    """
    for _, store in stores:
        store.zero_grads()
    eval_loss(True)
    analytic = {
        f"{sname}/{pname}": store.grads[pname].copy()
        for sname, store in stores
        for pname in store.grads
    }
    for _, store in stores:
        store.zero_grads()

    reports = []
    for sname, store in stores:
        fd = finite_difference_grads(lambda: eval_loss(False), store, h=h)
        for pname, fd_grad in fd.items():
            a = analytic[f"{sname}/{pname}"]
            abs_diff = np.abs(a - fd_grad)
            denom = np.maximum(np.abs(a), np.abs(fd_grad))
            ok = (abs_diff <= floor) | (abs_diff <= tol * denom)
            rel = abs_diff / np.maximum(denom, floor)
            reports.append(TensorReport(
                component=component,
                tensor=f"{sname}/{pname}",
                entries=int(a.size),
                max_rel_err=float(rel.max()) if a.size else 0.0,
                max_abs_err=float(abs_diff.max()) if a.size else 0.0,
                passed=bool(ok.all()),
            ))
    return reports


def _dense_component(seed: int) -> tuple[str, object, list]:
    stream = SeedStream(seed).child("gradcheck-dense")
    net = DenseNet([7, 12, 9, 1], stream.child("net").generator())
    gen = stream.child("data").generator()
    x = gen.standard_normal((8, 7))
    y = (gen.random(8) < 0.4).astype(np.float64)

    def eval_loss(accumulate: bool) -> float:
        logits = net.forward(x)[:, 0]
        losses, grads = bce_with_logit(y, logits)
        if accumulate:
            net.backward((grads / len(y))[:, None])
        return float(losses.mean())

    return "dense_net", eval_loss, [("net", net.params)]


def _epinet_component(seed: int) -> tuple[str, object, list]:
    stream = SeedStream(seed).child("gradcheck-epinet")
    head = build_epinet(6, [8, 6], 3, prior_scale=0.7, stream=stream.child("head"))
    gen = stream.child("data").generator()
    x = gen.standard_normal((5, 6))
    y = (gen.random(5) < 0.5).astype(np.float64)
    z = EpistemicIndex("gaussian", gen.standard_normal(3))

    def eval_loss(accumulate: bool) -> float:
        f = head.forward(x, z)
        losses, grads = bce_with_logit(y, f)
        if accumulate:
            head.backward(grads / len(y))
        return float(losses.mean())

    return "epinet_head", eval_loss, head.trainable_stores()


def _model_component(seed: int) -> tuple[str, object, list]:
    stream = SeedStream(seed).child("gradcheck-model")
    spec = ModelSpec(user_feat_dim=5, item_feat_dim=6, embed_dim=4, num_tasks=2,
                     index_dim=3, tower_hidden=[8], head_hidden=[10, 6],
                     head="epinet", prior_scale=1.0, epinet_task="ws")
    model = build_model(spec, stream.child("model"))
    gen = stream.child("data").generator()
    users = gen.standard_normal((6, 5))
    items = gen.standard_normal((6, 6))
    labels = (gen.random((6, 2)) < 0.5).astype(np.float64)
    z = EpistemicIndex("gaussian", gen.standard_normal(3))
    # The head consumes the overarch input under a stop gradient, so the
    # loss being differentiated holds that input fixed at its value from
    # the unperturbed towers.
    x0 = model.overarch_inputs(users, items)

    def eval_loss(accumulate: bool) -> float:
        losses = model.compute_loss_and_grads(users, items, labels, z,
                                              accumulate=accumulate,
                                              frozen_overarch_x=x0)
        return losses["total"]

    return "retrieval_model", eval_loss, model.trainable_stores()


def standard_suite(seed: int = 0, h: float = DEFAULT_H, tol: float = DEFAULT_TOL,
                   floor: float = DEFAULT_FLOOR) -> tuple[list[TensorReport], bool]:
    """Run the fixed three-component suite; returns (reports, all passed)."""
    reports = []
    for factory in (_dense_component, _epinet_component, _model_component):
        name, eval_loss, stores = factory(seed)
        reports.extend(check_component(name, eval_loss, stores, h=h, tol=tol, floor=floor))
    return reports, all(r.passed for r in reports)
