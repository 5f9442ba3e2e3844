"""Finite-difference verification of the hand-written backward passes."""

from __future__ import annotations

import numpy as np


def numerical_grad_check(module, compute_loss, backprop, step: float = 1e-5):
    """Compare analytic parameter gradients against central differences.

    ``compute_loss()`` runs a forward pass and returns the scalar loss;
    ``backprop()`` additionally zeroes and fills the module's gradients.
    Parameters are perturbed in place, so the module must be built in
    float64 for the differences to resolve. Returns a report dict with a
    per-tensor and overall max relative error.
    """
    backprop()
    analytic = {name: g.copy() for name, g in module.named_grads()}

    report = {"tensors": {}, "max_rel_error": 0.0}
    for name, arr in module.named_parameters():
        flat = arr.ravel()
        numeric = np.zeros(flat.size, dtype=np.float64)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            up = compute_loss()
            flat[i] = saved - step
            down = compute_loss()
            flat[i] = saved
            numeric[i] = (up - down) / (2.0 * step)
        ana = analytic[name].ravel().astype(np.float64)
        denom = np.maximum(np.abs(ana) + np.abs(numeric), 1e-6)
        rel_all = np.abs(ana - numeric) / denom
        # entries where both gradients sit below fp-difference noise carry
        # no signal; central differences cannot resolve them
        noise = (np.abs(ana) < 1e-6) & (np.abs(numeric) < 1e-6)
        rel_all[noise] = 0.0
        rel = float(np.max(rel_all)) if flat.size else 0.0
        report["tensors"][name] = rel
        report["max_rel_error"] = max(report["max_rel_error"], rel)
    return report
