"""Shared helpers for the test suite."""
from __future__ import annotations

import numpy as np

from trimix import oracle
from trimix.tensor import Tape, backward


def op_gradcheck(build, arrays, seed_note="", tol=1e-6):
    """Compare tape gradients of `build(tensors) -> scalar Tensor` against
    central finite differences over `arrays`.

    `build` receives one tape-attached Tensor per input array and must
    return a scalar (single-element) Tensor on the same tape.
    """
    from trimix.tensor import Tensor

    tape = Tape()
    leaves = [tape.leaf(Tensor(a)) for a in arrays]
    out = build(leaves)
    grad_map = backward(out)
    tape_grads = [grad_map[leaf.node].data for leaf in leaves]

    def value() -> float:
        plain = [Tensor(a) for a in arrays]
        return build(plain).item()

    fd_grads = oracle.finite_diff(value, arrays)
    err = max(oracle.max_relative_error(tg, fg) for tg, fg in zip(tape_grads, fd_grads))
    assert err < tol, f"gradient mismatch {err:.3e} (tolerance {tol:g}) {seed_note}"
    return err


def rng_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))
