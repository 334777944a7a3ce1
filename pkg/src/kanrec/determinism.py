"""Helpers for reproducible, single-threaded numeric execution."""

from __future__ import annotations

from contextlib import contextmanager

import torch


@contextmanager
def single_threaded_torch(enabled: bool = True):
    """Force torch onto one thread so reductions are bit-reproducible.

    Multi-threaded matmul may change summation order between runs; every
    training loop that promises bit-identical results runs inside this.
    """
    if not enabled:
        yield
        return
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(previous)


def generator(seed: int) -> torch.Generator:
    """A fresh CPU generator; all parameter init draws from explicit generators."""
    gen = torch.Generator(device="cpu")
    gen.manual_seed(int(seed))
    return gen


def uniform_(tensor: torch.Tensor, bound: float, gen: torch.Generator) -> torch.Tensor:
    """In-place uniform(-bound, bound) fill from an explicit generator."""
    with torch.no_grad():
        tensor.uniform_(-bound, bound, generator=gen)
    return tensor


def glorot_(tensor: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Glorot-style uniform init for a 2-D (or flattened higher-D) weight."""
    fan_out, fan_in = tensor.shape[0], int(tensor.numel() / tensor.shape[0])
    bound = (6.0 / (fan_in + fan_out)) ** 0.5
    return uniform_(tensor, bound, gen)


def bias_(tensor: torch.Tensor, fan_in: int, gen: torch.Generator) -> torch.Tensor:
    """Conventional uniform(-1/sqrt(fan_in), ...) bias init."""
    return uniform_(tensor, 1.0 / (fan_in ** 0.5), gen)
