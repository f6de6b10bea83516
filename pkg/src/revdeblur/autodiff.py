"""Reverse-mode differentiation with reversible segments.

Gradients come from ``torch.autograd``. This module adds what the stock
engine does not have:

* :func:`reversible_segment`, a custom autograd function that runs a chain of
  invertible steps without keeping their interior activations. During the
  backward pass every step input is rebuilt from the step output through the
  registered inverse, the step is re-executed locally and differentiated.
* :class:`Tape`, a recorder of everything autograd keeps alive for the
  backward pass, so retained activation bytes can be measured.
* :func:`forward` / :func:`backward` wrappers that tie the two together and
  turn NaN/Inf production into a hard error naming the offending op.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import torch
from torch import Tensor, nn
from torch.overrides import TorchFunctionMode

__all__ = [
    "NonFiniteError",
    "ReconstructionError",
    "InvertibleStep",
    "Tape",
    "MemoryReport",
    "forward",
    "backward",
    "count_live_activations",
    "reversible_segment",
    "freeze",
]


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""

    def __init__(self, op: str):
        super().__init__(f"non-finite values produced by op '{op}'")
        self.op = op


class ReconstructionError(RuntimeError):
    """Inverse reconstruction drifted from the debug copy of the inputs."""


class InvertibleStep(Protocol):
    def step_forward(self, state: Sequence[Tensor], shared: Sequence[Tensor]) -> list[Tensor]: ...

    def step_inverse(self, state: Sequence[Tensor], shared: Sequence[Tensor]) -> list[Tensor]: ...


def _storage_key(t: Tensor) -> tuple[int, int]:
    s = t.untyped_storage()
    return s.data_ptr(), s.nbytes()


@dataclass
class _Segment:
    name: str
    n_steps: int
    boundary: set = field(default_factory=set)
    reconstruct: Callable | None = None


@dataclass
class MemoryReport:
    """Bytes retained for the backward pass."""

    boundary_bytes: int
    interior_bytes: int
    per_segment: dict[str, dict[str, int]]

    @property
    def total_bytes(self) -> int:
        return self.boundary_bytes + self.interior_bytes


_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Record of one forward pass.

    ``nodes`` lists autograd graph nodes reachable from the outputs in
    topological order (inputs first). ``segments`` lists the reversible
    segments executed inside the pass. ``saved`` maps the storage of every
    tensor packed for backward to its size in bytes.
    """

    def __init__(self, exclude: Sequence[Tensor] = ()):
        self.outputs: tuple[Tensor, ...] = ()
        self.nodes: list[tuple[str, tuple[int, ...]]] = []
        self.segments: list[_Segment] = []
        self.saved: dict[tuple[int, int], int] = {}
        self._exclude = {_storage_key(p) for p in exclude}

    # saved_tensors_hooks callbacks; tensors pass through untouched
    def _pack(self, t: Tensor) -> Tensor:
        key = _storage_key(t)
        if key not in self._exclude and not isinstance(t, nn.Parameter):
            self.saved[key] = key[1]
        return t

    @staticmethod
    def _unpack(t: Tensor) -> Tensor:
        return t

    def _register_segment(self, seg: _Segment, boundary: Sequence[Tensor]) -> None:
        seg.boundary = {_storage_key(t) for t in boundary}
        self.segments.append(seg)

    @contextlib.contextmanager
    def recording(self):
        _ACTIVE_TAPES.append(self)
        try:
            with torch.autograd.graph.saved_tensors_hooks(self._pack, self._unpack):
                yield self
        finally:
            _ACTIVE_TAPES.pop()

    def _collect_nodes(self) -> None:
        order: list = []
        index: dict = {}
        seen: set = set()

        def visit(fn):
            # iterative post-order; graphs here are deep enough to hit recursion limits
            stack = [(fn, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    index[node] = len(order)
                    order.append(node)
                    continue
                if node in seen:
                    continue
                seen.add(node)
                stack.append((node, True))
                for nxt, _ in node.next_functions:
                    if nxt is not None and nxt not in seen:
                        stack.append((nxt, False))

        leaves = 0
        for out in self.outputs:
            if out.grad_fn is not None:
                visit(out.grad_fn)
            else:
                leaves += 1
        nodes = []
        for _ in range(leaves):
            nodes.append(("Leaf", ()))
        for node in order:
            ins = tuple(index[n] + leaves for n, _ in node.next_functions if n is not None and n in index)
            nodes.append((type(node).__name__, ins))
        self.nodes = nodes


class _FiniteCheck(TorchFunctionMode):
    def __torch_function__(self, func, types, args=(), kwargs=None):
        out = func(*args, **(kwargs or {}))
        for t in out if isinstance(out, (tuple, list)) else (out,):
            if isinstance(t, Tensor) and (t.is_floating_point() or t.is_complex()):
                if not bool(torch.isfinite(t).all()):
                    raise NonFiniteError(getattr(func, "__name__", repr(func)))
        return out


def forward(
    graph_fn: Callable[..., Tensor | Sequence[Tensor]],
    inputs: Sequence[Tensor],
    *,
    exclude: Sequence[Tensor] = (),
    check_finite: bool = True,
) -> tuple[tuple[Tensor, ...], Tape]:
    """Run ``graph_fn(*inputs)`` and return its outputs with the tape.

    ``exclude`` lists tensors (normally parameters) that should not be
    counted as retained activations.
    """
    for t in inputs:
        if t.is_floating_point() and not bool(torch.isfinite(t).all()):
            raise NonFiniteError("input")
    tape = Tape(exclude)
    ctx = _FiniteCheck() if check_finite else contextlib.nullcontext()
    with tape.recording(), ctx:
        out = graph_fn(*inputs)
    outs = (out,) if isinstance(out, Tensor) else tuple(out)
    tape.outputs = outs
    tape._collect_nodes()
    return outs, tape


def backward(
    tape: Tape,
    output_grads: Sequence[Tensor] | None = None,
    params: Sequence[Tensor] | None = None,
) -> list[Tensor | None]:
    """Backpropagate ``output_grads`` through a recorded forward pass.

    Gradients accumulate into ``.grad`` of every trainable leaf; the list
    returned holds the gradients of ``params`` (``None`` for frozen ones).
    """
    outs = [o for o in tape.outputs if o.requires_grad]
    if output_grads is None:
        grads = [torch.ones_like(o) for o in outs]
    else:
        grads = [g for o, g in zip(tape.outputs, output_grads) if o.requires_grad]
        for o, g in zip(outs, grads):
            if o.shape != g.shape:
                raise ValueError(f"output grad shape {tuple(g.shape)} != output shape {tuple(o.shape)}")
    if outs:
        torch.autograd.backward(outs, grads)
    if params is None:
        return []
    return [p.grad if p.requires_grad else None for p in params]


def count_live_activations(tape: Tape) -> MemoryReport:
    """Split the bytes a tape keeps for backward into boundary and interior."""
    boundary_keys: dict = {}
    per_segment: dict[str, dict[str, int]] = {"plain": {"boundary": 0, "interior": 0}}
    for seg in tape.segments:
        per_segment.setdefault(seg.name, {"boundary": 0, "interior": 0})
        for key in seg.boundary:
            boundary_keys.setdefault(key, seg.name)
    boundary = interior = 0
    for key, nbytes in tape.saved.items():
        if key in boundary_keys:
            boundary += nbytes
            per_segment[boundary_keys[key]]["boundary"] += nbytes
        else:
            interior += nbytes
            per_segment["plain"]["interior"] += nbytes
    return MemoryReport(boundary, interior, per_segment)


def freeze(module: nn.Module, frozen: bool = True) -> nn.Module:
    """Mark every parameter of ``module`` as (un)frozen."""
    for p in module.parameters():
        p.requires_grad_(not frozen)
    return module


def _rel_linf(a: Tensor, b: Tensor) -> float:
    denom = float(b.abs().max())
    return float((a - b).abs().max()) / max(denom, 1e-30)


class _ReversibleFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, steps, n_state, n_shared, tap_index, opts, *tensors):
        state = list(tensors[:n_state])
        shared = list(tensors[n_state:n_state + n_shared])
        params = tensors[n_state + n_shared:]
        ctx.steps = steps
        ctx.n_state, ctx.n_shared, ctx.tap_index = n_state, n_shared, tap_index
        ctx.opts = opts
        ctx.n_params = len(params)
        ctx.param_refs = params
        debug_copies = []
        taps = []
        with torch.no_grad():
            for k, step in enumerate(steps):
                if opts["debug"]:
                    debug_copies.append([s.clone() for s in state])
                state = step.step_forward(state, shared)
                if k < len(steps) - 1:
                    taps.append(state[tap_index])
        ctx.debug_copies = debug_copies
        # only the final state and the shared inputs survive until backward
        ctx.save_for_backward(*state, *shared)
        for tape in _ACTIVE_TAPES:
            tape._register_segment(_Segment(opts["name"], len(steps)), list(state) + list(shared))
        return (*state, *taps)

    @staticmethod
    def backward(ctx, *grads):
        saved = ctx.saved_tensors
        n_state, n_shared = ctx.n_state, ctx.n_shared
        state = [t.detach() for t in saved[:n_state]]
        shared = [t.detach().requires_grad_(t.requires_grad) for t in saved[n_state:]]
        params = [p for p in ctx.param_refs]
        g_state = [g if g is not None else torch.zeros_like(s) for g, s in zip(grads[:n_state], state)]
        g_taps = list(grads[n_state:])
        g_shared = [torch.zeros_like(s) if s.requires_grad else None for s in shared]
        g_params = [torch.zeros_like(p) if p.requires_grad else None for p in params]
        steps = ctx.steps
        for k in range(len(steps) - 1, -1, -1):
            if k < len(steps) - 1 and g_taps[k] is not None:
                g_state[ctx.tap_index] = g_state[ctx.tap_index] + g_taps[k]
            with torch.no_grad():
                prev = steps[k].step_inverse(state, shared)
            if ctx.opts["debug"]:
                for r, ref in zip(prev, ctx.debug_copies[k]):
                    err = _rel_linf(r, ref)
                    if err > ctx.opts["tol"]:
                        raise ReconstructionError(
                            f"step {k} reconstruction error {err:.3e} > {ctx.opts['tol']:.1e}"
                        )
            prev = [p.detach().requires_grad_(True) for p in prev]
            with torch.enable_grad():
                out = steps[k].step_forward(prev, shared)
            wrt = prev + [s for s in shared if s.requires_grad] + [p for p in params if p.requires_grad]
            got = torch.autograd.grad(out, wrt, g_state, allow_unused=True)
            g_prev = got[:n_state]
            rest = list(got[n_state:])
            for i, s in enumerate(shared):
                if s.requires_grad:
                    g = rest.pop(0)
                    if g is not None:
                        g_shared[i] += g
            for i, p in enumerate(params):
                if p.requires_grad:
                    g = rest.pop(0)
                    if g is not None:
                        g_params[i] += g
            g_state = [g if g is not None else torch.zeros_like(p) for g, p in zip(g_prev, prev)]
            state = [p.detach() for p in prev]
        return (None, None, None, None, None, *g_state, *g_shared, *g_params)


def reversible_segment(
    steps: Sequence[InvertibleStep],
    state: Sequence[Tensor],
    shared: Sequence[Tensor],
    params: Sequence[Tensor],
    *,
    tap_index: int = 0,
    name: str = "segment",
    debug: bool = False,
    tol: float = 1e-4,
) -> tuple[list[Tensor], list[Tensor]]:
    """Chain ``steps`` over ``state`` keeping only boundary tensors.

    Each step maps ``state`` (with read-only ``shared`` tensors) to a new state
    of the same structure and must provide an exact inverse. ``params`` are
    all parameters the steps use; they receive gradients.

    Returns ``(final_state, taps)`` where ``taps[k]`` is element ``tap_index``
    of the state after step ``k`` for every step but the last (the last one is
    ``final_state[tap_index]``). In ``debug`` mode step inputs are also kept
    and reconstruction is checked against them to relative L-inf ``tol``.
    """
    if not steps:
        return list(state), []
    opts = {"debug": debug, "tol": tol, "name": name}
    out = _ReversibleFunction.apply(
        tuple(steps), len(state), len(shared), tap_index, opts, *state, *shared, *params
    )
    return list(out[: len(state)]), list(out[len(state):])
