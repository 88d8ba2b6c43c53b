"""Dense 2-D float64 tensors with reverse-mode gradients.

Every operation that touches a gradient-bearing input records its parents
and a backward rule; ``backward`` replays the recorded graph once in
reverse topological order, accumulating gradients additively into
per-tensor slots. Gradients persist until explicitly zeroed, so separate
forward graphs sharing the same parameters accumulate across calls.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, EvaluationError, ShapeError, TapeStateError


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got array of shape {arr.shape}")
    return np.ascontiguousarray(arr)


class Tensor:
    """A 2-D float64 matrix, immutable once constructed.

    ``requires_grad`` marks the tensor as a gradient sink; operations on it
    propagate the flag. ``grad`` holds the accumulated gradient (same shape)
    or None until the first backward pass writes it.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_rule", "_backward_done")

    def __init__(self, value, requires_grad: bool = False,
                 _parents: tuple = (), _backward_rule: Callable | None = None):
        data = _as_matrix(value)
        if not np.all(np.isfinite(data)):
            raise ContractError("tensor values must be finite (got NaN or Inf)")
        data.flags.writeable = False
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward_rule = _backward_rule
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def _set_data(self, value: np.ndarray) -> None:
        """Rebind the value (optimizer/perturbation use; graphs built earlier keep the old array)."""
        data = _as_matrix(value)
        if data.shape != self.data.shape:
            raise ShapeError(f"cannot rebind shape {self.data.shape} tensor to shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ContractError("tensor values must be finite (got NaN or Inf)")
        data = data.copy()  # own the buffer: callers keep their arrays writable
        data.flags.writeable = False
        self.data = data

    def _ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(value) -> Tensor:
    if isinstance(value, np.ndarray):
        value = value.copy()  # keep the caller's array writable
    return Tensor(value, requires_grad=False)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], rule: Callable) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward_rule=rule)
    return Tensor(data)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t._ensure_grad()
        t.grad += g


def _accum_rows(t: Tensor, start: int, g: np.ndarray) -> None:
    if t.requires_grad:
        t._ensure_grad()
        t.grad[start:start + g.shape[0]] += g


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def rule(out: Tensor) -> None:
        g = out.grad
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result(out_data, (a, b), rule)


def transpose(x: Tensor) -> Tensor:
    def rule(out: Tensor) -> None:
        _accum(x, out.grad.T)

    return _result(np.ascontiguousarray(x.data.T), (x,), rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add mismatch: {a.shape} + {b.shape}")

    def rule(out: Tensor) -> None:
        _accum(a, out.grad)
        _accum(b, out.grad)

    return _result(a.data + b.data, (a, b), rule)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a 1 x C bias row to every row of x."""
    if bias.rows != 1 or bias.cols != x.cols:
        raise ShapeError(f"bias of shape {bias.shape} does not broadcast over {x.shape}")

    def rule(out: Tensor) -> None:
        _accum(x, out.grad)
        _accum(bias, out.grad.sum(axis=0, keepdims=True))

    return _result(x.data + bias.data, (x, bias), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul mismatch: {a.shape} * {b.shape}")

    def rule(out: Tensor) -> None:
        g = out.grad
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(a.data * b.data, (a, b), rule)


def scale_shift(x: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """Elementwise scale * x + shift with scalar constants."""

    def rule(out: Tensor) -> None:
        _accum(x, scale * out.grad)

    return _result(scale * x.data + shift, (x,), rule)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0

    def rule(out: Tensor) -> None:
        _accum(x, out.grad * mask)

    return _result(np.where(mask, x.data, 0.0), (x,), rule)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)

    def rule(out: Tensor) -> None:
        _accum(x, out.grad * y * (1.0 - y))

    return _result(y, (x,), rule)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def rule(out: Tensor) -> None:
        _accum(x, out.grad * (1.0 - y * y))

    return _result(y, (x,), rule)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def row_softmax(x: Tensor) -> Tensor:
    y = _softmax_rows(x.data)

    def rule(out: Tensor) -> None:
        g = out.grad
        _accum(x, y * (g - (g * y).sum(axis=1, keepdims=True)))

    return _result(y, (x,), rule)


def masked_row_softmax(x: Tensor, mask: np.ndarray) -> Tensor:
    """Row softmax restricted to True entries of a constant boolean mask.

    Masked entries get weight 0. A row with no True entries comes out all
    zero instead of raising; callers treat such rows as "no neighbors".
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeError(f"mask of shape {mask.shape} does not match scores {x.shape}")
    neg = np.where(mask, x.data, -np.inf)
    row_max = np.max(neg, axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.exp(np.where(mask, x.data - row_max, -np.inf))
    e = np.where(mask, e, 0.0)
    denom = e.sum(axis=1, keepdims=True)
    safe = np.where(denom > 0.0, denom, 1.0)
    y = e / safe

    def rule(out: Tensor) -> None:
        g = out.grad
        _accum(x, y * (g - (g * y).sum(axis=1, keepdims=True)))

    return _result(y, (x,), rule)


def row_log_softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - log_z
    soft = np.exp(y)

    def rule(out: Tensor) -> None:
        g = out.grad
        _accum(x, g - soft * g.sum(axis=1, keepdims=True))

    return _result(y, (x,), rule)


def hcat(a: Tensor, b: Tensor) -> Tensor:
    if a.rows != b.rows:
        raise ShapeError(f"hcat row mismatch: {a.shape} vs {b.shape}")
    split = a.cols

    def rule(out: Tensor) -> None:
        g = out.grad
        _accum(a, g[:, :split])
        _accum(b, g[:, split:])

    return _result(np.hstack([a.data, b.data]), (a, b), rule)


def vstack(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("vstack needs at least one tensor")
    cols = parts[0].cols
    for p in parts:
        if p.cols != cols:
            raise ShapeError(f"vstack column mismatch: {p.shape} vs {parts[0].shape}")
    offsets = np.cumsum([0] + [p.rows for p in parts])

    def rule(out: Tensor) -> None:
        g = out.grad
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[start:stop])

    return _result(np.vstack([p.data for p in parts]), tuple(parts), rule)


def rows(x: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= x.rows):
        raise ShapeError(f"row slice [{start}:{stop}] out of range for shape {x.shape}")

    def rule(out: Tensor) -> None:
        _accum_rows(x, start, out.grad)

    return _result(x.data[start:stop].copy(), (x,), rule)


def permute_rows(x: Tensor, perm: np.ndarray) -> Tensor:
    perm = np.asarray(perm, dtype=np.intp)
    if perm.shape != (x.rows,) or not np.array_equal(np.sort(perm), np.arange(x.rows)):
        raise ContractError(f"perm must be a permutation of range({x.rows})")

    def rule(out: Tensor) -> None:
        if x.requires_grad:
            x._ensure_grad()
            x.grad[perm] += out.grad

    return _result(x.data[perm], (x,), rule)


def row_where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Per-row select: rows where cond is True come from a, the rest from b."""
    cond = np.asarray(cond, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"row_where mismatch: {a.shape} vs {b.shape}")
    if cond.shape != (a.rows,):
        raise ShapeError(f"cond of shape {cond.shape} does not match {a.rows} rows")
    sel = cond[:, None]

    def rule(out: Tensor) -> None:
        g = out.grad
        _accum(a, np.where(sel, g, 0.0))
        _accum(b, np.where(sel, 0.0, g))

    return _result(np.where(sel, a.data, b.data), (a, b), rule)


def sum_all(x: Tensor) -> Tensor:
    def rule(out: Tensor) -> None:
        if x.requires_grad:
            x._ensure_grad()
            x.grad += out.grad[0, 0]

    return _result(np.array([[x.data.sum()]]), (x,), rule)


def mean_rows(x: Tensor) -> Tensor:
    """Mean over rows, yielding a 1 x C row."""
    n = x.rows

    def rule(out: Tensor) -> None:
        if x.requires_grad:
            x._ensure_grad()
            x.grad += out.grad / n

    return _result(x.data.mean(axis=0, keepdims=True), (x,), rule)


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias, with weight shaped (in, out) and bias 1 x out."""
    return add_bias(matmul(x, weight), bias)


# ---------------------------------------------------------------------------
# backward pass


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into the grad slot of every reachable tensor.

    The root must be a 1 x 1 scalar. A second call on the same root is
    rejected; rebuild the graph (and zero parameter gradients) instead.
    """
    if root.shape != (1, 1):
        raise ContractError(f"backward root must be 1 x 1, got {root.shape}")
    if root._backward_done:
        raise TapeStateError("backward already ran for this root; rebuild the graph before differentiating again")
    root._backward_done = True
    if not root.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    root._ensure_grad()
    root.grad += 1.0
    for node in reversed(order):
        if node._backward_rule is not None and node.grad is not None:
            node._backward_rule(node)


# ---------------------------------------------------------------------------
# parameters


class ParamStore:
    """Named trainable tensors with one pre-allocated gradient slot each."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name: {name!r}")
        if isinstance(value, np.ndarray):
            value = value.copy()  # keep the caller's array writable
        t = Tensor(value, requires_grad=True)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params.keys())

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def merge_gradients(self, other: "ParamStore") -> None:
        """Explicit cross-tape reduction: add the other store's gradients into this one."""
        if self.names() != other.names():
            raise ContractError("cannot merge gradients: parameter names differ")
        for name, t in self._params.items():
            o = other[name]
            if o.shape != t.shape:
                raise ShapeError(f"gradient shape mismatch for {name!r}: {t.shape} vs {o.shape}")
            t._ensure_grad()
            t.grad += o.grad if o.grad is not None else 0.0

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays.keys()) != set(self._params.keys()):
            raise ContractError("parameter name sets differ")
        for name, arr in arrays.items():
            self._params[name]._set_data(arr)


def glorot(rng: np.random.Generator, n_rows: int, n_cols: int) -> np.ndarray:
    """Uniform fan-balanced init for a weight matrix."""
    bound = np.sqrt(6.0 / (n_rows + n_cols))
    return rng.uniform(-bound, bound, size=(n_rows, n_cols))


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradientCheckReport:
    step: float
    tol: float
    max_errors: dict[str, float] = field(default_factory=dict)
    passed: bool = False
    note: str = ""

    def worst(self) -> float:
        return max(self.max_errors.values()) if self.max_errors else 0.0

    def summary_lines(self) -> list[str]:
        lines = [f"gradient check: step={self.step:g} tol={self.tol:g} "
                 f"{'PASS' if self.passed else 'FAIL'}{' (' + self.note + ')' if self.note else ''}"]
        for name in sorted(self.max_errors):
            err = self.max_errors[name]
            flag = "ok" if err <= self.tol else "BAD"
            lines.append(f"  {name}: max rel err {err:.3e} [{flag}]")
        return lines


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(1.0, abs(a), abs(n))


def finite_difference_check(f: Callable[[], Tensor], params: ParamStore,
                            step: float = 1e-4, tol: float = 1e-3) -> GradientCheckReport:
    """Compare tape gradients of the scalar function f against central differences.

    f must rebuild its graph on every call using the tensors in params.
    Returns a per-parameter report of max relative error (denominator
    floored at 1 so near-zero gradients compare absolutely).
    """
    if step <= 0:
        raise ContractError(f"step must be positive, got {step}")
    report = GradientCheckReport(step=step, tol=tol)
    if len(params) == 0:
        warnings.warn("finite_difference_check on an empty ParamStore: vacuous pass")
        report.passed = True
        report.note = "no parameters"
        return report

    params.zero_grad()
    loss = f()
    backward(loss)
    analytic = {name: t.grad.copy() for name, t in params.items()}

    def eval_loss() -> float:
        value = float(f().data[0, 0])
        if not np.isfinite(value):
            raise EvaluationError("objective returned a non-finite value during finite differencing")
        return value

    for name, t in params.items():
        base = t.data.copy()
        worst = 0.0
        grid = analytic[name]
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            bumped = base.copy()
            bumped[idx] = base[idx] + step
            t._set_data(bumped)
            hi = eval_loss()
            bumped[idx] = base[idx] - step
            t._set_data(bumped)
            lo = eval_loss()
            numeric = (hi - lo) / (2.0 * step)
            worst = max(worst, _rel_err(float(grid[idx]), numeric))
        t._set_data(base)
        report.max_errors[name] = worst

    report.passed = all(err <= tol for err in report.max_errors.values())
    return report
