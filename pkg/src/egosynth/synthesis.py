"""Inverse synthesis: gradient descent over a free 12D configuration.

The iterate ``h`` starts at the encoded first frame and descends

    ||phi_j - h||^2 - log psi(h)

where ``phi_j`` is the future predictor's branch output for the current
phase and ``psi`` the goal verifier.  Network parameters never change.  The
path traversed by ``h`` is the generated motion.
"""

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import DivergenceError, ValidationError
from .models import verify, verify_with_grad
from .simcourt import Sequence


@dataclass
class SynthesisOptions:
    iterations: int = 6000
    step: float = 0.001
    m_out: int = 25
    use_verifier: bool = True

    def validate(self, k=1):
        if self.iterations < k:
            raise ValidationError(f"need at least k={k} iterations, got {self.iterations}")
        if not self.step > 0:
            raise ValidationError("step size must be positive")
        if self.m_out < 2:
            raise ValidationError("m_out must be at least 2")


@dataclass
class SynthesisTrace:
    iterates: np.ndarray  # (N+1, 12), or (N+1, B, 12) for batched runs
    objectives: np.ndarray  # (N+1,) or (N+1, B); entry c uses the target of phase(c)
    data_terms: np.ndarray  # same shape as objectives
    phase_starts: list
    phase_data: np.ndarray = field(repr=False, default=None)  # (k, 2, ...) start/end data terms
    targets: np.ndarray = field(repr=False, default=None)

    @property
    def n_iterations(self):
        return len(self.iterates) - 1


def branch_schedule(c, N, k):
    """1-based branch for iteration ``c``: ``floor(c / (N/k)) + 1`` clamped to ``[1, k]``."""
    if not 0 <= c < N:
        raise ValidationError(f"iteration {c} outside [0, {N})")
    # c*k // N is the exact integer form of floor(c / (N/k))
    return min(c * k // N + 1, k)


def phase_starts(N, k):
    starts = [0]
    for c in range(1, N):
        if branch_schedule(c, N, k) != branch_schedule(c - 1, N, k):
            starts.append(c)
    return starts


def _check_finite(h):
    if not np.all(np.isfinite(h)):
        raise ValidationError("configuration has non-finite entries")


def objective(h, phi, verifier):
    """Data term plus ``-log psi(h)``; ``verifier=None`` keeps only the data term."""
    h = np.asarray(h, dtype=np.float64)
    _check_finite(h)
    diff = np.asarray(phi) - h
    value = np.sum(diff * diff, axis=-1)
    if verifier is not None:
        value = value - np.log(verify(verifier, h))
    return value


def objective_grad(h, phi, verifier):
    h = np.asarray(h, dtype=np.float64)
    _check_finite(h)
    grad = -2.0 * (np.asarray(phi) - h)
    if verifier is not None:
        psi, dpsi = verify_with_grad(verifier, h)
        grad = grad - dpsi / psi[..., None]
    return grad


def _value_and_grad(h, phi, verifier):
    diff = phi - h
    data = np.sum(diff * diff, axis=-1)
    grad = -2.0 * diff
    value = data
    if verifier is not None:
        psi, dpsi = verify_with_grad(verifier, h)
        value = data - np.log(psi)
        grad = grad - dpsi / psi[..., None]
    return value, data, grad


def _descend(start, phis, verifier, opts, keep=None):
    h = np.array(start, dtype=np.float64)
    phis = np.asarray(phis, dtype=np.float64)
    k = phis.shape[-2]
    opts.validate(k)
    if h.shape[-1] != geo.CONFIG_DIM or phis.shape[-1] != geo.CONFIG_DIM:
        raise ValidationError("start and targets must be 12D configurations")
    if phis.shape[:-2] != h.shape[:-1]:
        raise ValidationError("target batch shape does not match start batch shape")
    if not np.all(np.isfinite(h)):
        raise ValidationError("start configuration has non-finite entries")
    N = opts.iterations
    verifier = verifier if opts.use_verifier else None
    keep = range(N + 1) if keep is None else sorted(set(keep))
    keep_set = set(keep)
    kept = []
    objectives = np.empty((N + 1,) + h.shape[:-1])
    data_terms = np.empty_like(objectives)
    phase_data = np.empty((k, 2) + h.shape[:-1])
    prev = None
    for c in range(N + 1):
        j = branch_schedule(c, N, k) if c < N else k
        if prev is not None and (j != prev or c == N):
            end_diff = phis[..., prev - 1, :] - h
            phase_data[prev - 1, 1] = np.sum(end_diff * end_diff, axis=-1)
        phi = phis[..., j - 1, :]
        value, data, grad = _value_and_grad(h, phi, verifier)
        if j != prev and c < N:
            phase_data[j - 1, 0] = data
        prev = j
        objectives[c] = value
        data_terms[c] = data
        if c in keep_set:
            kept.append(h.copy())
        if c == N:
            break
        h = h - opts.step * grad
        if not np.all(np.isfinite(h)):
            raise DivergenceError(f"iterate became non-finite at iteration {c + 1}", iteration=c + 1)
    return np.array(kept), objectives, data_terms, phase_starts(N, k), phase_data


def synthesize(start, phis, verifier, opts=None):
    """Run the descent from ``start`` and record every iterate.

    ``start`` is a normalized configuration ``(12,)`` and ``phis`` the
    predictor outputs ``(k, 12)``; leading batch dimensions are allowed on
    both.  ``verifier`` may be ``None`` (or ``opts.use_verifier`` False) for
    the data-term-only ablation.
    """
    opts = opts or SynthesisOptions()
    iterates, obj, data, starts, pdata = _descend(start, phis, verifier, opts)
    return SynthesisTrace(iterates, obj, data, starts, pdata, np.asarray(phis))


def extraction_indices(N, m_out):
    if m_out < 2:
        raise ValidationError("m_out must be at least 2")
    if m_out > N + 1:
        raise ValidationError(f"cannot pick {m_out} iterates from a trace of {N + 1}")
    return np.rint(np.linspace(0, N, m_out)).astype(int)


def to_sequence(normalized_configs, normalizer, seq_id):
    """Denormalize and project every rotation block back onto SO(3)."""
    raw = geo.denormalize(normalized_configs, normalizer)
    return Sequence(seq_id, np.array([geo.orthonormalize_config(c) for c in raw]))


def extract_sequence(trace, m_out, normalizer, seq_id="synth"):
    idx = extraction_indices(trace.n_iterations, m_out)
    if trace.iterates.ndim != 2:
        raise ValidationError("extract_sequence expects an unbatched trace")
    return to_sequence(trace.iterates[idx], normalizer, seq_id)


@dataclass
class BatchResult:
    """Subsampled iterates of a batched run plus per-iteration diagnostics."""

    iterates: np.ndarray  # (m_out, B, 12)
    objectives: np.ndarray  # (N+1, B)
    data_terms: np.ndarray  # (N+1, B)
    phase_starts: list
    phase_data: np.ndarray  # (k, 2, B)


def synthesize_batch(starts, phis, verifier, opts=None):
    """Batched descent that keeps only the iterates ``extract`` will use."""
    opts = opts or SynthesisOptions()
    idx = extraction_indices(opts.iterations, opts.m_out)
    kept, obj, data, ps, pdata = _descend(starts, phis, verifier, opts, keep=idx)
    return BatchResult(kept, obj, data, ps, pdata)


def phase_progress(result):
    """``(start, end)`` data term of every branch phase against that phase's target.

    The end value is measured at the iterate produced by the phase's last
    step.
    """
    return [(row[0], row[1]) for row in result.phase_data]
