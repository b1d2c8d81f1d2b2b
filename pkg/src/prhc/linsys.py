"""Discrete-time linear dynamics with additive disturbances, plus stacked batch forms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LinearSystem",
    "DisturbanceSequence",
    "Trajectory",
    "StackedDynamics",
    "step",
    "rollout",
    "stack_dynamics",
    "validate_trajectory",
]

# slack added to the disturbance norm cap so boundary draws survive float round-off
NORM_CAP_SLACK = 1e-12


def _as_float_array(name, value, ndim):
    arr = np.asarray(value, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class LinearSystem:
    """Matrix pair (A, B) of the update x_next = A x + B u + w."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _as_float_array("A", self.A, 2)
        B = _as_float_array("B", self.B, 2)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if A.shape[0] < 1:
            raise ValueError("state dimension must be at least 1")
        if B.shape[0] != A.shape[0]:
            raise ValueError(
                f"B has {B.shape[0]} rows but the state dimension is {A.shape[0]}"
            )
        if B.shape[1] < 1:
            raise ValueError("input dimension must be at least 1")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class DisturbanceSequence:
    """Disturbance vectors w_1..w_T together with the norm cap of their support set."""

    w: np.ndarray  # (T, n)
    w_c: float

    def __post_init__(self):
        w = _as_float_array("w", self.w, 2)
        w_c = float(self.w_c)
        if w_c < 0:
            raise ValueError(f"w_c must be nonnegative, got {w_c}")
        norms = np.linalg.norm(w, axis=1)
        if norms.size and norms.max() > w_c + NORM_CAP_SLACK:
            t = int(norms.argmax())
            raise ValueError(
                f"disturbance at step {t} has norm {norms[t]:.6g}, exceeding the cap {w_c:.6g}"
            )
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "w_c", w_c)

    @classmethod
    def zeros(cls, T: int, n: int, w_c: float = 0.0) -> "DisturbanceSequence":
        return cls(np.zeros((T, n)), w_c)

    @classmethod
    def from_array(cls, w) -> "DisturbanceSequence":
        """Wrap an array, taking the cap as the largest per-step norm."""
        w = np.atleast_2d(np.asarray(w, dtype=float))
        cap = float(np.linalg.norm(w, axis=1).max()) if w.size else 0.0
        return cls(w, cap)

    def __len__(self) -> int:
        return self.w.shape[0]

    @property
    def n(self) -> int:
        return self.w.shape[1]

    def window(self, start: int, stop: int) -> "DisturbanceSequence":
        """Sub-sequence covering steps start..stop-1 (0-based), same cap."""
        if not (0 <= start <= stop <= len(self)):
            raise ValueError(f"window [{start}, {stop}) out of range for length {len(self)}")
        return DisturbanceSequence(self.w[start:stop].copy(), self.w_c)

    def energy(self) -> float:
        """Total squared norm of the sequence."""
        return float(np.sum(self.w * self.w))


@dataclass
class Trajectory:
    """Closed-loop record: states x_1..x_{T+1}, inputs, disturbances, stage costs.

    stage_costs stays None until a cost model fills it.
    """

    states: np.ndarray        # (T+1, n)
    inputs: np.ndarray        # (T, m)
    disturbances: np.ndarray  # (T, n)
    stage_costs: np.ndarray | None = None

    def __post_init__(self):
        self.states = _as_float_array("states", self.states, 2)
        self.inputs = _as_float_array("inputs", self.inputs, 2)
        self.disturbances = _as_float_array("disturbances", self.disturbances, 2)
        T = self.inputs.shape[0]
        if self.states.shape[0] != T + 1:
            raise ValueError(
                f"states must hold T+1 rows, got {self.states.shape[0]} for T={T}"
            )
        if self.disturbances.shape != (T, self.states.shape[1]):
            raise ValueError(
                f"disturbances shape {self.disturbances.shape} does not match "
                f"(T={T}, n={self.states.shape[1]})"
            )

    @property
    def T(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class StackedDynamics:
    """Batch maps F, G, H with x_stack = F x + G u_stack + H w_stack.

    x_stack holds the N window states at offsets 0..N-1, so the first block row
    of F is the identity and the first block rows of G and H are zero.
    """

    F: np.ndarray  # (n*N, n)
    G: np.ndarray  # (n*N, m*N)
    H: np.ndarray  # (n*N, n*N)
    n: int
    m: int
    N: int

    def predict(self, x, u_stack, w_stack) -> np.ndarray:
        """Window states as an (N, n) array for initial state x, inputs and disturbances."""
        x = np.asarray(x, dtype=float).reshape(self.n)
        u = np.asarray(u_stack, dtype=float).reshape(self.N * self.m)
        w = np.asarray(w_stack, dtype=float).reshape(self.N * self.n)
        flat = self.F @ x + self.G @ u + self.H @ w
        return flat.reshape(self.N, self.n)


def step(sys: LinearSystem, x, u, w) -> np.ndarray:
    """One dynamics update A x + B u + w."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != (sys.n,):
        raise ValueError(f"x has shape {x.shape}, expected ({sys.n},)")
    if u.shape != (sys.m,):
        raise ValueError(f"u has shape {u.shape}, expected ({sys.m},)")
    if w.shape != (sys.n,):
        raise ValueError(f"w has shape {w.shape}, expected ({sys.n},)")
    return sys.A @ x + sys.B @ u + w


def rollout(sys: LinearSystem, x1, u_seq, w_seq) -> Trajectory:
    """Roll the dynamics forward from x1 under an input and disturbance sequence.

    Stage costs are left unfilled; a cost model fills them later.
    """
    if isinstance(w_seq, DisturbanceSequence):
        w_seq = w_seq.w
    u_seq = np.asarray(u_seq, dtype=float)
    w_seq = np.asarray(w_seq, dtype=float)
    if u_seq.ndim == 1:
        u_seq = u_seq.reshape(-1, sys.m)
    if w_seq.ndim == 1:
        w_seq = w_seq.reshape(-1, sys.n)
    T = u_seq.shape[0]
    if w_seq.shape[0] != T:
        raise ValueError(
            f"input sequence has {T} steps but disturbance sequence has {w_seq.shape[0]}"
        )
    states = np.empty((T + 1, sys.n))
    states[0] = np.asarray(x1, dtype=float).reshape(sys.n)
    for t in range(T):
        states[t + 1] = step(sys, states[t], u_seq[t], w_seq[t])
    return Trajectory(states=states, inputs=u_seq.copy(), disturbances=w_seq.copy())


def stack_dynamics(sys: LinearSystem, N: int) -> StackedDynamics:
    """Build the batch maps for an N-step window.

    Offset k state: x_k = A^k x + sum_{j<k} A^(k-1-j) (B u_j + w_j).
    """
    if N < 1:
        raise ValueError(f"window length N must be at least 1, got {N}")
    n, m = sys.n, sys.m
    powers = [np.eye(n)]
    for _ in range(N - 1):
        powers.append(sys.A @ powers[-1])
    F = np.vstack(powers)
    G = np.zeros((n * N, m * N))
    H = np.zeros((n * N, n * N))
    for k in range(N):
        for j in range(k):
            blk = powers[k - 1 - j]
            G[k * n:(k + 1) * n, j * m:(j + 1) * m] = blk @ sys.B
            H[k * n:(k + 1) * n, j * n:(j + 1) * n] = blk
    return StackedDynamics(F=F, G=G, H=H, n=n, m=m, N=N)


def validate_trajectory(sys: LinearSystem, traj: Trajectory, tol: float = 1e-9) -> None:
    """Re-check that the stored states satisfy the dynamics; raise on violation."""
    for t in range(traj.T):
        predicted = step(sys, traj.states[t], traj.inputs[t], traj.disturbances[t])
        err = float(np.max(np.abs(predicted - traj.states[t + 1])))
        if err > tol:
            raise ValueError(
                f"trajectory violates the dynamics at step {t}: max deviation {err:.3e}"
            )
