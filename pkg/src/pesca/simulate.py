"""Ground-truth generator for three coupled blocks with structured sparsity.

The low-rank part is ``U (C * D) V^T`` where ``V`` carries a fixed zero
pattern: three components each for the global structure (C123), the
local common structures (C12, C13, C23) and the distinct ones (D1, D2, D3).
One scale per structure is solved so that the structure-to-noise ratio on
the blocks it spans equals the requested value exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logit

from .exceptions import ContractError, SimulationInfeasibleError
from .expfam import BERNOULLI, GAUSSIAN, DataBlock, Distribution

log = logging.getLogger(__name__)

STRUCTURES = ("C123", "C12", "C13", "C23", "D1", "D2", "D3")
SUPPORTS = {
    "C123": (0, 1, 2),
    "C12": (0, 1),
    "C13": (0, 2),
    "C23": (1, 2),
    "D1": (0,),
    "D2": (1,),
    "D3": (2,),
}

# Per-structure SNRs in STRUCTURES order
CASES = {
    1: (0, 1, 2, 3, 0, 0, 0),
    2: (1, 0, 0, 0, 1, 1, 1),
    3: (1, 1, 1, 1, 1, 1, 1),
    4: (10, 5, 5, 5, 1, 1, 1),
    5: (5, 10, 10, 10, 1, 1, 1),
    6: (1, 5, 5, 5, 10, 10, 10),
    7: (0, 0, 0, 0, 0, 0, 0),
}


@dataclass
class SimulationSpec:
    I: int = 100
    block_sizes: tuple = (1000, 500, 100)
    block_types: tuple = (GAUSSIAN, GAUSSIAN, GAUSSIAN)
    alphas: tuple = (1.0, 1.0, 1.0)
    structure_snrs: tuple = CASES[3]
    components_per_structure: int = 3
    marginal_prob: float = 0.1
    pseudo_count: float = 100.0
    d_mean: float = 1.0
    d_std: float = 0.5
    rejection: float = 2.0
    max_attempts: int = 1000
    seed: int = 0

    def __post_init__(self):
        self.block_sizes = tuple(int(j) for j in self.block_sizes)
        self.block_types = tuple(self.block_types)
        self.alphas = tuple(float(a) for a in self.alphas)
        self.structure_snrs = tuple(float(s) for s in self.structure_snrs)
        if len(self.block_sizes) != 3 or len(self.block_types) != 3 or len(self.alphas) != 3:
            raise ContractError("the structure layout is defined for exactly three blocks")
        if len(self.structure_snrs) != len(STRUCTURES):
            raise ContractError(f"need {len(STRUCTURES)} structure SNRs")
        if any(s < 0 for s in self.structure_snrs):
            raise ContractError("SNRs must be non-negative")
        if any(j < 1 for j in self.block_sizes) or self.I < 2:
            raise ContractError("sizes must be positive")
        if not 0 < self.marginal_prob < 1:
            raise ContractError("marginal probability must lie in (0, 1)")
        for t in self.block_types:
            if t not in (GAUSSIAN, BERNOULLI):
                raise ContractError(f"simulation supports gaussian and bernoulli blocks, got {t!r}")
        if any(a <= 0 for a in self.alphas):
            raise ContractError("dispersions must be positive")
        if self.n_components > self.I - 1:
            raise ContractError("too many components for the number of rows")

    @property
    def n_components(self) -> int:
        return self.components_per_structure * len(STRUCTURES)

    def distributions(self) -> list:
        return [
            Distribution.gaussian(a) if t == GAUSSIAN else Distribution.bernoulli()
            for t, a in zip(self.block_types, self.alphas)
        ]

    def to_dict(self) -> dict:
        return {
            "I": self.I,
            "block_sizes": list(self.block_sizes),
            "block_types": list(self.block_types),
            "alphas": list(self.alphas),
            "structure_snrs": list(self.structure_snrs),
            "components_per_structure": self.components_per_structure,
            "marginal_prob": self.marginal_prob,
            "pseudo_count": self.pseudo_count,
            "d_mean": self.d_mean,
            "d_std": self.d_std,
            "rejection": self.rejection,
            "max_attempts": self.max_attempts,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationSpec":
        return cls(**d)


@dataclass
class SimulationTruth:
    """Simulated factors and the structures they induce.

    ``V`` stacks the block loadings (``sum J x R``) with the exact zero
    pattern; ``scale`` holds the per-component SNR scale ``C`` and ``D`` the
    diagonal singular-value draws, so the loadings are ``V * (scale * D)``.
    """

    U: np.ndarray
    D: np.ndarray
    scale: np.ndarray
    V: np.ndarray
    offsets: list
    thetas: list
    noise: list | None
    block_sizes: tuple
    labels: tuple
    snrs: dict
    realized_snrs: dict = field(default_factory=dict)
    attempts: int = 1

    @property
    def block_slices(self) -> list:
        edges = np.concatenate([[0], np.cumsum(self.block_sizes)])
        return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]

    @property
    def loadings(self) -> list:
        full = self.V * (self.scale * self.D)[None, :]
        return [full[s] for s in self.block_slices]

    def present(self, name: str) -> bool:
        return self.snrs.get(name, 0.0) > 0

    def structure(self, name: str) -> np.ndarray:
        """``I x sum J`` matrix of one structure (zero when absent)."""
        idx = [r for r, lab in enumerate(self.labels) if lab == name]
        cols = self.V[:, idx] * (self.scale[idx] * self.D[idx])[None, :]
        return self.U[:, idx] @ cols.T

    def structure_components(self, name: str) -> list:
        return [r for r, lab in enumerate(self.labels) if lab == name]


def structure_labels(components_per_structure: int = 3) -> tuple:
    return tuple(name for name in STRUCTURES for _ in range(components_per_structure))


def simulate_scores(I: int, R: int, seed=None) -> np.ndarray:
    """Column-centered orthonormal ``I x R`` score matrix."""
    if R > I - 1 or R < 0:
        raise ContractError(f"R={R} must be at most I-1={I - 1}")
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((I, R))
    Z -= Z.mean(axis=0)
    U, _, _ = np.linalg.svd(Z, full_matrices=False)
    # left singular vectors of centered data stay centered; remove round-off
    U -= U.mean(axis=0)
    U, _, _ = np.linalg.svd(U, full_matrices=False)
    return U


def simulate_loadings(block_sizes, pattern, seed=None):
    """Loadings with an exact block-zero pattern.

    ``pattern`` is a sequence of ``(support_blocks, n_components)`` groups.
    Each group is orthonormalized by QR on its supported rows only, which
    keeps every zero cell exactly zero. Returns ``(V, overlap)`` where
    ``overlap`` is the largest absolute inner product between columns of
    different groups (0 for disjoint supports).
    """
    rng = np.random.default_rng(seed)
    block_sizes = [int(j) for j in block_sizes]
    edges = np.concatenate([[0], np.cumsum(block_sizes)])
    total = int(edges[-1])
    R = sum(k for _, k in pattern)
    V = np.zeros((total, R))
    group_of = np.empty(R, dtype=int)
    col = 0
    for g, (support, k) in enumerate(pattern):
        if not support:
            raise ContractError(f"group {g} has an empty support")
        rows = np.concatenate([np.arange(edges[l], edges[l + 1]) for l in support])
        if k > rows.size:
            raise ContractError(f"group {g} has more components than supported rows")
        Q, Rq = np.linalg.qr(rng.standard_normal((rows.size, k)))
        Q *= np.sign(np.diag(Rq))[None, :]
        V[rows, col:col + k] = Q
        group_of[col:col + k] = g
        col += k
    G = np.abs(V.T @ V)
    G[group_of[:, None] == group_of[None, :]] = 0.0
    overlap = float(G.max()) if G.size else 0.0
    return V, overlap


def calibrate_snr(d, noise, snr: float):
    """Scale ``c`` so that ``||c U D V^T||^2 / ||noise||^2 = snr``.

    Relies on ``U`` and ``V`` having orthonormal columns, so the structure's
    squared norm is ``c^2 * sum(d^2)``. Returns ``None`` for ``snr == 0``.
    """
    if snr == 0:
        return None
    if snr < 0:
        raise ContractError("snr must be non-negative")
    d = np.asarray(d, dtype=float)
    noise_sq = float(np.sum(np.square(noise))) if np.ndim(noise) else float(noise)
    return float(np.sqrt(snr * noise_sq / np.sum(d * d)))


def simulate_offsets(block_type: str, J: int, p: float = 0.1, n: float = 100.0, seed=None):
    """Gaussian: standard-normal offsets. Bernoulli: logits of
    ``Beta(n p + 1, n (1 - p) + 1)`` marginal probabilities."""
    rng = np.random.default_rng(seed)
    if block_type == GAUSSIAN:
        return rng.standard_normal(J)
    if not 0 < p < 1:
        raise ContractError("marginal probability must lie in (0, 1)")
    a, b = beta_parameters(p, n)
    probs = rng.beta(a, b, size=J)
    return logit(probs)


def beta_parameters(p: float, n: float) -> tuple:
    return n * p + 1.0, n * (1.0 - p) + 1.0


def _noise(rng, block_type: str, alpha: float, shape):
    if block_type == GAUSSIAN:
        return rng.normal(0.0, np.sqrt(alpha), size=shape)
    return rng.logistic(0.0, 1.0, size=shape)


def _draw(spec: SimulationSpec, rng):
    k = spec.components_per_structure
    labels = structure_labels(k)
    R = spec.n_components
    U = simulate_scores(spec.I, R, rng)
    pattern = [(SUPPORTS[name], k) for name in STRUCTURES]
    V, overlap = simulate_loadings(spec.block_sizes, pattern, rng)
    D = np.abs(rng.normal(spec.d_mean, spec.d_std, size=R))
    noise = [_noise(rng, t, a, (spec.I, J))
             for t, a, J in zip(spec.block_types, spec.alphas, spec.block_sizes)]
    offsets = [simulate_offsets(t, J, spec.marginal_prob, spec.pseudo_count, rng)
               for t, J in zip(spec.block_types, spec.block_sizes)]
    return U, V, D, noise, offsets, labels, overlap


def simulate_blocks(spec: SimulationSpec):
    """Draw one data set (three blocks) and its ground truth.

    The whole instance is redrawn until, for every present structure, its
    smallest singular value exceeds ``spec.rejection`` times the largest
    singular value of the noise on the blocks it spans.
    """
    rng = np.random.default_rng(spec.seed)
    snrs = dict(zip(STRUCTURES, spec.structure_snrs))
    for attempt in range(1, spec.max_attempts + 1):
        U, V, D, noise, offsets, labels, overlap = _draw(spec, rng)
        grams = [E @ E.T for E in noise]
        scale = np.zeros(spec.n_components)
        ok = True
        for name in STRUCTURES:
            if snrs[name] == 0:
                continue
            idx = [r for r, lab in enumerate(labels) if lab == name]
            support = SUPPORTS[name]
            noise_sq = sum(float(np.sum(noise[l] ** 2)) for l in support)
            c = calibrate_snr(D[idx], noise_sq, snrs[name])
            scale[idx] = c
            top_noise = np.sqrt(np.linalg.eigvalsh(sum(grams[l] for l in support))[-1])
            if c * D[idx].min() <= spec.rejection * top_noise:
                ok = False
                break
        if ok:
            break
    else:
        raise SimulationInfeasibleError(
            f"no instance passed the rejection rule in {spec.max_attempts} attempts"
        )
    log.debug("simulation accepted after %d attempts (loading overlap %.3g)", attempt, overlap)

    edges = np.concatenate([[0], np.cumsum(spec.block_sizes)])
    slices = [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]
    low_rank = U @ (V * (scale * D)[None, :]).T
    thetas = [offsets[l][None, :] + low_rank[:, s] for l, s in enumerate(slices)]
    blocks = []
    for l, (t, dist) in enumerate(zip(spec.block_types, spec.distributions())):
        if t == GAUSSIAN:
            X = thetas[l] + noise[l]
        else:
            X = (thetas[l] + noise[l] > 0).astype(float)
        blocks.append(DataBlock(X, np.ones_like(X), dist, name=f"X{l + 1}"))

    truth = SimulationTruth(U, D, scale, V, offsets, thetas, noise, spec.block_sizes,
                            labels, snrs, attempts=attempt)
    for name in STRUCTURES:
        if not truth.present(name):
            continue
        S = truth.structure(name)
        cols = np.concatenate([np.arange(slices[l].start, slices[l].stop) for l in SUPPORTS[name]])
        E = np.hstack([noise[l] for l in SUPPORTS[name]])
        truth.realized_snrs[name] = float(np.sum(S[:, cols] ** 2) / np.sum(E ** 2))
    return blocks, truth


def preset_spec(case_set: str, case: int, seed: int = 0, sizes=None, I=None, alphas=None) -> SimulationSpec:
    """Named experiment layouts: ``ggg``, ``bbb``, ``gbb`` and ``ggb``."""
    types = {"g": GAUSSIAN, "b": BERNOULLI}
    case_set = case_set.lower()
    if len(case_set) != 3 or any(c not in types for c in case_set):
        raise ContractError(f"unknown case set {case_set!r}")
    if case not in CASES:
        raise ContractError(f"unknown case {case}")
    default_I = 100 if case_set == "ggg" else 200
    return SimulationSpec(
        I=I or default_I,
        block_sizes=tuple(sizes or (1000, 500, 100)),
        block_types=tuple(types[c] for c in case_set),
        alphas=tuple(alphas or (1.0, 1.0, 1.0)),
        structure_snrs=CASES[case],
        seed=seed,
    )


def parse_preset(name: str) -> tuple:
    """``"ggg-case3"`` -> ``("ggg", 3)``."""
    try:
        case_set, case = name.lower().split("-case")
        return case_set, int(case)
    except ValueError:
        raise ContractError(f"preset names look like 'ggg-case3', got {name!r}") from None
