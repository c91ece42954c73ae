"""CSV matrices, JSON files and the model/truth bundle directories."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .exceptions import ContractError
from .expfam import DataBlock, Distribution
from .simulate import SimulationSpec, SimulationTruth
from .solver import EscaModel


def _fmt(v: float) -> str:
    return "%.17g" % v


def write_matrix(path, M, mask=None):
    """Headerless row-major CSV; cells with ``mask == 0`` or NaN are left empty."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if mask is None:
        mask = np.isfinite(M)
    mask = np.asarray(mask, dtype=bool)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row, keep in zip(M, mask):
            writer.writerow([_fmt(v) if k else "" for v, k in zip(row, keep)])


def read_matrix(path, n_cols: int | None = None) -> tuple:
    """Return ``(values, mask)``; empty fields become NaN with mask 0.

    ``n_cols`` is only needed to shape files that hold zero-width rows.
    """
    path = Path(path)
    if not path.is_file():
        raise ContractError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if n_cols == 0:
        M = np.zeros((len(rows), 0))
        return M, np.ones_like(M, dtype=bool)
    rows = [r for r in rows if r]
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise ContractError(f"{path}: ragged rows with widths {sorted(widths)}")
    try:
        M = np.array([[float(v) if v.strip() else np.nan for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ContractError(f"{path}: {exc}") from None
    if M.size == 0:
        M = M.reshape(len(rows), n_cols or 0)
    return M, np.isfinite(M)


def read_block(path, dist: Distribution, name: str = "") -> DataBlock:
    X, mask = read_matrix(path)
    return DataBlock(np.where(mask, X, 0.0), mask, dist, name)


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)
        fh.write("\n")


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise ContractError(f"no such file: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ContractError(f"{path}: invalid JSON ({exc})") from None


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_model(directory, model: EscaModel, meta: dict | None = None):
    """Bundle: ``mu_l.csv`` (one row), ``A.csv``, ``B_l.csv`` and ``meta.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for l, (mu, B) in enumerate(zip(model.offsets, model.loadings), start=1):
        write_matrix(d / f"mu_{l}.csv", mu[None, :])
        write_matrix(d / f"B_{l}.csv", B)
    write_matrix(d / "A.csv", model.scores)
    meta = dict(meta or {})
    meta.update(R=model.R, n_blocks=model.n_blocks, block_sizes=[B.shape[0] for B in model.loadings])
    write_json(d / "meta.json", meta)


def read_model(directory) -> tuple:
    d = Path(directory)
    meta = read_json(d / "meta.json")
    R = int(meta["R"])
    offsets, loadings = [], []
    for l in range(1, int(meta["n_blocks"]) + 1):
        mu, _ = read_matrix(d / f"mu_{l}.csv")
        offsets.append(mu.ravel())
        B, _ = read_matrix(d / f"B_{l}.csv", n_cols=R)
        loadings.append(B)
    A, _ = read_matrix(d / "A.csv", n_cols=R)
    return EscaModel(offsets, A, loadings), meta


def write_truth(directory, truth: SimulationTruth, spec: SimulationSpec | None = None):
    """Truth bundle: ``truth.json`` plus ``U``, ``D``, ``C``, ``V_l``, ``mu_l``, ``theta_l`` CSVs."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix(d / "U.csv", truth.U)
    write_matrix(d / "D.csv", truth.D[None, :])
    write_matrix(d / "C.csv", truth.scale[None, :])
    for l, s in enumerate(truth.block_slices, start=1):
        write_matrix(d / f"V_{l}.csv", truth.V[s])
        write_matrix(d / f"mu_{l}.csv", truth.offsets[l - 1][None, :])
        write_matrix(d / f"theta_{l}.csv", truth.thetas[l - 1])
    structures = {
        name: {
            "components": truth.structure_components(name),
            "snr": truth.snrs.get(name, 0.0),
            "realized_snr": truth.realized_snrs.get(name),
        }
        for name in dict.fromkeys(truth.labels)
    }
    write_json(d / "truth.json", {
        "structures": structures,
        "labels": list(truth.labels),
        "block_sizes": list(truth.block_sizes),
        "attempts": truth.attempts,
        "spec": None if spec is None else spec.to_dict(),
    })


def read_truth(directory) -> SimulationTruth:
    d = Path(directory)
    info = read_json(d / "truth.json")
    sizes = tuple(int(v) for v in info["block_sizes"])
    R = len(info["labels"])
    U, _ = read_matrix(d / "U.csv", n_cols=R)
    D, _ = read_matrix(d / "D.csv", n_cols=R)
    C, _ = read_matrix(d / "C.csv", n_cols=R)
    V = np.vstack([read_matrix(d / f"V_{l}.csv", n_cols=R)[0] for l in range(1, len(sizes) + 1)])
    offsets = [read_matrix(d / f"mu_{l}.csv")[0].ravel() for l in range(1, len(sizes) + 1)]
    thetas = [read_matrix(d / f"theta_{l}.csv")[0] for l in range(1, len(sizes) + 1)]
    structures = info["structures"]
    return SimulationTruth(
        U=U, D=D.ravel(), scale=C.ravel(), V=V, offsets=offsets, thetas=thetas, noise=None,
        block_sizes=sizes, labels=tuple(info["labels"]),
        snrs={k: v["snr"] for k, v in structures.items()},
        realized_snrs={k: v["realized_snr"] for k, v in structures.items() if v["realized_snr"] is not None},
        attempts=int(info.get("attempts", 1)),
    )
