"""Analytic per-iteration cost model for the simulated training algorithms.

Everything is counted in tensor ELEMENTS, never seconds or FLOPs: element
counts are exactly checkable against the simulator's collective and compute
counters.  For a layer mapping ``d_in`` inputs to ``d_out`` outputs, the
gradient holds ``N_g = d_out * d_in`` elements and the two curvature factors
hold ``N_f = d_in^2 + d_out^2``.

Costs are quoted per second-order-update iteration (the iteration where
factors are rebuilt and decompositions recomputed); :func:`amortized_cost`
spreads the factor/decomposition stages over their staleness intervals.

Caveat recorded in every report: InverseComp is counted in factor elements
like every other stage, although an eigendecomposition is cubic in the
factor dimension, not linear in its element count.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Sequence

from .errors import ArgumentError, DataFormatError

ALGORITHMS = ("ssgd", "mpd_kfac_co", "mpd_kfac_mo", "dp_kfac")

COMPUTE_STAGES = ("gradcomp", "factorcomp", "inversecomp")
COMM_STAGES = ("gradcomm", "factorcomm", "predcomm", "inversecomm")

_NOTES = (
    "inversecomm for mpd_kfac_co counts the broadcast decomposition payload "
    "(eigenbases plus eigenvalue vectors, or damped inverses); the classic "
    "complexity table omits this stage",
    "compute stages are element counts, not FLOPs; decomposition work is "
    "cubic in factor dimension",
)


class LayerDims(NamedTuple):
    """One preconditioned layer, homogeneous bias column included in d_in."""

    d_in: int
    d_out: int


def layer_counts(dims: LayerDims) -> tuple[int, int]:
    """(gradient elements, factor elements) for one layer."""
    if dims.d_in < 1 or dims.d_out < 1:
        raise ArgumentError(f"layer dimensions must be >= 1, got {dims}")
    n_g = dims.d_out * dims.d_in
    n_f = dims.d_in ** 2 + dims.d_out ** 2
    return n_g, n_f


def totals(layers: Sequence[LayerDims]) -> tuple[int, int]:
    n_g = n_f = 0
    for dims in layers:
        g, f = layer_counts(dims)
        n_g += g
        n_f += f
    return n_g, n_f


def round_robin_partition(n_items: int, n_workers: int) -> tuple[tuple[int, ...], ...]:
    """Circular assignment: worker p owns items p, p+P, p+2P, ... (0-based)."""
    if n_items < 0 or n_workers < 1:
        raise ArgumentError("need n_items >= 0 and n_workers >= 1")
    return tuple(tuple(range(p, n_items, n_workers)) for p in range(n_workers))


@dataclass(frozen=True)
class CostReport:
    """Element counts for one (algorithm, worker count) pair.

    ``factorcomp``/``inversecomp`` are the realized per-worker maxima under
    the round-robin partition; the ``*_ideal`` fields carry the idealized
    ``N_f / P`` values.  ``memory`` follows the classic table (idealized);
    ``memory_realized`` substitutes the realized partition maximum.
    """

    algorithm: str
    workers: int
    n_g: int
    n_f: int
    gradcomp: int
    factorcomp: int
    inversecomp: int
    factorcomp_ideal: float
    inversecomp_ideal: float
    gradcomm: int
    factorcomm: int
    predcomm: int
    inversecomm: int
    memory: float
    memory_realized: int

    def to_dict(self) -> dict:
        return asdict(self)


def algorithm_cost(
    layers: Sequence[LayerDims],
    workers: int,
    algorithm: str,
    inv_type: str = "eigen",
) -> CostReport:
    """Per-iteration element counts for one algorithm on one cluster size."""
    if algorithm not in ALGORITHMS:
        raise ArgumentError(f"unknown algorithm {algorithm!r}")
    if workers < 1:
        raise ArgumentError("worker count must be >= 1")
    per_layer = [layer_counts(d) for d in layers]
    n_g = sum(g for g, _ in per_layer)
    n_f = sum(f for _, f in per_layer)
    parts = round_robin_partition(len(layers), workers)
    owned_f = [sum(per_layer[i][1] for i in part) for part in parts]
    realized_max = max(owned_f) if owned_f else 0
    if inv_type == "eigen":
        payload = sum(f + d.d_in + d.d_out for (_, f), d in zip(per_layer, layers))
    elif inv_type == "inverse":
        payload = n_f
    else:
        raise ArgumentError(f"unknown inv_type {inv_type!r}")

    gradcomm = 2 * (workers - 1) * n_g
    if algorithm == "ssgd":
        return CostReport(
            algorithm, workers, n_g, n_f,
            gradcomp=n_g, factorcomp=0, inversecomp=0,
            factorcomp_ideal=0.0, inversecomp_ideal=0.0,
            gradcomm=gradcomm, factorcomm=0, predcomm=0, inversecomm=0,
            memory=float(n_g), memory_realized=n_g,
        )
    ideal = n_f / workers
    if algorithm in ("mpd_kfac_co", "mpd_kfac_mo"):
        comm_opt = algorithm == "mpd_kfac_co"
        return CostReport(
            algorithm, workers, n_g, n_f,
            gradcomp=n_g, factorcomp=n_f, inversecomp=realized_max,
            factorcomp_ideal=float(n_f), inversecomp_ideal=ideal,
            gradcomm=gradcomm,
            factorcomm=2 * (workers - 1) * n_f,
            predcomm=0 if comm_opt else (workers - 1) * n_g,
            inversecomm=(workers - 1) * payload if comm_opt else 0,
            memory=float(2 * (n_g + n_f)),
            memory_realized=2 * (n_g + n_f),
        )
    # dp_kfac
    return CostReport(
        algorithm, workers, n_g, n_f,
        gradcomp=n_g, factorcomp=realized_max, inversecomp=realized_max,
        factorcomp_ideal=ideal, inversecomp_ideal=ideal,
        gradcomm=gradcomm, factorcomm=0, predcomm=(workers - 1) * n_g, inversecomm=0,
        memory=2.0 * (n_g + ideal),
        memory_realized=2 * (n_g + realized_max),
    )


def amortized_cost(report: CostReport, f_freq: int, k_freq: int) -> dict:
    """Average per-iteration costs when factor stages run every ``f_freq``
    iterations and decomposition stages every ``k_freq``."""
    if f_freq < 1 or k_freq < 1:
        raise ArgumentError("staleness intervals must be >= 1")
    return {
        "algorithm": report.algorithm,
        "workers": report.workers,
        "f_freq": f_freq,
        "k_freq": k_freq,
        "gradcomp": float(report.gradcomp),
        "factorcomp": report.factorcomp / f_freq,
        "inversecomp": report.inversecomp / k_freq,
        "gradcomm": float(report.gradcomm),
        "factorcomm": report.factorcomm / f_freq,
        "predcomm": float(report.predcomm),
        "inversecomm": report.inversecomm / k_freq,
    }


@dataclass(frozen=True)
class StageDiff:
    stage: str
    analytic: int
    simulated: int

    @property
    def delta(self) -> int:
        return self.simulated - self.analytic


@dataclass(frozen=True)
class Verdict:
    """Outcome of checking simulated counters against the analytic model."""

    ok: bool
    diffs: tuple[StageDiff, ...]

    def describe(self) -> str:
        if self.ok:
            return "counters match"
        return "; ".join(
            f"{d.stage}: analytic {d.analytic} != simulated {d.simulated} (delta {d.delta:+d})"
            for d in self.diffs
        )


def verify_counters(report: CostReport, counters) -> Verdict:
    """Exact integer comparison of a simulator step's counters against the
    analytic report.  Only meaningful on a full second-order-update iteration
    (factor refresh and decomposition recompute both fired)."""
    diffs = []
    for stage in COMM_STAGES + COMPUTE_STAGES:
        analytic = getattr(report, stage)
        simulated = getattr(counters, stage)
        if analytic != simulated:
            diffs.append(StageDiff(stage, analytic, simulated))
    return Verdict(ok=not diffs, diffs=tuple(diffs))


def model_notes() -> tuple[str, ...]:
    return _NOTES


def load_manifest(path) -> list[LayerDims]:
    """Parse a layer manifest: one ``d_in d_out`` pair per line, ``#`` comments."""
    layers = []
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 2:
            raise DataFormatError(
                f"{path}:{lineno}: expected 'd_in d_out', got {raw.strip()!r}"
            )
        try:
            d_in, d_out = int(fields[0]), int(fields[1])
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: non-integer dimension in {raw.strip()!r}") from exc
        if d_in < 1 or d_out < 1:
            raise DataFormatError(f"{path}:{lineno}: dimensions must be >= 1")
        layers.append(LayerDims(d_in, d_out))
    if not layers:
        raise DataFormatError(f"{path}: manifest holds no layers")
    return layers


def builtin_manifest_path(name: str) -> Path:
    """Path of a manifest bundled with the package (currently: resnet50)."""
    ref = resources.files("kfaclab").joinpath(f"data/{name}_manifest.txt")
    if not ref.is_file():
        raise ArgumentError(f"no bundled manifest named {name!r}")
    return Path(str(ref))


def resolve_manifest(name_or_path: str) -> list[LayerDims]:
    """Accept either a filesystem path or a bundled manifest name."""
    p = Path(name_or_path)
    if p.exists():
        return load_manifest(p)
    try:
        return load_manifest(builtin_manifest_path(name_or_path))
    except ArgumentError:
        raise DataFormatError(f"manifest {name_or_path!r}: no such file or bundled name")
