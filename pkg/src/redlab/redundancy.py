"""Layer-reset probing and the redundancy metric.

The protocol: freeze a trained model, deep-copy it, redraw one named
parameter group from the fresh-initialization distribution, and measure how
much the outputs move.  Outputs that barely move — a high capped log-MSE
term — expose parameters the network was not really using.  The aggregate
over (selector, image) pairs is the redundancy metric; the fraction of
images that actually *improve* under a reset is the POI.

The probed model is never mutated: every reset operates on a deep copy.
Per-image forwards may run on a small thread pool (REDLAB_THREADS, default
1); reductions always happen in fixed index order regardless.
"""

from __future__ import annotations

import copy
import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError, SelectorError
from .rng import Rng, child_seed
from .tensor import Tensor

KINDS = ("static", "dynamic", "attention", "feedforward")

DEFAULT_CAP_DB = 100.0

# leaf names that reset to zero instead of being redrawn
_BIAS_LEAVES = {"bias", "b1", "b2"}


@dataclass(frozen=True)
class LayerSelector:
    """A named parameter group plus its mechanism kind."""

    path: str
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(
                f"selector kind must be one of {KINDS}, got {self.kind!r}"
            )


@dataclass
class ProbeResult:
    """One reset experiment: selector x seed against a paired image set."""

    selector: LayerSelector
    seed: int
    before: list
    after: list
    delta_psnr_mean: float
    poi: float


@dataclass
class DmrReport:
    """Every per-(selector, image) log term plus the aggregate."""

    selectors: list
    n: int
    m: int
    terms: np.ndarray
    dmr: float
    i_max: float
    cap: float
    seed: int


def psnr(a, b, i_max: float = 1.0, cap: float = DEFAULT_CAP_DB) -> float:
    """Capped peak log-MSE in dB; identical inputs return the cap exactly."""
    da = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    db = b.data if isinstance(b, Tensor) else np.asarray(b, dtype=np.float64)
    if da.shape != db.shape:
        raise DimensionError(f"psnr shapes differ: {da.shape} vs {db.shape}")
    if i_max <= 0:
        raise ContractError(f"i_max must be positive, got {i_max}")
    diff = da - db
    m = float(np.mean(diff * diff))
    if m == 0.0:
        return cap
    return min(float(10.0 * np.log10(i_max * i_max / m)), cap)


def resolve(model, path: str) -> list:
    """All (name, tensor) pairs whose name equals or extends the path."""
    hits = [
        (name, t)
        for name, t in model.named_parameters()
        if name == path or name.startswith(path + ".")
    ]
    if not hits:
        raise SelectorError(f"selector {path!r} matches no parameters")
    return hits


def _fan_in(name: str, t: Tensor) -> int:
    shape = t.data.shape
    if len(shape) == 4:          # conv kernel [C_out, C_in, k, k]
        return shape[1] * shape[2] * shape[3]
    if len(shape) == 5:          # candidate bank [K, C_out, C_in, k, k]
        return shape[2] * shape[3] * shape[4]
    if len(shape) == 2:          # matrix weights / embedding rows
        return shape[1]
    if len(shape) == 1:
        return shape[0]
    return 1


def reset_layer(model, selector: LayerSelector, rng: Rng):
    """Fresh-random copy of one parameter group; the original is untouched.

    Kernels and matrices redraw uniform within +-sqrt(1/fan_in); bias-like
    leaves zero out.  Tensors redraw in named_parameters order from the one
    stream, so a seed pins the whole reset.  Frozen-generator caches on the
    copy are refreshed afterwards.
    """
    probe = copy.deepcopy(model)
    for name, t in resolve(probe, selector.path):
        leaf = name.rsplit(".", 1)[-1]
        if leaf in _BIAS_LEAVES:
            t.data[...] = 0.0
        else:
            bound = (1.0 / _fan_in(name, t)) ** 0.5
            t.data[...] = rng.fill_uniform(t.data.shape, -bound, bound)
    if hasattr(probe, "refresh_caches"):
        probe.refresh_caches()
    return probe


def _thread_count() -> int:
    raw = os.environ.get("REDLAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"REDLAB_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def _forward_all(model, images: list) -> list:
    """Per-image forwards, optionally threaded; results in input order."""
    workers = _thread_count()
    if workers == 1 or len(images) <= 1:
        return [model.forward(x) for x in images]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(model.forward, images))


def dmr(
    model,
    selectors: list,
    images: list,
    seed: int,
    i_max: float = 1.0,
    cap: float = DEFAULT_CAP_DB,
) -> DmrReport:
    """Mean capped log-MSE between the frozen model and its per-layer resets.

    Selector i resets with the child stream splitmix64(seed XOR i).  Larger
    values mean probed outputs barely moved — higher redundancy.
    """
    if not selectors:
        raise ContractError("dmr needs at least one selector")
    if not images:
        raise ContractError("dmr needs at least one image")
    if not getattr(model, "frozen", False):
        raise ContractError("dmr probes a frozen model; call freeze() first")
    base = _forward_all(model, images)
    n, m = len(selectors), len(images)
    terms = np.empty((n, m))
    for i, sel in enumerate(selectors):
        probe = reset_layer(model, sel, Rng(child_seed(seed, i)))
        outs = _forward_all(probe, images)
        for j in range(m):
            terms[i, j] = psnr(base[j], outs[j], i_max, cap)
    return DmrReport(
        selectors=list(selectors),
        n=n,
        m=m,
        terms=terms,
        dmr=float(terms.mean()),
        i_max=i_max,
        cap=cap,
        seed=seed,
    )


def poi(
    model,
    selector: LayerSelector,
    low_images: list,
    ref_images: list,
    seed: int,
    i_max: float = 1.0,
) -> float:
    """Fraction of images scoring strictly better after the reset."""
    if len(low_images) != len(ref_images):
        raise ContractError(
            f"paired lists differ in length: {len(low_images)} vs {len(ref_images)}"
        )
    if not low_images:
        raise ContractError("poi needs at least one image pair")
    probe = reset_layer(model, selector, Rng(child_seed(seed, 0)))
    wins = 0
    for low, ref in zip(low_images, ref_images):
        before = psnr(model.forward(low), ref, i_max)
        after = psnr(probe.forward(low), ref, i_max)
        if after > before:
            wins += 1
    return wins / len(low_images)


def probe_sweep(
    model,
    selectors: list,
    low_images: list,
    ref_images: list,
    seeds: list,
    i_max: float = 1.0,
) -> list:
    """One ProbeResult per (selector, seed) over the paired image set."""
    if not selectors or not seeds:
        raise ContractError("probe_sweep needs selectors and seeds")
    if len(low_images) != len(ref_images) or not low_images:
        raise ContractError("probe_sweep needs nonempty paired image lists")
    base_out = _forward_all(model, low_images)
    before = [psnr(out, ref, i_max) for out, ref in zip(base_out, ref_images)]
    rows = []
    for seed in seeds:
        for i, sel in enumerate(selectors):
            probe = reset_layer(model, sel, Rng(child_seed(seed, i)))
            outs = _forward_all(probe, low_images)
            after = [psnr(out, ref, i_max) for out, ref in zip(outs, ref_images)]
            wins = sum(1 for b, a in zip(before, after) if a > b)
            rows.append(
                ProbeResult(
                    selector=sel,
                    seed=seed,
                    before=list(before),
                    after=after,
                    delta_psnr_mean=float(np.mean(after) - np.mean(before)),
                    poi=wins / len(low_images),
                )
            )
    return rows


def mean_delta_by_kind(rows: list) -> dict:
    """Mean PSNR change per selector kind, e.g. attention vs feedforward."""
    sums: dict = {}
    counts: dict = {}
    for row in rows:
        sums[row.selector.kind] = sums.get(row.selector.kind, 0.0) + row.delta_psnr_mean
        counts[row.selector.kind] = counts.get(row.selector.kind, 0) + 1
    return {kind: sums[kind] / counts[kind] for kind in sums}


def default_selectors(model) -> list:
    """Standard probe groups for a model, derived from its parameter names.

    Reallocation and candidate-bank groups tag as dynamic, attention
    projections as attention, plain convolutions as static.  Temperature
    scalars stay out of the default set (address them explicitly if wanted).
    """
    seen = {}
    for name, _ in model.named_parameters():
        if ".adr." in name:
            path = name.split(".adr.")[0] + ".adr"
            kind = "dynamic"
        elif ".dynconv." in name:
            path = name.split(".dynconv.")[0] + ".dynconv"
            kind = "dynamic"
        elif ".qkv." in name:
            path = name.split(".qkv.")[0] + ".qkv"
            kind = "attention"
        elif name.endswith(".tau"):
            continue
        elif ".attn.out." in name:
            path = name.rsplit(".", 1)[0]
            kind = "attention"
        else:
            path = name.rsplit(".", 1)[0] if "." in name else name
            kind = "static"
        if path not in seen:
            seen[path] = LayerSelector(path, kind)
    return list(seen.values())


def parse_selector(spec_str: str) -> LayerSelector:
    """Parse "path" or "path:kind" (kind defaults to static)."""
    if ":" in spec_str:
        path, kind = spec_str.rsplit(":", 1)
        return LayerSelector(path.strip(), kind.strip())
    return LayerSelector(spec_str.strip(), "static")


def write_dmr_csv(report: DmrReport, path: str) -> None:
    """One row per (selector, image) term."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["selector", "kind", "image_index", "term_db"])
        for i, sel in enumerate(report.selectors):
            for j in range(report.m):
                writer.writerow([sel.path, sel.kind, j, repr(float(report.terms[i, j]))])


def dmr_summary(report: DmrReport) -> dict:
    return {
        "dmr": report.dmr,
        "n": report.n,
        "m": report.m,
        "cap": report.cap,
        "I_max": report.i_max,
        "seed": report.seed,
    }


def write_probe_csv(rows: list, path: str) -> None:
    """One row per (selector, seed) probe with its aggregate statistics."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["selector", "kind", "seed", "psnr_before_mean", "psnr_after_mean",
             "delta_psnr_mean", "poi"]
        )
        for row in rows:
            writer.writerow(
                [
                    row.selector.path,
                    row.selector.kind,
                    row.seed,
                    repr(float(np.mean(row.before))),
                    repr(float(np.mean(row.after))),
                    repr(row.delta_psnr_mean),
                    repr(row.poi),
                ]
            )
