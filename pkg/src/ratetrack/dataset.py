"""Dataset persistence: manifest.json plus one wide CSV per route.

Trace rows are `t, snr_db_1..M, rate_bps_1..M` and, once masked,
additionally `meas_1..M, obs_snr_db_1..M` with empty cells for unmeasured
observations. All floats are written with full round-trip precision so
re-runs from the same seed are byte-identical.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import RouteTrace
from .links import LinkConfig

SCHEMA_VERSION = 1
RNG_ALGORITHM = "numpy-pcg64/seedsequence([master_seed, route_index])"
_SPLIT_STREAM = 0x5EED5   # fixed sub-stream id for the split permutation


def _fmt(x: float) -> str:
    return repr(float(x))


def split_routes(n_routes: int, master_seed: int) -> dict[str, list[int]]:
    """Deterministic 70/15/15 route split; rounding remainder goes to train."""
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([master_seed, _SPLIT_STREAM])))
    order = [int(i) for i in rng.permutation(n_routes)]
    n_val = int(0.15 * n_routes)
    n_test = int(0.15 * n_routes)
    n_train = n_routes - n_val - n_test
    return {
        "train": sorted(order[:n_train]),
        "val": sorted(order[n_train:n_train + n_val]),
        "test": sorted(order[n_train + n_val:]),
    }


@dataclass
class Dataset:
    path: Path
    manifest: dict
    links: list[LinkConfig]
    routes: list[RouteTrace] = field(default_factory=list)

    @property
    def masked(self) -> bool:
        return bool(self.manifest.get("bandit"))

    def routes_for(self, split: str) -> list[RouteTrace]:
        idx = set(self.manifest["split"][split])
        return [r for r in self.routes if r.route_index in idx]


def _route_filename(index: int) -> str:
    return f"route_{index:04d}.csv"


def write_route_csv(path: Path, trace: RouteTrace) -> None:
    m = trace.n_links
    header = (["t"]
              + [f"snr_db_{i + 1}" for i in range(m)]
              + [f"rate_bps_{i + 1}" for i in range(m)])
    masked = trace.mask is not None
    if masked:
        header += [f"meas_{i + 1}" for i in range(m)] + [f"obs_snr_db_{i + 1}" for i in range(m)]
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for t in range(trace.steps):
            row = [str(t)]
            row += [_fmt(v) for v in trace.snr_db[t]]
            row += [_fmt(v) for v in trace.rate_bps[t]]
            if masked:
                row += [str(int(v)) for v in trace.mask[t]]
                row += ["" if np.isnan(v) else _fmt(v) for v in trace.obs_snr_db[t]]
            w.writerow(row)


def read_route_csv(path: Path, route_index: int, seed: int, mobility: str,
                   period_ms: float, n_links: int) -> RouteTrace:
    with path.open(newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = list(reader)
    masked = any(h.startswith("meas_") for h in header)
    steps = len(rows)
    snr = np.empty((steps, n_links))
    rate = np.empty((steps, n_links))
    mask = np.zeros((steps, n_links), dtype=np.int64) if masked else None
    obs = np.full((steps, n_links), np.nan) if masked else None
    for t, row in enumerate(rows):
        snr[t] = [float(v) for v in row[1:1 + n_links]]
        rate[t] = [float(v) for v in row[1 + n_links:1 + 2 * n_links]]
        if masked:
            mask[t] = [int(v) for v in row[1 + 2 * n_links:1 + 3 * n_links]]
            obs[t] = [np.nan if v == "" else float(v) for v in row[1 + 3 * n_links:1 + 4 * n_links]]
    return RouteTrace(route_index=route_index, seed=seed, mobility=mobility,
                      period_ms=period_ms, snr_db=snr, rate_bps=rate,
                      mask=mask, obs_snr_db=obs)


def write_dataset(path: Path, manifest: dict, routes: list[RouteTrace]) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with (path / "manifest.json").open("w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    for trace in routes:
        write_route_csv(path / _route_filename(trace.route_index), trace)


def load_dataset(path: Path) -> Dataset:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported dataset schema {manifest.get('schema_version')}")
    links = [LinkConfig.from_dict(d) for d in manifest["links"]]
    routes = []
    for entry in manifest["routes"]:
        trace = read_route_csv(path / _route_filename(entry["index"]),
                               route_index=entry["index"], seed=entry["seed"],
                               mobility=manifest["mobility"],
                               period_ms=manifest["period_ms"],
                               n_links=len(links))
        routes.append(trace)
    return Dataset(path=path, manifest=manifest, links=links, routes=routes)


def build_manifest(master_seed: int, mobility: str, routes: list[RouteTrace],
                   links: list[LinkConfig], steps: int) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "master_seed": master_seed,
        "rng_algorithm": RNG_ALGORITHM,
        "mobility": mobility,
        "n_routes": len(routes),
        "steps": steps,
        "period_ms": 50.0,
        "links": [l.to_dict() for l in links],
        "routes": [{"index": r.route_index, "seed": r.seed} for r in routes],
        "split": split_routes(len(routes), master_seed),
        "bandit": None,
    }
