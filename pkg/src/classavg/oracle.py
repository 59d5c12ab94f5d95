"""Empirical strong-equivalence envelope between exact and approximate W1.

Draws seeded random normalized image pairs, solves each exactly, and
records the ratio exact/approx.  The envelope [c, C] over a corpus is the
operating certificate for the fast metric: later runs must stay inside a
persisted envelope, and C/c stays bounded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .transport import SIZE_CAP, SizeCapError, exact_wp
from .wavelet import approx_w1, dwt2


@dataclass
class EquivalenceReport:
    size: int
    pairs: int
    seed: int
    pixel_size: float
    ratios: list[float]
    exact: list[float]
    approx: list[float]
    skipped_identical: int = 0

    @property
    def envelope(self) -> tuple[float, float]:
        return (min(self.ratios), max(self.ratios))

    @property
    def spread(self) -> float:
        c, big_c = self.envelope
        return big_c / c

    def to_json(self) -> str:
        c, big_c = self.envelope
        payload = {
            "size": self.size,
            "pairs": self.pairs,
            "seed": self.seed,
            "pixel_size": self.pixel_size,
            "envelope_c": repr(c),
            "envelope_C": repr(big_c),
            "spread": repr(self.spread),
            "skipped_identical": self.skipped_identical,
            "ratios": [repr(r) for r in self.ratios],
            "exact": [repr(v) for v in self.exact],
            "approx": [repr(v) for v in self.approx],
        }
        return json.dumps(payload, indent=1, sort_keys=True)


def random_normalized_pair(rng: np.random.Generator, size: int):
    a = rng.random((size, size))
    b = rng.random((size, size))
    return a / a.sum(), b / b.sum()


def run_equivalence(size: int, pairs: int, seed: int, pixel_size: float | None = None,
                    inject_identical: bool = False) -> EquivalenceReport:
    """Measure the exact/approx W1 ratio over seeded random pairs.

    ``inject_identical`` prepends one identical pair, whose 0/0 ratio is
    skipped and counted instead of polluting the envelope.
    """
    if size > SIZE_CAP:
        raise SizeCapError(f"oracle capped at {SIZE_CAP}, got size {size}")
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    px = 2.0 / size if pixel_size is None else pixel_size
    rng = np.random.default_rng([seed, 3])
    todo = []
    if inject_identical:
        a, _ = random_normalized_pair(rng, size)
        todo.append((a, a.copy()))
    todo.extend(random_normalized_pair(rng, size) for _ in range(pairs))
    ratios, exacts, approxs = [], [], []
    skipped = 0
    for a, b in todo:
        approx = approx_w1(dwt2(a), dwt2(b), px)
        if approx == 0.0:
            skipped += 1
            continue
        exact, _ = exact_wp(a, b, p=1, pixel_size=px)
        ratios.append(exact / approx)
        exacts.append(exact)
        approxs.append(approx)
    if not ratios:
        raise ValueError("all pairs degenerate; no ratios measured")
    return EquivalenceReport(size=size, pairs=pairs, seed=seed, pixel_size=px,
                             ratios=ratios, exact=exacts, approx=approxs,
                             skipped_identical=skipped)


def save_report(report: EquivalenceReport, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "envelope.json"
    path.write_text(report.to_json())
    import csv

    with open(out / "pairs.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair", "exact_w1", "approx_w1", "ratio"])
        for i, (e, a, r) in enumerate(zip(report.exact, report.approx, report.ratios)):
            writer.writerow([i, repr(e), repr(a), repr(r)])
    return path
