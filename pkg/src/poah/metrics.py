"""Per-block timestamps and the latency decomposition built from them.

Five stamps are taken for every (block, client) pair, all in integer ms::

    t_i   transaction created at the proposer
    t_sr  block received at the authenticator
    t_sh  authenticator finished validation and hashing
    t_cr  validated block received at the client
    t_ch  client appended the block

so that ``dt_tx == uplink + dt_sa + downlink + dt_ca`` for every row.
"""

from __future__ import annotations

import csv
import math
import statistics
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, List, Tuple


class TimelineError(ValueError):
    """Timestamps out of order."""


@dataclass(frozen=True)
class BlockTimeline:
    t_i: int
    t_sr: int
    t_sh: int
    t_cr: int
    t_ch: int
    block: str = ""
    proposer: str = ""
    authenticator: str = ""
    client: str = ""

    def check(self) -> None:
        if not (self.t_i <= self.t_sr <= self.t_sh <= self.t_cr <= self.t_ch):
            raise TimelineError(
                f"unordered timeline t_i={self.t_i} t_sr={self.t_sr} t_sh={self.t_sh} "
                f"t_cr={self.t_cr} t_ch={self.t_ch}"
            )


def dt_sa(tl: BlockTimeline) -> int:
    """Authenticator processing time, t_sh - t_sr."""
    tl.check()
    return tl.t_sh - tl.t_sr


def dt_ca(tl: BlockTimeline) -> int:
    """Client check-and-append time, t_ch - t_cr."""
    tl.check()
    return tl.t_ch - tl.t_cr


def dt_tx(tl: BlockTimeline) -> int:
    """End-to-end transaction time, t_ch - t_i."""
    tl.check()
    return tl.t_ch - tl.t_i


def uplink(tl: BlockTimeline) -> int:
    tl.check()
    return tl.t_sr - tl.t_i


def downlink(tl: BlockTimeline) -> int:
    tl.check()
    return tl.t_cr - tl.t_sh


@dataclass
class MetricsLog:
    rows: List[BlockTimeline] = field(default_factory=list)
    metadata: Dict[str, object] = field(default_factory=dict)

    def add(self, tl: BlockTimeline) -> None:
        tl.check()
        self.rows.append(tl)

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class Stat:
    count: int
    mean: float
    std: float


def summarize(values: Iterable[float]) -> Stat:
    """Mean and population standard deviation (divisor n)."""
    values = list(values)
    if not values:
        raise ValueError("cannot summarize an empty sample")
    return Stat(len(values), statistics.fmean(values), statistics.pstdev(values))


ADDING_METRICS = ("dt_sa", "dt_ca")
COMMUNICATION_METRICS = ("uplink", "downlink", "dt_tx")


def _samples(log: MetricsLog) -> Dict[Tuple[str, str], List[int]]:
    out: Dict[Tuple[str, str], List[int]] = defaultdict(list)
    seen = set()
    # a block's authenticator-side legs are counted once, not once per client
    for tl in sorted(log.rows, key=lambda r: (r.block, r.authenticator, r.client)):
        key = (tl.block, tl.authenticator)
        if key not in seen:
            seen.add(key)
            out[(tl.authenticator, "dt_sa")].append(dt_sa(tl))
            out[(tl.authenticator, "uplink")].append(uplink(tl))
        out[(tl.client, "dt_ca")].append(dt_ca(tl))
        out[(tl.client, "downlink")].append(downlink(tl))
        out[(tl.client, "dt_tx")].append(dt_tx(tl))
    return out


def aggregate(log: MetricsLog) -> Dict[Tuple[str, str], Stat]:
    """Per-(node, metric) statistics.

    Authenticator-side metrics (dt_sa, uplink) are keyed by authenticator and
    client-side ones (dt_ca, downlink, dt_tx) by client.
    """
    if not log.rows:
        raise ValueError("empty metrics log")
    return {key: summarize(vals) for key, vals in sorted(_samples(log).items())}


def histogram(values: Iterable[int], bin_width: int = 10) -> List[Tuple[int, int, int]]:
    """Contiguous ``(bin_start, bin_end, count)`` bins covering the sample."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    values = list(values)
    if not values:
        return []
    lo = math.floor(min(values) / bin_width) * bin_width
    hi = math.floor(max(values) / bin_width) * bin_width
    counts = defaultdict(int)
    for v in values:
        counts[math.floor(v / bin_width) * bin_width] += 1
    return [(b, b + bin_width, counts[b]) for b in range(lo, hi + bin_width, bin_width)]


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


TIMELINE_COLUMNS = [f.name for f in fields(BlockTimeline)] + ["dt_sa", "dt_ca", "dt_tx", "uplink", "downlink"]
STAT_COLUMNS = ["node", "metric", "count", "mean_ms", "std_pop_ms"]


def write_csvs(log: MetricsLog, out_dir, bin_width: int = 10) -> List[Path]:
    """Write timelines.csv, adding.csv, communication.csv and histograms/."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    path = out_dir / "timelines.csv"
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(TIMELINE_COLUMNS)
        for tl in log.rows:
            row = asdict(tl)
            w.writerow([row[c] for c in TIMELINE_COLUMNS[:9]]
                       + [dt_sa(tl), dt_ca(tl), dt_tx(tl), uplink(tl), downlink(tl)])
    written.append(path)

    stats = aggregate(log) if log.rows else {}
    for name, metrics in (("adding.csv", ADDING_METRICS), ("communication.csv", COMMUNICATION_METRICS)):
        path = out_dir / name
        with open(path, "w", newline="") as fh:
            w = _writer(fh)
            w.writerow(STAT_COLUMNS)
            for (node, metric), st in stats.items():
                if metric in metrics:
                    w.writerow([node, metric, st.count, f"{st.mean:.3f}", f"{st.std:.3f}"])
        written.append(path)

    hist_dir = out_dir / "histograms"
    hist_dir.mkdir(exist_ok=True)
    for (node, metric), values in sorted(_samples(log).items()):
        path = hist_dir / f"{node}_{metric}.csv"
        with open(path, "w", newline="") as fh:
            w = _writer(fh)
            w.writerow(["bin_start", "bin_end", "count"])
            w.writerows(histogram(values, bin_width))
        written.append(path)
    return written


def read_stats(path) -> Dict[Tuple[str, str], Stat]:
    """Parse adding.csv / communication.csv back into Stat values."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[(row["node"], row["metric"])] = Stat(int(row["count"]), float(row["mean_ms"]), float(row["std_pop_ms"]))
    return out
