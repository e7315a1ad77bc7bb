"""Ground-truth generation: exhaustive RA and the cycle-by-FF grid simulator.

The exhaustive oracle enumerates every fault site of a desk-scale network and
evaluates the test-set accuracy under each, yielding the exact expected-value
RA plus a reusable per-site accuracy archive. The grid simulator drops pins
on a 2-D (flip-flop x cycle) cell grid and checks that empirical class
frequencies match the analytical site probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .microdnn import (
    ActivationCache,
    EvalSet,
    FaultSemantics,
    MicroNetwork,
    accuracy,
    make_fault,
)
from .probtransfer import RAResult, SiteProbabilityTable, build_table, ra_expected
from .profile import (
    CONTROL_LAYER,
    CONTROL_TYPES,
    DATAPATH_TYPES,
    AcceleratorConfig,
    FFType,
    NetworkProfile,
    SoftwareFaultSite,
)


class ScaleGuardExceeded(RuntimeError):
    """The exhaustive campaign would exceed the configured inference budget."""


@dataclass
class SiteArchive:
    """Per-site accuracies A(j), indexed by (layer, type) -> (var, bit)."""

    entries: dict[tuple[int, FFType], np.ndarray]
    sa: float
    semantics: FaultSemantics = FaultSemantics.TRUE

    def evaluator(self, site: SoftwareFaultSite) -> float:
        arr = self.entries[(site.layer_id, site.var_type)]
        return float(arr[site.var_index, site.bit_pos])

    def is_crash_site(self, site: SoftwareFaultSite) -> bool:
        return (
            self.semantics is FaultSemantics.TRUE
            and site.var_type is FFType.CONTROL_GLOBAL
        )

    def class_mean(self, layer_id: int, var_type: FFType, bit_pos: int) -> float:
        return float(self.entries[(layer_id, var_type)][:, bit_pos].mean())

    def save(self, path: str | Path) -> None:
        data = {
            f"{lid}|{t.value}": arr for (lid, t), arr in self.entries.items()
        }
        np.savez_compressed(
            path, __sa=np.float64(self.sa),
            __semantics=np.bytes_(self.semantics.value.encode()), **data,
        )

    @classmethod
    def load(cls, path: str | Path) -> "SiteArchive":
        with np.load(path) as z:
            sa = float(z["__sa"])
            semantics = FaultSemantics(bytes(z["__semantics"]).decode())
            entries = {}
            for key in z.files:
                if key.startswith("__"):
                    continue
                lid, tname = key.split("|")
                entries[(int(lid), FFType(tname))] = z[key]
        return cls(entries=entries, sa=sa, semantics=semantics)


def exhaustive_ra(
    profile: NetworkProfile,
    config: AcceleratorConfig,
    net: MicroNetwork,
    evalset: EvalSet,
    semantics: FaultSemantics = FaultSemantics.TRUE,
    uf: dict[int, float] | None = None,
    max_inferences: int = 10**6,
    progress=None,
) -> tuple[RAResult, SiteArchive]:
    """Evaluate A(j) for every fault site and return the exact RA.

    Crash classes cost no inference (their accuracy is 0 by definition).
    Raises ScaleGuardExceeded when sites x evalset would exceed
    `max_inferences`.
    """
    table = build_table(profile, config)
    crash = [
        c for c in table.classes
        if semantics is FaultSemantics.TRUE and c.var_type is FFType.CONTROL_GLOBAL
    ]
    n_eval_sites = table.total_sites - sum(
        c.var_count * table.bit_width for c in crash
    )
    if n_eval_sites * evalset.size > max_inferences:
        raise ScaleGuardExceeded(
            f"{n_eval_sites} sites x {evalset.size} inputs exceeds "
            f"budget of {max_inferences} inferences"
        )
    sa = accuracy(net, evalset)
    cache = ActivationCache(net, evalset)
    entries: dict[tuple[int, FFType], np.ndarray] = {}
    done = 0
    for c in table.classes:
        arr = np.zeros((c.var_count, table.bit_width), dtype=np.float64)
        if c in crash:
            entries[(c.layer_id, c.var_type)] = arr
            continue
        for v in range(c.var_count):
            for b in range(table.bit_width):
                site = SoftwareFaultSite(c.layer_id, c.var_type, v, b)
                fault = make_fault(site, config, semantics)
                arr[v, b] = accuracy(net, evalset, fault, profile, cache)
            done += table.bit_width
            if progress is not None:
                progress(done, n_eval_sites)
        entries[(c.layer_id, c.var_type)] = arr
    archive = SiteArchive(entries=entries, sa=sa, semantics=semantics)
    uf_fn = None if uf is None else (lambda lid: uf.get(lid, 1.0))
    result = ra_expected(table, archive.evaluator, sa, uf_fn)
    return result, archive


def live_evaluator(
    net: MicroNetwork,
    evalset: EvalSet,
    profile: NetworkProfile,
    config: AcceleratorConfig,
    semantics: FaultSemantics = FaultSemantics.TRUE,
):
    """A site -> accuracy callable backed by live fault injection, with the
    clean activations precomputed once and results memoized per site."""
    cache = ActivationCache(net, evalset)
    memo: dict[SoftwareFaultSite, float] = {}

    def evaluate(site: SoftwareFaultSite) -> float:
        a = memo.get(site)
        if a is None:
            fault = make_fault(site, config, semantics)
            a = accuracy(net, evalset, fault, profile, cache)
            memo[site] = a
        return a

    return evaluate


# --- grid simulator --------------------------------------------------------

@dataclass
class GridModel:
    """A (flip-flop row) x (cycle column) cell grid.

    Columns are partitioned across layers proportional to MAC counts; control
    rows span every column (a control variable lives in its FF for the whole
    run). A layer's cells are idle with probability (1 - utilization); cells
    of a datapath type a layer owns no variables of are unoccupied.
    """

    profile: NetworkProfile
    config: AcceleratorConfig
    cols: dict[int, int]  # layer_id -> column count
    rows: dict[FFType, int]
    total_cols: int = field(init=False)

    MAX_CELLS = 10**7

    def __post_init__(self):
        self.total_cols = sum(self.cols.values())

    @classmethod
    def build(
        cls,
        profile: NetworkProfile,
        config: AcceleratorConfig,
        target_cols: int = 100_000,
    ) -> "GridModel":
        """Scale columns so the grid stays within MAX_CELLS; a column may
        stand for a block of real cycles, which leaves the probability
        ratios untouched."""
        n_rows = config.total_ffs
        cols_budget = min(target_cols, cls.MAX_CELLS // max(n_rows, 1))
        cols_budget = max(cols_budget, len(profile.layers))
        total = profile.total_macs
        shares = [(l.layer_id, l.mac_count * cols_budget / total) for l in profile.layers]
        cols = {lid: max(int(s), 1) for lid, s in shares}
        # largest-remainder correction toward the exact budget
        remainder = cols_budget - sum(cols.values())
        for lid, s in sorted(shares, key=lambda t: t[1] - int(t[1]), reverse=True):
            if remainder <= 0:
                break
            cols[lid] += 1
            remainder -= 1
        rows = {t: config.ff_count.get(t, 0) for t in FFType}
        return cls(profile=profile, config=config, cols=cols, rows=rows)

    def cell_count(self) -> int:
        dp_rows = sum(self.rows[t] for t in DATAPATH_TYPES)
        ctl_rows = sum(self.rows[t] for t in CONTROL_TYPES)
        return dp_rows * self.total_cols + ctl_rows * self.total_cols

    def occupied_classes(self) -> list[tuple[int, FFType]]:
        out = []
        for layer in self.profile.layers:
            for t in DATAPATH_TYPES:
                if layer.var_count.get(t, 0) >= 1 and self.rows[t] > 0:
                    out.append((layer.layer_id, t))
        for t in CONTROL_TYPES:
            if self.profile.control_var_count.get(t, 0) >= 1 and self.rows[t] > 0:
                out.append((CONTROL_LAYER, t))
        return out


@dataclass
class GridTally:
    counts: dict[tuple[int, FFType], int]
    idle: int
    pins: int

    def occupied_pins(self) -> int:
        return sum(self.counts.values())

    def empirical(self, layer_id: int, var_type: FFType) -> float:
        return self.counts[(layer_id, var_type)] / self.occupied_pins()


def grid_simulate(
    grid: GridModel,
    pin_count: int,
    seed: int,
    raw_fit_weights: dict[FFType, float] | None = None,
) -> GridTally:
    """Drop `pin_count` pins on the grid; pins land on a cell with
    probability proportional to the cell's row's raw FIT weight. Pins on
    idle or unoccupied cells are tallied separately."""
    if pin_count < 1:
        raise ValueError("pin_count must be >= 1")
    if grid.cell_count() <= 0:
        raise ValueError("empty grid")
    weights = raw_fit_weights or grid.config.raw_fit
    outcomes: list[tuple[int, FFType] | None] = []
    probs: list[float] = []
    # cell mass of a (layer, type) block = rows * cols * weight
    mass_total = 0.0
    blocks: list[tuple[tuple[int, FFType] | None, float]] = []
    for layer in grid.profile.layers:
        ncols = grid.cols[layer.layer_id]
        for t in DATAPATH_TYPES:
            w = weights.get(t, 0.0) * grid.rows[t] * ncols
            if w <= 0:
                continue
            if layer.var_count.get(t, 0) >= 1:
                blocks.append(((layer.layer_id, t), w * layer.utilization))
                if layer.utilization < 1.0:
                    blocks.append((None, w * (1.0 - layer.utilization)))
            else:
                blocks.append((None, w))  # unoccupied: no variable lives here
    for t in CONTROL_TYPES:
        w = weights.get(t, 0.0) * grid.rows[t] * grid.total_cols
        if w <= 0:
            continue
        if grid.profile.control_var_count.get(t, 0) >= 1:
            blocks.append(((CONTROL_LAYER, t), w))
        else:
            blocks.append((None, w))
    for key, w in blocks:
        outcomes.append(key)
        probs.append(w)
        mass_total += w
    if mass_total <= 0:
        raise ValueError("grid carries no probability mass")
    p = np.asarray(probs) / mass_total
    rng = np.random.default_rng(seed)
    draws = rng.multinomial(pin_count, p)
    counts: dict[tuple[int, FFType], int] = {}
    idle = 0
    for key, n in zip(outcomes, draws):
        if key is None:
            idle += int(n)
        else:
            counts[key] = counts.get(key, 0) + int(n)
    return GridTally(counts=counts, idle=idle, pins=pin_count)


def measured_uf(grid: GridModel) -> dict[int, float]:
    """Per-layer fraction of datapath cells holding live data."""
    out = {}
    dp_rows = sum(grid.rows[t] for t in DATAPATH_TYPES)
    for layer in grid.profile.layers:
        total = dp_rows * grid.cols[layer.layer_id]
        if total == 0:
            out[layer.layer_id] = 0.0
            continue
        occupied = 0.0
        for t in DATAPATH_TYPES:
            if layer.var_count.get(t, 0) >= 1:
                occupied += grid.rows[t] * grid.cols[layer.layer_id] * layer.utilization
        out[layer.layer_id] = occupied / total
    return out


def analytical_class_probs(
    profile: NetworkProfile, config: AcceleratorConfig
) -> dict[tuple[int, FFType], float]:
    """Per-(layer, type) total site probability from the analytical table,
    for comparison against grid tallies."""
    table = build_table(profile, config)
    return {
        (c.layer_id, c.var_type): c.total_prob(table.bit_width)
        for c in table.classes
    }
