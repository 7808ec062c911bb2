"""Layer-wise refresh budgets: a piecewise Gaussian bump over layer depth,
a drift profiler that measures how many tokens move per layer per step,
and a fitter that anchors the bump to a measured profile.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import row_cosine

DEFAULT_FLOOR = 0.02
TAP_POINTS = ("layer_input", "attn_input", "attn_output", "layer_output")


def rho_of_layer(rho_first: float, rho_peak: float, rho_last: float,
                 peak_layer: float, n_layers: int, layer: int) -> float:
    """Update ratio at a 1-based layer index.

    Two Gaussian half-bumps share the peak: the left one decays toward
    rho_first at layer 1, the right one toward rho_last at layer L. The peak
    must be strictly interior, else one half has a zero-width denominator.
    """
    if not 1 <= layer <= n_layers:
        raise ValueError(f"layer {layer} out of range [1, {n_layers}]")
    if not 1 < peak_layer < n_layers:
        raise ValueError(f"peak layer must lie strictly inside (1, {n_layers})")
    if layer <= peak_layer:
        frac = (layer - peak_layer) / (peak_layer - 1)
        return rho_peak * math.exp(math.log(rho_first / rho_peak) * frac * frac)
    frac = (layer - peak_layer) / (n_layers - peak_layer)
    return rho_peak * math.exp(math.log(rho_last / rho_peak) * frac * frac)


@dataclass(frozen=True)
class BudgetSchedule:
    n_layers: int
    peak_layer: float
    rho_first: float
    rho_peak: float
    rho_last: float

    def __post_init__(self):
        if self.n_layers < 2:
            raise ValueError("schedule needs at least 2 layers")
        if not 1 < self.peak_layer < self.n_layers:
            raise ValueError(
                f"peak_layer={self.peak_layer} must lie strictly inside (1, {self.n_layers})")
        for name in ("rho_first", "rho_peak", "rho_last"):
            val = getattr(self, name)
            if not 0.0 < val <= 1.0:
                raise ValueError(f"{name}={val} outside (0, 1]")
        if self.rho_peak < max(self.rho_first, self.rho_last):
            raise ValueError("rho_peak must dominate both endpoint ratios")

    def ratio(self, layer: int) -> float:
        return rho_of_layer(self.rho_first, self.rho_peak, self.rho_last,
                            self.peak_layer, self.n_layers, layer)

    @property
    def evaluated(self) -> tuple[float, ...]:
        return tuple(self.ratio(l) for l in range(1, self.n_layers + 1))

    def mean_ratio(self) -> float:
        return float(np.mean(self.evaluated))

    @classmethod
    def uniform(cls, n_layers: int, rho: float) -> "BudgetSchedule":
        """Flat schedule: both half-bumps collapse because all anchors agree."""
        return cls(n_layers=n_layers, peak_layer=(1 + n_layers) / 2.0,
                   rho_first=rho, rho_peak=rho, rho_last=rho)

    @classmethod
    def default_adaptive(cls, n_layers: int, rho_peak: float = 0.25,
                         rho_edge: float = 0.08) -> "BudgetSchedule":
        peak = max(2, min(n_layers - 1, round(0.45 * n_layers)))
        return cls(n_layers=n_layers, peak_layer=float(peak),
                   rho_first=rho_edge, rho_peak=rho_peak, rho_last=rho_edge)

    def to_json(self) -> str:
        return json.dumps({"L": self.n_layers, "l_p": self.peak_layer,
                           "rho_1": self.rho_first, "rho_p": self.rho_peak,
                           "rho_L": self.rho_last})

    @classmethod
    def from_json(cls, text: str) -> "BudgetSchedule":
        data = json.loads(text)
        return cls(n_layers=int(data["L"]), peak_layer=float(data["l_p"]),
                   rho_first=float(data["rho_1"]), rho_peak=float(data["rho_p"]),
                   rho_last=float(data["rho_L"]))


@dataclass
class DriftProfile:
    """Fraction of tokens per (layer, step transition) whose hidden state moved
    below the similarity threshold tau, averaged over sample runs."""

    tau: float
    fractions: np.ndarray  # (n_layers, n_steps - 1)
    seeds: tuple[int, ...]
    seq_len: int
    n_steps: int
    tap: str = "layer_input"
    config_digest: str = ""

    def layer_means(self) -> np.ndarray:
        return self.fractions.mean(axis=1)

    def save_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["layer", "step", "fraction"])
            for layer in range(self.fractions.shape[0]):
                for step in range(self.fractions.shape[1]):
                    writer.writerow([layer + 1, step + 1,
                                     f"{self.fractions[layer, step]:.8f}"])
        sidecar = {"tau": self.tau, "seeds": list(self.seeds), "seq_len": self.seq_len,
                   "n_steps": self.n_steps, "tap": self.tap,
                   "config_digest": self.config_digest}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def load_csv(cls, path) -> "DriftProfile":
        path = Path(path)
        rows = []
        with path.open(newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append((int(rec["layer"]), int(rec["step"]), float(rec["fraction"])))
        n_layers = max(r[0] for r in rows)
        n_trans = max(r[1] for r in rows)
        fractions = np.zeros((n_layers, n_trans))
        for layer, step, frac in rows:
            fractions[layer - 1, step - 1] = frac
        meta_path = path.with_suffix(path.suffix + ".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(tau=float(meta.get("tau", 0.95)), fractions=fractions,
                   seeds=tuple(meta.get("seeds", ())),
                   seq_len=int(meta.get("seq_len", 0)),
                   n_steps=n_trans + 1, tap=meta.get("tap", "layer_input"),
                   config_digest=meta.get("config_digest", ""))


def drift_fraction(states_prev: np.ndarray, states_cur: np.ndarray, tau: float) -> float:
    """Fraction of rows whose cosine similarity to their previous state is < tau."""
    sims = row_cosine(states_prev, states_cur)
    return float(np.mean(sims < tau))


def profile_drift(weights, seeds, tau: float, steps: int, *,
                  prompt_len: int = 8, tap: str = "layer_input") -> DriftProfile:
    """Measure per-layer drifting-token fractions over dense (uncached) decodes.

    Each seed drives one decode of `steps` single-commit steps from a random
    prompt; the fractions are averaged across seeds. No cache is involved, so
    the profile reflects the model's own dynamics.
    """
    # late import: decoder depends on cache which depends on this module
    from .cache import CacheMode
    from .decoder import DecodePolicy, decode, random_prompt

    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if steps < 2:
        raise ValueError("need at least 2 steps to compare consecutive states")
    if tap not in TAP_POINTS:
        raise ValueError(f"tap must be one of {TAP_POINTS}")

    config = weights.config
    seeds = tuple(int(s) for s in seeds)
    totals = np.zeros((config.n_layers, steps - 1))
    for seed in seeds:
        prompt = random_prompt(config, prompt_len, seed)
        result = decode(weights, prompt, gen_len=steps,
                        policy=DecodePolicy.fixed(1, seed=seed),
                        mode=CacheMode.vanilla(), collect_activations=True)
        acts_by_step = result.activations
        for t in range(1, steps):
            for layer in range(config.n_layers):
                prev = getattr(acts_by_step[t - 1][layer], tap)
                cur = getattr(acts_by_step[t][layer], tap)
                totals[layer, t - 1] += drift_fraction(prev, cur, tau)
    fractions = totals / len(seeds)
    return DriftProfile(tau=tau, fractions=fractions, seeds=seeds,
                        seq_len=prompt_len + steps, n_steps=steps, tap=tap)


@dataclass(frozen=True)
class FitResult:
    schedule: BudgetSchedule
    warnings: tuple[str, ...] = ()


def fit_schedule(profile: DriftProfile, floor: float = DEFAULT_FLOOR,
                 refine_peak: bool = False) -> FitResult:
    """Anchor a schedule to a measured drift profile.

    The bump passes exactly through its three anchors, so fitting reduces to
    reading them off: peak position = argmax of layer-mean drift (lowest layer
    wins ties), peak/endpoint ratios = the corresponding means clamped to
    [floor, 1]. With refine_peak, every interior peak position is scored by
    squared error against the layer means and the best one wins.
    """
    means = profile.layer_means()
    if means.size == 0:
        raise ValueError("empty drift profile")
    n_layers = means.size
    warnings: list[str] = []

    if float(means.max()) <= 0.0:
        warnings.append("all-zero drift profile; returning flat floor schedule")
        return FitResult(BudgetSchedule.uniform(n_layers, floor), tuple(warnings))

    def clamp(x: float) -> float:
        return float(min(max(x, floor), 1.0))

    rho_first = clamp(float(means[0]))
    rho_last = clamp(float(means[-1]))

    def build(peak_idx: int) -> BudgetSchedule:
        rho_peak = clamp(float(means[peak_idx]))
        rho_peak = max(rho_peak, rho_first, rho_last)
        return BudgetSchedule(n_layers=n_layers, peak_layer=float(peak_idx + 1),
                              rho_first=rho_first, rho_peak=rho_peak, rho_last=rho_last)

    peak_idx = int(np.argmax(means))
    if peak_idx == 0 or peak_idx == n_layers - 1:
        warnings.append("drift peak at a boundary layer; clamped to the interior")
        peak_idx = min(max(peak_idx, 1), n_layers - 2)

    if refine_peak:
        best = None
        for cand in range(1, n_layers - 1):
            sched = build(cand)
            err = float(np.sum((np.asarray(sched.evaluated) - means) ** 2))
            if best is None or err < best[0]:
                best = (err, cand)
        peak_idx = best[1]

    return FitResult(build(peak_idx), tuple(warnings))
