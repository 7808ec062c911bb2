"""Update identifiers: the full value-projection proxy, its rank-r truncation
built from the SVD of the value projection, and the baseline identifier
families used for recall comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError
from .linalg import as_matrix, matmul_f32, svd
from .model import LayerActivations

KINDS = ("value_full", "singular", "query", "key", "attn_input", "attn_output",
         "random", "oracle")

# Below this, the trailing retained singular value makes the divergence bound
# vacuous (coefficient -> inf), so proxy construction is refused.
SPECTRUM_FLOOR = 1e-9


@dataclass(frozen=True)
class SingularProxy:
    """Rank-r truncation of a value projection: rows of `projection` are
    singular_value[i] * (i-th right singular vector)."""

    rank: int
    projection: np.ndarray       # (r, d)
    singular_values: np.ndarray  # full descending spectrum, length d
    bound_coefficient: float     # 2 * (s[r] / s[r-1])**2, 0 at full rank

    @property
    def d(self) -> int:
        return self.projection.shape[1]

    def project(self, h) -> np.ndarray:
        """Map rows of h (n, d) into the retained subspace, giving (n, r)."""
        hm = np.asarray(h, dtype=np.float32)
        if hm.shape[-1] != self.d:
            raise ValueError(f"expected width {self.d}, got {hm.shape[-1]}")
        return matmul_f32(hm, self.projection.T)


def build_singular_proxy(w_v, rank: int) -> SingularProxy:
    """Truncated factorization of a square value projection.

    Keeps the top `rank` singular values and right singular vectors. Refuses
    spectra where the retained tail vanishes (the similarity-divergence bound
    would be infinite).
    """
    w = as_matrix(w_v, "value projection")
    d = w.shape[0]
    if w.shape[0] != w.shape[1]:
        raise ValueError(f"value projection must be square, got {w.shape}")
    if not 1 <= rank <= d:
        raise ValueError(f"rank={rank} out of range [1, {d}]")

    res = svd(w)
    sing = res.singular_values.astype(np.float64)
    if rank < d:
        lam_r, lam_next = sing[rank - 1], sing[rank]
        if lam_r <= SPECTRUM_FLOOR:
            raise DegenerateInputError(
                f"singular value {rank} is {lam_r:.3e}; divergence bound is infinite")
        coeff = 2.0 * (lam_next / lam_r) ** 2
    else:
        coeff = 0.0

    projection = (sing[:rank, None] * res.v[:, :rank].T.astype(np.float64)).astype(np.float32)
    return SingularProxy(rank=rank, projection=projection,
                         singular_values=res.singular_values, bound_coefficient=float(coeff))


def project(proxy: SingularProxy, h) -> np.ndarray:
    return proxy.project(h)


@dataclass(frozen=True)
class Identifier:
    """A choice of per-token drift signal. `rank` applies to the singular kind,
    `seed` to the random baseline."""

    kind: str
    rank: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown identifier kind {self.kind!r}")
        if self.kind == "singular":
            if self.rank is None or self.rank < 1:
                raise ValueError("singular identifier requires rank >= 1")
        elif self.rank is not None:
            raise ValueError(f"{self.kind} identifier takes no rank")
        if self.kind == "random" and self.seed is None:
            raise ValueError("random identifier requires a seed")

    @classmethod
    def value_full(cls): return cls("value_full")

    @classmethod
    def singular(cls, rank: int): return cls("singular", rank=rank)

    @classmethod
    def query(cls): return cls("query")

    @classmethod
    def key(cls): return cls("key")

    @classmethod
    def attn_input(cls): return cls("attn_input")

    @classmethod
    def attn_output(cls): return cls("attn_output")

    @classmethod
    def random(cls, seed: int): return cls("random", seed=seed)

    @classmethod
    def oracle(cls): return cls("oracle")

    @property
    def label(self) -> str:
        if self.kind == "singular":
            return f"singular(r={self.rank})"
        if self.kind == "random":
            return f"random(seed={self.seed})"
        return self.kind

    def width(self, d: int) -> int:
        return self.rank if self.kind == "singular" else d

    def projection_flops(self, n: int, d: int) -> int:
        """Multiply-adds to produce the identifier vectors for n tokens.

        Projection-backed kinds cost n*m*d; pass-through and random kinds
        cost nothing to produce (similarity cost is counted separately).
        """
        if self.kind == "singular":
            return n * self.rank * d
        if self.kind in ("value_full", "query", "key"):
            return n * d * d
        return 0


def _random_vectors(seed: int, layer: int, step: int, n: int, m: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, layer, step])))
    return rng.standard_normal((n, m)).astype(np.float32)


def identifier_vectors(identifier: Identifier, acts: LayerActivations,
                       proxy: SingularProxy | None = None, *,
                       layer: int = 0, step: int = 0) -> np.ndarray:
    """The (n, m) identifier vectors for a layer's dense activations.

    The singular kind requires its proxy; the oracle kind has no vector
    representation (it is defined by true output drift) and is rejected here.
    """
    if identifier.kind == "singular":
        if proxy is None:
            raise ValueError("singular identifier requires a proxy")
        return proxy.project(acts.attn_input)
    if proxy is not None:
        raise ValueError(f"{identifier.kind} identifier takes no proxy")
    if identifier.kind == "value_full":
        return acts.v
    if identifier.kind == "query":
        return acts.q
    if identifier.kind == "key":
        return acts.k
    if identifier.kind == "attn_input":
        return acts.attn_input
    if identifier.kind == "attn_output":
        return acts.attn_output
    if identifier.kind == "random":
        n, m = acts.attn_input.shape
        return _random_vectors(identifier.seed, layer, step, n, m)
    raise ValueError("oracle identifier has no vector representation")
