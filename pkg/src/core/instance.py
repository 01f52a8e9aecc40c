"""
Beacon Privacy Defense - Problem Instance.

Bundles everything a defense or attack needs: genotypes, AAFs, the
population split, LRT constants, the true responses and the query set.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from loguru import logger

from src.core.dataset import (
    AafVector,
    GenotypeMatrix,
    PopulationSplit,
    infer_split,
    load_matrix,
    true_responses,
)
from src.core.errors import ParameterError
from src.core.lrt import LrtParams, QueryLike, compute_params, query_indices


@dataclass(frozen=True, eq=False)
class BeaconInstance:
    """
    One Beacon defense problem.

    Attributes:
        g: Genotype matrix (beacon and reference rows).
        f: AAF vector.
        split: Beacon / reference rows.
        params: LRT constants for n = |beacon|.
        x: True responses over the beacon.
        Q: Query indices.
        members: Dense beacon rows.
        references: Dense reference rows.
        max_aaf: Only SNVs with f_j ≤ max_aaf may be flipped (None: all).
    """

    g: GenotypeMatrix
    f: AafVector
    split: PopulationSplit
    params: LrtParams
    x: np.ndarray
    Q: np.ndarray
    members: np.ndarray
    references: np.ndarray
    max_aaf: Optional[float] = None

    @classmethod
    def build(
        cls,
        g: GenotypeMatrix,
        f: AafVector,
        split: PopulationSplit,
        delta: float,
        queries: QueryLike = None,
        max_aaf: Optional[float] = None,
    ) -> "BeaconInstance":
        """
        Assemble an instance from a dataset and δ.

        Args:
            g: Genotype matrix.
            f: AAF vector (len(f) == g.n_snvs).
            split: Population split; the beacon must be non-empty.
            delta: Sequencing error.
            queries: Query set (default: all SNVs).
            max_aaf: Optional rarity restriction for flips.

        Returns:
            BeaconInstance
        """
        if len(f) != g.n_snvs:
            raise ParameterError(f"AAF length {len(f)} != m={g.n_snvs}")
        if not split.beacon:
            raise ParameterError("beacon population is empty")
        if max_aaf is not None and not 0.0 < max_aaf <= 0.5:
            raise ParameterError(f"max_aaf must lie in (0, 0.5], got {max_aaf}")
        params = compute_params(f, len(split.beacon), delta)
        return cls(
            g=g,
            f=f,
            split=split,
            params=params,
            x=true_responses(g, split.beacon),
            Q=query_indices(queries, g.n_snvs),
            members=g.dense(split.beacon),
            references=g.dense(split.reference),
            max_aaf=max_aaf,
        )

    @classmethod
    def from_rows(
        cls,
        beacon_rows: Sequence[Sequence[int]],
        reference_rows: Sequence[Sequence[int]],
        aaf: Sequence[float],
        delta: float,
        queries: QueryLike = None,
        max_aaf: Optional[float] = None,
    ) -> "BeaconInstance":
        """Assemble an instance from literal rows (beacon first)."""
        beacon_rows = np.atleast_2d(np.asarray(beacon_rows, dtype=np.uint8))
        m = beacon_rows.shape[1]
        ref = np.asarray(reference_rows, dtype=np.uint8).reshape(-1, m)
        g = GenotypeMatrix.from_dense(np.vstack([beacon_rows, ref]))
        nb = beacon_rows.shape[0]
        split = PopulationSplit(beacon=tuple(range(nb)), reference=tuple(range(nb, nb + ref.shape[0])))
        return cls.build(g, AafVector(aaf), split, delta, queries=queries, max_aaf=max_aaf)

    @property
    def m(self) -> int:
        return self.g.n_snvs

    @property
    def q1(self) -> np.ndarray:
        """Queried SNVs answered 1, ascending."""
        return np.sort(self.Q[self.x[self.Q].astype(bool)])

    @property
    def allowed(self) -> Optional[np.ndarray]:
        """Boolean mask of flippable SNVs under max_aaf, or None."""
        if self.max_aaf is None:
            return None
        return self.f.f <= self.max_aaf


def restrict_candidates(candidates: np.ndarray, allowed: Optional[np.ndarray]) -> np.ndarray:
    """Drop candidates the rarity restriction forbids."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if allowed is None:
        return candidates
    return candidates[np.asarray(allowed, dtype=bool)[candidates]]


def load_instance(
    path: Union[str, Path],
    delta: float,
    queries: Optional[int] = None,
    max_aaf: Optional[float] = None,
    beacon_size: Optional[int] = None,
) -> BeaconInstance:
    """
    Load a matrix file and build the instance the CLI and service work on.

    Args:
        path: Matrix file.
        delta: Sequencing error.
        queries: Query only the first N SNVs (None: all).
        max_aaf: Optional rarity restriction for flips.
        beacon_size: First N rows are members (None: infer from ids).

    Returns:
        BeaconInstance

    Raises:
        FormatError: If the file is malformed.
        ParameterError: On invalid δ, split or query prefix.
    """
    g, f = load_matrix(path)
    split = infer_split(g, beacon_size)
    Q = None
    if queries is not None:
        if not 0 <= int(queries) <= g.n_snvs:
            raise ParameterError(f"queries={queries} outside [0, {g.n_snvs}]")
        Q = list(range(int(queries)))
    instance = BeaconInstance.build(g, f, split, delta, queries=Q, max_aaf=max_aaf)
    logger.info(
        f"Loaded instance from {path}: beacon={len(split.beacon)}, reference={len(split.reference)}, "
        f"m={instance.m}, |Q|={instance.Q.size}"
    )
    return instance
