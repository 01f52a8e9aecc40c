"""
Beacon Privacy Defense - Genotype Dataset.

Owns genotype matrices, alternate allele frequencies, true Beacon responses,
synthetic generation and the line-oriented matrix file format.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from loguru import logger

from src.core.errors import FormatError, ParameterError, SnvIndexError


AAF_FLOOR = 1e-6
AAF_CEILING = 0.5
MATRIX_MAGIC = "beacon-matrix"
MATRIX_VERSION = "v1"
REFERENCE_ID_PREFIX = "r"

ResponseVector = npt.NDArray[np.uint8]


# ==========================================
# Domain Types
# ==========================================

@dataclass(frozen=True, eq=False)
class GenotypeMatrix:
    """
    Binary n × m genotype matrix stored as packed bit rows.

    Attributes:
        n_individuals: Number of rows.
        n_snvs: Number of SNV columns.
        packed: uint8 array of shape (n, ceil(m / 8)), big-endian bit order.
        ids: Opaque per-individual labels.

    Example:
        >>> g = GenotypeMatrix.from_dense([[1, 0, 1, 0], [1, 1, 0, 0]])
        >>> g.dense().tolist()
        [[1, 0, 1, 0], [1, 1, 0, 0]]
    """

    n_individuals: int
    n_snvs: int
    packed: np.ndarray
    ids: Tuple[str, ...]

    def __post_init__(self):
        """Validate dimensions."""
        expected = (self.n_individuals, (self.n_snvs + 7) // 8)
        if self.packed.shape != expected:
            raise ParameterError(
                f"packed shape {self.packed.shape} does not match n={self.n_individuals}, m={self.n_snvs}"
            )
        if len(self.ids) != self.n_individuals:
            raise ParameterError(f"expected {self.n_individuals} ids, got {len(self.ids)}")
        self.packed.setflags(write=False)

    @classmethod
    def from_dense(
        cls,
        bits: Union[Sequence[Sequence[int]], np.ndarray],
        ids: Optional[Sequence[str]] = None,
    ) -> "GenotypeMatrix":
        """
        Build a matrix from a dense 0/1 array.

        Args:
            bits: Array-like of shape (n, m) with entries in {0, 1}.
            ids: Optional labels; defaults to "ind00000", "ind00001", ...

        Returns:
            GenotypeMatrix: Packed matrix.

        Raises:
            ParameterError: If the array is not 2-D binary.
        """
        arr = np.asarray(bits)
        if arr.ndim != 2:
            raise ParameterError(f"genotype matrix must be 2-D, got {arr.ndim}-D")
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ParameterError("genotype entries must be 0 or 1")
        n, m = arr.shape
        labels = tuple(ids) if ids is not None else tuple(f"ind{i:05d}" for i in range(n))
        packed = np.packbits(arr.astype(np.uint8), axis=1) if m else np.zeros((n, 0), np.uint8)
        return cls(n_individuals=n, n_snvs=m, packed=packed, ids=labels)

    def dense(self, rows: Optional[Iterable[int]] = None) -> np.ndarray:
        """
        Unpack rows into a dense uint8 array.

        Args:
            rows: Row indices (default: all rows).

        Returns:
            np.ndarray: Shape (len(rows), m).
        """
        idx = self._check_rows(rows)
        return np.unpackbits(self.packed[idx], axis=1, count=self.n_snvs)

    def row(self, i: int) -> np.ndarray:
        """Dense genotype row d_i."""
        return self.dense([i])[0]

    def column(self, j: int, rows: Optional[Iterable[int]] = None) -> np.ndarray:
        """Genotypes at SNV j for the given rows, without unpacking the rest."""
        if not 0 <= int(j) < self.n_snvs:
            raise SnvIndexError(f"SNV index {j} out of range [0, {self.n_snvs})", snv=int(j))
        idx = self._check_rows(rows)
        j = int(j)
        return (self.packed[idx, j >> 3] >> (7 - (j & 7))) & np.uint8(1)

    def _check_rows(self, rows: Optional[Iterable[int]]) -> np.ndarray:
        if rows is None:
            return np.arange(self.n_individuals)
        idx = np.asarray(list(rows), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_individuals):
            raise SnvIndexError(
                f"individual index out of range [0, {self.n_individuals})",
                indices=idx.tolist(),
            )
        return idx

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GenotypeMatrix):
            return NotImplemented
        return (
            self.n_individuals == other.n_individuals
            and self.n_snvs == other.n_snvs
            and self.ids == other.ids
            and np.array_equal(self.packed, other.packed)
        )


@dataclass(frozen=True, eq=False)
class AafVector:
    """
    Per-SNV alternate allele frequencies, each strictly inside (0, 0.5).

    Attributes:
        f: float64 array of length m.
    """

    f: np.ndarray

    def __post_init__(self):
        """Validate range."""
        arr = np.array(self.f, dtype=np.float64)
        if arr.ndim != 1:
            raise ParameterError("AAF vector must be 1-D")
        bad = np.flatnonzero(~((arr > 0.0) & (arr < AAF_CEILING)))
        if bad.size:
            raise ParameterError(
                f"AAF out of (0,0.5) at SNV {int(bad[0])}: {arr[bad[0]]!r}", snv=int(bad[0])
            )
        arr.setflags(write=False)
        object.__setattr__(self, "f", arr)

    def __len__(self) -> int:
        return int(self.f.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AafVector):
            return NotImplemented
        return np.array_equal(self.f, other.f)


@dataclass(frozen=True)
class PopulationSplit:
    """
    Beacon members B and reference (non-member) individuals B̄.

    Attributes:
        beacon: Row indices of Beacon members.
        reference: Row indices of the reference population.
    """

    beacon: Tuple[int, ...]
    reference: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        """Enforce disjointness."""
        overlap = set(self.beacon) & set(self.reference)
        if overlap:
            raise ParameterError(
                f"beacon and reference populations overlap on {sorted(overlap)[:5]}"
            )

    @property
    def disjoint(self) -> bool:
        """Always true for a constructed split."""
        return True


# ==========================================
# Operations
# ==========================================

def generate_synthetic(
    n_beacon: int,
    n_reference: int,
    m: int,
    beta_a: float,
    beta_b: float,
    seed: int,
) -> Tuple[GenotypeMatrix, AafVector, PopulationSplit]:
    """
    Draw a synthetic Beacon dataset.

    AAFs are Beta(beta_a, beta_b) samples rejection-sampled into
    (1e-6, 0.5); each individual carries the minor allele at SNV j with
    probability 1 - (1 - f_j)^2. Beacon rows come first, reference rows
    after them.

    Args:
        n_beacon: Number of Beacon members (≥ 1).
        n_reference: Number of reference individuals (≥ 1).
        m: Number of SNVs (≥ 1).
        beta_a: Beta shape a > 0.
        beta_b: Beta shape b > 0.
        seed: RNG seed; outputs are a pure function of all arguments.

    Returns:
        tuple: (GenotypeMatrix, AafVector, PopulationSplit)

    Raises:
        ParameterError: On non-positive counts or shapes.

    Example:
        >>> g, f, split = generate_synthetic(2, 2, 4, 1.0, 3.0, seed=42)
        >>> g.n_individuals, g.n_snvs
        (4, 4)
    """
    for name, value in (("n_beacon", n_beacon), ("n_reference", n_reference), ("m", m)):
        if int(value) < 1:
            raise ParameterError(f"{name} must be >= 1, got {value}")
    if not (beta_a > 0 and beta_b > 0):
        raise ParameterError(f"beta parameters must be positive, got a={beta_a}, b={beta_b}")

    rng = np.random.default_rng(seed)
    f = _sample_truncated_beta(rng, m, beta_a, beta_b)

    n = n_beacon + n_reference
    carrier_p = -np.expm1(2.0 * np.log1p(-f))
    bits = (rng.random((n, m)) < carrier_p).astype(np.uint8)

    ids = [f"b{i:05d}" for i in range(n_beacon)] + [f"r{i:05d}" for i in range(n_reference)]
    g = GenotypeMatrix.from_dense(bits, ids=ids)
    split = PopulationSplit(
        beacon=tuple(range(n_beacon)), reference=tuple(range(n_beacon, n))
    )

    logger.info(
        f"Generated synthetic dataset: beacon={n_beacon}, reference={n_reference}, "
        f"m={m}, Beta({beta_a}, {beta_b}), seed={seed}"
    )
    return g, AafVector(f), split


def _sample_truncated_beta(
    rng: np.random.Generator, m: int, a: float, b: float, max_rounds: int = 10_000
) -> np.ndarray:
    out = np.empty(m, dtype=np.float64)
    filled = 0
    for _ in range(max_rounds):
        draw = rng.beta(a, b, size=max(m - filled, 1) * 2)
        keep = draw[(draw > AAF_FLOOR) & (draw < AAF_CEILING)]
        take = min(keep.size, m - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
        if filled == m:
            return out
    raise ParameterError(
        f"Beta({a}, {b}) puts too little mass on ({AAF_FLOOR}, {AAF_CEILING}) to sample"
    )


def infer_split(g: GenotypeMatrix, beacon_size: Optional[int] = None) -> PopulationSplit:
    """
    Population split for a loaded matrix.

    With beacon_size the first beacon_size rows are members and the rest
    references; otherwise rows whose id starts with "r" are references.

    Raises:
        ParameterError: If beacon_size is out of range or no member remains.
    """
    n = g.n_individuals
    if beacon_size is not None:
        if not 1 <= int(beacon_size) <= n:
            raise ParameterError(f"beacon size {beacon_size} outside [1, {n}]")
        return PopulationSplit(beacon=tuple(range(beacon_size)), reference=tuple(range(beacon_size, n)))
    is_ref = [ident.startswith(REFERENCE_ID_PREFIX) for ident in g.ids]
    reference = tuple(i for i in range(n) if is_ref[i])
    beacon = tuple(i for i in range(n) if not is_ref[i])
    if not beacon:
        raise ParameterError("every row is a reference row; pass a beacon size")
    return PopulationSplit(beacon=beacon, reference=reference)


def true_responses(g: GenotypeMatrix, beacon: Iterable[int]) -> ResponseVector:
    """
    Honest Beacon answers: x_j = 1 iff some member carries the allele.

    Args:
        g: Genotype matrix.
        beacon: Member row indices (may be empty).

    Returns:
        ResponseVector: uint8 array of length m.

    Raises:
        SnvIndexError: If an index is out of range.
    """
    idx = g._check_rows(beacon)
    if idx.size == 0:
        return np.zeros(g.n_snvs, dtype=np.uint8)
    merged = np.bitwise_or.reduce(g.packed[idx], axis=0)
    return np.unpackbits(merged, count=g.n_snvs)


# ==========================================
# Matrix File I/O
# ==========================================

def save_matrix(g: GenotypeMatrix, f: AafVector, path: Union[str, Path]) -> Path:
    """
    Write a matrix file (UTF-8, LF line endings).

    Format:
        beacon-matrix v1 n=<int> m=<int>
        aaf <m space-separated decimals>
        <id> <m contiguous 0/1 chars>     (n lines)

    Args:
        g: Genotype matrix.
        f: AAF vector with len(f) == g.n_snvs.
        path: Destination path.

    Returns:
        Path: The written path.
    """
    if len(f) != g.n_snvs:
        raise ParameterError(f"AAF length {len(f)} != m={g.n_snvs}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dense = g.dense()
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{MATRIX_MAGIC} {MATRIX_VERSION} n={g.n_individuals} m={g.n_snvs}\n")
        fh.write("aaf " + " ".join(repr(float(v)) for v in f.f) + "\n")
        for ident, row in zip(g.ids, dense):
            fh.write(f"{ident} {''.join('1' if b else '0' for b in row)}\n")
    logger.debug(f"Saved matrix {g.n_individuals}x{g.n_snvs} to {path}")
    return path


def load_matrix(path: Union[str, Path]) -> Tuple[GenotypeMatrix, AafVector]:
    """
    Read a matrix file written by save_matrix.

    Args:
        path: Matrix file path.

    Returns:
        tuple: (GenotypeMatrix, AafVector)

    Raises:
        FileNotFoundError: If the file does not exist.
        FormatError: On malformed header, dimension mismatch, bad bits or
            AAF values outside (0, 0.5); the error names line/field/offset.
    """
    path = Path(path)
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError("file is not UTF-8", path=str(path), offset=e.start) from e

    lines = text.split("\n")
    offsets = []
    pos = 0
    for line in lines:
        offsets.append(pos)
        pos += len(line.encode("utf-8")) + 1

    header = lines[0].split() if lines else []
    if (
        len(header) != 4
        or header[0] != MATRIX_MAGIC
        or header[1] != MATRIX_VERSION
        or not header[2].startswith("n=")
        or not header[3].startswith("m=")
    ):
        raise FormatError("malformed header", path=str(path), line=1, field="header", offset=0)
    try:
        n = int(header[2][2:])
        m = int(header[3][2:])
    except ValueError as e:
        raise FormatError("malformed header counts", path=str(path), line=1, field="header", offset=0) from e
    if n < 0 or m < 0:
        bad = "n" if n < 0 else "m"
        raise FormatError(f"negative count {bad}", path=str(path), line=1, field=bad, offset=0)

    if len(lines) < 2 or not lines[1].startswith("aaf"):
        raise FormatError("missing aaf line", path=str(path), line=2, field="aaf", offset=len(raw))
    aaf_tokens = lines[1].split()[1:]
    if len(aaf_tokens) != m:
        raise FormatError(
            f"dimension mismatch: expected {m} AAF values, got {len(aaf_tokens)}",
            path=str(path), line=2, field="aaf", offset=offsets[1],
        )
    try:
        values = np.array([float(t) for t in aaf_tokens], dtype=np.float64)
    except ValueError as e:
        raise FormatError("non-numeric AAF value", path=str(path), line=2, field="aaf", offset=offsets[1]) from e
    try:
        aaf = AafVector(values)
    except ParameterError as e:
        raise FormatError(
            "AAF out of (0,0.5)", path=str(path), line=2, field="aaf", offset=offsets[1]
        ) from e

    ids = []
    bits = np.zeros((n, m), dtype=np.uint8)
    for r in range(n):
        lineno = r + 3
        if lineno - 1 >= len(lines) or lines[lineno - 1] == "":
            raise FormatError(
                f"truncated file: expected {n} genotype rows, found {r}",
                path=str(path), line=lineno, offset=len(raw),
            )
        parts = lines[lineno - 1].split(" ")
        if len(parts) != 2 or len(parts[1]) != m:
            raise FormatError(
                f"dimension mismatch: expected '<id> <{m} bits>'",
                path=str(path), line=lineno, field="bits", offset=offsets[lineno - 1],
            )
        ident, row = parts
        if set(row) - {"0", "1"}:
            raise FormatError(
                "genotype bits must be 0 or 1",
                path=str(path), line=lineno, field="bits", offset=offsets[lineno - 1],
            )
        ids.append(ident)
        bits[r] = np.frombuffer(row.encode("ascii"), dtype=np.uint8) - ord("0")

    trailing = [l for l in lines[n + 2:] if l.strip()]
    if trailing:
        raise FormatError(
            "dimension mismatch: more rows than header n",
            path=str(path), line=n + 3, offset=offsets[n + 2],
        )

    logger.debug(f"Loaded matrix {n}x{m} from {path}")
    return GenotypeMatrix.from_dense(bits, ids=ids), aaf
