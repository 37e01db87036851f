"""Training-corpus generation.

Time-invariant sets use Brunovsky (block-companion) pairs with diagonal
weights and a prescribed open-loop spectral class.  Time-varying sets use a
truncated trigonometric expansion of ``A(t)``, ``B(t)`` and ``M(t)`` with
``Q(t) = M(t)^T M(t)``, filtered for pointwise stabilizability and
detectability.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from . import linalg, riccati
from .errors import (BlowUp, GenerationStall, NoConvergence, NoStabilizingInit,
                     SingularMatrix, UnpairedComplexRoot)
from .opnet.encoding import CHAIN, FULL, TRIG, EncodingDescriptor, encode_input

log = logging.getLogger(__name__)

FULLY_STABLE = "stable"
FULLY_UNSTABLE = "unstable"
MIXED = "mixed"
SPECTRAL_CLASSES = (FULLY_STABLE, FULLY_UNSTABLE, MIXED)

PARTITIONS = {
    3: [(3,), (2, 1), (1, 1, 1)],
    4: [(4,), (3, 1), (2, 2), (2, 1, 1), (1, 1, 1, 1)],
    10: [(10,)],
}

COEFF_RANGE = 2.0
WEIGHT_RANGE = (0.1, 1.1)
ROOT_RE_RANGE = (0.1, 2.0)
ROOT_IM_RANGE = (0.1, 2.0)
TRIG_STD = 0.05
STALL_WINDOW = 10000
STALL_RATE = 0.01


# ---------------------------------------------------------------------------
# Companion blocks
# ---------------------------------------------------------------------------

def poly_from_roots(roots, tol=1e-9):
    """Monic polynomial coefficients ``a_0 .. a_{k-1}`` of ``prod (s - r)``.

    The characteristic polynomial is ``s^k + a_{k-1} s^{k-1} + ... + a_0``.
    Complex roots must appear together with their conjugates.
    """
    roots = [complex(r) for r in roots]
    pending = []
    poly = np.array([1.0])
    for r in roots:
        if abs(r.imag) <= tol:
            poly = np.convolve(poly, [1.0, -r.real])
            continue
        match = next((i for i, c in enumerate(pending)
                      if abs(c - r.conjugate()) <= tol * max(1.0, abs(r))), None)
        if match is None:
            pending.append(r)
        else:
            pending.pop(match)
            poly = np.convolve(poly, [1.0, -2.0 * r.real, abs(r) ** 2])
    if pending:
        raise UnpairedComplexRoot(f"complex roots without conjugates: {pending}")
    # poly is highest degree first: [1, c_{k-1}, ..., c_0]
    return poly[1:][::-1].copy()


def companion(coeffs):
    """Controllable-canonical block: superdiagonal ones, last row ``-a``."""
    k = len(coeffs)
    block = np.zeros((k, k))
    if k > 1:
        block[np.arange(k - 1), np.arange(1, k)] = 1.0
    block[-1, :] = -np.asarray(coeffs, dtype=float)
    return block


@dataclass
class BrunovskySpec:
    partition: tuple
    coeffs: List[np.ndarray]
    q_diag: np.ndarray
    r_diag: np.ndarray
    spectral_class: str
    roots: Optional[List[np.ndarray]] = None

    @property
    def n(self):
        return int(sum(self.partition))

    def assemble(self):
        """Return ``(A, B, Q, R)`` in block-companion form."""
        n, r = self.n, len(self.partition)
        A = np.zeros((n, n))
        B = np.zeros((n, r))
        start = 0
        for j, (size, a) in enumerate(zip(self.partition, self.coeffs)):
            A[start:start + size, start:start + size] = companion(a)
            B[start + size - 1, j] = 1.0
            start += size
        return A, B, np.diag(self.q_diag), np.diag(self.r_diag)


def _root_units(partition, rng):
    """Split each block into real roots and conjugate pairs.

    Returns a list of ``(block_index, is_pair)`` units.
    """
    units = []
    for b, size in enumerate(partition):
        left = size
        while left:
            pair = left >= 2 and rng.random() < 0.5
            units.append((b, pair))
            left -= 2 if pair else 1
    return units


def _sign_pattern(n_units, spectral_class, rng):
    if spectral_class == FULLY_STABLE:
        return -np.ones(n_units)
    if spectral_class == FULLY_UNSTABLE:
        return np.ones(n_units)
    if n_units < 2:
        return None
    while True:
        signs = rng.choice([-1.0, 1.0], size=n_units)
        if np.any(signs < 0) and np.any(signs > 0):
            return signs


def sample_brunovsky(n, partition, spectral_class, rng, max_tries=20000):
    """Sample a Brunovsky system of the given block structure and class.

    Eigenvalues are drawn with sign-constrained real parts
    (``|Re| in [0.1, 2]``), turned into companion coefficients, and the draw is
    rejected unless every coefficient lies in ``[-2, 2]``.  When rejections
    pile up (long chains), the upper magnitude bound is narrowed towards 0.1.
    Returns ``(spec, SystemInstance)``.
    """
    partition = tuple(int(p) for p in partition)
    if sum(partition) != n:
        raise ValueError(f"partition {partition} does not sum to {n}")
    if spectral_class not in SPECTRAL_CLASSES:
        raise ValueError(f"unknown spectral class {spectral_class!r}")
    lo_re, hi_re = ROOT_RE_RANGE
    lo_im, hi_im = ROOT_IM_RANGE
    for attempt in range(max_tries):
        shrink = 0.5 ** (attempt // 200)
        top_re = lo_re + (hi_re - lo_re) * shrink
        top_im = lo_im + (hi_im - lo_im) * shrink
        units = _root_units(partition, rng)
        signs = _sign_pattern(len(units), spectral_class, rng)
        if signs is None:
            continue
        roots = [[] for _ in partition]
        for (b, pair), sign in zip(units, signs):
            re = sign * rng.uniform(lo_re, top_re)
            if pair:
                im = rng.uniform(lo_im, top_im)
                roots[b] += [complex(re, im), complex(re, -im)]
            else:
                roots[b].append(complex(re, 0.0))
        coeffs = [poly_from_roots(r) for r in roots]
        if all(np.all(np.abs(c) <= COEFF_RANGE) for c in coeffs):
            break
    else:
        raise GenerationStall(f"no {spectral_class} draw for partition {partition}")
    q_diag = rng.uniform(*WEIGHT_RANGE, size=n)
    r_diag = rng.uniform(*WEIGHT_RANGE, size=len(partition))
    spec = BrunovskySpec(partition=partition, coeffs=coeffs, q_diag=q_diag,
                         r_diag=r_diag, spectral_class=spectral_class,
                         roots=[np.array(r) for r in roots])
    A, B, Q, R = spec.assemble()
    sys = riccati.SystemInstance(kind=riccati.TIME_INVARIANT, n=n, m=len(partition),
                                 horizon=1.0, p_terminal=np.eye(n), A=A, B=B, Q=Q, R=R)
    return spec, sys


def spectral_class_of(A):
    re = linalg.eigenvalues(A).real
    if np.all(re < 0):
        return FULLY_STABLE
    if np.all(re > 0):
        return FULLY_UNSTABLE
    return MIXED


# ---------------------------------------------------------------------------
# Trigonometric time-varying systems
# ---------------------------------------------------------------------------

@dataclass
class TrigCoeffs:
    """Coefficients of the truncated expansion with ``cos(i pi t)``, ``sin(i pi t)``.

    ``C[k, i]``, ``D[k, i]``, ``E[k, i]`` hold the cosine (k=0) and sine (k=1)
    coefficients of harmonic ``i + 1`` for ``A``, ``B`` and ``M``.
    """

    A0: np.ndarray
    B0: np.ndarray
    M0: np.ndarray
    C: np.ndarray  # (2, r_base, n, n)
    D: np.ndarray  # (2, r_base, n, m)
    E: np.ndarray  # (2, r_base, n, n)

    @property
    def r_base(self):
        return self.C.shape[1]

    @property
    def n(self):
        return self.A0.shape[0]

    @property
    def m(self):
        return self.B0.shape[1]

    def _basis(self, t):
        i = np.arange(1, self.r_base + 1)
        return np.cos(i * math.pi * t), np.sin(i * math.pi * t)

    def _expand(self, const, harm, t):
        phi, psi = self._basis(t)
        return const + np.tensordot(phi, harm[0], axes=1) + np.tensordot(psi, harm[1], axes=1)

    def A(self, t):
        return self._expand(self.A0, self.C, t)

    def B(self, t):
        return self._expand(self.B0, self.D, t)

    def M(self, t):
        return self._expand(self.M0, self.E, t)

    def Q(self, t):
        mt = self.M(t)
        return mt.T @ mt

    def to_vector(self):
        return np.concatenate([self.A0.ravel(), self.B0.ravel(), self.M0.ravel(),
                               self.C.ravel(), self.D.ravel(), self.E.ravel()])

    @classmethod
    def from_vector(cls, vec, n, m, r_base):
        vec = np.asarray(vec, dtype=float)
        sizes = [n * n, n * m, n * n, 2 * r_base * n * n, 2 * r_base * n * m,
                 2 * r_base * n * n]
        if len(vec) != sum(sizes):
            raise ValueError("coefficient vector length mismatch")
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return cls(A0=parts[0].reshape(n, n), B0=parts[1].reshape(n, m),
                   M0=parts[2].reshape(n, n), C=parts[3].reshape(2, r_base, n, n),
                   D=parts[4].reshape(2, r_base, n, m), E=parts[5].reshape(2, r_base, n, n))


def sample_trig_system(n, m, rng, r_base=2, horizon=1.0, n_steps=100, std=TRIG_STD):
    """Draw all expansion coefficients from ``Normal(0, std^2)``.

    ``R = I_m``, ``P_T = I_n``.  Returns ``(coeffs, SystemInstance)``.
    """
    draw = lambda *shape: rng.normal(0.0, std, size=shape)  # noqa: E731
    coeffs = TrigCoeffs(A0=draw(n, n), B0=draw(n, m), M0=draw(n, n),
                        C=draw(2, r_base, n, n), D=draw(2, r_base, n, m),
                        E=draw(2, r_base, n, n))
    sys = riccati.SystemInstance(kind=riccati.TRIG, n=n, m=m, horizon=horizon,
                                 p_terminal=np.eye(n), coeffs=coeffs, n_steps=n_steps)
    return coeffs, sys


# ---------------------------------------------------------------------------
# Admissibility
# ---------------------------------------------------------------------------

@dataclass
class Admissibility:
    ok: bool
    failures: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


def pbh_check(A, B, Q, rtol=1e-8):
    """PBH stabilizability of (A, B) and detectability of (A, Q^1/2).

    Returns a list of ``(test, eigenvalue)`` failures (empty when admissible).
    """
    n = A.shape[0]
    failures = []
    q_half = linalg.sqrt_psd(Q)
    for lam in linalg.eigenvalues(A):
        if lam.real < 0.0:
            continue
        shifted = lam * np.eye(n) - A
        if linalg.rank(np.hstack([shifted, B.astype(complex)]), rtol) < n:
            failures.append(("stabilizability", lam))
        if linalg.rank(np.hstack([shifted.T, q_half.T.astype(complex)]), rtol) < n:
            failures.append(("detectability", lam))
    return failures


def filter_admissible(sys, grid=None):
    """PBH tests at every grid time; stops at the first failing time."""
    grid = sys.grid() if grid is None else grid
    for t in grid:
        failures = pbh_check(sys.A_at(t), sys.B_at(t), sys.Q_at(t))
        if failures:
            test, lam = failures[0]
            return Admissibility(False, [{"time": float(t), "test": test,
                                          "eigenvalue": [lam.real, lam.imag]}])
    return Admissibility(True)


def controllability_rank(A, B):
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return linalg.rank(np.hstack(blocks))


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

ARE = "are"
DRE = "dre"


@dataclass
class GeneratorConfig:
    kind: str = ARE
    n: int = 3
    m: Optional[int] = None
    count: int = 100
    split: float = 0.8
    partitions: Optional[list] = None
    classes: list = field(default_factory=lambda: list(SPECTRAL_CLASSES))
    encoding: Optional[str] = None
    n_steps: Optional[int] = None
    horizon: float = 1.0
    r_base: int = 2

    def resolved(self):
        cfg = GeneratorConfig(**asdict(self))
        if cfg.kind not in (ARE, DRE):
            raise ValueError(f"unknown generator kind {cfg.kind!r}")
        if cfg.kind == ARE:
            if cfg.partitions is None:
                cfg.partitions = [list(p) for p in PARTITIONS[cfg.n]]
            cfg.partitions = [list(p) for p in cfg.partitions]
            if cfg.encoding is None:
                cfg.encoding = CHAIN if cfg.n == 10 else FULL
            if cfg.m is None:
                cfg.m = max(len(p) for p in cfg.partitions)
                if cfg.encoding == CHAIN:
                    cfg.m = 1
        else:
            cfg.encoding = TRIG
            if cfg.m is None:
                cfg.m = cfg.n
        if cfg.n_steps is None:
            cfg.n_steps = 200 if cfg.n >= 10 else 100
        for c in cfg.classes:
            if c not in SPECTRAL_CLASSES:
                raise ValueError(f"unknown spectral class {c!r}")
        return cfg

    def descriptor(self):
        cfg = self.resolved()
        return EncodingDescriptor(kind=cfg.encoding, n=cfg.n, m=cfg.m,
                                  r_base=cfg.r_base if cfg.kind == DRE else 0)


@dataclass
class Record:
    encoding: np.ndarray
    target: np.ndarray  # (n, n) for ARE, (N+1, n, n) for DRE
    system: riccati.SystemInstance
    label: str
    index: int = 0


@dataclass
class Dataset:
    records: List[Record]
    metadata: dict
    n_train: int

    @property
    def train(self):
        return self.records[: self.n_train]

    @property
    def test(self):
        return self.records[self.n_train:]

    @property
    def descriptor(self):
        return EncodingDescriptor.from_dict(self.metadata["encoding"])

    @property
    def kind(self):
        return self.metadata["generator"]["kind"]

    def times(self):
        g = self.metadata["generator"]
        return np.linspace(0.0, g["horizon"], g["n_steps"] + 1)


def _are_attempt(cfg, seed, index):
    rng = np.random.default_rng([seed, index])
    cls = cfg.classes[index % len(cfg.classes)]
    part = cfg.partitions[(index // len(cfg.classes)) % len(cfg.partitions)]
    spec, sys = sample_brunovsky(cfg.n, part, cls, rng)
    sys = sys.with_(horizon=cfg.horizon, n_steps=cfg.n_steps)
    if not filter_admissible(sys, [0.0]):
        return None
    try:
        p = riccati.solve_are(sys)
    except (NoStabilizingInit, NoConvergence, SingularMatrix):
        return None
    enc = encode_input(sys, cfg.descriptor())
    return Record(encoding=enc, target=p, system=sys, label=cls, index=index)


def _dre_attempt(cfg, seed, index):
    rng = np.random.default_rng([seed, index])
    coeffs, sys = sample_trig_system(cfg.n, cfg.m, rng, r_base=cfg.r_base,
                                     horizon=cfg.horizon, n_steps=cfg.n_steps)
    if not filter_admissible(sys, sys.grid()):
        return None
    try:
        traj = riccati.solve_dre(sys)
    except BlowUp:
        return None
    label = spectral_class_of(coeffs.A0)
    return Record(encoding=coeffs.to_vector(), target=traj.values, system=sys,
                  label=label, index=index)


def _attempt(args):
    cfg, seed, index = args
    fn = _are_attempt if cfg.kind == ARE else _dre_attempt
    return fn(cfg, seed, index)


def _attempt_chunk(args):
    cfg, seed, start, stop = args
    return [_attempt((cfg, seed, i)) for i in range(start, stop)]


def build_dataset(config, seed, workers=1, chunk=64):
    """Generate, filter and solve ``config.count`` instances deterministically.

    Attempt ``i`` uses its own generator seeded by ``(seed, i)``, so the
    content is a pure function of ``(config, seed)`` regardless of
    ``workers``.  Returns a :class:`Dataset` whose first ``split`` fraction
    is the training part.
    """
    cfg = config.resolved()
    records = []
    attempts = 0
    window = []
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while len(records) < cfg.count:
            step = chunk if pool else min(chunk, cfg.count - len(records))
            end = attempts + step * max(workers, 1)
            jobs = [(cfg, seed, s, min(s + step, end)) for s in range(attempts, end, step)]
            parts = pool.map(_attempt_chunk, jobs) if pool else map(_attempt_chunk, jobs)
            for rec in (r for part in parts for r in part):
                attempts += 1
                window.append(rec is not None)
                if rec is not None and len(records) < cfg.count:
                    records.append(rec)
                if len(window) >= STALL_WINDOW:
                    rate = sum(window[-STALL_WINDOW:]) / STALL_WINDOW
                    if rate < STALL_RATE:
                        raise GenerationStall(
                            f"acceptance rate {rate:.4f} over the last {STALL_WINDOW} attempts")
    finally:
        if pool:
            pool.shutdown()
    desc = cfg.descriptor()
    for rec in records:
        if cfg.kind == ARE and len(rec.encoding) != desc.length:
            raise ValueError("encoding width differs across records")
    n_train = int(round(cfg.split * len(records)))
    counts = {}
    for rec in records:
        counts[rec.label] = counts.get(rec.label, 0) + 1
    metadata = {
        "generator": asdict(cfg),
        "seed": int(seed),
        "encoding": desc.to_dict(),
        "n": cfg.n,
        "m": cfg.m,
        "n_steps": cfg.n_steps,
        "count": len(records),
        "n_train": n_train,
        "attempts": attempts,
        "acceptance_rate": len(records) / max(attempts, 1),
        "class_counts": counts,
    }
    log.info("generated %d records from %d attempts", len(records), attempts)
    return Dataset(records=records, metadata=metadata, n_train=n_train)
