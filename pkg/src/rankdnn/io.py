"""Instance and solution file handling plus seeded random generators.

Instance grammar: whitespace-separated integer tokens, first the size n,
then n^2 entries of the flow matrix row-major, then n^2 entries of the
distance matrix.  Solution grammar: "n value" followed optionally by n
1-based assignment indices.  Both are plain ASCII.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ModelError, ParseError
from .model import QapInstance, StqpInstance, TriPartInstance

_TOKEN = re.compile(r"\S+")


@dataclass(frozen=True)
class InstanceFile:
    """Raw parsed instance: integer matrices exactly as read."""

    name: str
    n: int
    flow: np.ndarray
    distance: np.ndarray
    source_path: str | None = None

    def to_instance(self) -> QapInstance:
        """Validated solver instance; rejects asymmetric or negative data."""
        return QapInstance(
            flow=self.flow.astype(float), distance=self.distance.astype(float)
        )


@dataclass(frozen=True)
class SolutionFile:
    """Reference value and optional 0-based assignment."""

    n: int
    opt_value: int
    permutation: np.ndarray | None = None


def _tokens(text: str):
    """(token, line, column) triples, 1-based positions."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        for match in _TOKEN.finditer(line):
            out.append((match.group(), lineno, match.start() + 1))
    return out


def _as_int(token):
    text, line, col = token
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"expected an integer, got {text!r}", line, col) from None


def parse_instance(text: str, name: str = "", source_path: str | None = None
                   ) -> InstanceFile:
    """Parse instance text; errors carry the offending line and column."""
    toks = _tokens(text)
    if not toks:
        raise ParseError("empty instance file", 1, 1)
    n = _as_int(toks[0])
    if n <= 0:
        raise ParseError(f"size must be positive, got {n}", toks[0][1], toks[0][2])
    need = 1 + 2 * n * n
    if len(toks) < need:
        last = toks[-1]
        raise ParseError(
            f"expected {need} tokens for n={n}, found {len(toks)}",
            last[1], last[2],
        )
    if len(toks) > need:
        extra = toks[need]
        raise ParseError(
            f"unexpected trailing token {extra[0]!r}", extra[1], extra[2]
        )
    values = [_as_int(t) for t in toks[1:]]
    flow = np.array(values[: n * n], dtype=int).reshape(n, n)
    distance = np.array(values[n * n :], dtype=int).reshape(n, n)
    return InstanceFile(
        name=name, n=n, flow=flow, distance=distance, source_path=source_path
    )


def format_instance(inst: InstanceFile) -> str:
    """Serialize back to the instance grammar (round-trips token values)."""
    def block(mat):
        return "\n".join(" ".join(str(int(v)) for v in row) for row in mat)

    return f"{inst.n}\n\n{block(inst.flow)}\n\n{block(inst.distance)}\n"


def parse_solution(text: str) -> SolutionFile:
    """Parse solution text: size, value, optional 1-based assignment."""
    toks = _tokens(text)
    if len(toks) < 2:
        raise ParseError("solution file needs at least size and value", 1, 1)
    n = _as_int(toks[0])
    if n <= 0:
        raise ParseError(f"size must be positive, got {n}", toks[0][1], toks[0][2])
    opt = _as_int(toks[1])
    rest = toks[2:]
    if not rest:
        return SolutionFile(n=n, opt_value=opt, permutation=None)
    if len(rest) != n:
        t = rest[-1]
        raise ParseError(
            f"expected {n} assignment entries, found {len(rest)}", t[1], t[2]
        )
    perm = np.array([_as_int(t) for t in rest], dtype=int)
    if sorted(perm.tolist()) != list(range(1, n + 1)):
        t = rest[0]
        raise ParseError(
            f"assignment is not a permutation of 1..{n}: {perm.tolist()}",
            t[1], t[2],
        )
    return SolutionFile(n=n, opt_value=opt, permutation=perm - 1)


def format_solution(sol: SolutionFile) -> str:
    head = f"{sol.n} {sol.opt_value}\n"
    if sol.permutation is None:
        return head
    return head + " ".join(str(int(v) + 1) for v in sol.permutation) + "\n"


def load_instance(path) -> InstanceFile:
    path = Path(path)
    return parse_instance(
        path.read_text(encoding="ascii"), name=path.stem, source_path=str(path)
    )


def load_solution(path) -> SolutionFile:
    return parse_solution(Path(path).read_text(encoding="ascii"))


def validate_pair(inst_file: InstanceFile, sol_file: SolutionFile) -> QapInstance:
    """Cross-check a solution file against its instance.

    When the solution carries an assignment, its objective must equal the
    declared value exactly; a mismatch means corrupted data.
    """
    from .extract import qap_objective

    if inst_file.n != sol_file.n:
        raise ModelError(
            f"instance has n={inst_file.n} but solution has n={sol_file.n}"
        )
    inst = inst_file.to_instance()
    if sol_file.permutation is not None:
        value = qap_objective(inst, sol_file.permutation)
        if value != float(sol_file.opt_value):
            raise ModelError(
                f"solution file claims {sol_file.opt_value} but its "
                f"assignment evaluates to {value}"
            )
    return inst


def generate_random(n: int, seed: int, max_entry: int = 9) -> QapInstance:
    """Seeded random instance: symmetric nonnegative integer matrices with
    zero diagonal.  Identical (n, seed, max_entry) give identical data."""
    rng = np.random.default_rng(seed)
    def sym(draw):
        upper = np.triu(draw, k=1)
        return (upper + upper.T).astype(float)

    flow = sym(rng.integers(0, max_entry + 1, size=(n, n)))
    distance = sym(rng.integers(0, max_entry + 1, size=(n, n)))
    return QapInstance(flow=flow, distance=distance)


def generate_random_stqp(n: int, seed: int, max_entry: int = 5) -> StqpInstance:
    """Seeded random symmetric integer matrix, entries in
    [-max_entry, max_entry]."""
    rng = np.random.default_rng(seed)
    draw = rng.integers(-max_entry, max_entry + 1, size=(n, n))
    q = (np.triu(draw) + np.triu(draw, 1).T).astype(float)
    return StqpInstance(q_matrix=q)


def generate_random_tripartition(
    n: int, seed: int, sizes=None, max_entry: int = 9
) -> TriPartInstance:
    """Seeded random weighted graph with either the given group sizes or a
    seeded random positive composition of n into three parts."""
    rng = np.random.default_rng(seed)
    draw = rng.integers(0, max_entry + 1, size=(n, n))
    upper = np.triu(draw, k=1)
    adjacency = (upper + upper.T).astype(float)
    if sizes is None:
        if n < 3:
            raise ModelError(f"need n >= 3 for three nonempty groups, got {n}")
        m1 = int(rng.integers(1, n - 1))
        m2 = int(rng.integers(1, n - m1)) if n - m1 > 1 else 1
        sizes = (m1, m2, n - m1 - m2)
    return TriPartInstance(adjacency=adjacency, sizes=tuple(sizes))


def bundled_dir() -> Path:
    """Directory with the instances shipped inside the package."""
    return Path(resources.files("rankdnn") / "data")


def bundled_pairs():
    """Sorted (instance_path, solution_path) pairs of the bundled data."""
    base = bundled_dir()
    pairs = []
    for dat in sorted(base.glob("*.dat")):
        sln = dat.with_suffix(".sln")
        if sln.exists():
            pairs.append((dat, sln))
    return pairs
