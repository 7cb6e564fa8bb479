"""Random graphs and random texts: Erdos-Renyi thresholds, preferential
attachment degree laws, and rank-frequency laws of monkey-typed corpora."""

from __future__ import annotations

import itertools
import math
import string
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from numba import njit

from .errors import ParameterError
from .harness import Outcome, Series, Table, check_at_least, check_at_most, check_within, experiment
from .randomness import RandomStream
from .stats import loglog_slope, proportion_stderr


@dataclass
class UGraph:
    """Graph on vertices ``0..n-1``.

    Undirected graphs store each edge once with ``u < v``. Directed graphs
    store ordered ``(source, target)`` pairs and may contain loops and
    repeated edges.
    """

    n: int
    edges: np.ndarray
    directed: bool = False

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= self.n):
            raise ParameterError("edge endpoint outside [0, n)")

    @property
    def edge_count(self) -> int:
        return int(self.edges.shape[0])

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def in_degrees(self) -> np.ndarray:
        return np.bincount(self.edges[:, 1], minlength=self.n)

    def out_degrees(self) -> np.ndarray:
        return np.bincount(self.edges[:, 0], minlength=self.n)

    def to_text(self) -> str:
        return "".join(f"{u} {v}\n" for u, v in self.edges.tolist())


# Erdos-Renyi

def _pair_from_index(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decode ``k = j(j-1)/2 + i`` (``i < j``) into the pair ``(i, j)``."""
    k = np.asarray(k, dtype=np.int64)
    j = np.floor((1 + np.sqrt(1 + 8 * k.astype(float))) / 2).astype(np.int64)
    j -= (j * (j - 1) // 2 > k)
    j += ((j + 1) * j // 2 <= k)
    return k - j * (j - 1) // 2, j


def erdos_renyi(n: int, p: float, stream: RandomStream) -> UGraph:
    """G(n, p) by geometric skipping over the pair index (O(edges) work)."""
    if not 0 <= p <= 1:
        raise ParameterError(f"edge probability must lie in [0, 1], got {p}")
    if n < 0:
        raise ParameterError("vertex count must be nonnegative")
    pairs = n * (n - 1) // 2
    if p == 0 or pairs == 0:
        return UGraph(n, np.empty((0, 2), dtype=np.int64))
    chunks = []
    pos = -1
    batch = int(pairs * p * 1.1) + 64
    while True:
        # clip so tiny p cannot overflow the running index
        gaps = np.minimum(stream.gen.geometric(p, batch), pairs + 1)
        idx = pos + np.cumsum(gaps)
        keep = idx[idx < pairs]
        chunks.append(keep)
        if keep.size < idx.size:
            break
        pos = int(idx[-1])
    i, j = _pair_from_index(np.concatenate(chunks))
    return UGraph(n, np.column_stack([i, j]))


@njit(cache=True)
def _csr_upper(n, edges, presorted):
    """Sorted forward adjacency (neighbors greater than the vertex).

    With ``presorted`` the edges arrive ordered by their larger endpoint, so
    the counting-sort fill already leaves every list sorted.
    """
    deg = np.zeros(n + 1, dtype=np.int64)
    for e in range(edges.shape[0]):
        a, b = edges[e, 0], edges[e, 1]
        lo = min(a, b)
        deg[lo + 1] += 1
    ptr = np.cumsum(deg)
    fill = ptr[:-1].copy()
    nbr = np.empty(edges.shape[0], dtype=np.int64)
    for e in range(edges.shape[0]):
        a, b = edges[e, 0], edges[e, 1]
        lo, hi = min(a, b), max(a, b)
        nbr[fill[lo]] = hi
        fill[lo] += 1
    if not presorted:
        for v in range(n):
            nbr[ptr[v]:ptr[v + 1]] = np.sort(nbr[ptr[v]:ptr[v + 1]])
    return ptr, nbr


@njit(cache=True)
def _count_triangles(n, edges, presorted):
    ptr, nbr = _csr_upper(n, edges, presorted)
    total = 0
    for u in range(n):
        for a in range(ptr[u], ptr[u + 1]):
            v = nbr[a]
            # intersect forward lists of u (beyond v) and v
            x, y = a + 1, ptr[v]
            xe, ye = ptr[u + 1], ptr[v + 1]
            while x < xe and y < ye:
                if nbr[x] < nbr[y]:
                    x += 1
                elif nbr[x] > nbr[y]:
                    y += 1
                else:
                    total += 1
                    x += 1
                    y += 1
    return total


def triangle_count(graph: UGraph) -> int:
    """Number of triangles in a simple undirected graph, by edge iteration."""
    if graph.edge_count == 0:
        return 0
    return int(_count_triangles(graph.n, graph.edges, False))


@njit(cache=True)
def _triangle_replicas(n, p, replicas, seed):
    np.random.seed(seed)
    pairs = n * (n - 1) // 2
    out = np.empty(replicas, dtype=np.int64)
    logq = math.log1p(-p)
    buf = np.empty((16, 2), dtype=np.int64)
    for r in range(replicas):
        m = 0
        k = -1
        while True:
            u = 1.0 - np.random.random()
            gap = 1.0 + math.floor(math.log(u) / logq)
            if k + gap >= pairs:
                break
            k += int(gap)
            j = int((1 + math.sqrt(1 + 8.0 * k)) / 2)
            while j * (j - 1) // 2 > k:
                j -= 1
            while (j + 1) * j // 2 <= k:
                j += 1
            if m == buf.shape[0]:
                grown = np.empty((2 * m, 2), dtype=np.int64)
                grown[:m] = buf
                buf = grown
            buf[m, 0] = k - j * (j - 1) // 2
            buf[m, 1] = j
            m += 1
        out[r] = _count_triangles(n, buf[:m], True) if m else 0
    return out


def triangle_counts(n: int, p: float, replicas: int, stream: RandomStream) -> np.ndarray:
    """Triangle counts of ``replicas`` independent G(n, p) graphs (requires 0 < p < 1)."""
    if not 0 < p < 1:
        raise ParameterError("compiled triangle sampler needs 0 < p < 1")
    return _triangle_replicas(n, p, replicas, stream.kernel_seed())


def triangle_stats(n: int, c: float, replicas: int, stream: RandomStream) -> dict:
    """Mean triangle count and triangle-free frequency of G(n, c/n)."""
    if not c > 0 or n < 100:
        raise ParameterError("need c > 0 and n >= 100")
    counts = triangle_counts(n, c / n, replicas, stream)
    return {"mean": float(counts.mean()), "stderr": float(counts.std(ddof=1) / math.sqrt(replicas)),
            "p_zero": float(np.mean(counts == 0)), "counts": counts}


@njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        parent[x], x = root, parent[x]
    return root


@njit(cache=True)
def _components(n, edges):
    parent = np.arange(n)
    comps = n
    for e in range(edges.shape[0]):
        a = _find(parent, edges[e, 0])
        b = _find(parent, edges[e, 1])
        if a != b:
            parent[a] = b
            comps -= 1
    return comps


def component_count(graph: UGraph) -> int:
    return int(_components(graph.n, graph.edges))


def is_connected(graph: UGraph) -> bool:
    return graph.n <= 1 or component_count(graph) == 1


def connectivity_experiment(n: int, c: float, replicas: int, stream: RandomStream) -> float:
    """Fraction of G(n, c ln n / n) samples that are connected."""
    if n < 100:
        raise ParameterError("need n >= 100")
    p = min(1.0, c * math.log(n) / n)
    return float(np.mean([is_connected(erdos_renyi(n, p, stream)) for _ in range(replicas)]))


# preferential attachment

@njit(cache=True)
def _xi_targets(n, a, seed):
    np.random.seed(seed)
    target = np.empty(n, dtype=np.int64)
    for i in range(1, n + 1):
        total = (a + 1.0) * i - 1.0
        if np.random.random() * total < a * i:
            target[i - 1] = np.random.randint(0, i)
        else:
            target[i - 1] = target[np.random.randint(0, i - 1)]
    return target


def buckley_osthus(n: int, a: float, stream: RandomStream) -> UGraph:
    """Directed preferential-attachment graph from independent edge labels.

    Vertex ``i`` (1-based) draws an odd label ``2j-1`` with weight ``a``
    for each ``j <= i`` (link to ``j``) or an even label ``2j`` with weight
    1 for each ``j < i`` (link wherever ``j`` links). Labels are
    independent; chasing resolves immediately because ``j < i``. Loops and
    repeated edges are kept.
    """
    if n < 1:
        raise ParameterError("need at least one vertex")
    if not a > 0:
        raise ParameterError("attachment parameter a must be positive")
    targets = _xi_targets(n, float(a), stream.kernel_seed())
    return UGraph(n, np.column_stack([np.arange(n), targets]), directed=True)


def _resolve_labels(labels: Sequence[int]) -> tuple[int, ...]:
    targets: list[int] = []
    for label in labels:
        j = (label + 1) // 2 - 1
        targets.append(j if label % 2 else targets[j])
    return tuple(targets)


def xi_law(n: int, a) -> dict[tuple[int, ...], Fraction]:
    """Exact law of the target tuple under the independent-label construction."""
    a = Fraction(a)
    law: dict[tuple[int, ...], Fraction] = {}
    choices = []
    for i in range(1, n + 1):
        total = (a + 1) * i - 1
        choices.append([(2 * j - 1, a / total) for j in range(1, i + 1)]
                       + [(2 * j, 1 / total) for j in range(1, i)])
    for combo in itertools.product(*choices):
        prob = math.prod((w for _, w in combo), start=Fraction(1))
        key = _resolve_labels([label for label, _ in combo])
        law[key] = law.get(key, Fraction(0)) + prob
    return law


def sequential_law(n: int, a) -> dict[tuple[int, ...], Fraction]:
    """Exact law of the target tuple under step-by-step growth.

    After ``m`` vertices, the new vertex links to itself with weight ``a``
    and to an old vertex ``i`` with weight ``indeg(i) + a``; the
    normalizer is ``(a + 1) m + a``.
    """
    a = Fraction(a)
    law = {(0,): Fraction(1)}
    for m in range(1, n):
        grown: dict[tuple[int, ...], Fraction] = {}
        for targets, prob in law.items():
            indeg = Counter(targets)
            total = (a + 1) * m + a
            for i in range(m + 1):
                w = (indeg[i] + a) if i < m else a
                key = targets + (i,)
                grown[key] = grown.get(key, Fraction(0)) + prob * w / total
        law = grown
    return law


def _window_counts(counts: np.ndarray):
    counts = np.asarray(counts, dtype=float)
    nonzero = np.flatnonzero(counts > 0)
    if nonzero.size < 10:
        raise ParameterError(f"need at least 10 distinct degrees, got {nonzero.size}")
    cdf = np.cumsum(counts) / counts.sum()
    top = int(np.searchsorted(cdf, 0.99))
    lo = max(1, math.ceil(top / 10))
    return counts, lo, top


def powerlaw_fit_counts(counts, offset: float = 0.0, bins_per_decade: int = 10) -> float:
    """Log-log slope of a degree density given counts (or weights) per degree.

    The fit window is the decade ``[k99/10, k99]`` where ``k99`` is the
    99th percentile of the degree law; integer bins are logarithmic and each
    bin is placed at the geometric mean of ``k + offset`` over its integers.
    """
    counts, lo, top = _window_counts(counts)
    edges = np.unique(np.ceil(np.geomspace(lo, top + 1, bins_per_decade + 1) - 1e-9).astype(np.int64))
    total = counts.sum()
    xs, ys = [], []
    for e0, e1 in zip(edges[:-1], edges[1:]):
        mass = counts[e0:e1].sum()
        if mass > 0:
            ks = np.arange(e0, e1)
            xs.append(math.exp(np.mean(np.log(ks + offset))))
            ys.append(mass / (total * (e1 - e0)))
    if len(xs) < 2:
        raise ParameterError("fit window holds fewer than two occupied bins")
    return loglog_slope(xs, ys)[0]


def degree_powerlaw_fit(graph_or_degrees, offset: float = 0.0, which: str = "in") -> float:
    if isinstance(graph_or_degrees, UGraph):
        g = graph_or_degrees
        degrees = g.in_degrees() if (g.directed and which == "in") else g.degrees()
    else:
        degrees = np.asarray(graph_or_degrees, dtype=np.int64)
    return powerlaw_fit_counts(np.bincount(degrees), offset)


def attachment_offset(a: float) -> float:
    """Shift c making ``Gamma(k + a) / Gamma(k + 2a + 2)`` closest to ``(k + c)**-(2 + a)``."""
    return (3 * a + 1) / 2


def rank_slope(degrees, top_fraction: float = 0.01) -> float:
    """Log-log slope of the sorted degree sequence against rank over the top ranks."""
    d = np.sort(np.asarray(degrees))[::-1]
    m = max(10, int(len(d) * top_fraction))
    return loglog_slope(np.arange(1, m + 1), d[:m])[0]


# monkey typing

LETTERS = string.ascii_lowercase + string.ascii_uppercase + string.digits + string.punctuation


@dataclass
class Corpus:
    tokens: list[str]
    alphabet: int
    keystrokes: int = 0

    def __post_init__(self):
        if any(not t for t in self.tokens):
            raise ParameterError("tokens must be nonempty")

    def to_text(self) -> str:
        return " ".join(self.tokens)


def monkey_corpus(alphabet: int, length: int, stream: RandomStream) -> Corpus:
    """Uniform keystrokes over ``alphabet`` letters and a space.

    Words are the maximal letter runs lying between two spaces; the
    fragments before the first and after the last space are dropped.
    """
    if not 2 <= alphabet <= len(LETTERS):
        raise ParameterError(f"alphabet size must lie in [2, {len(LETTERS)}]")
    if length < 1000:
        raise ParameterError("corpus needs at least 1000 keystrokes")
    table = np.frombuffer((LETTERS[:alphabet] + " ").encode(), dtype=np.uint8)
    keys = table[stream.gen.integers(0, alphabet + 1, length)]
    pieces = keys.tobytes().decode().split(" ")
    tokens = [w for w in pieces[1:-1] if w]
    return Corpus(tokens, alphabet, length)


def word_length_law(alphabet: int, k: int) -> float:
    """P(word length = k) for the uniform monkey."""
    q = alphabet / (alphabet + 1)
    return q ** (k - 1) * (1 - q)


def _fit_shifted_power(log_rank: np.ndarray, log_freq: np.ndarray) -> tuple[float, float, float]:
    """Least squares of ``log f = log C - alpha log(r + B)``, profiled over B.

    Ranks enter as logarithms so that astronomically large ranks (long
    monkey words) stay finite.
    """
    log_rank = np.asarray(log_rank, dtype=float)
    log_freq = np.asarray(log_freq, dtype=float)
    inv_rank = np.exp(-log_rank)

    def solve(b):
        x = log_rank + np.log1p(b * inv_rank)
        design = np.column_stack([np.ones_like(x), -x])
        coef, *_ = np.linalg.lstsq(design, log_freq, rcond=None)
        resid = log_freq - design @ coef
        return float(resid @ resid), coef

    r_min = math.exp(float(log_rank.min()))
    lo, hi = -r_min + 1e-6 * r_min, 10.0 * max(1.0, math.exp(min(float(np.median(log_rank)), 50.0)))
    grid = np.concatenate([np.linspace(lo, 1.0, 50, endpoint=False), np.geomspace(1.0, hi, 200)])
    scores = [solve(b)[0] for b in grid]
    k = int(np.argmin(scores))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    g = (math.sqrt(5) - 1) / 2
    for _ in range(80):
        c, d = b - g * (b - a), a + g * (b - a)
        if solve(c)[0] < solve(d)[0]:
            b = d
        else:
            a = c
    shift = (a + b) / 2
    _, coef = solve(shift)
    return float(coef[1]), float(shift), float(math.exp(coef[0]))


def zipf_fit(data, pool_by_length: bool | None = None, min_count: int = 5) -> dict:
    """Fit ``frequency(r) = C / (r + B)**alpha`` in log space.

    ``data`` is a :class:`Corpus` or a sequence of word counts. Counts below
    ``min_count`` are excluded. For a monkey corpus all words of one length
    share one probability, so by default words are pooled per length: the
    pooled frequency is the length's total count divided by the number of
    possible words of that length, placed at the last rank of its block.
    """
    if isinstance(data, Corpus):
        if pool_by_length is None:
            pool_by_length = True
        if pool_by_length:
            n = data.alphabet
            lengths = np.bincount([len(t) for t in data.tokens])
            L = np.flatnonzero(lengths >= min_count)
            L = L[L > 0]
            if L.size < 3:
                raise ParameterError("too few word lengths with enough counts")
            Lf = L.astype(float)
            # last rank of the length-L block: (n^(L+1) - n) / (n - 1)
            log_rank = (Lf + 1) * math.log(n) + np.log1p(-(float(n) ** -Lf)) - math.log(n - 1)
            log_freq = np.log(lengths[L]) - Lf * math.log(n) - math.log(len(data.tokens))
            alpha, shift, c = _fit_shifted_power(log_rank, log_freq)
            return {"alpha": alpha, "B": shift, "C": c, "points": int(L.size)}
        counts = np.array(sorted(Counter(data.tokens).values(), reverse=True), dtype=float)
    else:
        if pool_by_length:
            raise ParameterError("pooling by length needs a corpus")
        counts = np.sort(np.asarray(data, dtype=float))[::-1]
    keep = counts >= min_count
    if keep.sum() < 3:
        raise ParameterError("too few ranks with enough counts")
    rank = np.arange(1, counts.size + 1, dtype=float)[keep]
    alpha, shift, c = _fit_shifted_power(np.log(rank), np.log(counts[keep] / counts.sum()))
    return {"alpha": alpha, "B": shift, "C": c, "points": int(keep.sum())}


def distinct_counts(corpus: Corpus, prefixes: Sequence[int]) -> np.ndarray:
    """Number of distinct words among the first ``m`` words, for each ``m``."""
    seen: dict[str, int] = {}
    first = []
    for pos, w in enumerate(corpus.tokens):
        if w not in seen:
            seen[w] = pos
            first.append(pos)
    return np.searchsorted(np.asarray(first), np.asarray(prefixes), side="left")


def heaps_check(corpus: Corpus, prefixes: Sequence[int] | None = None) -> float:
    """Log-log slope of distinct-word count against prefix length (in words)."""
    if corpus.keystrokes and corpus.keystrokes < 10_000:
        raise ParameterError("Heaps fit needs at least 1e4 keystrokes")
    if prefixes is None:
        prefixes = np.unique(np.geomspace(100, len(corpus.tokens), 20).astype(np.int64))
    return loglog_slope(prefixes, distinct_counts(corpus, prefixes))[0]


# experiments

@experiment("erdos-renyi", "graph", n=200, p=0.1)
def _er_experiment(p, replicas, stream):
    """Edge count of one G(n, p) sample against its binomial law."""
    n, prob = p["n"], p["p"]
    g = erdos_renyi(n, prob, stream)
    pairs = n * (n - 1) // 2
    sd = math.sqrt(pairs * prob * (1 - prob))
    return Outcome(g.edge_count, sd, [check_within("edge count", pairs * prob, g.edge_count, 4 * sd)])


@experiment("triangles", "graph", replicas=100_000, n=2000, cs=(1.0, 2.0))
def _triangle_experiment(p, replicas, stream):
    """Triangle counts in G(n, c/n): Poisson mean c^3/6 and P(no triangle)."""
    n = p["n"]
    checks, rows = [], []
    for i, c in enumerate(p["cs"]):
        st = triangle_stats(n, c, replicas, stream.split(i))
        mu = c**3 / 6
        checks.append(check_within(f"mean triangles c={c:g}", mu, st["mean"], 0.05 * mu))
        checks.append(check_within(f"P(no triangle) c={c:g}", math.exp(-mu), st["p_zero"], 0.02))
        rows.append([c, st["mean"], st["stderr"], st["p_zero"]])
    sparse = triangle_counts(n, n ** -1.5, min(replicas, 10_000), stream.split(len(p["cs"])))
    free = float(np.mean(sparse == 0))
    checks.append(check_at_least("triangle-free frequency at p=n^-1.5", free, 0.99))
    return Outcome(rows[-1][1], rows[-1][2], checks, table=Table(["c", "mean", "stderr", "p_zero"], rows))


@experiment("connectivity", "graph", replicas=100, n=10_000, low=0.5, high=2.0)
def _connectivity_experiment(p, replicas, stream):
    """Connectivity of G(n, c ln n / n) below and above c = 1."""
    hi = connectivity_experiment(p["n"], p["high"], replicas, stream.split(0))
    lo = connectivity_experiment(p["n"], p["low"], replicas, stream.split(1))
    return Outcome(hi, proportion_stderr(hi, replicas), [
        check_at_least(f"connected frequency c={p['high']:g}", hi, 0.95),
        check_at_most(f"connected frequency c={p['low']:g}", lo, 0.05),
    ], extra={"low": lo})


@experiment("buckley-osthus", "graph", n=100_000, a=1.0, slope_tolerance=0.15, enumerate_n=3)
def _bo_experiment(p, replicas, stream):
    """Preferential attachment in-degree law and exact check of the label construction."""
    n, a = p["n"], p["a"]
    g = buckley_osthus(n, a, stream)
    indeg = g.in_degrees()
    slope = degree_powerlaw_fit(indeg, offset=attachment_offset(a))
    checks = [
        check_within("in-degree density slope", -(2 + a), slope, p["slope_tolerance"]),
        check_within("edge count", n, g.edge_count, 0),
        check_within("in-degree sum", n, int(indeg.sum()), 0),
        check_within("max out-degree", 1, int(g.out_degrees().max()), 0),
    ]
    exact_a = Fraction(a).limit_denominator(10**6)
    xi, seq = xi_law(p["enumerate_n"], exact_a), sequential_law(p["enumerate_n"], exact_a)
    gap = max(abs(xi.get(k, 0) - seq.get(k, 0)) for k in set(xi) | set(seq))
    checks.append(check_within(f"exact law gap at n={p['enumerate_n']}", 0, float(gap), 0))
    centers = np.arange(1, indeg.max() + 1)
    dens = np.bincount(indeg)[1:] / n
    return Outcome(slope, 0.0, checks, series=[Series("in-degree density", centers[dens > 0].tolist(),
                                                      dens[dens > 0].tolist())], loglog=True,
                   extra={"rank_slope": rank_slope(indeg), "outcomes_enumerated": len(xi),
                          "laws_equal": xi == seq})


@experiment("zipf", "graph", alphabet=26, keystrokes=10_000_000)
def _zipf_experiment(p, replicas, stream):
    """Monkey-typed corpus: Zipf-Mandelbrot exponent and Heaps growth."""
    n = p["alphabet"]
    corpus = monkey_corpus(n, p["keystrokes"], stream)
    alpha = math.log(n + 1) / math.log(n)
    fit = zipf_fit(corpus)
    heaps = heaps_check(corpus)
    lengths = np.bincount([len(t) for t in corpus.tokens])
    words = len(corpus.tokens)
    checks = [
        check_within("Zipf exponent", alpha, fit["alpha"], 0.05),
        check_within("Heaps slope", 1 / alpha, heaps, 0.1),
    ]
    for k in (1, 2, 3):
        q = word_length_law(n, k)
        obs = lengths[k] / words if k < lengths.size else 0.0
        checks.append(check_within(f"P(word length={k})", q, obs, 4 * math.sqrt(q * (1 - q) / words)))
    counts = np.array(sorted(Counter(corpus.tokens).values(), reverse=True), dtype=float)
    ranks = np.arange(1, counts.size + 1)
    return Outcome(fit["alpha"], 0.0, checks, series=[Series("rank-frequency", ranks.tolist(),
                                                             (counts / words).tolist())], loglog=True,
                   extra={"B": fit["B"], "B_predicted": n / (n - 1), "heaps_slope": heaps, "words": words})
