"""Linear structural equation models: specification, sampling and interventions.

Random stream
-------------
Every dataset is drawn from ``numpy.random.Generator(PCG64(seed))``. Nodes are
visited in :meth:`Dag.topological_order` (natural-name tie break) and each
consumes exactly one block of ``n`` draws: ``standard_normal(n)`` scaled by the
noise standard deviation for linear nodes, ``random(n)`` compared against the
success probability for Bernoulli-logistic nodes. Intervened nodes consume no
draws. PCG64 and NumPy's normal sampler are platform independent, so a seed
reproduces the same matrix on every machine running the same NumPy release.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .graph import Dag, GraphError, iter_edge_lines, node_key, parse_edge_line, sorted_nodes

LINEAR = "linear"
LOGISTIC = "bernoulli-logistic"
LINKS = (LINEAR, LOGISTIC)

TREATMENT = "treatment"
OUTCOME = "outcome"
COVARIATE = "covariate"
ROLES = (TREATMENT, OUTCOME, COVARIATE)


class ModelError(ValueError):
    pass


def rng_for(seed: int | Sequence[int]) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def child_seed(seed: int, *path: int) -> int:
    """Deterministic 63-bit seed derived from ``(seed, *path)``."""
    ss = np.random.SeedSequence([int(seed), *[int(p) for p in path]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class Dataset:
    """Observed data with exactly one treatment and one outcome column."""

    columns: tuple[str, ...]
    roles: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.columns):
            raise ValueError("values must be an n x len(columns) matrix")
        if len(self.roles) != len(self.columns):
            raise ValueError("one role per column required")
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate column names")
        for r in self.roles:
            if r not in ROLES:
                raise ValueError(f"unknown role {r!r}")
        if self.roles.count(TREATMENT) != 1 or self.roles.count(OUTCOME) != 1:
            raise ValueError("dataset needs exactly one treatment and one outcome column")
        if not np.all(np.isfinite(values)):
            raise ValueError("dataset contains missing or non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def treatment(self) -> str:
        return self.columns[self.roles.index(TREATMENT)]

    @property
    def outcome(self) -> str:
        return self.columns[self.roles.index(OUTCOME)]

    @property
    def covariates(self) -> tuple[str, ...]:
        return tuple(c for c, r in zip(self.columns, self.roles) if r == COVARIATE)

    def index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise KeyError(f"unknown column {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    def matrix(self, names: Iterable[str]) -> np.ndarray:
        idx = [self.index(c) for c in names]
        return self.values[:, idx]

    def with_roles(self, treatment: str, outcome: str) -> "Dataset":
        """Same data with the treatment/outcome roles moved to the named columns."""
        self.index(treatment)
        self.index(outcome)
        if treatment == outcome:
            raise ValueError("treatment and outcome must differ")
        roles = tuple(
            TREATMENT if c == treatment else OUTCOME if c == outcome else COVARIATE for c in self.columns
        )
        return Dataset(self.columns, roles, self.values)

    def to_csv(self, path_or_buf=None) -> str | None:
        """Write CSV: a ``# roles:`` line, the name header, then one row per sample."""
        buf = io.StringIO()
        buf.write("# roles: " + ",".join(self.roles) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.values:
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return None

    @classmethod
    def from_csv(cls, path_or_buf, treatment: str | None = None, outcome: str | None = None) -> "Dataset":
        """Read a dataset CSV. The role line is optional when ``treatment`` and ``outcome`` are given."""
        if hasattr(path_or_buf, "read"):
            text = path_or_buf.read()
        else:
            with open(path_or_buf, newline="") as fh:
                text = fh.read()
        lines = text.splitlines()
        roles = None
        if lines and lines[0].startswith("#"):
            head = lines.pop(0).lstrip("#").strip()
            if head.startswith("roles:"):
                roles = tuple(r.strip() for r in head[len("roles:"):].split(","))
        rows = list(csv.reader(lines))
        if not rows:
            raise ValueError("empty dataset file")
        columns = tuple(c.strip() for c in rows[0])
        for name in (treatment, outcome):
            if name is not None and name not in columns:
                raise KeyError(f"unknown column {name!r}")
        try:
            values = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        except ValueError as exc:
            raise ValueError(f"non-numeric value in dataset: {exc}") from None
        if values.size == 0:
            values = values.reshape(0, len(columns))
        if roles is None:
            if treatment is None or outcome is None:
                raise ValueError("dataset has no role line; treatment and outcome must be given")
            roles = tuple(
                TREATMENT if c == treatment else OUTCOME if c == outcome else COVARIATE for c in columns
            )
        d = cls(columns, roles, values)
        if treatment is not None or outcome is not None:
            d = d.with_roles(treatment or d.treatment, outcome or d.outcome)
        return d


@dataclass(frozen=True)
class Intervention:
    target: str
    value: float


@dataclass(frozen=True)
class LinearSem:
    """Linear SEM over a DAG.

    ``coeff`` maps every edge to its structural coefficient, ``noise_var``
    gives the Gaussian noise variance of each linear node and ``link`` marks
    nodes drawn as Bernoulli(expit(linear predictor)).
    """

    graph: Dag
    coeff: Mapping[tuple[str, str], float]
    noise_var: Mapping[str, float]
    link: Mapping[str, str] = field(default_factory=dict)
    latent: frozenset = frozenset()
    treatment: str | None = None
    outcome: str | None = None

    def __post_init__(self):
        g = self.graph
        coeff = {tuple(e): float(w) for e, w in self.coeff.items()}
        if set(coeff) != set(g.edges):
            missing = set(g.edges) - set(coeff)
            extra = set(coeff) - set(g.edges)
            raise ModelError(f"coefficients must cover exactly the edges (missing={sorted(missing)}, extra={sorted(extra)})")
        link = {v: self.link.get(v, LINEAR) for v in g.nodes}
        for v, lk in link.items():
            if lk not in LINKS:
                raise ModelError(f"node {v}: unknown link {lk!r}")
        noise = {}
        for v in g.nodes:
            if link[v] == LINEAR:
                var = self.noise_var.get(v)
                if var is None or not var > 0 or not math.isfinite(var):
                    raise ModelError(f"linear node {v} needs a positive noise variance")
                noise[v] = float(var)
            elif v in self.noise_var:
                raise ModelError(f"bernoulli-logistic node {v} takes no noise variance")
        latent = frozenset(self.latent)
        g.check(*latent)
        for role in (self.treatment, self.outcome):
            if role is not None:
                g.check(role)
                if role in latent:
                    raise ModelError(f"{role} cannot be latent")
        object.__setattr__(self, "coeff", coeff)
        object.__setattr__(self, "noise_var", noise)
        object.__setattr__(self, "link", link)
        object.__setattr__(self, "latent", latent)

    @property
    def observed(self) -> tuple[str, ...]:
        """Observed columns: treatment, outcome, then covariates in natural order."""
        front = [v for v in (self.treatment, self.outcome) if v is not None]
        rest = sorted_nodes(v for v in self.graph.nodes if v not in self.latent and v not in front)
        return tuple(front + rest)

    @property
    def covariates(self) -> tuple[str, ...]:
        return tuple(v for v in self.observed if v not in (self.treatment, self.outcome))

    def with_roles(self, treatment: str, outcome: str) -> "LinearSem":
        return replace(self, treatment=treatment, outcome=outcome)


def _simulate(m: LinearSem, n: int, seed, fixed: Mapping[str, float]) -> dict[str, np.ndarray]:
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = rng_for(seed)
    g = m.graph
    vals: dict[str, np.ndarray] = {}
    for v in g.topological_order():
        if v in fixed:
            vals[v] = np.full(n, float(fixed[v]))
            continue
        eta = np.zeros(n)
        for p in sorted_nodes(g._pa[v]):
            eta += m.coeff[(p, v)] * vals[p]
        if m.link[v] == LINEAR:
            vals[v] = eta + math.sqrt(m.noise_var[v]) * rng.standard_normal(n)
        else:
            vals[v] = (rng.random(n) < expit(eta)).astype(float)
    return vals


def _to_dataset(m: LinearSem, vals: dict[str, np.ndarray]) -> Dataset:
    if m.treatment is None or m.outcome is None:
        raise ModelError("model needs treatment and outcome roles to produce a dataset")
    cols = m.observed
    roles = tuple(TREATMENT if c == m.treatment else OUTCOME if c == m.outcome else COVARIATE for c in cols)
    return Dataset(cols, roles, np.column_stack([vals[c] for c in cols]))


def sample(m: LinearSem, n: int, seed: int = 0) -> Dataset:
    """Draw ``n`` i.i.d. rows; latent variables are generated then dropped."""
    return _to_dataset(m, _simulate(m, n, seed, {}))


def sample_do(m: LinearSem, iv: Intervention, n: int, seed: int = 0) -> Dataset:
    """Sample from the model with ``iv.target`` held at ``iv.value``."""
    m.graph.check(iv.target)
    if iv.target in m.latent:
        raise ModelError(f"cannot intervene on latent node {iv.target}")
    return _to_dataset(m, _simulate(m, n, seed, {iv.target: iv.value}))


def sample_all(m: LinearSem, n: int, seed: int = 0) -> dict[str, np.ndarray]:
    """Every node's draws, latent ones included (same stream as :func:`sample`)."""
    return _simulate(m, n, seed, {})


def true_total_effect(m: LinearSem, x: str, y: str) -> float:
    """Sum over directed paths ``x ~> y`` of the product of edge coefficients."""
    g = m.graph
    g.check(x, y)
    if x == y:
        raise ValueError("total effect needs two distinct nodes")
    if y not in g.descendants(x):
        return 0.0
    between = (g.descendants(x) & (g.ancestors(y) | {y}))
    for v in between:
        if m.link[v] != LINEAR:
            raise ModelError(f"node {v} on a directed path from {x} to {y} is not linear")
    # dynamic programme over the topological order
    effect = {x: 1.0}
    for v in g.topological_order():
        if v in between:
            effect[v] = sum(effect[p] * m.coeff[(p, v)] for p in g._pa[v] if p in effect)
    return effect[y]


def covariance(m: LinearSem) -> tuple[tuple[str, ...], np.ndarray]:
    """Population covariance of all nodes of an all-linear SEM."""
    if any(lk != LINEAR for lk in m.link.values()):
        raise ModelError("population covariance is only available for all-linear models")
    order = m.graph.topological_order()
    pos = {v: i for i, v in enumerate(order)}
    k = len(order)
    B = np.zeros((k, k))
    for (u, v), w in m.coeff.items():
        B[pos[v], pos[u]] = w
    inv = np.linalg.inv(np.eye(k) - B)
    omega = np.diag([m.noise_var[v] for v in order])
    return order, inv @ omega @ inv.T


def population_regression(m: LinearSem, response: str, regressors: Sequence[str]) -> dict[str, float]:
    """Population least-squares coefficients of ``response`` on ``regressors``."""
    order, cov = covariance(m)
    pos = {v: i for i, v in enumerate(order)}
    r = [pos[v] for v in regressors]
    beta = np.linalg.solve(cov[np.ix_(r, r)], cov[r, pos[response]])
    return dict(zip(regressors, beta.tolist()))


def hide(m: LinearSem, v: Iterable[str]) -> LinearSem:
    """Mark ``v`` latent; the treatment and outcome cannot be hidden."""
    v = frozenset(v)
    m.graph.check(*v)
    if m.treatment in v or m.outcome in v:
        raise ModelError("treatment and outcome cannot be hidden")
    if not v:
        return m
    return replace(m, latent=m.latent | v)


# --- the simulation study models ---------------------------------------------

N_COVARIATES = 100
FACTOR = "F"


def _case_model(case: int) -> LinearSem:
    zs = [f"Z{i}" for i in range(1, N_COVARIATES + 1)]
    nodes = ["X", "Y", *zs]
    coeff: dict[tuple[str, str], float] = {}
    noise = {"Y": 1.0}
    latent: set[str] = set()
    if case == 1:
        for z in zs:
            noise[z] = 1.0
    else:
        # equicorrelation 0.5: Z_i = sqrt(.5) F + sqrt(.5) e_i with a hidden common factor
        nodes.append(FACTOR)
        latent.add(FACTOR)
        noise[FACTOR] = 1.0
        for z in zs:
            coeff[(FACTOR, z)] = math.sqrt(0.5)
            noise[z] = 0.5
    if case in (1, 2):
        for i in [*range(1, 11), *range(21, 31)]:
            coeff[(f"Z{i}", "X")] = 1.0
        coeff[("X", "Y")] = 0.5
        for i in range(1, 21):
            coeff[(f"Z{i}", "Y")] = 0.6
    else:
        for i, w in {1: 0.5, 2: -0.5, 5: 0.3, 6: -0.3, 7: 0.35, 8: 0.4}.items():
            coeff[(f"Z{i}", "X")] = w
        coeff[("X", "Y")] = 1.0
        for i in range(1, 5):
            coeff[(f"Z{i}", "Y")] = 2.0
    g = Dag(nodes, coeff)
    return LinearSem(g, coeff, noise, {"X": LOGISTIC}, frozenset(latent), "X", "Y")


def case_model(case: int) -> LinearSem:
    """One of the three simulation-study models (100 covariates, binary X)."""
    if case not in (1, 2, 3):
        raise ValueError(f"unknown case {case!r}; expected 1, 2 or 3")
    return _case_model(case)


def case_effect(case: int) -> float:
    """Coefficient on X in the outcome equation of a simulation case."""
    return {1: 0.5, 2: 0.5, 3: 1.0}[case]


def make_case(case: int, n: int, seed: int = 0) -> tuple[LinearSem, Dataset]:
    m = case_model(case)
    return m, sample(m, n, seed)


def figure1_model(noise_var: Mapping[str, float] | None = None, coef: float = 1.0) -> LinearSem:
    """Z1 -> X -> Y, Z1 -> Z2 -> {Z3, Y}; all coefficients ``coef``.

    Default noise variances (Z1: 4, others 1) put Z3's noise below Z1's, the
    regime in which Z3 alone is the best single-covariate predictor once Z2
    is hidden.
    """
    edges = [("Z1", "X"), ("X", "Y"), ("Z1", "Z2"), ("Z2", "Z3"), ("Z2", "Y")]
    g = Dag(["X", "Y", "Z1", "Z2", "Z3"], edges)
    nv = {"X": 1.0, "Y": 1.0, "Z1": 4.0, "Z2": 1.0, "Z3": 1.0}
    nv.update(noise_var or {})
    return LinearSem(g, {e: coef for e in edges}, nv, {}, frozenset(), "X", "Y")


# --- model file --------------------------------------------------------------


def parse_model(text: str) -> LinearSem:
    """Parse a model file.

    Edge lines follow the graph edge-list format and must carry weights.
    Directive lines start with ``@``::

        @treatment X
        @outcome Y
        @noise Z1 4.0
        @link X bernoulli-logistic
        @latent Z2 Z5
    """
    nodes: list[str] = []
    edges: list[tuple[str, str]] = []
    coeff: dict[tuple[str, str], float] = {}
    noise: dict[str, float] = {}
    link: dict[str, str] = {}
    latent: set[str] = set()
    roles: dict[str, str] = {}
    for lineno, line in iter_edge_lines(text):
        if line.startswith("@"):
            key, *args = line[1:].split()
            if key in ("treatment", "outcome") and len(args) == 1:
                roles[key] = args[0]
            elif key == "noise" and len(args) == 2:
                try:
                    noise[args[0]] = float(args[1])
                except ValueError:
                    raise ModelError(f"line {lineno}: bad noise variance {args[1]!r}") from None
            elif key == "link" and len(args) == 2:
                link[args[0]] = args[1]
            elif key == "latent":
                latent.update(args)
            elif key == "node":
                nodes.extend(args)
            else:
                raise ModelError(f"line {lineno}: bad directive {line!r}")
            continue
        try:
            item = parse_edge_line(line, lineno)
        except GraphError as exc:
            raise ModelError(str(exc)) from None
        if isinstance(item, str):
            nodes.append(item)
            continue
        u, v, w = item
        if w is None:
            raise ModelError(f"line {lineno}: edge {u} -> {v} has no weight")
        edges.append((u, v))
        coeff[(u, v)] = w
    mentioned = set(noise) | set(link) | latent | set(roles.values())
    for v in sorted(mentioned, key=node_key):
        if v not in nodes and all(v not in e for e in edges):
            nodes.append(v)
    try:
        g = Dag(list(dict.fromkeys(nodes)), edges)
    except GraphError as exc:
        raise ModelError(str(exc)) from None
    return LinearSem(g, coeff, noise, link, frozenset(latent), roles.get("treatment"), roles.get("outcome"))


def read_model(path) -> LinearSem:
    with open(path) as fh:
        return parse_model(fh.read())


def format_model(m: LinearSem) -> str:
    lines = []
    if m.treatment:
        lines.append(f"@treatment {m.treatment}")
    if m.outcome:
        lines.append(f"@outcome {m.outcome}")
    for v in m.graph.topological_order():
        if m.link[v] != LINEAR:
            lines.append(f"@link {v} {m.link[v]}")
        else:
            lines.append(f"@noise {v} {m.noise_var[v]!r}")
    if m.latent:
        lines.append("@latent " + " ".join(sorted_nodes(m.latent)))
    touched = {v for e in m.graph.edges for v in e}
    for v in m.graph.topological_order():
        if v not in touched:
            lines.append(v)
    for u, v in m.graph.sorted_edges():
        lines.append(f"{u} -> {v} {m.coeff[(u, v)]!r}")
    return "\n".join(lines) + "\n"
