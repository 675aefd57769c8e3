"""Stochastic feature grammar and feature programs.

A feature program is a DAG of image operators over a single image variable
``I``.  Programs are sampled by expanding the ``Feature`` nonterminal with a
uniformly random rule choice per production.  Identical sub-expressions are
hash-consed into one node, so every node is computed once per evaluation.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import haar, ops
from .raster import StructuringElement

DEFAULT_MAX_DEPTH = 8
SIGMA_RANGE = (0.3, 9.0)
SIGMOID_LAMBDAS = (0.1, 0.0)
LAWS_NAMES = tuple(ops.LAWS_VECTORS)


class Variant(enum.Enum):
    FULL = "full"
    HAAR = "haar"
    NO_MORPH = "no-morph"
    NO_HAAR = "no-haar"


class ProgramError(Exception):
    """An operator failed while evaluating a program node."""

    def __init__(self, index: int, op: str, cause: Exception):
        super().__init__(f"node {index} ({op}): {cause}")
        self.index = index
        self.op = op


# -- operator registry --------------------------------------------------------

@dataclass(frozen=True)
class OpDef:
    arity: int
    params: tuple[tuple[str, type], ...]
    fn: Callable[..., np.ndarray]


def _binary(kind):
    return lambda a, b: ops.apply_binary(kind, a, b)


def _morph(kind):
    return lambda x, se: ops.apply_morph(kind, x, se)


OPERATORS: dict[str, OpDef] = {
    "mult": OpDef(2, (), _binary("mult")),
    "blend": OpDef(2, (), _binary("blend")),
    "normDiff": OpDef(2, (), _binary("normDiff")),
    "scaledSub": OpDef(2, (), _binary("scaledSub")),
    "sigmoid": OpDef(1, (("theta", float), ("lam", float)), ops.sigmoid),
    "ggm": OpDef(1, (("sigma", float),), ops.ggm),
    "laplace": OpDef(1, (("sigma", float),), ops.laplace),
    "laws": OpDef(1, (("u", str), ("v", str)), ops.laws),
    "gabor": OpDef(1, (("theta", float), ("k", float), ("ratio", float), ("freq", float),
                       ("envelope", str)), ops.gabor),
    "convolve": OpDef(1, (("kernel", haar.ViolaJonesKernel),), haar.convolve_vj),
    "erode": OpDef(1, (("se", StructuringElement),), _morph("erode")),
    "dilate": OpDef(1, (("se", StructuringElement),), _morph("dilate")),
    "open": OpDef(1, (("se", StructuringElement),), _morph("open")),
    "close": OpDef(1, (("se", StructuringElement),), _morph("close")),
    "ptile": OpDef(1, (("p", float), ("se", StructuringElement)), ops.ptile),
}

MORPH_OPS = frozenset({"erode", "dilate", "open", "close", "ptile"})


# -- programs -------------------------------------------------------------------

@dataclass(frozen=True)
class Node:
    op: str
    params: tuple = ()
    inputs: tuple[int, ...] = ()


IMAGE_VAR = Node("I")


@dataclass(frozen=True)
class FeatureProgram:
    """Nodes in topological order; ``nodes[0]`` is ``I`` and the last node is the root."""

    nodes: tuple[Node, ...]

    @property
    def root(self) -> int:
        return len(self.nodes) - 1

    def __len__(self):
        return len(self.nodes)

    def ops(self) -> list[str]:
        return [n.op for n in self.nodes[1:]]

    def parent_counts(self) -> list[int]:
        counts = [0] * len(self.nodes)
        for n in self.nodes:
            for i in n.inputs:
                counts[i] += 1
        return counts

    def __str__(self):
        from .progtext import serialize_program
        return serialize_program(self)


class ProgramBuilder:
    """Incrementally builds a hash-consed program; node 0 is always ``I``."""

    def __init__(self):
        self.nodes: list[Node] = [IMAGE_VAR]
        self._index = {IMAGE_VAR: 0}

    def add(self, op: str, params=(), inputs=()) -> int:
        node = Node(op, tuple(params), tuple(inputs))
        idx = self._index.get(node)
        if idx is None:
            idx = len(self.nodes)
            self.nodes.append(node)
            self._index[node] = idx
        return idx

    def build(self, root: int) -> FeatureProgram:
        return canonical(FeatureProgram(tuple(self.nodes)), root)


def canonical(prog: FeatureProgram, root: int | None = None) -> FeatureProgram:
    """Re-number nodes in left-to-right post-order from ``root``, dropping unreachable ones."""
    root = prog.root if root is None else root
    new_index: dict[int, int] = {0: 0}
    out = [IMAGE_VAR]
    stack = [(root, False)]
    while stack:
        i, expanded = stack.pop()
        if i in new_index:
            continue
        node = prog.nodes[i]
        if expanded:
            new_index[i] = len(out)
            out.append(Node(node.op, node.params, tuple(new_index[j] for j in node.inputs)))
        else:
            stack.append((i, True))
            stack.extend((j, False) for j in reversed(node.inputs))
    return FeatureProgram(tuple(out))


def identity_program() -> FeatureProgram:
    return FeatureProgram((IMAGE_VAR,))


# -- evaluation -------------------------------------------------------------------

def evaluate(prog: FeatureProgram, img: np.ndarray, cache: dict | None = None) -> np.ndarray:
    """Evaluate every node once in index order and return the root image.

    ``cache`` maps node index to its image; entries already present are
    reused and new ones are stored.
    """
    if cache is None:
        cache = {}
    cache[0] = img
    for i, node in enumerate(prog.nodes):
        if i in cache:
            continue
        opdef = OPERATORS[node.op]
        try:
            cache[i] = opdef.fn(*(cache[j] for j in node.inputs), *node.params)
        except Exception as exc:
            raise ProgramError(i, node.op, exc) from exc
    return cache[prog.root]


# -- grammar as data ----------------------------------------------------------
#
# Right-hand sides are small expression trees:
#   ("var", "X")                      argument passed to the production
#   ("nt", name, (args...))           expand another nonterminal
#   ("op", name, (inputs...), (params...))  emit an operator node; each param
#                                     is either ("sample", sampler) or a var
#   ("sample", sampler)               draw a parameter value

X, Y, S = ("var", "X"), ("var", "Y"), ("var", "S")


def _nt(name, *args):
    return ("nt", name, args)


def _op(name, inputs, params=()):
    return ("op", name, tuple(inputs), tuple(params))


def _smp(name):
    return ("sample", name)


@dataclass(frozen=True)
class Grammar:
    productions: dict[str, tuple[tuple, ...]]
    formals: dict[str, tuple[str, ...]]
    start: str = "Feature"

    def __post_init__(self):
        for name, rules in self.productions.items():
            if not rules:
                raise ValueError(f"production {name} has no rules")
            for rule in rules:
                for ref in _nonterminals(rule):
                    if ref not in self.productions:
                        raise ValueError(f"{name} references undefined nonterminal {ref}")
        if self.start not in self.productions:
            raise ValueError(f"start symbol {self.start} undefined")


def _nonterminals(expr):
    if expr[0] == "nt":
        yield expr[1]
        for a in expr[2]:
            yield from _nonterminals(a)
    elif expr[0] == "op":
        for a in expr[2] + expr[3]:
            yield from _nonterminals(a)


_FORMALS = {
    "Feature": ("X",), "Binary": ("X", "Y"), "NLBinary": ("X", "Y"), "Unary": ("X",),
    "Compound": ("X",), "Morph": ("X", "S"), "NLUnary": ("X",), "LUnary": ("X",),
}

_FULL_RULES = {
    "Feature": (
        _nt("Binary", _nt("Unary", X), _nt("Unary", X)),
        _nt("NLUnary", _nt("Unary", X)),
        _nt("NLBinary", _nt("Unary", X), _nt("Unary", X)),
        _nt("Compound", X),
    ),
    "Binary": tuple(_op(k, (X, Y)) for k in ("mult", "normDiff", "scaledSub", "blend")),
    "NLBinary": (_op("mult", (X, Y)), _op("normDiff", (X, Y))),
    "Unary": (_nt("LUnary", X), _nt("NLUnary", X)),
    "Compound": (_nt("Unary", X), _nt("Binary", X, _nt("Compound", X))),
    "Morph": tuple(_op(k, (X,), (S,)) for k in ("erode", "dilate", "open", "close")),
    "NLUnary": (
        _op("sigmoid", (X,), (_smp("snorm"), _smp("sigmoid_lambda"))),
        _nt("Morph", X, _smp("RandomSE")),
        _op("ptile", (X,), (_smp("percentile"), _smp("RandomSE"))),
        _op("ggm", (X,), (_smp("sigma"),)),
    ),
    "LUnary": (
        _op("laws", (X,), (_smp("laws_vector"), _smp("laws_vector"))),
        _op("laplace", (X,), (_smp("sigma"),)),
        _op("gabor", (X,), (_smp("gabor_theta"), _smp("gabor_k"), _smp("aspect_ratio"),
                            _smp("gabor_freq"), _smp("gabor_envelope"))),
        _op("convolve", (X,), (_smp("ViolaJonesKernel"),)),
    ),
}


def build_grammar(variant: Variant = Variant.FULL) -> Grammar:
    variant = Variant(variant)
    if variant is Variant.HAAR:
        rules = {"Feature": (_op("convolve", (X,), (_smp("ViolaJonesKernel"),)),)}
        return Grammar(rules, {"Feature": ("X",)})
    rules = dict(_FULL_RULES)
    if variant is Variant.NO_MORPH:
        rules["NLUnary"] = tuple(r for r in rules["NLUnary"]
                                 if not (r[0] == "nt" and r[1] == "Morph")
                                 and not (r[0] == "op" and r[1] == "ptile"))
        del rules["Morph"]
    elif variant is Variant.NO_HAAR:
        rules["LUnary"] = tuple(r for r in rules["LUnary"] if r[1] != "convolve")
    return Grammar(rules, {k: _FORMALS[k] for k in rules})


# -- parameter samplers -----------------------------------------------------------

def _sigma(rng):
    return float(np.clip(3.0 * abs(rng.standard_normal()), *SIGMA_RANGE))


def _aspect_ratio(rng):
    return float(10.0 ** (2.0 * rng.random() - 1.0))


def _random_se(rng):
    return StructuringElement(float(rng.uniform(0.0, 2.0 * math.pi)),
                              int(rng.integers(1, 8)), _aspect_ratio(rng))


SAMPLERS: dict[str, Callable[[np.random.Generator], Any]] = {
    "snorm": lambda rng: float(rng.standard_normal()),
    "sigmoid_lambda": lambda rng: SIGMOID_LAMBDAS[rng.integers(2)],
    "RandomSE": _random_se,
    "percentile": lambda rng: float(rng.uniform(0.0, 100.0)),
    "sigma": _sigma,
    "laws_vector": lambda rng: LAWS_NAMES[rng.integers(len(LAWS_NAMES))],
    "gabor_theta": lambda rng: float(rng.uniform(0.0, math.pi)),
    "gabor_k": lambda rng: float(rng.uniform(1.0, 31.0)),
    "aspect_ratio": _aspect_ratio,
    "gabor_freq": lambda rng: float(10.0 * rng.random() + 2.0),
    "gabor_envelope": lambda rng: ops.GABOR_ENVELOPES[rng.integers(3)],
    "ViolaJonesKernel": haar.sample_vj_kernel,
}


class _Expander:
    def __init__(self, grammar: Grammar, rng, max_depth: int):
        self.grammar = grammar
        self.rng = rng
        self.max_depth = max_depth
        self.builder = ProgramBuilder()
        self.depth = 0

    def expand(self, name: str, args: tuple):
        rules = self.grammar.productions[name]
        if name == "Compound":
            self.depth += 1
            # forced truncation: the first Compound rule is the Unary alternative
            rule = rules[0] if self.depth >= self.max_depth else rules[self.rng.integers(len(rules))]
            try:
                return self.eval(rule, dict(zip(self.grammar.formals[name], args)))
            finally:
                self.depth -= 1
        rule = rules[self.rng.integers(len(rules))]
        return self.eval(rule, dict(zip(self.grammar.formals[name], args)))

    def eval(self, expr, env):
        kind = expr[0]
        if kind == "var":
            return env[expr[1]]
        if kind == "sample":
            return SAMPLERS[expr[1]](self.rng)
        if kind == "nt":
            args = tuple(self.eval(a, env) for a in expr[2])
            return self.expand(expr[1], args)
        _, name, inputs, params = expr
        ins = [self.eval(a, env) for a in inputs]
        vals = [self.eval(p, env) for p in params]
        return self.builder.add(name, vals, ins)


def sample_program(grammar: Grammar | None = None, variant: Variant = Variant.FULL,
                   rng: np.random.Generator | None = None,
                   max_depth: int = DEFAULT_MAX_DEPTH) -> FeatureProgram:
    """Sample a feature program by expanding ``Feature(I)``.

    ``Compound`` recursion deeper than ``max_depth`` is cut off by forcing
    its ``Unary`` alternative.  When ``grammar`` is None the grammar of
    ``variant`` is used.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    if grammar is None:
        grammar = build_grammar(variant)
    ex = _Expander(grammar, rng, max_depth)
    root = ex.expand(grammar.start, (0,))
    return ex.builder.build(root)


# -- validation -------------------------------------------------------------------

def _allowed_ops(variant: Variant) -> frozenset[str]:
    allowed = set(OPERATORS)
    if variant is Variant.HAAR:
        return frozenset({"convolve"})
    if variant is Variant.NO_MORPH:
        allowed -= MORPH_OPS
    elif variant is Variant.NO_HAAR:
        allowed.discard("convolve")
    return frozenset(allowed)


def _in(lo, v, hi):
    return isinstance(v, float) and math.isfinite(v) and lo <= v <= hi


def _check_se(se):
    if not isinstance(se, StructuringElement):
        return "se is not a StructuringElement"
    if not (0.0 <= se.theta <= 2.0 * math.pi and 0.1 <= se.ratio <= 10.0):
        return f"structuring element out of range: {se}"
    return None


def _check_params(node: Node) -> str | None:
    opdef = OPERATORS[node.op]
    if len(node.params) != len(opdef.params):
        return f"expected {len(opdef.params)} parameters, got {len(node.params)}"
    for (name, typ), val in zip(opdef.params, node.params):
        if not isinstance(val, typ):
            return f"parameter {name} should be {typ.__name__}, got {val!r}"
    p = node.params
    op = node.op
    if op == "sigmoid":
        if not (isinstance(p[0], float) and math.isfinite(p[0]) and p[1] in SIGMOID_LAMBDAS):
            return f"sigmoid parameters out of range: {p}"
    elif op in ("ggm", "laplace"):
        if not _in(SIGMA_RANGE[0], p[0], SIGMA_RANGE[1]):
            return f"sigma out of range: {p[0]}"
    elif op == "laws":
        if p[0] not in LAWS_NAMES or p[1] not in LAWS_NAMES:
            return f"unknown Laws vectors: {p}"
    elif op == "gabor":
        theta, k, ratio, freq, env = p
        if not (_in(0.0, theta, math.pi) and _in(1.0, k, 31.0) and _in(0.1, ratio, 10.0)
                and _in(2.0, freq, 12.0) and env in ops.GABOR_ENVELOPES):
            return f"gabor parameters out of range: {p}"
    elif op == "ptile":
        if not _in(0.0, p[0], 100.0):
            return f"percentile out of range: {p[0]}"
        return _check_se(p[1])
    elif op in ("erode", "dilate", "open", "close"):
        return _check_se(p[0])
    return None


def validate(prog: FeatureProgram, variant: Variant = Variant.FULL) -> list[str]:
    """Return a list of invariant violations; empty means the program is valid."""
    variant = Variant(variant)
    problems = []
    nodes = prog.nodes
    if not nodes or nodes[0] != IMAGE_VAR:
        return ["node 0 must be the image variable I"]
    allowed = _allowed_ops(variant)
    for i, node in enumerate(nodes[1:], start=1):
        if node.op == "I":
            problems.append(f"node {i}: duplicate image variable")
            continue
        if node.op not in OPERATORS:
            problems.append(f"node {i}: unknown operator {node.op!r}")
            continue
        if node.op not in allowed:
            problems.append(f"node {i}: operator {node.op} not allowed in variant {variant.value}")
        if len(node.inputs) != OPERATORS[node.op].arity:
            problems.append(f"node {i}: arity {len(node.inputs)} for {node.op}")
        if any(not (0 <= j < i) for j in node.inputs):
            problems.append(f"node {i}: inputs {node.inputs} break topological order")
            continue
        msg = _check_params(node)
        if msg:
            problems.append(f"node {i} ({node.op}): {msg}")
    seen = {prog.root}
    stack = [prog.root]
    while stack:
        for j in nodes[stack.pop()].inputs:
            if 0 <= j < len(nodes) and j not in seen:
                seen.add(j)
                stack.append(j)
    unreachable = sorted(set(range(len(nodes))) - seen)
    if unreachable:
        problems.append(f"nodes {unreachable} unreachable from root")
    if len(set(nodes)) != len(nodes):
        problems.append("duplicate nodes (sub-expression not shared)")
    if variant is Variant.HAAR and [n.op for n in nodes] != ["I", "convolve"]:
        problems.append("Haar-only programs must be a single convolve of I")
    return problems
