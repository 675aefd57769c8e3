"""Text form of feature programs.

Syntax (whitespace is insignificant)::

    expr    := label? call | "#" INT | "I"
    label   := "#" INT "="
    call    := NAME "(" expr ("," expr)* ("," param)* ")"
    param   := NAME "=" value
    value   := NUMBER | NAME | NAME "(" param ("," param)* ")"

Nodes with more than one parent are written once with a ``#n=`` label and
referenced as ``#n`` afterwards.  Structuring elements are written
``ellipse(theta=..., k=..., ratio=...)`` and Viola-Jones kernels
``vj(kind=..., w=..., h=..., x=..., y=...)``.  Floats use ``repr`` so
parameters round-trip exactly, e.g.::

    normDiff(I, erode(I, se=ellipse(theta=1.5707963267948966, k=4, ratio=0.3)))
"""
from __future__ import annotations

import re

from .grammar import OPERATORS, FeatureProgram, ProgramBuilder
from .haar import ViolaJonesKernel
from .raster import StructuringElement


class ProgramSyntaxError(ValueError):
    def __init__(self, msg: str, text: str, offset: int):
        line = text.count("\n", 0, offset) + 1
        col = offset - (text.rfind("\n", 0, offset) + 1) + 1
        super().__init__(f"{msg} at line {line}, column {col} (offset {offset})")
        self.offset, self.line, self.column = offset, line, col


def _fmt_value(v) -> str:
    if isinstance(v, StructuringElement):
        return f"ellipse(theta={v.theta!r}, k={v.k}, ratio={v.ratio!r})"
    if isinstance(v, ViolaJonesKernel):
        return f"vj(kind={v.kind}, w={v.cell_w}, h={v.cell_h}, x={v.x}, y={v.y})"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_program(prog: FeatureProgram) -> str:
    parents = prog.parent_counts()
    labels: dict[int, int] = {}
    written: set[int] = set()

    def emit(i: int) -> str:
        if i == 0:
            return "I"
        if i in written:
            return f"#{labels[i]}"
        node = prog.nodes[i]
        parts = [emit(j) for j in node.inputs]
        names = OPERATORS[node.op].params
        parts += [f"{name}={_fmt_value(v)}" for (name, _), v in zip(names, node.params)]
        written.add(i)
        body = f"{node.op}({', '.join(parts)})"
        if parents[i] > 1:
            labels[i] = len(labels) + 1
            return f"#{labels[i]}={body}"
        return body

    return emit(prog.root)


_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*(?:-[A-Za-z0-9_]+)*)
  | (?P<label>\#\d+)
  | (?P<punct>[(),=])
""", re.VERBOSE)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None:
                raise ProgramSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
            if m.lastgroup != "ws":
                self.tokens.append((m.lastgroup, m.group(), pos))
            pos = m.end()
        self.tokens.append(("eof", "", len(text)))
        self.i = 0
        self.builder = ProgramBuilder()
        self.labels: dict[str, int] = {}

    def error(self, msg, tok=None):
        tok = tok or self.tokens[self.i]
        found = "end of input" if tok[0] == "eof" else repr(tok[1])
        raise ProgramSyntaxError(f"{msg}, found {found}", self.text, tok[2])

    def peek(self):
        return self.tokens[self.i]

    def take(self, kind=None, value=None):
        tok = self.tokens[self.i]
        if (kind and tok[0] != kind) or (value is not None and tok[1] != value):
            self.error(f"expected {value or kind}")
        self.i += 1
        return tok

    def program(self) -> FeatureProgram:
        root = self.expr()
        if self.peek()[0] != "eof":
            self.error("trailing input")
        return self.builder.build(root)

    def expr(self) -> int:
        tok = self.peek()
        if tok[0] == "label":
            self.i += 1
            if self.peek()[1] == "=":
                self.i += 1
                if tok[1] in self.labels:
                    self.error(f"label {tok[1]} defined twice", tok)
                idx = self.call()
                self.labels[tok[1]] = idx
                return idx
            if tok[1] not in self.labels:
                self.error(f"undefined label {tok[1]}", tok)
            return self.labels[tok[1]]
        if tok == ("name", "I", tok[2]):
            self.i += 1
            return 0
        return self.call()

    def call(self) -> int:
        tok = self.take("name")
        op = tok[1]
        if op not in OPERATORS:
            self.error(f"unknown operator {op!r}", tok)
        opdef = OPERATORS[op]
        self.take("punct", "(")
        inputs = []
        for n in range(opdef.arity):
            if n:
                self.take("punct", ",")
            inputs.append(self.expr())
        params = []
        for name, typ in opdef.params:
            self.take("punct", ",")
            key = self.take("name")
            if key[1] != name:
                self.error(f"expected parameter {name!r}", key)
            self.take("punct", "=")
            params.append(self.value(typ))
        self.take("punct", ")")
        try:
            return self.builder.add(op, params, inputs)
        except ValueError as exc:
            self.error(str(exc), tok)

    def kwargs(self, names):
        self.take("punct", "(")
        out = {}
        for n, name in enumerate(names):
            if n:
                self.take("punct", ",")
            key = self.take("name")
            if key[1] != name:
                self.error(f"expected field {name!r}", key)
            self.take("punct", "=")
            out[name] = self.take()
        self.take("punct", ")")
        return out

    def number(self, tok, typ):
        if tok[0] != "num":
            self.error("expected number", tok)
        try:
            return typ(tok[1])
        except ValueError:
            self.error(f"expected {typ.__name__}", tok)

    def value(self, typ):
        start = self.peek()
        if typ is float:
            return self.number(self.take(), float)
        if typ is str:
            return self.take("name")[1]
        try:
            if typ is StructuringElement:
                self.take("name", "ellipse")
                f = self.kwargs(("theta", "k", "ratio"))
                return StructuringElement(self.number(f["theta"], float), self.number(f["k"], int),
                                          self.number(f["ratio"], float))
            if typ is ViolaJonesKernel:
                self.take("name", "vj")
                f = self.kwargs(("kind", "w", "h", "x", "y"))
                return ViolaJonesKernel(f["kind"][1], *(self.number(f[k], int)
                                                        for k in ("w", "h", "x", "y")))
        except ValueError as exc:
            if isinstance(exc, ProgramSyntaxError):
                raise
            self.error(f"invalid {typ.__name__}: {exc}", start)
        raise TypeError(typ)


def parse_program(text: str) -> FeatureProgram:
    return _Parser(text).program()
