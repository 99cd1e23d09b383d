"""Minimal CPLEX-LP text model: build, write deterministically, read back.

Only the subset needed for linear MILPs is supported: one linear objective,
named linear rows with <=, >= or = senses, variable bounds and the General
and Binary sections.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

_SENSES = ("<=", ">=", "=")
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\[\]]*$")
_TERMS_PER_LINE = 6


def _num(v):
    v = float(v)
    if v == math.inf:
        return "inf"
    if v == -math.inf:
        return "-inf"
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


@dataclass
class Row:
    name: str
    coeffs: dict  # var -> coefficient, insertion order is write order
    sense: str
    rhs: float

    def activity(self, values):
        return sum(c * values.get(v, 0.0) for v, c in self.coeffs.items())

    def satisfied(self, values, tol=1e-7):
        lhs = self.activity(values)
        if self.sense == "<=":
            return lhs <= self.rhs + tol
        if self.sense == ">=":
            return lhs >= self.rhs - tol
        return abs(lhs - self.rhs) <= tol


@dataclass
class LPModel:
    objective: dict = field(default_factory=dict)
    sense: str = "minimize"
    rows: list = field(default_factory=list)
    bounds: dict = field(default_factory=dict)  # var -> (lo, hi); default (0, inf)
    general: list = field(default_factory=list)
    binary: list = field(default_factory=list)
    variables: list = field(default_factory=list)  # declaration order
    comments: list = field(default_factory=list)

    def add_var(self, name, lo=0.0, hi=math.inf, kind="continuous"):
        if not _NAME.match(name):
            raise ValueError(f"bad variable name {name!r}")
        if name in self.bounds:
            raise ValueError(f"duplicate variable {name!r}")
        self.variables.append(name)
        self.bounds[name] = (float(lo), float(hi))
        if kind == "binary":
            self.binary.append(name)
        elif kind == "integer":
            self.general.append(name)
        elif kind != "continuous":
            raise ValueError(f"unknown variable kind {kind!r}")
        return name

    def add_row(self, name, coeffs, sense, rhs):
        if sense not in _SENSES:
            raise ValueError(f"bad sense {sense!r}")
        for v in coeffs:
            if v not in self.bounds:
                raise KeyError(f"row {name}: undeclared variable {v}")
        self.rows.append(Row(name, dict(coeffs), sense, float(rhs)))

    def violations(self, values, tol=1e-7):
        """Names of rows, bounds and integrality conditions broken by ``values``.

        Variables missing from ``values`` count as zero.
        """
        bad = [r.name for r in self.rows if not r.satisfied(values, tol)]
        for v in self.variables:
            x = values.get(v, 0.0)
            lo, hi = self.bounds[v]
            if x < lo - tol or x > hi + tol:
                bad.append(f"bound:{v}")
            if (v in self._integral) and abs(x - round(x)) > tol:
                bad.append(f"integrality:{v}")
        return bad

    @property
    def _integral(self):
        return set(self.general) | set(self.binary)

    def _appearance_order(self):
        # the order a reader meets the variables, so text round-trips exactly
        seen = dict.fromkeys(self.objective)
        for r in self.rows:
            seen.update(dict.fromkeys(r.coeffs))
        seen.update(dict.fromkeys(self.variables))
        return list(seen)

    def objective_value(self, values):
        return sum(c * values.get(v, 0.0) for v, c in self.objective.items())

    def to_text(self):
        out = [f"\\ {c}" if c else "\\" for c in self.comments]
        out.append("Minimize" if self.sense == "minimize" else "Maximize")
        out.extend(_expr_lines(" obj:", self.objective))
        out.append("Subject To")
        for r in self.rows:
            lines = _expr_lines(f" {r.name}:", r.coeffs)
            lines[-1] += f" {r.sense} {_num(r.rhs)}"
            out.extend(lines)
        out.append("Bounds")
        for v in self._appearance_order():
            lo, hi = self.bounds[v]
            if v in self.binary and (lo, hi) == (0.0, 1.0):
                continue
            if (lo, hi) == (0.0, math.inf):
                continue
            if lo == -math.inf and hi == math.inf:
                out.append(f" {v} free")
            else:
                out.append(f" {_num(lo)} <= {v} <= {_num(hi)}")
        if self.general:
            out.append("General")
            out.extend(_wrap(self.general))
        if self.binary:
            out.append("Binary")
            out.extend(_wrap(self.binary))
        out.append("End")
        return "\n".join(out) + "\n"


def _wrap(names):
    return [" " + " ".join(names[k:k + 8]) for k in range(0, len(names), 8)]


def _expr_lines(head, coeffs):
    terms = []
    for v, c in coeffs.items():
        sign = "-" if c < 0 else "+"
        terms.append(f"{sign} {_num(abs(c))} {v}")
    lines = [head]
    for k, t in enumerate(terms):
        if k and k % _TERMS_PER_LINE == 0:
            lines.append("  ")
        lines[-1] += " " + t
    return lines


class LPParseError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


_SECTIONS = {
    "minimize": "obj", "minimise": "obj", "min": "obj",
    "maximize": "obj", "maximise": "obj", "max": "obj",
    "subject to": "rows", "such that": "rows", "st": "rows", "s.t.": "rows",
    "bounds": "bounds", "general": "general", "generals": "general", "gen": "general",
    "binary": "binary", "binaries": "binary", "bin": "binary", "end": "end",
}


def _parse_float(tok, line):
    t = tok.lower()
    if t in ("inf", "+inf", "infinity", "+infinity"):
        return math.inf
    if t in ("-inf", "-infinity"):
        return -math.inf
    try:
        return float(tok)
    except ValueError:
        raise LPParseError(f"expected a number, got {tok!r}", line) from None


def _parse_expr(tokens, line):
    """[(coefficient, var)] from a token list of signs, numbers and names."""
    coeffs = {}
    sign, coef = 1.0, None
    for tok in tokens:
        if tok in ("+", "-"):
            if coef is not None:
                raise LPParseError("dangling coefficient", line)
            sign = sign * (-1.0 if tok == "-" else 1.0)
            continue
        try:
            val = float(tok)
        except ValueError:
            val = None
        if val is not None:
            if coef is not None:
                raise LPParseError("two numbers in a row", line)
            coef = val
            continue
        if not _NAME.match(tok):
            raise LPParseError(f"bad token {tok!r}", line)
        coeffs[tok] = coeffs.get(tok, 0.0) + sign * (1.0 if coef is None else coef)
        sign, coef = 1.0, None
    if coef is not None:
        raise LPParseError("expression ends with a bare number", line)
    return coeffs


def parse_lp(text):
    """Parse LP text written by :meth:`LPModel.to_text` (and similar files)."""
    model = LPModel()
    section = None
    chunks = {"obj": [], "rows": [], "bounds": [], "general": [], "binary": []}
    seen_end = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        if raw.startswith("\\"):
            model.comments.append(raw[1:].strip())
            continue
        line = raw.split("\\", 1)[0].strip()
        if not line:
            continue
        key = line.lower()
        if key in _SECTIONS:
            section = _SECTIONS[key]
            if section == "end":
                seen_end = True
                break
            if section == "obj":
                model.sense = "minimize" if key.startswith("min") else "maximize"
            continue
        if section is None:
            raise LPParseError("content before the objective section", lineno)
        chunks[section].append((lineno, line))
    if not seen_end:
        raise LPParseError("missing End")

    # declare variables in first-appearance order
    def declare(v):
        if v not in model.bounds:
            model.variables.append(v)
            model.bounds[v] = (0.0, math.inf)

    for group in _split_named(chunks["obj"]):
        name, line, toks = group
        model.objective = _parse_expr(toks, line)
        for v in model.objective:
            declare(v)
    for name, line, toks in _split_named(chunks["rows"]):
        if name is None:
            raise LPParseError("unnamed constraint", line)
        idx = [k for k, t in enumerate(toks) if t in ("<=", ">=", "=", "=<", "=>")]
        if len(idx) != 1 or idx[0] != len(toks) - 2:
            raise LPParseError(f"constraint {name}: expected '<expr> <sense> <rhs>'", line)
        sense = {"=<": "<=", "=>": ">="}.get(toks[idx[0]], toks[idx[0]])
        coeffs = _parse_expr(toks[: idx[0]], line)
        for v in coeffs:
            declare(v)
        model.rows.append(Row(name, coeffs, sense, _parse_float(toks[-1], line)))
    for lineno, line in chunks["bounds"]:
        toks = line.split()
        if len(toks) == 2 and toks[1].lower() == "free":
            declare(toks[0])
            model.bounds[toks[0]] = (-math.inf, math.inf)
        elif len(toks) == 5 and toks[1] == "<=" and toks[3] == "<=":
            declare(toks[2])
            model.bounds[toks[2]] = (_parse_float(toks[0], lineno), _parse_float(toks[4], lineno))
        elif len(toks) == 3 and toks[1] in ("<=", ">="):
            declare(toks[0])
            lo, hi = model.bounds[toks[0]]
            val = _parse_float(toks[2], lineno)
            model.bounds[toks[0]] = (lo, val) if toks[1] == "<=" else (val, hi)
        else:
            raise LPParseError(f"unsupported bound {line!r}", lineno)
    for sect, target in (("general", model.general), ("binary", model.binary)):
        for lineno, line in chunks[sect]:
            for v in line.split():
                if not _NAME.match(v):
                    raise LPParseError(f"bad variable name {v!r}", lineno)
                declare(v)
                target.append(v)
    for v in model.binary:
        lo, hi = model.bounds[v]
        model.bounds[v] = (max(lo, 0.0), min(hi, 1.0))
    return model


def _split_named(lines):
    """Group section lines into (name, first line, tokens) items."""
    groups = []
    for lineno, line in lines:
        toks = line.split()
        for tok in toks:
            if tok.endswith(":") and len(tok) > 1:
                groups.append([tok[:-1], lineno, []])
            else:
                if not groups:
                    groups.append([None, lineno, []])
                groups[-1][2].append(tok)
    return [tuple(g) for g in groups]


def read_lp(path):
    with open(path) as fh:
        return parse_lp(fh.read())
