"""Parser, validator and canonical serializer for ``.qsx`` experiment files.

A ``.qsx`` file is a list of bracketed sections holding ``key = value unit``
lines. ``[sequence NAME]`` sections instead contain pulse statements::

    [field]
    B0 = 350 mT
    theta = 0 deg

    [sequence cpmg32]
    pulse(inner, pi/2, 10us, 0)
    repeat 32 { wait(1ms) pulse(inner, pi, 10us, 0) wait(1ms) }

Values are normalized to SI on parsing (Hz, s, T, V/m^2, m^2, Pa, rad).
The full grammar and unit table are in ``docs/qsx.md``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field as dc_field, fields, replace
from typing import Any, NamedTuple

from .dynamics import Delay, Loop, Pulse, PulseSequence

__all__ = [
    "Diagnostic",
    "ConfigError",
    "Quantity",
    "ExperimentConfig",
    "SystemSection",
    "FieldSection",
    "StrainSection",
    "TensorSSection",
    "SweepSection",
    "BroadeningSection",
    "NoiseSection",
    "EndorSection",
    "OutputSection",
    "UNITS",
    "parse",
    "parse_with_diagnostics",
    "serialize",
    "validate",
]

# dimension -> {unit: factor to SI}; the first entry is the canonical unit
UNITS: dict[str, dict[str, float]] = {
    "field": {"T": 1.0, "Tesla": 1.0, "tesla": 1.0, "mT": 1e-3, "uT": 1e-6, "µT": 1e-6,
              "G": 1e-4, "gauss": 1e-4},
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "ns": 1e-9},
    "angle": {"rad": 1.0, "deg": math.pi / 180, "degree": math.pi / 180, "degrees": math.pi / 180,
              "pi": math.pi, "pi/2": math.pi / 2, "pi/4": math.pi / 4},
    "area": {"m2": 1.0, "m^2": 1.0, "fm2": 1e-30, "fm^2": 1e-30, "barn": 1e-28, "b": 1e-28},
    "efg": {"V/m2": 1.0, "V/m^2": 1.0},
    "pressure": {"Pa": 1.0, "MPa": 1e6, "GPa": 1e9},
    "strain": {"": 1.0, "ppm": 1e-6},
    "none": {"": 1.0},
}
_DIM_NAMES = {"field": "magnetic field", "frequency": "frequency", "time": "time", "angle": "angle",
              "area": "area", "efg": "field gradient", "pressure": "pressure", "strain": "strain",
              "none": "dimensionless"}
_UNIT_DIM = {}
for _dim, _table in UNITS.items():
    for _u in _table:
        if _u:
            _UNIT_DIM.setdefault(_u, _dim)


def _scale(value: float, factor: float) -> float:
    # divide by decimal prefixes so that 350 mT and 0.35 T give the same double
    if factor < 1:
        inv = round(1 / factor)
        if inv > 1 and abs(inv * factor - 1) < 1e-12:
            return value / inv
    return value * factor


class Diagnostic(NamedTuple):
    severity: str  # "error" | "warning"
    line: int
    column: int
    message: str
    token: str = ""

    def __str__(self):
        tok = f" [{self.token}]" if self.token else ""
        return f"{self.line}:{self.column}: {self.severity}: {self.message}{tok}"


class ConfigError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


class Quantity(NamedTuple):
    value: float
    dim: str


def _k(kind, default=None, **extra):
    return dc_field(default=default, metadata={"kind": kind, **extra})


@dataclass(frozen=True)
class SystemSection:
    I: float = _k("spin", 1.5)
    g_n: float = _k("none", 0.9558)
    q: float = _k("area", 3.14e-29)
    g_n_free: float = _k("none", 0.95965)


@dataclass(frozen=True)
class FieldSection:
    B0: float | None = _k("field", None, required=True)
    theta: float = _k("angle", 0.0)
    phi: float = _k("angle", 0.0)


@dataclass(frozen=True)
class StrainSection:
    mode: str = _k(("stack-100", "stack-111", "uniaxial", "tensor", "none"), "none")
    eps_par: float | None = _k("strain")
    eps_perp: float | None = _k("strain")
    perp_model: str = _k(("elastic", "equal-100"), "elastic")
    eps_long: float | None = _k("strain")
    eps_trans: float | None = _k("strain")
    axis: str = _k(("100", "110", "111"), "111")
    exx: float | None = _k("strain")
    eyy: float | None = _k("strain")
    ezz: float | None = _k("strain")
    exy: float | None = _k("strain")
    exz: float | None = _k("strain")
    eyz: float | None = _k("strain")
    C11: float = _k("pressure", 165.7e9)
    C12: float = _k("pressure", 63.9e9)
    C44: float = _k("pressure", 79.6e9)


@dataclass(frozen=True)
class TensorSSection:
    S11: float = _k("efg", 1.5e22)
    S44: float = _k("efg", 6.8e22)
    shear: str = _k(("tensor", "engineering"), "tensor")


@dataclass(frozen=True)
class SweepSection:
    variable: str | None = _k("ident", None, required=True)
    start: Quantity | None = _k("any", None, required=True)
    stop: Quantity | None = _k("any", None, required=True)
    points: int = _k("int", 91)


@dataclass(frozen=True)
class BroadeningSection:
    spread: float = _k("frequency", 0.0)
    asymmetry: float = _k("none", 0.0)
    shape: str = _k(("gaussian", "one-sided-exponential"), "gaussian")


@dataclass(frozen=True)
class NoiseSection:
    alpha: float = _k("none", 1.0)
    amplitude: float = _k("none", 0.0)
    T2: float | None = _k("time")
    calibrate_n: int = _k("int", 1)
    low_cutoff: float = _k("frequency", 0.01)
    high_cutoff: float = _k("frequency", 1e6)
    pulses: tuple = _k("intlist", (1, 2, 4, 8, 16, 32))
    transition: str = _k(("inner", "outer"), "inner")


@dataclass(frozen=True)
class EndorSection:
    efficiency: float = _k("none", 1.0)
    pulse_duration: float = _k("time", 400e-6)
    rf_start: float | None = _k("frequency")
    rf_stop: float | None = _k("frequency")
    points: int = _k("int", 500)
    t_antiparallel: float = _k("time", 5e-6)
    t_parallel: float = _k("time", 6e-4)
    fields: str = _k(("same", "edmr"), "same")
    mw_frequency: float = _k("frequency", 9.7e9)


@dataclass(frozen=True)
class OutputSection:
    format: str = _k(("csv", "json"), "csv")
    seed: int = _k("int", 0)


_SECTIONS = {
    "system": ("system", SystemSection),
    "field": ("field", FieldSection),
    "strain": ("strain", StrainSection),
    "tensor-S": ("tensor_s", TensorSSection),
    "sweep": ("sweep", SweepSection),
    "broadening": ("broadening", BroadeningSection),
    "noise": ("noise", NoiseSection),
    "endor": ("endor", EndorSection),
    "output": ("output", OutputSection),
}
_REQUIRED_SECTIONS = ("system", "field")


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemSection = SystemSection()
    field: FieldSection = FieldSection()
    strain: StrainSection = StrainSection()
    tensor_s: TensorSSection = TensorSSection()
    sweep: SweepSection | None = None
    broadening: BroadeningSection = BroadeningSection()
    noise: NoiseSection | None = None
    endor: EndorSection = EndorSection()
    output: OutputSection = OutputSection()
    sequences: tuple = ()
    # source positions "section" / "section.key" -> (line, column)
    positions: dict = dc_field(default_factory=dict, compare=False, repr=False)

    def sequence(self, name: str) -> PulseSequence:
        for seq in self.sequences:
            if seq.name == name:
                return seq
        raise KeyError(name)


# --------------------------------------------------------------------- lexer

class Token(NamedTuple):
    kind: str
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<number>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_µ][A-Za-z0-9_µ^/+\-]*)
  | (?P<punct>[\[\]=(){},/])
""", re.VERBOSE)
_PUNCT = {"[": "LBRACK", "]": "RBRACK", "=": "EQ", "(": "LPAREN", ")": "RPAREN",
          "{": "LBRACE", "}": "RBRACE", ",": "COMMA", "/": "SLASH"}


def _lex(text: str, diags: list[Diagnostic]) -> list[Token]:
    toks: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            end = pos + 1
            while end < len(text) and _TOKEN_RE.match(text, end) is None:
                end += 1
            bad = text[pos:end]
            diags.append(Diagnostic("error", line, col, f"unexpected character(s) {bad!r}", bad))
            toks.append(Token("BAD", bad, line, col))
            pos = end
            continue
        kind = m.lastgroup
        s = m.group()
        if kind == "newline":
            toks.append(Token("NEWLINE", s, line, col))
            line += 1
            line_start = m.end()
        elif kind == "number":
            toks.append(Token("NUMBER", s, line, col))
        elif kind == "ident":
            toks.append(Token("IDENT", s, line, col))
        elif kind == "punct":
            toks.append(Token(_PUNCT[s], s, line, col))
        pos = m.end()
    toks.append(Token("EOF", "", line, pos - line_start + 1))
    return toks


# -------------------------------------------------------------------- parser

class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.diags: list[Diagnostic] = []
        self.toks = _lex(text, self.diags)
        self.i = 0
        self.positions: dict = {}

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def advance(self) -> Token:
        t = self.toks[self.i]
        if t.kind != "EOF":
            self.i += 1
        return t

    def error(self, tok: Token, msg: str):
        if tok.kind == "BAD":
            return  # already reported by the lexer
        line, col = tok.line, tok.col
        if tok.kind == "EOF":
            # point at the last character of the source
            line, col = self._last_position()
        self.diags.append(Diagnostic("error", line, col, msg, tok.text))

    def _last_position(self):
        lines = self.text.split("\n")
        while len(lines) > 1 and lines[-1] == "":
            lines.pop()
        return len(lines), max(1, len(lines[-1]))

    def skip_line(self):
        while self.tok.kind not in ("NEWLINE", "EOF"):
            self.advance()

    def skip_newlines(self):
        while self.tok.kind == "NEWLINE":
            self.advance()

    def at_line_end(self) -> bool:
        return self.tok.kind in ("NEWLINE", "EOF")

    # grammar
    def parse(self) -> ExperimentConfig | None:
        values: dict[str, Any] = {}
        seen: set[str] = set()
        sequences: dict[str, PulseSequence] = {}
        self.skip_newlines()
        while self.tok.kind != "EOF":
            if self.tok.kind != "LBRACK":
                self.error(self.tok, "expected a section header '[name]'")
                self.skip_line()
                self.skip_newlines()
                continue
            header = self.advance()
            name_tok = self.tok
            if name_tok.kind != "IDENT":
                self.error(name_tok, "expected a section name")
                self.skip_line()
                self.skip_newlines()
                self._skip_body()
                continue
            self.advance()
            label = None
            if self.tok.kind in ("IDENT", "NUMBER"):
                label = self.advance()
            if self.tok.kind != "RBRACK":
                self.error(self.tok, "expected ']' to close the section header")
                self.skip_line()
            else:
                self.advance()
                if not self.at_line_end():
                    self.error(self.tok, "unexpected text after section header")
                    self.skip_line()
            self.skip_newlines()
            name = name_tok.text
            if name == "sequence":
                if label is None:
                    self.error(name_tok, "sequence section needs a name, e.g. [sequence echo]")
                    self._parse_sequence_body()
                    continue
                key = f"sequence {label.text}"
                events = self._parse_sequence_body()
                if key in seen:
                    self.error(name_tok, f"duplicate section [{key}]")
                    continue
                seen.add(key)
                self.positions[key] = (header.line, header.col)
                if events is not None:
                    sequences[label.text] = PulseSequence(tuple(events), label.text)
                continue
            if name not in _SECTIONS:
                self.error(name_tok, f"unknown section [{name}]")
                self._skip_body()
                continue
            if label is not None:
                self.error(label, f"section [{name}] takes no name")
            if name in seen:
                self.error(name_tok, f"duplicate section [{name}]")
                self._parse_keys(_SECTIONS[name][1], name)
                continue
            seen.add(name)
            self.positions[name] = (header.line, header.col)
            values[name] = self._parse_keys(_SECTIONS[name][1], name)
        for req in _REQUIRED_SECTIONS:
            if req not in seen:
                line, col = (1, 1)
                self.diags.append(Diagnostic("error", line, col, f"missing required section [{req}]", ""))
        if any(d.severity == "error" for d in self.diags):
            return None
        kwargs = {}
        for name, obj in values.items():
            kwargs[_SECTIONS[name][0]] = obj
        order = sorted(sequences)
        return ExperimentConfig(**kwargs, sequences=tuple(sequences[n] for n in order),
                                positions=self.positions)

    def _skip_body(self):
        while self.tok.kind not in ("LBRACK", "EOF"):
            self.skip_line()
            self.skip_newlines()

    def _parse_keys(self, cls, section: str):
        spec = {f.name: f for f in fields(cls)}
        got: dict[str, Any] = {}
        attempted: set[str] = set()
        while self.tok.kind not in ("LBRACK", "EOF"):
            key_tok = self.tok
            if key_tok.kind != "IDENT":
                self.error(key_tok, "expected 'key = value'")
                self.skip_line()
                self.skip_newlines()
                continue
            self.advance()
            if self.tok.kind != "EQ":
                self.error(self.tok, f"expected '=' after {key_tok.text!r}")
                self.skip_line()
                self.skip_newlines()
                continue
            self.advance()
            f = spec.get(key_tok.text)
            if f is None:
                self.error(key_tok, f"unknown key {key_tok.text!r} in [{section}]")
                self.skip_line()
                self.skip_newlines()
                continue
            attempted.add(f.name)
            value = self._parse_value(f.metadata["kind"], key_tok.text)
            if value is _BAD:
                self.skip_line()
            elif not self.at_line_end():
                self.error(self.tok, "unexpected text after value")
                self.skip_line()
            elif f.name in got:
                self.error(key_tok, f"duplicate key {key_tok.text!r} in [{section}]")
            else:
                got[f.name] = value
                self.positions[f"{section}.{f.name}"] = (key_tok.line, key_tok.col)
            self.skip_newlines()
        header = self.positions.get(section, (1, 1))
        for f in fields(cls):
            if f.metadata.get("required") and f.name not in attempted:
                self.diags.append(Diagnostic("error", header[0], header[1],
                                             f"missing required key {f.name!r} in [{section}]", section))
        try:
            return cls(**got)
        except (TypeError, ValueError) as exc:
            self.diags.append(Diagnostic("error", header[0], header[1], str(exc), section))
            return None

    # values
    def _number(self) -> float | object:
        tok = self.advance()
        val = float(tok.text)
        if self.tok.kind == "SLASH":
            self.advance()
            if self.tok.kind != "NUMBER":
                self.error(self.tok, "expected a denominator after '/'")
                return _BAD
            den = float(self.advance().text)
            if den == 0:
                self.error(tok, "division by zero")
                return _BAD
            val /= den
        return val

    def _parse_value(self, kind, key: str, stop=("NEWLINE", "EOF")):
        tok = self.tok
        if isinstance(kind, tuple):
            if tok.kind not in ("IDENT", "NUMBER"):
                self.error(tok, f"expected one of {', '.join(kind)} for {key!r}")
                return _BAD
            self.advance()
            if tok.text not in kind:
                self.error(tok, f"invalid value {tok.text!r} for {key!r}; expected one of {', '.join(kind)}")
                return _BAD
            return tok.text
        if kind == "ident":
            if tok.kind != "IDENT":
                self.error(tok, f"expected a name for {key!r}")
                return _BAD
            return self.advance().text
        if kind == "int":
            if tok.kind != "NUMBER" or not re.fullmatch(r"[+-]?\d+", tok.text):
                self.error(tok, f"expected an integer for {key!r}")
                if tok.kind == "NUMBER":
                    self.advance()
                return _BAD
            return int(self.advance().text)
        if kind == "intlist":
            items = []
            while True:
                t = self.tok
                if t.kind != "NUMBER" or not re.fullmatch(r"[+-]?\d+", t.text):
                    self.error(t, f"expected an integer in the list for {key!r}")
                    return _BAD
                items.append(int(self.advance().text))
                if self.tok.kind != "COMMA":
                    break
                self.advance()
            return tuple(items)
        if kind == "spin":
            if tok.kind != "NUMBER":
                self.error(tok, f"expected a spin quantum number for {key!r}")
                return _BAD
            val = self._number()
            if val is _BAD:
                return _BAD
            if abs(2 * val - round(2 * val)) > 1e-12 or val < 0.5:
                self.error(tok, f"spin must be a positive half-integer, got {val}")
                return _BAD
            return val
        return self._parse_quantity(kind, key)

    def _parse_quantity(self, dim: str, key: str):
        tok = self.tok
        val = 1.0
        has_number = False
        if tok.kind == "NUMBER":
            val = self._number()
            if val is _BAD:
                return _BAD
            has_number = True
        unit_tok = self.tok if self.tok.kind == "IDENT" else None
        if unit_tok is None:
            if not has_number:
                self.error(tok, f"expected a value for {key!r}")
                return _BAD
            if dim == "any":
                return Quantity(val, "none")
            return _scale(val, UNITS[dim].get("", 1.0))
        self.advance()
        unit = unit_tok.text
        udim = _UNIT_DIM.get(unit)
        if udim is None:
            self.error(unit_tok, f"unknown unit {unit!r}")
            return _BAD
        if dim == "any":
            return Quantity(_scale(val, UNITS[udim][unit]), udim)
        if unit not in UNITS[dim]:
            self.error(unit_tok, f"unit mismatch: {unit!r} is a {_DIM_NAMES[udim]} unit, "
                                 f"{key!r} expects {_DIM_NAMES[dim]}")
            return _BAD
        return _scale(val, UNITS[dim][unit])

    # sequences
    def _parse_sequence_body(self):
        events = []
        ok = True
        while self.tok.kind not in ("LBRACK", "EOF"):
            if self.tok.kind == "NEWLINE":
                self.advance()
                continue
            ev = self._statement()
            if ev is _BAD:
                ok = False
                self._recover_statement()
            else:
                events.append(ev)
        return events if ok else None

    def _recover_statement(self):
        while self.tok.kind not in ("NEWLINE", "EOF", "RBRACE", "LBRACK"):
            self.advance()

    def _statement(self):
        tok = self.tok
        if tok.kind == "RBRACE":
            self.error(tok, "unmatched '}'")
            self.advance()
            return _BAD
        if tok.kind != "IDENT" or tok.text not in ("pulse", "wait", "repeat"):
            self.error(tok, "expected 'pulse(...)', 'wait(...)' or 'repeat N { ... }'")
            return _BAD
        self.advance()
        if tok.text == "repeat":
            return self._repeat(tok)
        if self.tok.kind != "LPAREN":
            self.error(self.tok, f"expected '(' after {tok.text}")
            return _BAD
        self.advance()
        if tok.text == "wait":
            d = self._parse_quantity("time", "wait duration")
            if d is _BAD or not self._expect("RPAREN", "')'"):
                return _BAD
            if d <= 0:
                self.error(tok, "wait duration must be positive")
                return _BAD
            return Delay(d)
        args = []
        kinds = ("ident", "angle", "time", "angle")
        names = ("transition", "flip", "duration", "phase")
        for n, (kind, label) in enumerate(zip(kinds, names)):
            if kind == "ident":
                if self.tok.kind != "IDENT":
                    self.error(self.tok, "expected a transition name (inner, outer+, outer-)")
                    return _BAD
                args.append(self.advance().text)
            else:
                v = self._parse_quantity(kind, f"pulse {label}")
                if v is _BAD:
                    return _BAD
                args.append(v)
            if n < 3 and not self._expect("COMMA", "','"):
                return _BAD
        if not self._expect("RPAREN", "')'"):
            return _BAD
        transition, flip, duration, phase = args
        if duration <= 0:
            self.error(tok, "pulse duration must be positive")
            return _BAD
        return Pulse(flip=flip, duration=duration, phase=phase, transition=transition)

    def _expect(self, kind: str, what: str) -> bool:
        if self.tok.kind != kind:
            self.error(self.tok, f"expected {what}")
            return False
        self.advance()
        return True

    def _repeat(self, rep_tok: Token):
        count_tok = self.tok
        if count_tok.kind != "NUMBER" or not re.fullmatch(r"\+?\d+", count_tok.text):
            self.error(count_tok, "expected a repeat count")
            return _BAD
        self.advance()
        count = int(count_tok.text)
        if count < 1:
            self.error(count_tok, "repeat count must be >= 1")
            return _BAD
        self.skip_newlines()
        if not self._expect("LBRACE", "'{'"):
            return _BAD
        body = []
        ok = True
        while True:
            if self.tok.kind == "NEWLINE":
                self.advance()
                continue
            if self.tok.kind in ("EOF", "LBRACK"):
                self.error(rep_tok, "unclosed repeat block")
                return _BAD
            if self.tok.kind == "RBRACE":
                self.advance()
                break
            ev = self._statement()
            if ev is _BAD:
                ok = False
                self._recover_statement()
            else:
                body.append(ev)
        if not ok:
            return _BAD
        if not body:
            self.error(rep_tok, "empty repeat block")
            return _BAD
        return Loop(count, tuple(body))


_BAD = object()


def parse_with_diagnostics(text: str) -> tuple[ExperimentConfig | None, list[Diagnostic]]:
    p = _Parser(text)
    cfg = p.parse()
    return cfg, p.diags


def parse(text: str) -> ExperimentConfig:
    """Parse ``.qsx`` text; raises :class:`ConfigError` with all diagnostics on failure."""
    cfg, diags = parse_with_diagnostics(text)
    if cfg is None:
        raise ConfigError(diags)
    return cfg


# ---------------------------------------------------------------- serializer

def _fmt_float(v: float) -> str:
    return repr(float(v))


def _fmt_value(kind, v) -> str:
    if isinstance(kind, tuple) or kind == "ident":
        return str(v)
    if kind == "int":
        return str(int(v))
    if kind == "intlist":
        return ", ".join(str(int(x)) for x in v)
    if kind == "spin":
        return _fmt_float(v)
    if kind == "any":
        return _fmt_quantity(v.value, v.dim)
    return _fmt_quantity(v, kind)


def _fmt_quantity(v: float, dim: str) -> str:
    unit = next(iter(UNITS[dim]))
    return f"{_fmt_float(v)} {unit}".rstrip()


def _fmt_events(events, indent: str) -> list[str]:
    lines = []
    for ev in events:
        if isinstance(ev, Pulse):
            lines.append(f"{indent}pulse({ev.transition}, {_fmt_quantity(ev.flip, 'angle')}, "
                         f"{_fmt_quantity(ev.duration, 'time')}, {_fmt_quantity(ev.phase, 'angle')})")
        elif isinstance(ev, Delay):
            lines.append(f"{indent}wait({_fmt_quantity(ev.duration, 'time')})")
        else:
            lines.append(f"{indent}repeat {ev.count} {{")
            lines.extend(_fmt_events(ev.body, indent + "    "))
            lines.append(f"{indent}}}")
    return lines


def serialize(cfg: ExperimentConfig) -> str:
    """Canonical text: fixed section and key order, SI units, full precision."""
    out: list[str] = []
    for name, (attr, cls) in _SECTIONS.items():
        sec = getattr(cfg, attr)
        if sec is None:
            continue
        out.append(f"[{name}]")
        for f in fields(cls):
            v = getattr(sec, f.name)
            if v is None:
                continue
            out.append(f"{f.name} = {_fmt_value(f.metadata['kind'], v)}")
        out.append("")
    for seq in cfg.sequences:
        out.append(f"[sequence {seq.name}]")
        out.extend(_fmt_events(seq.events, ""))
        out.append("")
    return "\n".join(out)


# ----------------------------------------------------------------- validator

_SWEEP_DIMS = {"theta": "angle", "phi": "angle", "B0": "field", "strain": "strain"}
_STRAIN_KEYS = {
    "stack-100": ({"eps_par"}, {"eps_par", "eps_perp", "perp_model"}),
    "stack-111": ({"eps_par"}, {"eps_par", "eps_perp", "perp_model"}),
    "uniaxial": ({"eps_long"}, {"eps_long", "eps_trans", "axis"}),
    "tensor": (set(), {"exx", "eyy", "ezz", "exy", "exz", "eyz"}),
    "none": (set(), set()),
}
_ALL_STRAIN_VALUES = {"eps_par", "eps_perp", "eps_long", "eps_trans", "exx", "eyy", "ezz", "exy", "exz", "eyz"}


def _pos(cfg: ExperimentConfig, *keys) -> tuple[int, int]:
    for k in keys:
        if k in cfg.positions:
            return cfg.positions[k]
    return (1, 1)


def _walk_pulses(events):
    for ev in events:
        if isinstance(ev, Loop):
            yield from _walk_pulses(ev.body)
        elif isinstance(ev, Pulse):
            yield ev


def validate(cfg: ExperimentConfig) -> list[Diagnostic]:
    """Cross-field checks; returns diagnostics (never raises)."""
    diags: list[Diagnostic] = []

    def add(sev, msg, *keys, token=""):
        line, col = _pos(cfg, *keys)
        diags.append(Diagnostic(sev, line, col, msg, token))

    st = cfg.strain
    required, allowed = _STRAIN_KEYS[st.mode]
    for key in sorted(required):
        if getattr(st, key) is None:
            add("error", f"strain mode {st.mode} requires {key!r}", "strain.mode", "strain", token=key)
    if st.mode == "tensor" and all(getattr(st, k) is None for k in allowed):
        add("error", "strain mode tensor requires at least one component", "strain.mode", "strain")
    for key in sorted(_ALL_STRAIN_VALUES - allowed):
        if getattr(st, key) is not None:
            add("warning", f"{key!r} is ignored in strain mode {st.mode}", f"strain.{key}", token=key)
    if st.mode == "stack-100" and st.perp_model != "elastic":
        add("warning", "perp_model only affects stack-111", "strain.perp_model")

    if cfg.sweep is not None:
        sw = cfg.sweep
        if sw.variable not in _SWEEP_DIMS:
            add("error", f"sweep variable {sw.variable!r} is not defined; expected one of "
                         f"{', '.join(_SWEEP_DIMS)}", "sweep.variable", "sweep", token=str(sw.variable))
        else:
            want = _SWEEP_DIMS[sw.variable]
            for key in ("start", "stop"):
                q = getattr(sw, key)
                if q.dim != want and not (q.dim == "none" and want in ("strain", "angle")):
                    add("error", f"sweep {key} has {_DIM_NAMES[q.dim]} units but {sw.variable} "
                                 f"is a {_DIM_NAMES[want]}", f"sweep.{key}")
            if sw.variable == "strain" and st.mode in ("tensor", "none"):
                add("error", f"strain sweep needs a stack or uniaxial strain mode, not {st.mode}",
                    "sweep.variable", "strain.mode")
        if sw.points < 2:
            add("error", "sweep needs at least 2 points", "sweep.points", "sweep")

    valid_transitions = {"inner", "outer+", "outer-"} if abs(cfg.system.I - 1.5) < 1e-12 else set()
    for seq in cfg.sequences:
        for p in _walk_pulses(seq.events):
            if p.transition not in valid_transitions:
                add("error", f"pulse transition {p.transition!r} cannot be resolved for I = {cfg.system.I}",
                    f"sequence {seq.name}", token=str(p.transition))

    if cfg.noise is not None:
        nz = cfg.noise
        if nz.T2 is None and nz.amplitude < 0:
            add("error", "noise amplitude must be non-negative", "noise.amplitude", "noise")
        if any(n < 1 for n in nz.pulses):
            add("error", "pulse counts must be >= 1", "noise.pulses", "noise")
        if not 0 < nz.low_cutoff < nz.high_cutoff:
            add("error", "noise cutoffs must satisfy 0 < low < high", "noise.low_cutoff", "noise")
        if not 0 <= nz.alpha <= 6:
            add("error", "noise alpha must lie in [0, 6]", "noise.alpha", "noise")

    en = cfg.endor
    if (en.rf_start is None) != (en.rf_stop is None):
        add("error", "rf_start and rf_stop must be given together", "endor.rf_start", "endor.rf_stop", "endor")
    elif en.rf_start is not None and en.rf_start >= en.rf_stop:
        add("error", "rf_start must be below rf_stop", "endor.rf_start", "endor")
    if not 0 <= en.efficiency <= 1:
        add("error", "ionization efficiency must lie in [0, 1]", "endor.efficiency", "endor")
    if en.points < 10:
        add("error", "ENDOR sweep needs at least 10 points", "endor.points", "endor")

    if not any(d.severity == "error" for d in diags) and cfg.field.B0:
        try:
            from .experiment import coupling_and_larmor

            f_Q, f0 = coupling_and_larmor(cfg)
        except (ValueError, ArithmeticError) as exc:
            add("error", f"cannot evaluate strain chain: {exc}", "strain")
        else:
            if f0 > 0 and f_Q / f0 > 0.3:
                add("warning", f"f_Q/f0 = {f_Q / f0:.3g} exceeds 0.3; perturbative shift formulas unreliable",
                    "strain", "field")
    return diags


def with_section(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Copy of ``cfg`` with whole sections replaced (positions kept)."""
    return replace(cfg, **changes)
