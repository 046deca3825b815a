"""Line-oriented text formats for models and controllers.

Model format (.pomdp): '#' starts a comment anywhere; sections are

    states: w1 w2 w3          # names inline and/or on following lines
    actions: a b
    signals: s1
    signal_map:               # one "state signal" line per state
      w1 s1
    init:                     # "state prob"; omitted states carry 0
      w1 1
    payoff:                   # "state action value"; omitted entries are 0
      w1 a 1
    transition:               # "state action next prob"; omitted probs are 0,
      w1 a w2 1               # but a (state, action) row with no entry at all
                              # is an error

Serialization is canonical (declaration order, 17 significant digits), so
parse(serialize(m)) reproduces m exactly.

Controller format (.fsc) reuses the same conventions with sections
memory:, init: ("signal memory"), rule: ("memory action prob") and
update: ("memory action signal memory prob").
"""

from __future__ import annotations

import re

import numpy as np

from .errors import DuplicateEntry, ParseError, UnknownName
from .model import PomdpModel, make_model
from .strategies import FiniteStateController

_LIST_SECTIONS = ("states", "actions", "signals", "memory")
_MODEL_SECTIONS = ("states", "actions", "signals", "signal_map", "init",
                   "payoff", "transition")
_FSC_SECTIONS = ("memory", "init", "rule", "update")

_TOKEN = re.compile(r"\S+")
_NAME = re.compile(r"[A-Za-z0-9_.+-]+\Z")


def _tokenize(text):
    """Yield (line_no, [(column, token), ...]) for non-empty lines."""
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        tokens = [(m.start() + 1, m.group()) for m in _TOKEN.finditer(line)]
        if tokens:
            yield line_no, tokens


class _SectionReader:
    def __init__(self, text, known_sections, filename):
        self.filename = filename
        self.sections = {}      # name -> (header_line, [(line, tokens-after-header)])
        self.n_lines = text.count("\n") + 1
        current = None
        for line_no, tokens in _tokenize(text):
            col, first = tokens[0]
            if first.endswith(":"):
                name = first[:-1]
                if name not in known_sections:
                    raise ParseError(line_no, col, f"unknown section {name!r}",
                                     filename)
                if name in self.sections:
                    raise DuplicateEntry(line_no, col, f"section {name!r}",
                                         filename)
                self.sections[name] = (line_no, [])
                current = name
                rest = tokens[1:]
                if rest:
                    if name in _LIST_SECTIONS:
                        self.sections[name][1].append((line_no, rest))
                    else:
                        raise ParseError(
                            line_no, rest[0][0],
                            f"section {name!r} takes entries on their own lines",
                            filename,
                        )
            else:
                if current is None:
                    raise ParseError(line_no, col,
                                     f"expected a section header, got {first!r}",
                                     filename)
                self.sections[current][1].append((line_no, tokens))

    def require(self, name):
        if name not in self.sections:
            raise ParseError(self.n_lines + 1, 1,
                             f"missing required section {name!r}", self.filename)
        return self.sections[name]

    def names(self, section):
        """Read a list section into an ordered tuple of unique names."""
        header_line, rows = self.require(section)
        out = []
        seen = set()
        for line_no, tokens in rows:
            for col, tok in tokens:
                if not _NAME.match(tok):
                    raise ParseError(line_no, col, f"invalid name {tok!r}",
                                     self.filename)
                if tok in seen:
                    raise DuplicateEntry(line_no, col, f"name {tok!r}",
                                         self.filename)
                seen.add(tok)
                out.append(tok)
        if not out:
            raise ParseError(header_line, 1, f"section {section!r} is empty",
                             self.filename)
        return tuple(out)


def _lookup(index, line, col, tok, filename):
    try:
        return index[tok]
    except KeyError:
        raise UnknownName(line, col, tok, filename) from None


def _number(line, col, tok, filename):
    try:
        value = float(tok)
    except ValueError:
        raise ParseError(line, col, f"expected a number, got {tok!r}",
                         filename) from None
    if not np.isfinite(value):
        raise ParseError(line, col, f"number must be finite, got {tok!r}",
                         filename)
    return value


def _arity(line, tokens, n, what, filename):
    if len(tokens) != n:
        col = tokens[n][0] if len(tokens) > n else tokens[-1][0]
        raise ParseError(line, col,
                         f"expected {what}, got {len(tokens)} tokens", filename)


def parse_pomdp(text, filename="<string>", normalize=False) -> PomdpModel:
    """Parse and validate a model; errors carry line and column positions.

    ``normalize=True`` rescales transition rows and the initial distribution
    to unit mass before validation (never done silently).
    """
    reader = _SectionReader(text, _MODEL_SECTIONS, filename)
    states = reader.names("states")
    actions = reader.names("actions")
    signals = reader.names("signals")
    s_index = {name: i for i, name in enumerate(states)}
    a_index = {name: i for i, name in enumerate(actions)}
    g_index = {name: i for i, name in enumerate(signals)}

    signal_map = np.full(len(states), -1, dtype=np.int64)
    _, rows = reader.require("signal_map")
    for line, tokens in rows:
        _arity(line, tokens, 2, "'state signal'", filename)
        (c1, t1), (c2, t2) = tokens
        w = _lookup(s_index, line, c1, t1, filename)
        if signal_map[w] >= 0:
            raise DuplicateEntry(line, c1, f"signal for state {t1!r}", filename)
        signal_map[w] = _lookup(g_index, line, c2, t2, filename)
    missing = np.nonzero(signal_map < 0)[0]
    if missing.size:
        header_line, _ = reader.require("signal_map")
        raise ParseError(header_line, 1,
                         f"state {states[int(missing[0])]!r} has no signal entry",
                         filename)

    init = np.zeros(len(states))
    seen_init = set()
    _, rows = reader.require("init")
    for line, tokens in rows:
        _arity(line, tokens, 2, "'state prob'", filename)
        (c1, t1), (c2, t2) = tokens
        w = _lookup(s_index, line, c1, t1, filename)
        if w in seen_init:
            raise DuplicateEntry(line, c1, f"init for state {t1!r}", filename)
        seen_init.add(w)
        init[w] = _number(line, c2, t2, filename)

    payoff = np.zeros((len(states), len(actions)))
    if "payoff" in reader.sections:
        seen_payoff = set()
        for line, tokens in reader.sections["payoff"][1]:
            _arity(line, tokens, 3, "'state action value'", filename)
            (c1, t1), (c2, t2), (c3, t3) = tokens
            w = _lookup(s_index, line, c1, t1, filename)
            a = _lookup(a_index, line, c2, t2, filename)
            if (w, a) in seen_payoff:
                raise DuplicateEntry(line, c1, f"payoff ({t1!r}, {t2!r})", filename)
            seen_payoff.add((w, a))
            payoff[w, a] = _number(line, c3, t3, filename)

    transition = np.zeros((len(states), len(actions), len(states)))
    seen_rows = set()
    seen_cells = set()
    header_line, rows = reader.require("transition")
    for line, tokens in rows:
        _arity(line, tokens, 4, "'state action next prob'", filename)
        (c1, t1), (c2, t2), (c3, t3), (c4, t4) = tokens
        w = _lookup(s_index, line, c1, t1, filename)
        a = _lookup(a_index, line, c2, t2, filename)
        w2 = _lookup(s_index, line, c3, t3, filename)
        if (w, a, w2) in seen_cells:
            raise DuplicateEntry(line, c1,
                                 f"transition ({t1!r}, {t2!r}, {t3!r})", filename)
        seen_cells.add((w, a, w2))
        seen_rows.add((w, a))
        transition[w, a, w2] = _number(line, c4, t4, filename)
    for w in range(len(states)):
        for a in range(len(actions)):
            if (w, a) not in seen_rows:
                raise ParseError(
                    header_line, 1,
                    f"no transition row for state {states[w]!r}, "
                    f"action {actions[a]!r}", filename,
                )

    return make_model(states, actions, signals, signal_map, payoff, transition,
                      init, normalize=normalize)


def _fmt(value):
    return format(value, ".17g")


def serialize_pomdp(model: PomdpModel) -> str:
    """Canonical text form; parse(serialize(m)) reproduces m exactly."""
    lines = [
        "states: " + " ".join(model.state_names),
        "actions: " + " ".join(model.action_names),
        "signals: " + " ".join(model.signal_names),
        "signal_map:",
    ]
    for w, name in enumerate(model.state_names):
        lines.append(f"  {name} {model.signal_names[model.signal_of(w)]}")
    lines.append("init:")
    for w, name in enumerate(model.state_names):
        if model.init[w] != 0.0:
            lines.append(f"  {name} {_fmt(model.init[w])}")
    if np.any(model.payoff != 0.0):
        lines.append("payoff:")
        for w, sname in enumerate(model.state_names):
            for a, aname in enumerate(model.action_names):
                if model.payoff[w, a] != 0.0:
                    lines.append(f"  {sname} {aname} {_fmt(model.payoff[w, a])}")
    lines.append("transition:")
    for w, sname in enumerate(model.state_names):
        for a, aname in enumerate(model.action_names):
            for w2, tname in enumerate(model.state_names):
                p = model.transition[w, a, w2]
                if p != 0.0:
                    lines.append(f"  {sname} {aname} {tname} {_fmt(p)}")
    return "\n".join(lines) + "\n"


def parse_controller(text, model: PomdpModel,
                     filename="<string>") -> FiniteStateController:
    """Parse a finite-state controller against a model's action/signal names."""
    reader = _SectionReader(text, _FSC_SECTIONS, filename)
    memory = reader.names("memory")
    q_index = {name: i for i, name in enumerate(memory)}
    a_index = {name: i for i, name in enumerate(model.action_names)}
    g_index = {name: i for i, name in enumerate(model.signal_names)}

    init_memory = np.full(model.n_signals, -1, dtype=np.int64)
    _, rows = reader.require("init")
    for line, tokens in rows:
        _arity(line, tokens, 2, "'signal memory'", filename)
        (c1, t1), (c2, t2) = tokens
        s = _lookup(g_index, line, c1, t1, filename)
        if init_memory[s] >= 0:
            raise DuplicateEntry(line, c1, f"init for signal {t1!r}", filename)
        init_memory[s] = _lookup(q_index, line, c2, t2, filename)
    if np.any(init_memory < 0):
        header_line, _ = reader.require("init")
        s = int(np.nonzero(init_memory < 0)[0][0])
        raise ParseError(header_line, 1,
                         f"signal {model.signal_names[s]!r} has no init entry",
                         filename)

    rule = np.zeros((len(memory), model.n_actions))
    seen = set()
    _, rows = reader.require("rule")
    for line, tokens in rows:
        _arity(line, tokens, 3, "'memory action prob'", filename)
        (c1, t1), (c2, t2), (c3, t3) = tokens
        q = _lookup(q_index, line, c1, t1, filename)
        a = _lookup(a_index, line, c2, t2, filename)
        if (q, a) in seen:
            raise DuplicateEntry(line, c1, f"rule ({t1!r}, {t2!r})", filename)
        seen.add((q, a))
        rule[q, a] = _number(line, c3, t3, filename)

    update = np.zeros((len(memory), model.n_actions, model.n_signals, len(memory)))
    seen_rows = set()
    seen_cells = set()
    header_line, rows = reader.require("update")
    for line, tokens in rows:
        _arity(line, tokens, 5, "'memory action signal memory prob'", filename)
        (c1, t1), (c2, t2), (c3, t3), (c4, t4), (c5, t5) = tokens
        q = _lookup(q_index, line, c1, t1, filename)
        a = _lookup(a_index, line, c2, t2, filename)
        s = _lookup(g_index, line, c3, t3, filename)
        q2 = _lookup(q_index, line, c4, t4, filename)
        if (q, a, s, q2) in seen_cells:
            raise DuplicateEntry(line, c1,
                                 f"update ({t1!r}, {t2!r}, {t3!r}, {t4!r})",
                                 filename)
        seen_cells.add((q, a, s, q2))
        seen_rows.add((q, a, s))
        update[q, a, s, q2] = _number(line, c5, t5, filename)
    for q in range(len(memory)):
        for a in range(model.n_actions):
            for s in range(model.n_signals):
                if (q, a, s) not in seen_rows:
                    raise ParseError(
                        header_line, 1,
                        f"no update row for memory {memory[q]!r}, action "
                        f"{model.action_names[a]!r}, signal "
                        f"{model.signal_names[s]!r}", filename,
                    )
    return FiniteStateController(init_memory, rule, update, memory_names=memory)


def serialize_controller(controller: FiniteStateController,
                         model: PomdpModel) -> str:
    lines = ["memory: " + " ".join(controller.memory_names), "init:"]
    for s, sname in enumerate(model.signal_names):
        lines.append(f"  {sname} {controller.memory_names[controller.init_memory[s]]}")
    lines.append("rule:")
    for q, qname in enumerate(controller.memory_names):
        for a, aname in enumerate(model.action_names):
            if controller.rule[q, a] != 0.0:
                lines.append(f"  {qname} {aname} {_fmt(controller.rule[q, a])}")
    lines.append("update:")
    for q, qname in enumerate(controller.memory_names):
        for a, aname in enumerate(model.action_names):
            for s, sname in enumerate(model.signal_names):
                for q2, q2name in enumerate(controller.memory_names):
                    p = controller.update[q, a, s, q2]
                    if p != 0.0:
                        lines.append(f"  {qname} {aname} {sname} {q2name} {_fmt(p)}")
    return "\n".join(lines) + "\n"
