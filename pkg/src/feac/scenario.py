"""Scenario language: lexer, recursive-descent parser, resolver, printer.

A scenario file declares the static policy world (entities, roles,
subjects, objects, constraints), the emergency catalog with task sets,
the relation tables (role mappings, dependencies, influences, failure
groups), engine configuration, and a timed event script. `parse_scenario`
returns the compiled scenario plus a list of positioned diagnostics; the
scenario is only usable when the list is empty. `print_scenario` renders
a canonical form that reparses to the same scenario.

Parse errors resynchronize at the next line that starts with a top-level
keyword, so one broken declaration yields one diagnostic, not a cascade.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction

from .constraints import (
    And,
    Cmp,
    ConstraintExpr,
    CountCmp,
    DistCmp,
    Lit,
    Not,
    Or,
    Ref,
    constraint_to_text,
)
from .engine import (
    EngineConfig,
    PROBABILITY_FIRST,
    ScenarioEvent,
    TIME_FIRST,
)
from .exact import ONE, ZERO, format_number, parse_number
from .model import (
    AclEntry,
    ENV_ENTITY,
    Emergency,
    Op,
    PolicyStore,
    RoleKind,
    RoleMapping,
    Subject,
    SystemObject,
    TaskSet,
)
from .planner import InfluencePair, InfluenceSpec, PlannerConfig

TOPLEVEL = {
    "scenario",
    "config",
    "entity",
    "role",
    "constraint",
    "subject",
    "object",
    "emergency",
    "map",
    "fallbackmap",
    "depends",
    "influence",
    "fgroup",
    "at",
}

CMP_TOKENS = {"=", "!=", "<", "<=", ">", ">="}
OP_NAMES = {op.value: op for op in Op}
OUTCOMES = {"success", "failure"}
STRATEGIES = {PROBABILITY_FIRST, TIME_FIRST}
CONFIG_KEYS = ("tp", "alpha", "beta", "k", "seed", "fallback", "horizon")


@dataclass(frozen=True)
class Diagnostic:
    file: str
    line: int
    col: int
    message: str

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.col}: {self.message}"


@dataclass
class Scenario:
    """A fully resolved scenario ready to validate, plan, or simulate."""

    name: str
    entities: set[str]
    store: PolicyStore
    emergencies: dict[str, Emergency]
    infl: InfluenceSpec
    config: EngineConfig
    seed: int
    horizon: Fraction
    events: list[ScenarioEvent]


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str  # name | number | string | punct | eof
    value: str
    line: int
    col: int
    first_on_line: bool


_TOKEN_RE = re.compile(
    r"""
      (?P<ws>[ \t\r]+)
    | (?P<comment>\#[^\n]*)
    | (?P<nl>\n)
    | (?P<string>"[^"\n]*")
    | (?P<number>-?(?:\d+(?:\.\d+)?|\.\d+))
    | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<punct>->|<=|>=|!=|[{}\[\](),=<>@])
    """,
    re.VERBOSE,
)


def tokenize(text: str, filename: str) -> tuple[list[Token], list[Diagnostic]]:
    tokens: list[Token] = []
    diags: list[Diagnostic] = []
    line, col = 1, 1
    fresh_line = True
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            diags.append(Diagnostic(filename, line, col, f"unexpected character {text[pos]!r}"))
            pos += 1
            col += 1
            continue
        kind = match.lastgroup
        value = match.group()
        if kind == "nl":
            line += 1
            col = 1
            fresh_line = True
        elif kind in ("ws", "comment"):
            col += len(value)
        else:
            tokens.append(Token(kind, value, line, col, fresh_line))
            fresh_line = False
            col += len(value)
        pos = match.end()
    tokens.append(Token("eof", "", line, col, True))
    return tokens, diags


def _describe(tok: Token) -> str:
    if tok.kind == "eof":
        return "end of input"
    return f"{tok.value!r}"


# ---------------------------------------------------------------------------
# Raw declaration holders (positions kept for resolution diagnostics)
# ---------------------------------------------------------------------------


@dataclass
class _RawTaskSet:
    tsid: Token
    actions: list[tuple[Token, Op]]
    time: tuple[Token, Fraction]
    prob: tuple[Token, Fraction]
    resources: list[Token]


@dataclass
class _RawEmergency:
    eid: Token
    entity: Token
    prio: tuple[Token, Fraction]
    ed: tuple[Token, Fraction]
    ft: bool
    task_sets: list[_RawTaskSet]


@dataclass
class _ExprInfo:
    """Names an expression uses, kept with positions for late checking."""

    refs: list[tuple[str, Token]] = field(default_factory=list)
    count_roles: list[tuple[str, Token]] = field(default_factory=list)


class _Abort(Exception):
    pass


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class Parser:
    def __init__(self, text: str, filename: str):
        self.filename = filename
        self.tokens, self.diags = tokenize(text, filename)
        self.pos = 0

        self.scenario_name: Token | None = None
        self.configs: list[tuple[Token, Token]] = []
        self.entities: list[Token] = []
        self.role_decls: list[Token] = []
        self.constraint_decls: list[tuple[Token, ConstraintExpr, _ExprInfo]] = []
        self.subject_decls: list[tuple[Token, list[tuple[Token, object]]]] = []
        self.object_decls: list[tuple[Token, list[tuple[Token, Op, Fraction | None]]]] = []
        self.emergency_decls: list[_RawEmergency] = []
        self.map_decls: list[tuple[Token, list[Token], ConstraintExpr | None, _ExprInfo]] = []
        self.fallback_decls: list[tuple[Token, ConstraintExpr, _ExprInfo]] = []
        self.depends_env: list[tuple[Token, Token]] = []
        self.depends_time: list[tuple[Token, Token]] = []
        self.influences: list[tuple[Token, Token, dict[str, tuple[Token, Fraction]]]] = []
        self.fgroups: list[tuple[Token, Token]] = []
        self.raw_events: list[tuple[Token, Fraction, str, list[Token]]] = []

    # -- token plumbing ----------------------------------------------------

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def error(self, tok: Token, message: str) -> None:
        self.diags.append(Diagnostic(self.filename, tok.line, tok.col, message))

    def abort(self, tok: Token, message: str):
        self.error(tok, message)
        raise _Abort()

    def expect_name(self, what: str) -> Token:
        tok = self.peek()
        if tok.kind != "name":
            self.abort(tok, f"expected {what}, found {_describe(tok)}")
        return self.advance()

    def expect_keyword(self, word: str) -> Token:
        tok = self.peek()
        if tok.kind != "name" or tok.value != word:
            self.abort(tok, f"expected '{word}', found {_describe(tok)}")
        return self.advance()

    def expect_punct(self, symbol: str) -> Token:
        tok = self.peek()
        if tok.kind != "punct" or tok.value != symbol:
            self.abort(tok, f"expected '{symbol}', found {_describe(tok)}")
        return self.advance()

    def expect_number(self, what: str) -> tuple[Token, Fraction]:
        tok = self.peek()
        if tok.kind != "number":
            self.abort(tok, f"expected {what}, found {_describe(tok)}")
        self.advance()
        return tok, parse_number(tok.value)

    def match_punct(self, symbol: str) -> bool:
        tok = self.peek()
        if tok.kind == "punct" and tok.value == symbol:
            self.advance()
            return True
        return False

    def match_keyword(self, word: str) -> bool:
        tok = self.peek()
        if tok.kind == "name" and tok.value == word:
            self.advance()
            return True
        return False

    def resync(self) -> None:
        while True:
            tok = self.peek()
            if tok.kind == "eof":
                return
            if tok.kind == "name" and tok.first_on_line and tok.value in TOPLEVEL:
                return
            self.advance()

    # -- top level ---------------------------------------------------------

    def parse(self) -> None:
        handlers = {
            "scenario": self.parse_scenario_line,
            "config": self.parse_config,
            "entity": self.parse_entity,
            "role": self.parse_role,
            "constraint": self.parse_constraint,
            "subject": self.parse_subject,
            "object": self.parse_object,
            "emergency": self.parse_emergency,
            "map": self.parse_map,
            "fallbackmap": self.parse_fallbackmap,
            "depends": self.parse_depends,
            "influence": self.parse_influence,
            "fgroup": self.parse_fgroup,
            "at": self.parse_event,
        }
        while True:
            tok = self.peek()
            if tok.kind == "eof":
                return
            if tok.kind != "name" or tok.value not in handlers:
                self.error(tok, f"expected a declaration keyword, found {_describe(tok)}")
                self.advance()
                self.resync()
                continue
            try:
                handlers[tok.value]()
            except _Abort:
                self.resync()

    def parse_scenario_line(self) -> None:
        kw = self.advance()
        name = self.expect_name("a scenario name")
        if self.scenario_name is not None:
            self.error(kw, "scenario name declared twice")
        else:
            self.scenario_name = name

    def parse_config(self) -> None:
        self.advance()
        key = self.expect_name("a config key")
        self.expect_punct("=")
        value = self.peek()
        if value.kind not in ("name", "number"):
            self.abort(value, f"expected a config value, found {_describe(value)}")
        self.advance()
        self.configs.append((key, value))

    def parse_entity(self) -> None:
        self.advance()
        self.entities.append(self.expect_name("an entity name"))

    def parse_role(self) -> None:
        self.advance()
        self.role_decls.append(self.expect_name("a role name"))

    def parse_constraint(self) -> None:
        self.advance()
        name = self.expect_name("a constraint name")
        self.expect_punct("=")
        info = _ExprInfo()
        expr = self.parse_expr(info)
        self.constraint_decls.append((name, expr, info))

    def parse_subject(self) -> None:
        self.advance()
        sid = self.expect_name("a subject name")
        self.expect_punct("{")
        pairs: list[tuple[Token, object]] = []
        if not self.match_punct("}"):
            while True:
                key = self.expect_name("a property name")
                self.expect_punct("=")
                pairs.append((key, self.parse_subject_value(key)))
                if self.match_punct("}"):
                    break
                self.expect_punct(",")
        self.subject_decls.append((sid, pairs))

    def parse_subject_value(self, key: Token):
        tok = self.peek()
        if key.value in ("roles", "active"):
            return self.parse_name_list(f"a role list for '{key.value}'")
        if tok.kind == "punct" and tok.value == "(":
            self.advance()
            _, x = self.expect_number("a coordinate")
            self.expect_punct(",")
            _, y = self.expect_number("a coordinate")
            self.expect_punct(")")
            return (x, y)
        if tok.kind == "number":
            self.advance()
            return parse_number(tok.value)
        if tok.kind == "string":
            self.advance()
            return tok.value[1:-1]
        if tok.kind == "name" and tok.value in ("true", "false"):
            self.advance()
            return tok.value == "true"
        self.abort(tok, f"expected a property value, found {_describe(tok)}")

    def parse_name_list(self, what: str) -> list[Token]:
        self.expect_punct("[")
        names: list[Token] = []
        if self.match_punct("]"):
            return names
        while True:
            names.append(self.expect_name(what))
            if self.match_punct("]"):
                return names
            self.expect_punct(",")

    def parse_object(self) -> None:
        self.advance()
        oid = self.expect_name("an object name")
        self.expect_punct("{")
        rows: list[tuple[Token, Op, Fraction | None]] = []
        while not self.match_punct("}"):
            self.expect_keyword("acl")
            role = self.expect_name("a role name")
            op_tok = self.expect_name("an operation")
            op = OP_NAMES.get(op_tok.value)
            if op is None:
                self.abort(op_tok, f"unknown operation '{op_tok.value}'")
            td: Fraction | None = None
            if self.match_keyword("td"):
                _, td = self.expect_number("an expiry time")
            rows.append((role, op, td))
        self.object_decls.append((oid, rows))

    def parse_emergency(self) -> None:
        self.advance()
        eid = self.expect_name("an emergency id")
        self.expect_punct("{")
        entity: Token | None = None
        prio: tuple[Token, Fraction] | None = None
        ed: tuple[Token, Fraction] | None = None
        ft: bool | None = None
        task_sets: list[_RawTaskSet] = []
        while not self.match_punct("}"):
            word = self.expect_name("an emergency field")
            if word.value == "entity":
                if entity is not None:
                    self.error(word, "field 'entity' given twice")
                entity = self.expect_name("an entity name")
            elif word.value == "prio":
                if prio is not None:
                    self.error(word, "field 'prio' given twice")
                prio = self.expect_number("a priority")
            elif word.value == "ed":
                if ed is not None:
                    self.error(word, "field 'ed' given twice")
                ed = self.expect_number("a deadline")
            elif word.value == "ft":
                if ft is not None:
                    self.error(word, "field 'ft' given twice")
                flag = self.expect_name("'true' or 'false'")
                if flag.value not in ("true", "false"):
                    self.abort(flag, f"expected 'true' or 'false', found {_describe(flag)}")
                ft = flag.value == "true"
            elif word.value == "ts":
                task_sets.append(self.parse_task_set())
            else:
                self.abort(word, f"unknown emergency field '{word.value}'")
        missing = [
            name
            for name, value in (("entity", entity), ("prio", prio), ("ed", ed), ("ft", ft))
            if value is None
        ]
        if missing:
            self.abort(eid, f"emergency {eid.value} is missing field '{missing[0]}'")
        self.emergency_decls.append(_RawEmergency(eid, entity, prio, ed, ft, task_sets))

    def parse_task_set(self) -> _RawTaskSet:
        tsid = self.expect_name("a task-set id")
        self.expect_punct("{")
        actions: list[tuple[Token, Op]] | None = None
        time: tuple[Token, Fraction] | None = None
        prob: tuple[Token, Fraction] | None = None
        resources: list[Token] = []
        while not self.match_punct("}"):
            key = self.expect_name("a task-set field")
            self.expect_punct("=")
            if key.value == "actions":
                actions = []
                self.expect_punct("[")
                if not self.match_punct("]"):
                    while True:
                        oid = self.expect_name("an object name")
                        op_tok = self.expect_name("an operation")
                        op = OP_NAMES.get(op_tok.value)
                        if op is None:
                            self.abort(op_tok, f"unknown operation '{op_tok.value}'")
                        actions.append((oid, op))
                        if self.match_punct("]"):
                            break
                        self.expect_punct(",")
            elif key.value == "time":
                time = self.expect_number("a duration")
            elif key.value == "prob":
                prob = self.expect_number("a probability")
            elif key.value == "resources":
                resources = self.parse_name_list("a resource name")
            else:
                self.abort(key, f"unknown task-set field '{key.value}'")
            self.match_punct(",")
        missing = [
            name
            for name, value in (("actions", actions), ("time", time), ("prob", prob))
            if value is None
        ]
        if missing:
            self.abort(tsid, f"task set {tsid.value} is missing field '{missing[0]}'")
        return _RawTaskSet(tsid, actions, time, prob, resources)

    def parse_map(self) -> None:
        self.advance()
        erole = self.expect_name("an emergency id")
        self.expect_punct("->")
        roles = self.parse_name_list("a role name")
        constraint = None
        info = _ExprInfo()
        if self.match_keyword("where"):
            constraint = self.parse_expr(info)
        self.map_decls.append((erole, roles, constraint, info))

    def parse_fallbackmap(self) -> None:
        self.advance()
        erole = self.expect_name("an emergency id")
        self.expect_keyword("where")
        info = _ExprInfo()
        expr = self.parse_expr(info)
        self.fallback_decls.append((erole, expr, info))

    def parse_depends(self) -> None:
        self.advance()
        kind = self.expect_name("'env' or 'time'")
        if kind.value == "env":
            entity = self.expect_name("an entity name")
            self.expect_keyword("on")
            eid = self.expect_name("an emergency id")
            self.depends_env.append((entity, eid))
        elif kind.value == "time":
            before = self.expect_name("an emergency id")
            self.expect_punct("->")
            after = self.expect_name("an emergency id")
            self.depends_time.append((before, after))
        else:
            self.abort(kind, f"expected 'env' or 'time', found {_describe(kind)}")

    def parse_influence(self) -> None:
        self.advance()
        source = self.expect_name("an emergency id")
        self.expect_punct("->")
        target = self.expect_name("an emergency id")
        self.expect_punct("{")
        sigmas: dict[str, tuple[Token, Fraction]] = {}
        while not self.match_punct("}"):
            key = self.expect_name("a sigma name")
            if key.value not in ("sigma_p", "sigma_t", "sigma_ed"):
                self.abort(key, f"unknown influence field '{key.value}'")
            if key.value in sigmas:
                self.error(key, f"field '{key.value}' given twice")
            self.expect_punct("=")
            _, value = self.expect_number("a sigma value")
            sigmas[key.value] = (key, value)
            self.match_punct(",")
        self.influences.append((source, target, sigmas))

    def parse_fgroup(self) -> None:
        self.advance()
        entity = self.expect_name("an entity name")
        self.expect_punct("=")
        group = self.expect_name("a failure-group name")
        self.fgroups.append((entity, group))

    def parse_event(self) -> None:
        at = self.advance()
        _, when = self.expect_number("an event time")
        if when < 0:
            self.error(at, "event time must not be negative")
        kind = self.expect_name("an event kind")
        if kind.value == "raise":
            args = [self.expect_name("an emergency id")]
        elif kind.value == "fail":
            args = [self.expect_name("an entity name")]
        elif kind.value == "force":
            args = [
                self.expect_name("an emergency id"),
                self.expect_name("a task-set id"),
                self.expect_name("'success' or 'failure'"),
            ]
            if args[2].value not in OUTCOMES:
                self.error(args[2], f"unknown outcome '{args[2].value}'")
        elif kind.value == "request":
            args = [
                self.expect_name("a subject name"),
                self.expect_name("an object name"),
                self.expect_name("an operation"),
            ]
            if args[2].value not in OP_NAMES:
                self.error(args[2], f"unknown operation '{args[2].value}'")
        else:
            self.abort(kind, f"unknown event kind '{kind.value}'")
        self.raw_events.append((at, when, kind.value, args))

    # -- constraint expressions ---------------------------------------------

    def parse_expr(self, info: _ExprInfo) -> ConstraintExpr:
        return self.parse_or(info)

    def parse_or(self, info: _ExprInfo) -> ConstraintExpr:
        items = [self.parse_and(info)]
        while self.match_keyword("or"):
            items.append(self.parse_and(info))
        return items[0] if len(items) == 1 else Or(tuple(items))

    def parse_and(self, info: _ExprInfo) -> ConstraintExpr:
        items = [self.parse_not(info)]
        while self.match_keyword("and"):
            items.append(self.parse_not(info))
        return items[0] if len(items) == 1 else And(tuple(items))

    def parse_not(self, info: _ExprInfo) -> ConstraintExpr:
        if self.match_keyword("not"):
            return Not(self.parse_not(info))
        return self.parse_atom(info)

    def parse_cmp_op(self) -> str:
        tok = self.peek()
        if tok.kind == "punct" and tok.value in CMP_TOKENS:
            self.advance()
            return tok.value
        self.abort(tok, f"expected a comparison operator, found {_describe(tok)}")

    def parse_atom(self, info: _ExprInfo) -> ConstraintExpr:
        tok = self.peek()
        if tok.kind == "punct" and tok.value == "(":
            self.advance()
            inner = self.parse_or(info)
            self.expect_punct(")")
            return inner
        if tok.kind == "punct" and tok.value == "@":
            self.advance()
            name = self.expect_name("a constraint name")
            info.refs.append((name.value, name))
            return Ref(name.value)
        if tok.kind != "name":
            self.abort(tok, f"expected a condition, found {_describe(tok)}")
        if tok.value == "true" or tok.value == "false":
            self.advance()
            return Lit(tok.value == "true")
        if tok.value == "dist":
            self.advance()
            self.expect_punct("(")
            prop = self.expect_name("a property name")
            self.expect_punct(",")
            self.expect_punct("(")
            _, x = self.expect_number("a coordinate")
            self.expect_punct(",")
            _, y = self.expect_number("a coordinate")
            self.expect_punct(")")
            self.expect_punct(")")
            op = self.parse_cmp_op()
            _, radius = self.expect_number("a distance")
            return DistCmp(prop.value, (x, y), op, radius)
        if tok.value == "count":
            self.advance()
            self.expect_punct("(")
            role = self.expect_name("a role name")
            self.expect_punct(")")
            op = self.parse_cmp_op()
            limit_tok, limit = self.expect_number("a count limit")
            if limit.denominator != 1:
                self.abort(limit_tok, "count limit must be an integer")
            info.count_roles.append((role.value, role))
            return CountCmp(role.value, op, int(limit))
        prop = self.advance()
        op = self.parse_cmp_op()
        value_tok = self.peek()
        if value_tok.kind == "number":
            self.advance()
            return Cmp(prop.value, op, parse_number(value_tok.value))
        if value_tok.kind == "string":
            self.advance()
            return Cmp(prop.value, op, value_tok.value[1:-1])
        if value_tok.kind == "name" and value_tok.value in ("true", "false"):
            self.advance()
            return Cmp(prop.value, op, value_tok.value == "true")
        self.abort(value_tok, f"expected a literal, found {_describe(value_tok)}")


# ---------------------------------------------------------------------------
# Resolution
# ---------------------------------------------------------------------------


class _Resolver:
    def __init__(self, parser: Parser):
        self.p = parser
        self.filename = parser.filename

    def error(self, tok: Token, message: str) -> None:
        self.p.diags.append(Diagnostic(self.filename, tok.line, tok.col, message))

    def resolve(self) -> Scenario:
        p = self.p
        store = PolicyStore()
        entities: set[str] = {ENV_ENTITY}

        for tok in p.entities:
            if tok.value in entities:
                if tok.value == ENV_ENTITY:
                    self.error(tok, "'env' is predeclared")
                else:
                    self.error(tok, f"entity {tok.value} declared twice")
            entities.add(tok.value)

        for tok in p.role_decls:
            if tok.value in store.roles:
                self.error(tok, f"role {tok.value} declared twice")
            store.roles[tok.value] = RoleKind.NORMAL

        constraint_names = set()
        for name, _, _ in p.constraint_decls:
            if name.value in constraint_names:
                self.error(name, f"constraint {name.value} declared twice")
            constraint_names.add(name.value)
        for name, expr, _ in p.constraint_decls:
            store.constraints.setdefault(name.value, expr)

        for oid, rows in p.object_decls:
            if oid.value in store.objects:
                self.error(oid, f"object {oid.value} declared twice")
                continue
            acl: list[AclEntry] = []
            seen_rows: set[tuple[str, Op]] = set()
            for role, op, td in rows:
                if store.roles.get(role.value) is not RoleKind.NORMAL:
                    self.error(role, f"unknown role {role.value}")
                if (role.value, op) in seen_rows:
                    self.error(role, f"duplicate acl entry {role.value} {op.value}")
                    continue
                seen_rows.add((role.value, op))
                acl.append(AclEntry(role.value, op, td))
            store.objects[oid.value] = SystemObject(oid.value, acl)

        for sid, pairs in p.subject_decls:
            if sid.value in store.subjects:
                self.error(sid, f"subject {sid.value} declared twice")
                continue
            roles: list[str] = []
            active: list[str] | None = None
            properties: dict = {}
            seen_keys: set[str] = set()
            for key, value in pairs:
                if key.value in seen_keys:
                    self.error(key, f"property {key.value} given twice")
                    continue
                seen_keys.add(key.value)
                if key.value in ("roles", "active"):
                    names = []
                    for tok in value:
                        if store.roles.get(tok.value) is not RoleKind.NORMAL:
                            self.error(tok, f"unknown role {tok.value}")
                        else:
                            names.append(tok.value)
                    if key.value == "roles":
                        roles = names
                    else:
                        active = names
                else:
                    properties[key.value] = value
            if active is None:
                active = list(roles)
            for key, value in pairs:
                if key.value == "active":
                    for tok in value:
                        if tok.value not in roles and store.roles.get(tok.value) is RoleKind.NORMAL:
                            self.error(tok, f"active role {tok.value} not in roles")
            store.subjects[sid.value] = Subject(sid.value, properties)
            store.srt[sid.value] = set(roles)
            store.asrt[sid.value] = {r for r in active if r in roles}

        emergencies: dict[str, Emergency] = {}
        for raw in p.emergency_decls:
            eid = raw.eid.value
            if eid in emergencies:
                self.error(raw.eid, f"emergency {eid} declared twice")
                continue
            if eid in store.roles:
                self.error(raw.eid, f"emergency id {eid} collides with a declared role")
                continue
            if raw.entity.value not in entities:
                self.error(raw.entity, f"unknown entity {raw.entity.value}")
            prio_tok, prio_val = raw.prio
            if prio_val.denominator != 1 or prio_val < 1:
                self.error(prio_tok, "prio must be a positive integer")
                prio_val = Fraction(max(1, int(prio_val)))
            ed_tok, ed_val = raw.ed
            if ed_val <= 0:
                self.error(ed_tok, "ed must be positive")
            task_sets: list[TaskSet] = []
            seen_ts: set[str] = set()
            for ts in raw.task_sets:
                if ts.tsid.value in seen_ts:
                    self.error(ts.tsid, f"task set {ts.tsid.value} declared twice")
                    continue
                seen_ts.add(ts.tsid.value)
                actions = []
                for oid, op in ts.actions:
                    if oid.value not in store.objects:
                        self.error(oid, f"unknown object {oid.value}")
                    actions.append((oid.value, op))
                if not actions:
                    self.error(ts.tsid, f"task set {ts.tsid.value} has no actions")
                time_tok, time_val = ts.time
                if time_val <= 0:
                    self.error(time_tok, "time must be positive")
                prob_tok, prob_val = ts.prob
                if not (ZERO < prob_val <= ONE):
                    self.error(prob_tok, "prob must be in (0, 1]")
                task_sets.append(
                    TaskSet(
                        tsid=ts.tsid.value,
                        actions=tuple(actions),
                        time=time_val,
                        prob=prob_val,
                        resources=frozenset(tok.value for tok in ts.resources),
                    )
                )
            if not task_sets:
                self.error(raw.eid, f"emergency {eid} declares no task sets")
            task_sets.sort(key=lambda ts: ts.tsid)
            emergencies[eid] = Emergency(
                eid=eid,
                entity=raw.entity.value,
                prio=int(prio_val),
                ed=ed_val,
                ft_feasible=raw.ft,
                task_sets=tuple(task_sets),
            )
            store.roles[eid] = RoleKind.EMERGENCY

        self.check_expr_names(store)

        for erole, roles, constraint, _ in p.map_decls:
            if erole.value not in emergencies:
                self.error(erole, f"unknown emergency {erole.value}")
                continue
            if erole.value in store.rmt:
                self.error(erole, f"mapping for {erole.value} declared twice")
                continue
            names = []
            for tok in roles:
                if store.roles.get(tok.value) is not RoleKind.NORMAL:
                    self.error(tok, f"unknown role {tok.value}")
                else:
                    names.append(tok.value)
            store.rmt[erole.value] = RoleMapping(tuple(names), constraint)

        for erole, expr, _ in p.fallback_decls:
            if erole.value not in emergencies:
                self.error(erole, f"unknown emergency {erole.value}")
                continue
            if erole.value in store.rct:
                self.error(erole, f"fallback mapping for {erole.value} declared twice")
                continue
            store.rct[erole.value] = expr

        for entity, eid in p.depends_env:
            if entity.value not in entities:
                self.error(entity, f"unknown entity {entity.value}")
                continue
            if entity.value == ENV_ENTITY:
                self.error(entity, "the environment group cannot be gated")
                continue
            gate = emergencies.get(eid.value)
            if gate is None:
                self.error(eid, f"unknown emergency {eid.value}")
                continue
            if gate.entity != ENV_ENTITY:
                self.error(eid, f"{eid.value} is not an environment emergency")
                continue
            if (entity.value, eid.value) in store.edt:
                self.error(entity, f"dependency {entity.value} on {eid.value} declared twice")
                continue
            store.edt.add((entity.value, eid.value))

        for before, after in p.depends_time:
            a = emergencies.get(before.value)
            b = emergencies.get(after.value)
            if a is None:
                self.error(before, f"unknown emergency {before.value}")
                continue
            if b is None:
                self.error(after, f"unknown emergency {after.value}")
                continue
            if a.entity != b.entity:
                self.error(before, "time dependency spans entities")
                continue
            if a.prio >= b.prio:
                self.error(before, "first emergency must have strictly higher priority")
                continue
            if (a.eid, b.eid) in store.tdt:
                self.error(before, f"dependency {a.eid} -> {b.eid} declared twice")
                continue
            store.tdt.add((a.eid, b.eid))

        pairs: dict[tuple[str, str], InfluencePair] = {}
        for source, target, sigmas in p.influences:
            a = emergencies.get(source.value)
            b = emergencies.get(target.value)
            if a is None:
                self.error(source, f"unknown emergency {source.value}")
                continue
            if b is None:
                self.error(target, f"unknown emergency {target.value}")
                continue
            if a.eid == b.eid:
                self.error(source, "an emergency cannot influence itself")
                continue
            if a.entity != b.entity:
                self.error(source, "influence pair spans entities")
                continue
            if (a.eid, b.eid) in pairs:
                self.error(source, f"influence {a.eid} -> {b.eid} declared twice")
                continue
            values = {}
            for key in ("sigma_p", "sigma_t", "sigma_ed"):
                tok_value = sigmas.get(key)
                if tok_value is None:
                    values[key] = ZERO
                    continue
                tok, sigma = tok_value
                if not (ZERO <= sigma < ONE):
                    self.error(tok, f"{key} must be in [0, 1)")
                    sigma = ZERO
                values[key] = sigma
            pairs[(a.eid, b.eid)] = InfluencePair(
                values["sigma_p"], values["sigma_t"], values["sigma_ed"]
            )

        for entity, group in p.fgroups:
            if entity.value not in entities:
                self.error(entity, f"unknown entity {entity.value}")
                continue
            if entity.value in store.efgt:
                self.error(entity, f"failure group for {entity.value} declared twice")
                continue
            store.efgt[entity.value] = group.value

        name = "unnamed" if p.scenario_name is None else p.scenario_name.value
        if p.scenario_name is None and p.tokens:
            self.error(p.tokens[0], "missing scenario declaration")

        config, seed, horizon = self.resolve_config()
        events = self.resolve_events(store, emergencies, entities)

        return Scenario(
            name=name,
            entities=entities,
            store=store,
            emergencies=emergencies,
            infl=InfluenceSpec(pairs),
            config=config,
            seed=seed,
            horizon=horizon,
            events=events,
        )

    def check_expr_names(self, store: PolicyStore) -> None:
        p = self.p
        known = {name.value for name, _, _ in p.constraint_decls}
        infos = [info for _, _, info in p.constraint_decls]
        infos += [info for _, _, _, info in p.map_decls]
        infos += [info for _, _, info in p.fallback_decls]
        for info in infos:
            for name, tok in info.refs:
                if name not in known:
                    self.error(tok, f"unknown constraint {name}")
            for role, tok in info.count_roles:
                if store.roles.get(role) is not RoleKind.NORMAL:
                    self.error(tok, f"unknown role {role}")

    def resolve_config(self) -> tuple[EngineConfig, int, Fraction]:
        values: dict[str, Fraction | str] = {}
        seen: set[str] = set()
        for key, value in self.p.configs:
            if key.value not in CONFIG_KEYS:
                self.error(key, f"unknown config key '{key.value}'")
                continue
            if key.value in seen:
                self.error(key, f"config key '{key.value}' given twice")
                continue
            seen.add(key.value)
            if key.value == "fallback":
                if value.kind != "name" or value.value not in STRATEGIES:
                    self.error(value, "fallback must be probability_first or time_first")
                    continue
                values[key.value] = value.value
                continue
            if value.kind != "number":
                self.error(value, f"config key '{key.value}' needs a number")
                continue
            number = parse_number(value.value)
            if key.value in ("k", "seed") and number.denominator != 1:
                self.error(value, f"config key '{key.value}' must be an integer")
                continue
            if key.value in ("tp", "horizon", "k") and number <= 0:
                self.error(value, f"config key '{key.value}' must be positive")
                continue
            if key.value in ("alpha", "beta") and number < 0:
                self.error(value, f"config key '{key.value}' must not be negative")
                continue
            values[key.value] = number

        tp = values.get("tp", Fraction(1, 2))
        alpha = values.get("alpha", ONE)
        beta = values.get("beta", ONE)
        k = int(values.get("k", 64))
        seed = int(values.get("seed", 0))
        fallback = values.get("fallback", PROBABILITY_FIRST)
        horizon = values.get("horizon", Fraction(20))
        planner = PlannerConfig(alpha=alpha, beta=beta, k_cap=k, seed=seed)
        return EngineConfig(tp=tp, planner=planner, fallback_strategy=fallback), seed, horizon

    def resolve_events(self, store, emergencies, entities) -> list[ScenarioEvent]:
        events: list[ScenarioEvent] = []
        for index, (_, when, kind, args) in enumerate(self.p.raw_events):
            ok = True
            if kind == "raise":
                if args[0].value not in emergencies:
                    self.error(args[0], f"unknown emergency {args[0].value}")
                    ok = False
            elif kind == "fail":
                if args[0].value not in entities:
                    self.error(args[0], f"unknown entity {args[0].value}")
                    ok = False
            elif kind == "force":
                em = emergencies.get(args[0].value)
                if em is None:
                    self.error(args[0], f"unknown emergency {args[0].value}")
                    ok = False
                elif em.task_set(args[1].value) is None:
                    self.error(args[1], f"{args[0].value} has no task set {args[1].value}")
                    ok = False
                if args[2].value not in OUTCOMES:
                    ok = False
            elif kind == "request":
                if args[0].value not in store.subjects:
                    self.error(args[0], f"unknown subject {args[0].value}")
                    ok = False
                if args[1].value not in store.objects:
                    self.error(args[1], f"unknown object {args[1].value}")
                    ok = False
                if args[2].value not in OP_NAMES:
                    ok = False
            if ok:
                events.append(
                    ScenarioEvent(when, index, kind, tuple(tok.value for tok in args))
                )
        return events


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def parse_scenario(text: str, filename: str = "<string>") -> tuple[Scenario, list[Diagnostic]]:
    """Parse and resolve; the scenario is meaningful only if no diagnostics."""
    parser = Parser(text, filename)
    parser.parse()
    scenario = _Resolver(parser).resolve()
    diags = sorted(parser.diags, key=lambda d: (d.line, d.col))
    return scenario, diags


def load_scenario(path: str) -> tuple[Scenario, list[Diagnostic]]:
    with open(path, encoding="utf-8") as handle:
        return parse_scenario(handle.read(), path)


# ---------------------------------------------------------------------------
# Canonical printing
# ---------------------------------------------------------------------------


def _prop_value_text(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return f"({format_number(value[0])}, {format_number(value[1])})"
    if isinstance(value, Fraction):
        return format_number(value)
    return f'"{value}"'


def print_scenario(sc: Scenario) -> str:
    """Canonical text form; parsing it reproduces the scenario."""
    out: list[str] = [f"scenario {sc.name}", ""]
    cfg = sc.config
    out.append(f"config tp = {format_number(cfg.tp)}")
    out.append(f"config alpha = {format_number(cfg.planner.alpha)}")
    out.append(f"config beta = {format_number(cfg.planner.beta)}")
    out.append(f"config k = {cfg.planner.k_cap}")
    out.append(f"config seed = {sc.seed}")
    out.append(f"config fallback = {cfg.fallback_strategy}")
    out.append(f"config horizon = {format_number(sc.horizon)}")
    out.append("")

    store = sc.store
    for entity in sorted(sc.entities - {ENV_ENTITY}):
        out.append(f"entity {entity}")
    for role in sorted(r for r, kind in store.roles.items() if kind is RoleKind.NORMAL):
        out.append(f"role {role}")
    for name in sorted(store.constraints):
        out.append(f"constraint {name} = {constraint_to_text(store.constraints[name])}")
    out.append("")

    for sid in sorted(store.subjects):
        subject = store.subjects[sid]
        parts = []
        roles = sorted(
            r for r in store.srt.get(sid, set()) if store.roles.get(r) is RoleKind.NORMAL
        )
        active = sorted(
            r for r in store.asrt.get(sid, set()) if store.roles.get(r) is RoleKind.NORMAL
        )
        parts.append(f"roles = [{', '.join(roles)}]")
        parts.append(f"active = [{', '.join(active)}]")
        for key in sorted(subject.properties):
            parts.append(f"{key} = {_prop_value_text(subject.properties[key])}")
        out.append(f"subject {sid} {{ {', '.join(parts)} }}")
    out.append("")

    for oid in sorted(store.objects):
        rows = []
        for entry in sorted(
            (e for e in store.objects[oid].acl if store.roles.get(e.role) is RoleKind.NORMAL),
            key=lambda e: (e.role, e.op.value),
        ):
            row = f"acl {entry.role} {entry.op.value}"
            if entry.td is not None:
                row += f" td {format_number(entry.td)}"
            rows.append(row)
        body = " ".join(rows)
        out.append(f"object {oid} {{ {body} }}" if rows else f"object {oid} {{ }}")
    out.append("")

    for eid in sorted(sc.emergencies):
        em = sc.emergencies[eid]
        out.append(f"emergency {eid} {{")
        out.append(f"  entity {em.entity}")
        out.append(f"  prio {em.prio}")
        out.append(f"  ed {format_number(em.ed)}")
        out.append(f"  ft {'true' if em.ft_feasible else 'false'}")
        for ts in em.task_sets:
            actions = ", ".join(f"{oid} {op.value}" for oid, op in ts.actions)
            line = (
                f"  ts {ts.tsid} {{ actions = [{actions}], "
                f"time = {format_number(ts.time)}, prob = {format_number(ts.prob)}"
            )
            if ts.resources:
                line += f", resources = [{', '.join(sorted(ts.resources))}]"
            out.append(line + " }")
        out.append("}")
    out.append("")

    for erole in sorted(store.rmt):
        mapping = store.rmt[erole]
        line = f"map {erole} -> [{', '.join(mapping.roles)}]"
        if mapping.constraint is not None:
            line += f" where {constraint_to_text(mapping.constraint)}"
        out.append(line)
    for erole in sorted(store.rct):
        out.append(f"fallbackmap {erole} where {constraint_to_text(store.rct[erole])}")
    for entity, eid in sorted(store.edt):
        out.append(f"depends env {entity} on {eid}")
    for before, after in sorted(store.tdt):
        out.append(f"depends time {before} -> {after}")
    for (source, target) in sorted(sc.infl.pairs):
        pair = sc.infl.pairs[(source, target)]
        out.append(
            f"influence {source} -> {target} {{ "
            f"sigma_p = {format_number(pair.sigma_p)}, "
            f"sigma_t = {format_number(pair.sigma_t)}, "
            f"sigma_ed = {format_number(pair.sigma_ed)} }}"
        )
    for entity in sorted(store.efgt):
        out.append(f"fgroup {entity} = {store.efgt[entity]}")
    out.append("")

    for event in sorted(sc.events, key=lambda e: (e.time, e.index)):
        out.append(f"at {format_number(event.time)} {event.kind} {' '.join(event.args)}")
    out.append("")
    return "\n".join(out)
