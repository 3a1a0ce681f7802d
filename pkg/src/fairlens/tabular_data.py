"""Categorical datasets: schema, CSV I/O, binarization and exact counting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import SchemaError, UndefinedProbabilityError, UnknownCategoryError

Label = Union[str, int]
Assignment = Mapping[str, Label]


@dataclass(frozen=True)
class Attribute:
    name: str
    domain: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "domain", tuple(str(v) for v in self.domain))
        if not self.domain:
            raise SchemaError(f"attribute {self.name!r} has an empty domain")
        if len(set(self.domain)) != len(self.domain):
            raise SchemaError(f"attribute {self.name!r} has duplicate categories")

    @property
    def cardinality(self) -> int:
        return len(self.domain)


@dataclass(frozen=True)
class Schema:
    """Attribute domains plus the roles of the protected attribute and the decision.

    ``protected_label`` is the protected group (c-) and ``positive_label`` the
    favourable decision (e+).
    """

    attributes: tuple[Attribute, ...]
    protected: str
    decision: str
    positive_label: str
    protected_label: str
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError("attribute names must be unique")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})
        for role in (self.protected, self.decision):
            if role not in self._index:
                raise SchemaError(f"role attribute {role!r} is not in the schema")
        if self.protected == self.decision:
            raise SchemaError("protected and decision attributes must differ")
        for role, label in ((self.decision, self.positive_label),
                            (self.protected, self.protected_label)):
            dom = self.attribute(role).domain
            if len(dom) != 2:
                raise SchemaError(f"{role!r} must be binary, has domain {list(dom)}")
            if str(label) not in dom:
                raise SchemaError(f"label {label!r} not in domain of {role!r}")
        object.__setattr__(self, "positive_label", str(self.positive_label))
        object.__setattr__(self, "protected_label", str(self.protected_label))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(a.cardinality for a in self.attributes)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SchemaError(f"unknown attribute {name!r}") from None

    def attribute(self, name: str) -> Attribute:
        return self.attributes[self.index(name)]

    def code(self, name: str, value: Label) -> int:
        """Category index of ``value``; ints are taken as indices, strings as labels."""
        dom = self.attribute(name).domain
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            if not 0 <= int(value) < len(dom):
                raise UnknownCategoryError(f"index {value} out of range for {name!r}")
            return int(value)
        try:
            return dom.index(str(value))
        except ValueError:
            raise UnknownCategoryError(f"unknown category {value!r} for attribute {name!r}") from None

    def resolve(self, assignment: Assignment | None) -> dict[str, int]:
        if not assignment:
            return {}
        return {name: self.code(name, value) for name, value in assignment.items()}

    def labels(self, codes: Mapping[str, int]) -> dict[str, str]:
        return {n: self.attribute(n).domain[int(c)] for n, c in codes.items()}

    # role codes
    @property
    def c_minus(self) -> int:
        return self.code(self.protected, self.protected_label)

    @property
    def c_plus(self) -> int:
        return 1 - self.c_minus

    @property
    def e_plus(self) -> int:
        return self.code(self.decision, self.positive_label)

    @property
    def e_minus(self) -> int:
        return 1 - self.e_plus

    def replace_attribute(self, attr: Attribute, **roles) -> Schema:
        attrs = tuple(attr if a.name == attr.name else a for a in self.attributes)
        kw = dict(protected=self.protected, decision=self.decision,
                  positive_label=self.positive_label, protected_label=self.protected_label)
        kw.update(roles)
        return Schema(attrs, **kw)

    def to_json(self) -> dict:
        return {
            "attributes": [{"name": a.name, "domain": list(a.domain)} for a in self.attributes],
            "protected": self.protected,
            "decision": self.decision,
            "positive_label": self.positive_label,
            "protected_label": self.protected_label,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> Schema:
        try:
            attrs = tuple(Attribute(a["name"], tuple(a["domain"])) for a in obj["attributes"])
            return cls(attrs, obj["protected"], obj["decision"],
                       obj["positive_label"], obj["protected_label"])
        except KeyError as exc:
            raise SchemaError(f"schema file is missing key {exc}") from None


def load_schema(path: str | Path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return Schema.from_json(json.load(fh))


def save_schema(schema: Schema, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema.to_json(), indent=2) + "\n", encoding="utf-8")


class Dataset:
    """Immutable table of category codes, one column per schema attribute.

    ``weights`` are optional positive integer multiplicities per row; every
    count-based operation honours them.
    """

    __slots__ = ("schema", "codes", "weights")

    def __init__(self, schema: Schema, codes, weights=None):
        codes = np.array(codes, dtype=np.int64, copy=True)
        if codes.ndim != 2 or codes.shape[1] != len(schema.attributes):
            raise SchemaError(f"codes must have shape (n, {len(schema.attributes)})")
        if codes.shape[0] < 1:
            raise SchemaError("a dataset needs at least one row")
        cards = np.array(schema.cardinalities)
        if (codes < 0).any() or (codes >= cards).any():
            raise UnknownCategoryError("a record value lies outside its attribute's domain")
        codes.setflags(write=False)
        if weights is not None:
            weights = np.array(weights, dtype=np.int64, copy=True)
            if weights.shape != (codes.shape[0],) or (weights < 1).any():
                raise SchemaError("weights must be positive integers, one per row")
            weights.setflags(write=False)
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "weights", weights)

    def __setattr__(self, key, value):
        raise AttributeError("Dataset is immutable")

    def __len__(self) -> int:
        return self.codes.shape[0]

    def __repr__(self) -> str:
        return f"Dataset({len(self)} rows, attributes={list(self.schema.names)})"

    @property
    def n_rows(self) -> int:
        return self.codes.shape[0]

    @property
    def total(self) -> int:
        """Number of records, counting multiplicities."""
        return int(self.weights.sum()) if self.weights is not None else self.n_rows

    def row_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(self.n_rows, dtype=np.int64)
        return self.weights

    def column(self, name: str) -> np.ndarray:
        return self.codes[:, self.schema.index(name)]

    def mask(self, assignment: Assignment | None) -> np.ndarray:
        m = np.ones(self.n_rows, dtype=bool)
        for name, code in self.schema.resolve(assignment).items():
            m &= self.column(name) == code
        return m

    def with_codes(self, codes, schema: Schema | None = None) -> Dataset:
        return Dataset(schema or self.schema, codes, self.weights)

    def expand(self) -> Dataset:
        """Unit-weight copy in which each row is repeated by its weight."""
        if self.weights is None:
            return self
        return Dataset(self.schema, np.repeat(self.codes, self.weights, axis=0))

    def equals(self, other: Dataset) -> bool:
        if self.schema != other.schema or self.codes.shape != other.codes.shape:
            return False
        return bool(np.array_equal(self.codes, other.codes)
                    and np.array_equal(self.row_weights(), other.row_weights()))

    def records(self) -> list[dict[str, str]]:
        names = self.schema.names
        doms = [a.domain for a in self.schema.attributes]
        return [{n: d[c] for n, d, c in zip(names, doms, row)} for row in self.codes.tolist()]

    @classmethod
    def from_records(cls, schema: Schema, records: Iterable[Mapping[str, Label]], weights=None) -> Dataset:
        rows = [[schema.code(n, rec[n]) for n in schema.names] for rec in records]
        return cls(schema, np.array(rows, dtype=np.int64).reshape(len(rows), len(schema.names)), weights)


def _parse_lines(path: Path) -> tuple[list[str], list[list[str]]]:
    text = path.read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip() != ""]
    if not lines:
        raise SchemaError(f"{path}: empty file")
    header = lines[0].split(",")
    if any(h.strip() == "" for h in header):
        raise SchemaError(f"{path}: missing or malformed header")
    if len(set(header)) != len(header):
        raise SchemaError(f"{path}: duplicate column names in header")
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        if '"' in ln:
            raise SchemaError(f"{path}:{lineno}: quoted fields are not supported")
        fields = ln.split(",")
        if len(fields) != len(header):
            raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(fields)}")
        rows.append(fields)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return header, rows


def load_csv(path: str | Path, schema_hints: Schema | None = None, *, strict: bool = True,
             protected: str | None = None, decision: str | None = None,
             positive_label: str | None = None, protected_label: str | None = None) -> Dataset:
    """Read a comma-separated file whose first line names the attributes.

    Without ``schema_hints`` domains are the sorted distinct values of each
    column and the four role arguments are required.  With hints, a value
    outside a hinted domain raises ``UnknownCategoryError`` unless
    ``strict=False``, in which case the domain is extended.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"data file not found: {path}")
    header, rows = _parse_lines(path)
    columns = list(zip(*rows))

    if schema_hints is None:
        if None in (protected, decision, positive_label, protected_label):
            raise SchemaError("without a schema the protected/decision roles and labels are required")
        attrs = tuple(Attribute(n, tuple(sorted(set(col)))) for n, col in zip(header, columns))
        schema = Schema(attrs, protected, decision, positive_label, protected_label)
    else:
        if set(header) != set(schema_hints.names):
            raise SchemaError(f"header {header} does not match schema attributes {list(schema_hints.names)}")
        attrs = []
        for name in schema_hints.names:
            attr = schema_hints.attribute(name)
            seen = set(columns[header.index(name)])
            unknown = sorted(seen - set(attr.domain))
            if unknown:
                if strict:
                    raise UnknownCategoryError(f"unknown category {unknown[0]!r} for attribute {name!r}")
                attr = Attribute(name, attr.domain + tuple(unknown))
            attrs.append(attr)
        schema = Schema(tuple(attrs), schema_hints.protected, schema_hints.decision,
                        schema_hints.positive_label, schema_hints.protected_label)

    codes = np.empty((len(rows), len(schema.names)), dtype=np.int64)
    for j, name in enumerate(schema.names):
        lookup = {v: i for i, v in enumerate(schema.attribute(name).domain)}
        codes[:, j] = [lookup[v] for v in columns[header.index(name)]]
    return Dataset(schema, codes)


def write_csv(dataset: Dataset, path: str | Path) -> None:
    ds = dataset.expand()
    doms = [a.domain for a in ds.schema.attributes]
    out = [",".join(ds.schema.names)]
    for row in ds.codes.tolist():
        out.append(",".join(d[c] for d, c in zip(doms, row)))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def binarize(dataset: Dataset, attribute: str, split: Mapping[str, int],
             labels: Sequence[str] | None = None) -> Dataset:
    """Collapse ``attribute`` to two classes according to ``split`` (label -> 0/1).

    New labels default to the ``|``-joined member labels of each class, so an
    identity split on a binary attribute leaves the data unchanged.
    """
    schema = dataset.schema
    attr = schema.attribute(attribute)
    missing = [v for v in attr.domain if v not in split]
    if missing:
        raise SchemaError(f"split for {attribute!r} does not cover {missing}")
    extra = [v for v in split if str(v) not in attr.domain]
    if extra:
        raise UnknownCategoryError(f"split names unknown categories {extra} of {attribute!r}")
    if any(split[v] not in (0, 1) for v in attr.domain):
        raise SchemaError("split values must be 0 or 1")
    members = [[v for v in attr.domain if split[v] == k] for k in (0, 1)]
    if not all(members):
        raise SchemaError(f"split for {attribute!r} leaves a class empty")
    roles = {}
    if attribute in (schema.protected, schema.decision):
        if attr.cardinality != 2:
            raise SchemaError(f"cannot binarize role attribute {attribute!r}: domain is not binary")
    new_labels = tuple(labels) if labels is not None else tuple("|".join(m) for m in members)
    if len(new_labels) != 2 or new_labels[0] == new_labels[1]:
        raise SchemaError("binarize needs two distinct class labels")
    if attribute == schema.decision:
        roles["positive_label"] = new_labels[split[schema.positive_label]]
    if attribute == schema.protected:
        roles["protected_label"] = new_labels[split[schema.protected_label]]
    mapping = np.array([split[v] for v in attr.domain], dtype=np.int64)
    codes = np.array(dataset.codes)
    j = schema.index(attribute)
    codes[:, j] = mapping[codes[:, j]]
    new_schema = schema.replace_attribute(Attribute(attribute, new_labels), **roles)
    return Dataset(new_schema, codes, dataset.weights)


@dataclass(frozen=True)
class ContingencyTable:
    """Counts of (group, decision) inside one subpopulation q."""

    conditioning: dict
    n_cminus_eplus: int
    n_cminus_eminus: int
    n_cplus_eplus: int
    n_cplus_eminus: int

    @property
    def n_cminus(self) -> int:
        return self.n_cminus_eplus + self.n_cminus_eminus

    @property
    def n_cplus(self) -> int:
        return self.n_cplus_eplus + self.n_cplus_eminus

    @property
    def n_eplus(self) -> int:
        return self.n_cminus_eplus + self.n_cplus_eplus

    @property
    def n_eminus(self) -> int:
        return self.n_cminus_eminus + self.n_cplus_eminus

    @property
    def n(self) -> int:
        return self.n_cminus + self.n_cplus

    def rate(self, group: str) -> Fraction:
        """Exact positive-decision rate of ``"cplus"`` or ``"cminus"``."""
        pos, tot = ((self.n_cplus_eplus, self.n_cplus) if group == "cplus"
                    else (self.n_cminus_eplus, self.n_cminus))
        if tot == 0:
            raise UndefinedProbabilityError(f"group {group} is empty in subpopulation {self.conditioning}")
        return Fraction(pos, tot)

    def to_json(self) -> dict:
        return {"cminus_eplus": self.n_cminus_eplus, "cminus_eminus": self.n_cminus_eminus,
                "cplus_eplus": self.n_cplus_eplus, "cplus_eminus": self.n_cplus_eminus}


def _check_conditioning(schema: Schema, conditioning: Mapping) -> None:
    for role in (schema.protected, schema.decision):
        if role in conditioning:
            raise SchemaError(f"conditioning may not bind the role attribute {role!r}")


def _cell_counts(dataset: Dataset, mask: np.ndarray | None = None) -> np.ndarray:
    """2x2 weighted counts indexed [c, e] in code order."""
    s = dataset.schema
    c = dataset.column(s.protected)
    e = dataset.column(s.decision)
    w = dataset.row_weights()
    if mask is not None:
        c, e, w = c[mask], e[mask], w[mask]
    return np.bincount(c * 2 + e, weights=w, minlength=4).astype(np.int64).reshape(2, 2)


def _table_from_cells(schema: Schema, cells: np.ndarray, conditioning: dict) -> ContingencyTable:
    cm, cp, ep, em = schema.c_minus, schema.c_plus, schema.e_plus, schema.e_minus
    return ContingencyTable(dict(conditioning), int(cells[cm, ep]), int(cells[cm, em]),
                            int(cells[cp, ep]), int(cells[cp, em]))


def contingency(dataset: Dataset, conditioning: Assignment | None = None) -> ContingencyTable:
    conditioning = dict(conditioning or {})
    _check_conditioning(dataset.schema, conditioning)
    cells = _cell_counts(dataset, dataset.mask(conditioning))
    return _table_from_cells(dataset.schema, cells, dataset.schema.labels(dataset.schema.resolve(conditioning)))


def group_contingency(dataset: Dataset, attributes: Sequence[str]) -> dict[tuple[int, ...], ContingencyTable]:
    """Contingency tables for every non-empty assignment of ``attributes``.

    Keys are code tuples in the order of ``attributes``; iteration order is
    the canonical (lexicographic) order of those tuples.
    """
    s = dataset.schema
    _check_conditioning(s, dict.fromkeys(attributes))
    attributes = list(attributes)
    ce = dataset.column(s.protected) * 2 + dataset.column(s.decision)
    w = dataset.row_weights()
    if attributes:
        cols = np.stack([dataset.column(a) for a in attributes], axis=1)
        keys, inverse = np.unique(cols, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
    else:
        keys = np.zeros((1, 0), dtype=np.int64)
        inverse = np.zeros(dataset.n_rows, dtype=np.int64)
    cells = np.bincount(inverse * 4 + ce, weights=w, minlength=len(keys) * 4)
    cells = cells.astype(np.int64).reshape(len(keys), 2, 2)
    out = {}
    for key, cell in zip(keys.tolist(), cells):
        key = tuple(key)
        cond = s.labels(dict(zip(attributes, key)))
        out[key] = _table_from_cells(s, cell, cond)
    return out


def empirical_prob(dataset: Dataset, event: Assignment, given: Assignment | None = None) -> float:
    """Pr(event | given) as an exact count ratio converted to float."""
    return float(empirical_fraction(dataset, event, given))


def empirical_fraction(dataset: Dataset, event: Assignment, given: Assignment | None = None) -> Fraction:
    s = dataset.schema
    ev, gv = s.resolve(event), s.resolve(given)
    for name in set(ev) & set(gv):
        if ev[name] != gv[name]:
            return Fraction(0)
    w = dataset.row_weights()
    gmask = dataset.mask(gv)
    denom = int(w[gmask].sum())
    if denom == 0:
        raise UndefinedProbabilityError(f"undefined probability: no rows match {s.labels(gv)}")
    num = int(w[gmask & dataset.mask(ev)].sum())
    return Fraction(num, denom)
