"""Auxiliary-loss genomes: bit-mask encoding, validation, text form, patterns.

A candidate selects a window ``(s_t, a_t, r_t, ..., s_{t+k}, a_{t+k}, r_{t+k})``
of ``3k + 3`` elements. Bit ``3j + 0`` selects ``s_{t+j}``, ``3j + 1`` selects
``a_{t+j}`` and ``3j + 2`` selects ``r_{t+j}``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

MIN_HORIZON = 1
MAX_HORIZON = 10


class ElementKind(enum.IntEnum):
    STATE = 0
    ACTION = 1
    REWARD = 2

    @property
    def letter(self) -> str:
        return "sar"[self.value]


class Measure(enum.Enum):
    INNER = "inner"
    BILINEAR = "bilinear"
    COSINE = "cosine"
    MSE = "mse"
    NMSE = "nmse"


class Validity(enum.Enum):
    VALID = "valid"
    NO_STATE_IN_SOURCE = "NoStateInSource"
    EMPTY_TARGET = "EmptyTarget"
    HORIZON_OUT_OF_RANGE = "HorizonOutOfRange"

    def __bool__(self) -> bool:
        return self is Validity.VALID


class ParseError(ValueError):
    """Malformed candidate text; ``position`` is the byte offset of the fault."""

    def __init__(self, message: str, text: str, position: int):
        super().__init__(f"{message} at position {position}: {text!r}")
        self.text = text
        self.position = position


@dataclass(frozen=True, order=True)
class ElementRef:
    offset: int
    kind: ElementKind

    def __post_init__(self):
        if self.offset < 0:
            raise ValueError(f"negative offset {self.offset}")
        object.__setattr__(self, "kind", ElementKind(self.kind))

    @property
    def bit(self) -> int:
        return 3 * self.offset + int(self.kind)

    @classmethod
    def from_bit(cls, bit: int) -> ElementRef:
        return cls(bit // 3, ElementKind(bit % 3))

    @classmethod
    def parse(cls, token: str) -> ElementRef:
        if len(token) < 2 or token[0] not in "sar" or not token[1:].isdigit():
            raise ValueError(f"bad element {token!r}")
        return cls(int(token[1:]), ElementKind("sar".index(token[0])))

    def __str__(self) -> str:
        return f"{self.kind.letter}{self.offset}"


def s(i: int) -> ElementRef:
    return ElementRef(i, ElementKind.STATE)


def a(i: int) -> ElementRef:
    return ElementRef(i, ElementKind.ACTION)


def r(i: int) -> ElementRef:
    return ElementRef(i, ElementKind.REWARD)


def sequence_length(k: int) -> int:
    """Number of elements in a horizon-``k`` window."""
    if k < 0:
        raise ValueError(f"horizon must be >= 0, got {k}")
    return 3 * k + 3


def bits_from_elements(elements: Iterable[ElementRef], k: int) -> tuple[int, ...]:
    bits = [0] * sequence_length(k)
    for e in elements:
        if e.offset > k:
            raise ValueError(f"element {e} beyond horizon {k}")
        bits[e.bit] = 1
    return tuple(bits)


def elements_from_bits(bits: Sequence[int]) -> tuple[ElementRef, ...]:
    return tuple(ElementRef.from_bit(i) for i, b in enumerate(bits) if b)


@dataclass(frozen=True)
class MaskPair:
    horizon: int
    source: tuple[int, ...]
    target: tuple[int, ...]

    def __post_init__(self):
        n = sequence_length(self.horizon)
        src = tuple(int(b) for b in self.source)
        tgt = tuple(int(b) for b in self.target)
        if len(src) != n or len(tgt) != n:
            raise ValueError(
                f"masks must have length {n} for horizon {self.horizon}, "
                f"got {len(src)} and {len(tgt)}"
            )
        if any(b not in (0, 1) for b in src + tgt):
            raise ValueError("mask bits must be 0 or 1")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "target", tgt)

    @classmethod
    def from_elements(cls, source: Iterable[ElementRef], target: Iterable[ElementRef], k: int) -> MaskPair:
        return cls(k, bits_from_elements(source, k), bits_from_elements(target, k))


@dataclass(frozen=True)
class OperatorSpec:
    measure: Measure = Measure.MSE
    negatives: bool = False

    @property
    def name(self) -> str:
        return self.measure.value + ("-neg" if self.negatives else "")

    @classmethod
    def from_name(cls, name: str) -> OperatorSpec:
        base, neg = (name[:-4], True) if name.endswith("-neg") else (name, False)
        try:
            return cls(Measure(base), neg)
        except ValueError:
            raise ValueError(f"unknown operator {name!r}") from None

    def __str__(self) -> str:
        return self.name


ALL_OPERATORS: tuple[OperatorSpec, ...] = tuple(
    OperatorSpec(m, neg) for neg in (False, True) for m in Measure
)


@dataclass(frozen=True)
class LossCandidate:
    masks: MaskPair
    operator: OperatorSpec = OperatorSpec()

    @classmethod
    def from_elements(
        cls,
        source: Iterable[ElementRef],
        target: Iterable[ElementRef],
        k: int,
        operator: OperatorSpec = OperatorSpec(),
    ) -> LossCandidate:
        return cls(MaskPair.from_elements(source, target, k), operator)

    @property
    def horizon(self) -> int:
        return self.masks.horizon

    @property
    def source(self) -> tuple[ElementRef, ...]:
        return elements_from_bits(self.masks.source)

    @property
    def target(self) -> tuple[ElementRef, ...]:
        return elements_from_bits(self.masks.target)

    @property
    def is_valid(self) -> bool:
        return validate(self) is Validity.VALID

    def __str__(self) -> str:
        return format_candidate(self)


@dataclass(frozen=True)
class Pattern:
    source: frozenset[ElementRef]
    target: frozenset[ElementRef]

    def __init__(self, source: Iterable[ElementRef], target: Iterable[ElementRef]):
        target = frozenset(target)
        if not target:
            raise ValueError("pattern target must be nonempty")
        object.__setattr__(self, "source", frozenset(source))
        object.__setattr__(self, "target", target)

    def __str__(self) -> str:
        fmt = lambda xs: "{" + ",".join(str(e) for e in sorted(xs)) + "}"
        return f"{fmt(self.source)}->{fmt(self.target)}"


def validate(c: LossCandidate) -> Validity:
    """Loss rejection protocol; checks run in a fixed order, first failure wins."""
    m = c.masks
    if not any(m.source[0::3]):
        return Validity.NO_STATE_IN_SOURCE
    if not any(m.target):
        return Validity.EMPTY_TARGET
    if not MIN_HORIZON <= m.horizon <= MAX_HORIZON:
        return Validity.HORIZON_OUT_OF_RANGE
    return Validity.VALID


def element_count(mask: Sequence[int], kind: ElementKind) -> int:
    return sum(mask[int(kind)::3])


def has_pattern(c: LossCandidate, p: Pattern) -> bool:
    """True iff the pattern's source and target are subsets of the candidate's."""
    m = c.masks
    n = len(m.source)
    for bits, elems in ((m.source, p.source), (m.target, p.target)):
        for e in elems:
            if e.bit >= n or not bits[e.bit]:
                return False
    return True


def search_space_size(k_max: int, n_operators: int) -> int:
    if k_max < 1 or n_operators < 1:
        raise ValueError("k_max and n_operators must be >= 1")
    return n_operators * sum(2 ** (6 * i + 6) for i in range(1, k_max + 1))


# -- text form ---------------------------------------------------------------

_FIELD = re.compile(r"\s*(src|tgt|op|k):")
_ELEMENT = re.compile(r"\s*([sar])(\d+)\s*")


def format_candidate(c: LossCandidate) -> str:
    src = ",".join(str(e) for e in c.source)
    tgt = ",".join(str(e) for e in c.target)
    return f"src:{{{src}}} tgt:{{{tgt}}} op:{c.operator.name} k:{c.horizon}"


def _parse_set(text: str, pos: int) -> tuple[list[tuple[ElementRef, int]], int]:
    if pos >= len(text) or text[pos] != "{":
        raise ParseError("expected '{'", text, pos)
    pos += 1
    out: list[tuple[ElementRef, int]] = []
    close = text.find("}", pos)
    if close < 0:
        raise ParseError("unterminated element set", text, pos)
    body = text[pos:close]
    if body.strip():
        start = pos
        for chunk in body.split(","):
            m = _ELEMENT.fullmatch(chunk)
            if m is None:
                lead = len(chunk) - len(chunk.lstrip())
                raise ParseError("bad element", text, start + lead)
            ref = ElementRef(int(m.group(2)), ElementKind("sar".index(m.group(1))))
            out.append((ref, start + m.start(1)))
            start += len(chunk) + 1
    return out, close + 1


def parse_candidate(text: str) -> LossCandidate:
    """Parse ``src:{...} tgt:{...} op:<measure>[-neg] k:<int>``.

    Fields must appear in that order. Raises :class:`ParseError` with the
    offending position. Rejection-protocol checks are left to :func:`validate`.
    """
    pos = 0
    fields: dict[str, object] = {}
    for name in ("src", "tgt", "op", "k"):
        m = _FIELD.match(text, pos)
        if m is None or m.group(1) != name:
            at = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(f"expected '{name}:'", text, at)
        pos = m.end()
        if name in ("src", "tgt"):
            fields[name], pos = _parse_set(text, pos)
        else:
            m2 = re.compile(r"[A-Za-z0-9_-]+" if name == "op" else r"\d+").match(text, pos)
            if m2 is None:
                raise ParseError(f"bad value for '{name}'", text, pos)
            fields[name] = (m2.group(0), pos)
            pos = m2.end()
    if text[pos:].strip():
        raise ParseError("trailing text", text, pos + len(text[pos:]) - len(text[pos:].lstrip()))

    op_name, op_pos = fields["op"]
    try:
        op = OperatorSpec.from_name(op_name)
    except ValueError:
        raise ParseError(f"unknown operator {op_name!r}", text, op_pos) from None
    k = int(fields["k"][0])
    for key in ("src", "tgt"):
        for ref, at in fields[key]:
            if ref.offset > k:
                raise ParseError(f"element {ref} beyond horizon {k}", text, at)
    return LossCandidate.from_elements(
        (e for e, _ in fields["src"]), (e for e, _ in fields["tgt"]), k, op
    )


# -- canonical candidates and patterns ----------------------------------------

def a2_winner() -> LossCandidate:
    """Best searched loss of the image-based search (horizon 3, MSE)."""
    return LossCandidate.from_elements(
        [s(1), a(1), a(2), a(3)], [r(0), r(1), s(2), s(3)], 3
    )


def a2_winner_v() -> LossCandidate:
    """Best searched loss of the vector-based search (horizon 9, MSE)."""
    source = [s(0), a(0), a(1), s(2), a(2), a(3), r(3), a(4), r(4), a(5), a(7), s(8), a(8), r(8)]
    target = [s(1), s(3), a(4), s(6), s(9)]
    return LossCandidate.from_elements(source, target, 9)


FORWARD_DYNAMICS = Pattern([s(0), a(0)], [s(1)])
INVERSE_DYNAMICS = Pattern([a(0), s(1)], [s(0)])
REWARD_PREDICTION = Pattern([s(0), a(0)], [r(0)])
ACTION_INFERENCE = Pattern([s(0), s(1)], [a(0)])
STATE_RECONSTRUCTION = Pattern([s(0)], [s(0)])

NAMED_PATTERNS: dict[str, Pattern] = {
    "forward_dynamics": FORWARD_DYNAMICS,
    "inverse_dynamics": INVERSE_DYNAMICS,
    "reward_prediction": REWARD_PREDICTION,
    "action_inference": ACTION_INFERENCE,
    "state_reconstruction": STATE_RECONSTRUCTION,
}


def forward_dynamics_candidate(operator: OperatorSpec = OperatorSpec()) -> LossCandidate:
    return LossCandidate.from_elements([s(0), a(0)], [s(1)], 1, operator)
