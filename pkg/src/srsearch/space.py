"""Two-level search space: cell DAGs, op alphabets, token codec, serialization.

A candidate network is a pair of cells (one resolution-preserving, one
upsampling) plus the layer index at which the upsampling cell sits in an
L-layer chain.  Every cell is a DAG over B nodes: two input nodes (-2 and
-1, the outputs of the two preceding layers) and B-2 intermediate nodes.
Each intermediate node applies two operations to two previously available
nodes; the cell output is the channel-wise concat of all intermediates.

Everything here is pure data and pure functions; random generation takes a
caller-owned numpy Generator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

import numpy as np

SCHEMA_VERSION = 1


class NormalOp(Enum):
    """Ops available to the resolution-preserving cell (integer codes 0..6)."""

    IDENTITY = "identity"
    DIL_CONV_3X3 = "dil_conv_3x3"
    DIL_CONV_5X5 = "dil_conv_5x5"
    SEP_CONV_3X3 = "sep_conv_3x3"
    SEP_CONV_5X5 = "sep_conv_5x5"
    UDPB = "udpb"
    RCAB = "rcab"

    @property
    def code(self) -> int:
        return _NORMAL_CODES[self]


class UpsampleOp(Enum):
    """Ops available to the upsampling cell (integer codes 0..4)."""

    AREA = "area"
    BILINEAR = "bilinear"
    NEAREST = "nearest"
    SUB_PIXEL = "sub_pixel"
    DECONV = "deconv"

    @property
    def code(self) -> int:
        return _UPSAMPLE_CODES[self]


_NORMAL_ORDER = list(NormalOp)
_UPSAMPLE_ORDER = list(UpsampleOp)
_NORMAL_CODES = {op: i for i, op in enumerate(_NORMAL_ORDER)}
_UPSAMPLE_CODES = {op: i for i, op in enumerate(_UPSAMPLE_ORDER)}

NORMAL_OP_COUNT = len(_NORMAL_ORDER)
UPSAMPLE_OP_COUNT = len(_UPSAMPLE_ORDER)

assert NORMAL_OP_COUNT == 7 and UPSAMPLE_OP_COUNT == 5


def op_from_code(kind: str, code: int):
    order = _NORMAL_ORDER if kind == "normal" else _UPSAMPLE_ORDER
    if not 0 <= code < len(order):
        raise ValueError(f"op code {code} out of range for {kind} cell")
    return order[code]


def op_count(kind: str) -> int:
    return NORMAL_OP_COUNT if kind == "normal" else UPSAMPLE_OP_COUNT


@dataclass(frozen=True)
class NodeSpec:
    """One intermediate node: an ordered pair of (source, op) edges."""

    src_a: int
    op_a: int
    src_b: int
    op_b: int


@dataclass(frozen=True)
class CellSpec:
    """A cell DAG.  kind is "normal" or "upsample".

    nodes[t] describes intermediate node t; its sources must come from
    {-2, -1, 0, ..., t-1} and its op codes from the kind's alphabet.
    """

    kind: str
    nodes: tuple[NodeSpec, ...]

    def edges(self) -> Iterator[tuple[int, int, int, str]]:
        """Yield (node_index, src, op_code, slot) for every edge, slot in 'ab'."""
        for t, n in enumerate(self.nodes):
            yield t, n.src_a, n.op_a, "a"
            yield t, n.src_b, n.op_b, "b"


@dataclass(frozen=True)
class ArchSpec:
    """A complete two-level architecture."""

    normal_cell: CellSpec
    upsample_cell: CellSpec
    position: int  # 1-based layer index of the upsampling cell, in [1, L]
    depth: int  # L, total number of cell layers


@dataclass(frozen=True)
class SpaceConfig:
    """Search-space sizing.  B counts both input nodes, so B-2 intermediates."""

    B: int = 6
    L: int = 12
    normal_op_count: int = NORMAL_OP_COUNT
    upsample_op_count: int = UPSAMPLE_OP_COUNT

    def __post_init__(self):
        if self.B < 3:
            raise ValueError("B must be >= 3 (at least one intermediate node)")
        if self.L < 1:
            raise ValueError("L must be >= 1")

    @property
    def intermediates(self) -> int:
        return self.B - 2

    @property
    def max_sources(self) -> int:
        # node t chooses among t+2 predecessors; the last node has the most
        return self.intermediates + 1

    @property
    def token_count(self) -> int:
        return 2 * self.intermediates * 4 + 1


def slot_alphabets(cfg: SpaceConfig) -> list[int]:
    """Alphabet size of every token slot, in encoding order.

    Depends only on the slot index and cfg, never on earlier tokens, which
    is what makes the encoding prefix-decodable.
    """
    sizes: list[int] = []
    for kind in ("normal", "upsample"):
        k = op_count(kind)
        for t in range(cfg.intermediates):
            sizes.extend([t + 2, k, t + 2, k])
    sizes.append(cfg.L)
    return sizes


# ---------------------------------------------------------------------------
# validation


def validate_arch(arch: ArchSpec, cfg: SpaceConfig) -> list[str]:
    """Return a list of violation messages; empty means the arch is valid."""
    violations: list[str] = []
    if arch.depth != cfg.L:
        violations.append(f"depth {arch.depth} != configured L={cfg.L}")
    if not 1 <= arch.position <= cfg.L:
        violations.append(f"position out of range: {arch.position} not in [1, {cfg.L}]")
    for cell, want_kind in ((arch.normal_cell, "normal"), (arch.upsample_cell, "upsample")):
        if cell.kind != want_kind:
            violations.append(f"{want_kind}_cell has kind {cell.kind!r}")
        violations.extend(_validate_cell(cell, cfg, want_kind))
    return violations


def _validate_cell(cell: CellSpec, cfg: SpaceConfig, label: str) -> list[str]:
    violations: list[str] = []
    if len(cell.nodes) != cfg.intermediates:
        violations.append(
            f"{label}_cell has {len(cell.nodes)} nodes, expected {cfg.intermediates}"
        )
        return violations
    k = op_count(label)
    for t, node in enumerate(cell.nodes):
        for slot, src, op in (("a", node.src_a, node.op_a), ("b", node.src_b, node.op_b)):
            if not -2 <= src <= t - 1:
                kind_msg = "forward reference" if src >= t else "source out of range"
                violations.append(f"{label}_cell node {t} src_{slot}={src}: {kind_msg}")
            if not 0 <= op < k:
                violations.append(f"{label}_cell node {t} op_{slot}={op}: op code out of range")
    return violations


class ArchValidationError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("invalid architecture: " + "; ".join(violations))
        self.violations = violations


class TokenDecodeError(ValueError):
    def __init__(self, index: int, msg: str):
        super().__init__(f"token {index}: {msg}")
        self.index = index


# ---------------------------------------------------------------------------
# token codec


def arch_to_tokens(arch: ArchSpec, cfg: SpaceConfig) -> list[int]:
    """Flatten an arch into its token sequence.

    Per node: (src_a, op_a, src_b, op_b), sources encoded as offsets
    src + 2 in 0..t+1; normal cell first, then the upsampling cell, then
    one position token position - 1.
    """
    violations = validate_arch(arch, cfg)
    if violations:
        raise ArchValidationError(violations)
    tokens: list[int] = []
    for cell in (arch.normal_cell, arch.upsample_cell):
        for node in cell.nodes:
            tokens.extend([node.src_a + 2, node.op_a, node.src_b + 2, node.op_b])
    tokens.append(arch.position - 1)
    return tokens


def tokens_to_arch(tokens: list[int] | np.ndarray, cfg: SpaceConfig) -> ArchSpec:
    """Inverse of arch_to_tokens.  Rejects wrong length or out-of-alphabet tokens."""
    tokens = [int(t) for t in tokens]
    sizes = slot_alphabets(cfg)
    if len(tokens) != len(sizes):
        raise TokenDecodeError(len(tokens), f"expected {len(sizes)} tokens, got {len(tokens)}")
    for i, (tok, size) in enumerate(zip(tokens, sizes)):
        if not 0 <= tok < size:
            raise TokenDecodeError(i, f"value {tok} outside alphabet 0..{size - 1}")

    cells = []
    pos = 0
    for kind in ("normal", "upsample"):
        nodes = []
        for _t in range(cfg.intermediates):
            sa, oa, sb, ob = tokens[pos : pos + 4]
            pos += 4
            nodes.append(NodeSpec(sa - 2, oa, sb - 2, ob))
        cells.append(CellSpec(kind, tuple(nodes)))
    position = tokens[pos] + 1
    return ArchSpec(cells[0], cells[1], position, cfg.L)


def random_arch(cfg: SpaceConfig, rng: np.random.Generator) -> ArchSpec:
    """Sample every token slot uniformly and independently."""
    tokens = [int(rng.integers(size)) for size in slot_alphabets(cfg)]
    return tokens_to_arch(tokens, cfg)


def space_cardinality(cfg: SpaceConfig) -> int:
    """Exact number of distinct token sequences (python int, no overflow)."""
    total = 1
    for size in slot_alphabets(cfg):
        total *= size
    return total


def cell_cardinality(cfg: SpaceConfig, kind: str) -> int:
    k = op_count(kind)
    total = 1
    for t in range(cfg.intermediates):
        total *= (t + 2) ** 2 * k**2
    return total


def enumerate_archs(cfg: SpaceConfig) -> Iterator[ArchSpec]:
    """Yield every arch in the space.  Only sensible for truncated configs."""
    sizes = slot_alphabets(cfg)
    tokens = [0] * len(sizes)
    while True:
        yield tokens_to_arch(tokens, cfg)
        i = len(tokens) - 1
        while i >= 0:
            tokens[i] += 1
            if tokens[i] < sizes[i]:
                break
            tokens[i] = 0
            i -= 1
        if i < 0:
            return


# ---------------------------------------------------------------------------
# serialization


def arch_to_json(arch: ArchSpec, cfg: SpaceConfig) -> str:
    violations = validate_arch(arch, cfg)
    if violations:
        raise ArchValidationError(violations)

    def cell_rows(cell: CellSpec, kind: str) -> list[list]:
        rows = []
        for n in cell.nodes:
            rows.append(
                [n.src_a, op_from_code(kind, n.op_a).value, n.src_b, op_from_code(kind, n.op_b).value]
            )
        return rows

    doc = {
        "schema_version": SCHEMA_VERSION,
        "B": cfg.B,
        "L": cfg.L,
        "normal_cell": cell_rows(arch.normal_cell, "normal"),
        "upsample_cell": cell_rows(arch.upsample_cell, "upsample"),
        "position": arch.position,
    }
    return json.dumps(doc, indent=2)


def arch_from_json(text: str) -> tuple[ArchSpec, SpaceConfig]:
    doc = json.loads(text)
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version!r}")
    cfg = SpaceConfig(B=int(doc["B"]), L=int(doc["L"]))

    def parse_cell(rows: list, kind: str) -> CellSpec:
        enum_cls = NormalOp if kind == "normal" else UpsampleOp
        nodes = []
        for row in rows:
            sa, oa, sb, ob = row
            nodes.append(NodeSpec(int(sa), enum_cls(oa).code, int(sb), enum_cls(ob).code))
        return CellSpec(kind, tuple(nodes))

    arch = ArchSpec(
        normal_cell=parse_cell(doc["normal_cell"], "normal"),
        upsample_cell=parse_cell(doc["upsample_cell"], "upsample"),
        position=int(doc["position"]),
        depth=cfg.L,
    )
    violations = validate_arch(arch, cfg)
    if violations:
        raise ArchValidationError(violations)
    return arch, cfg


# ---------------------------------------------------------------------------
# DOT export


def _node_name(idx: int) -> str:
    return f"in_{idx}" if idx < 0 else f"n{idx}"


def cell_to_dot(cell: CellSpec, graph_name: str) -> str:
    kind = cell.kind
    lines = [f"digraph {graph_name} {{", "  rankdir=LR;"]
    lines.append('  "in_-2" [shape=box];')
    lines.append('  "in_-1" [shape=box];')
    for t in range(len(cell.nodes)):
        lines.append(f'  "n{t}" [shape=ellipse];')
    lines.append('  "out" [shape=doubleoctagon, label="concat"];')
    for t, src, op, slot in cell.edges():
        op_name = op_from_code(kind, op).value
        lines.append(f'  "{_node_name(src)}" -> "n{t}" [label="{slot}: {op_name}"];')
    for t in range(len(cell.nodes)):
        lines.append(f'  "n{t}" -> "out";')
    lines.append("}")
    return "\n".join(lines)


def chain_to_dot(arch: ArchSpec) -> str:
    """Layer chain marking where the resolution jump happens."""
    lines = ["digraph network {", "  rankdir=LR;", '  "stem" [shape=box];']
    for i in range(1, arch.depth + 1):
        label = "upsample" if i == arch.position else "normal"
        shape = "hexagon" if i == arch.position else "ellipse"
        lines.append(f'  "l{i}" [shape={shape}, label="{i}: {label}"];')
    lines.append('  "tail" [shape=box];')
    prev = "stem"
    for i in range(1, arch.depth + 1):
        lines.append(f'  "{prev}" -> "l{i}";')
        prev = f"l{i}"
    lines.append(f'  "{prev}" -> "tail";')
    lines.append("}")
    return "\n".join(lines)


def arch_to_dot(arch: ArchSpec) -> str:
    """Three digraphs: both cells plus the layer chain."""
    return "\n".join(
        [
            cell_to_dot(arch.normal_cell, "normal_cell"),
            cell_to_dot(arch.upsample_cell, "upsample_cell"),
            chain_to_dot(arch),
        ]
    )
