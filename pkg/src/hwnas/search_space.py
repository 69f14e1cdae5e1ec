"""Cell search space: genome types, validation, encoding, sampling, enumeration.

A cell is a small convolutional subgraph described by a sequence of building
blocks.  Block ``b`` picks two inputs among {previous cell output (0),
cell-before-that output (1), outputs of earlier blocks in this cell (2+j for
block j)} and applies one operation to each; the results are summed.  A
genome with ``nb`` blocks therefore encodes to ``4 * nb`` integers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Iterator

import numpy as np

NUM_BLOCKS = 5
FIELDS_PER_BLOCK = 4
NUM_OPERATIONS = 8
ENUMERATION_CAP = 1_000_000


class GenomeError(ValueError):
    """Malformed genome, encoding, or JSON form."""


class Operation(IntEnum):
    """The eight block operations, with stable integer codes 0..7."""

    MAX3X3 = 0
    IDENTITY = 1
    SEP3X3 = 2
    CONV3X3 = 3
    SEP5X5 = 4
    CONV5X5 = 5
    SEP7X7 = 6
    CONV7X7 = 7

    @property
    def kernel_size(self) -> int:
        return _KERNEL_SIZE[self]

    @property
    def family(self) -> str:
        """One of 'max', 'identity', 'sep', 'conv'."""
        return _FAMILY[self]


_KERNEL_SIZE = {
    Operation.MAX3X3: 3,
    Operation.IDENTITY: 1,
    Operation.SEP3X3: 3,
    Operation.CONV3X3: 3,
    Operation.SEP5X5: 5,
    Operation.CONV5X5: 5,
    Operation.SEP7X7: 7,
    Operation.CONV7X7: 7,
}

_FAMILY = {
    Operation.MAX3X3: "max",
    Operation.IDENTITY: "identity",
    Operation.SEP3X3: "sep",
    Operation.CONV3X3: "conv",
    Operation.SEP5X5: "sep",
    Operation.CONV5X5: "conv",
    Operation.SEP7X7: "sep",
    Operation.CONV7X7: "conv",
}


def input_bound(block_index: int) -> int:
    """Exclusive upper bound for input indices of the block at this position."""
    return 2 + block_index


@dataclass(frozen=True)
class BlockSpec:
    """One building block: two input references and the two operations applied."""

    input1: int
    input2: int
    op1: Operation
    op2: Operation


@dataclass(frozen=True)
class CellGenome:
    """An ordered sequence of building blocks (5 in the standard search space)."""

    blocks: tuple[BlockSpec, ...]

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def to_json_dict(self) -> dict:
        return {
            "blocks": [[b.input1, b.input2, int(b.op1), int(b.op2)] for b in self.blocks]
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "CellGenome":
        try:
            rows = d["blocks"]
        except (TypeError, KeyError) as exc:
            raise GenomeError(f"genome JSON must be an object with a 'blocks' key: {d!r}") from exc
        blocks = []
        for row in rows:
            if len(row) != FIELDS_PER_BLOCK:
                raise GenomeError(f"genome block row must have 4 entries, got {row!r}")
            i1, i2, o1, o2 = (int(v) for v in row)
            blocks.append(BlockSpec(i1, i2, _operation(o1), _operation(o2)))
        g = cls(tuple(blocks))
        _require_valid(g)
        return g


def _operation(code: int) -> Operation:
    try:
        return Operation(code)
    except ValueError as exc:
        raise GenomeError(f"operation code {code} outside 0..{NUM_OPERATIONS - 1}") from exc


def validate_genome(genome: CellGenome) -> list[str]:
    """Return a list of constraint violations; an empty list means the genome is valid."""
    violations: list[str] = []
    if genome.num_blocks < 1:
        violations.append("genome has no blocks")
        return violations
    for b, blk in enumerate(genome.blocks):
        bound = input_bound(b)
        for name, ref in (("input1", blk.input1), ("input2", blk.input2)):
            if not 0 <= ref < bound:
                violations.append(f"block {b}: {name} index {ref} outside 0..{bound - 1}")
        for name, op in (("op1", blk.op1), ("op2", blk.op2)):
            if not 0 <= int(op) < NUM_OPERATIONS:
                violations.append(f"block {b}: {name} code {int(op)} outside 0..{NUM_OPERATIONS - 1}")
    return violations


def _require_valid(genome: CellGenome) -> None:
    violations = validate_genome(genome)
    if violations:
        raise GenomeError("; ".join(violations))


def random_genome(rng: np.random.Generator, num_blocks: int = NUM_BLOCKS) -> CellGenome:
    """Sample every field uniformly at random over its legal set."""
    if num_blocks < 1:
        raise ValueError("num_blocks must be >= 1")
    blocks = []
    for b in range(num_blocks):
        bound = input_bound(b)
        blocks.append(
            BlockSpec(
                int(rng.integers(bound)),
                int(rng.integers(bound)),
                Operation(int(rng.integers(NUM_OPERATIONS))),
                Operation(int(rng.integers(NUM_OPERATIONS))),
            )
        )
    return CellGenome(tuple(blocks))


def encode(genome: CellGenome) -> tuple[int, ...]:
    """Flatten to the block-major integer vector (I1, I2, O1, O2 per block)."""
    _require_valid(genome)
    out: list[int] = []
    for blk in genome.blocks:
        out.extend((blk.input1, blk.input2, int(blk.op1), int(blk.op2)))
    return tuple(out)


def decode(vector: Iterable[int], num_blocks: int | None = None) -> CellGenome:
    """Inverse of :func:`encode`; validates length, codes, and input bounds."""
    vec = [int(v) for v in vector]
    if num_blocks is None:
        if len(vec) == 0 or len(vec) % FIELDS_PER_BLOCK != 0:
            raise GenomeError(f"encoded genome length {len(vec)} is not a positive multiple of 4")
        num_blocks = len(vec) // FIELDS_PER_BLOCK
    elif len(vec) != FIELDS_PER_BLOCK * num_blocks:
        raise GenomeError(
            f"encoded genome length {len(vec)} does not match {num_blocks} blocks"
        )
    blocks = []
    for b in range(num_blocks):
        i1, i2, o1, o2 = vec[FIELDS_PER_BLOCK * b : FIELDS_PER_BLOCK * (b + 1)]
        blocks.append(BlockSpec(i1, i2, _operation(o1), _operation(o2)))
    g = CellGenome(tuple(blocks))
    _require_valid(g)
    return g


def search_space_size(num_blocks: int) -> int:
    """Exact number of distinct genomes: prod_b (2+b)^2 * 8^2 (arbitrary precision)."""
    if num_blocks < 1:
        raise ValueError("num_blocks must be >= 1")
    size = 1
    for b in range(num_blocks):
        size *= input_bound(b) ** 2 * NUM_OPERATIONS**2
    return size


def enumerate_genomes(num_blocks: int, cap: int = ENUMERATION_CAP) -> Iterator[CellGenome]:
    """Yield every legal genome exactly once, ascending in encoding order.

    Refuses spaces larger than ``cap`` to prevent accidental full expansion
    of the (astronomically large) default space.
    """
    size = search_space_size(num_blocks)
    if size > cap:
        raise ValueError(f"search space size {size} exceeds enumeration cap {cap}")
    ranges = []
    for b in range(num_blocks):
        bound = input_bound(b)
        ranges.extend((range(bound), range(bound), range(NUM_OPERATIONS), range(NUM_OPERATIONS)))

    def _gen() -> Iterator[CellGenome]:
        for vec in itertools.product(*ranges):
            yield decode(vec, num_blocks)

    return _gen()


def unused_block_outputs(genome: CellGenome) -> set[int]:
    """Block indices whose output no later block consumes (never empty).

    These are the outputs concatenated to form the cell output; the last
    block's output can never be consumed, so it is always present.
    """
    _require_valid(genome)
    used = set()
    for blk in genome.blocks:
        for ref in (blk.input1, blk.input2):
            if ref >= 2:
                used.add(ref - 2)
    return set(range(genome.num_blocks)) - used


def mutate(genome: CellGenome, rng: np.random.Generator, num_fields: int) -> CellGenome:
    """Resample ``num_fields`` distinct encoded positions uniformly over their legal sets.

    The result can coincide with the input when a resampled field draws its
    old value, so the encoding Hamming distance is at most ``num_fields``.
    """
    vec = list(encode(genome))
    if not 1 <= num_fields <= len(vec):
        raise ValueError(f"num_fields must be in 1..{len(vec)}, got {num_fields}")
    positions = rng.choice(len(vec), size=num_fields, replace=False)
    for pos in sorted(int(p) for p in positions):
        block, slot = divmod(pos, FIELDS_PER_BLOCK)
        limit = input_bound(block) if slot < 2 else NUM_OPERATIONS
        vec[pos] = int(rng.integers(limit))
    return decode(vec, genome.num_blocks)
