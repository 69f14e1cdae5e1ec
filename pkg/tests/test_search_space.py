import numpy as np
import pytest

from hwnas.search_space import (
    ENUMERATION_CAP,
    BlockSpec,
    CellGenome,
    GenomeError,
    Operation,
    decode,
    encode,
    enumerate_genomes,
    input_bound,
    mutate,
    random_genome,
    search_space_size,
    unused_block_outputs,
    validate_genome,
)


def genome_from_rows(rows):
    return CellGenome(tuple(BlockSpec(r[0], r[1], Operation(r[2]), Operation(r[3])) for r in rows))


def all_identity_genome(num_blocks=5):
    return genome_from_rows([[0, 1, 1, 1]] * num_blocks)


class TestOperations:
    def test_exactly_eight_stable_codes(self):
        assert len(Operation) == 8
        assert [int(op) for op in Operation] == list(range(8))
        assert Operation.IDENTITY == 1
        assert Operation.MAX3X3 == 0
        assert Operation.CONV7X7 == 7

    def test_kernel_sizes(self):
        assert Operation.SEP5X5.kernel_size == 5
        assert Operation.CONV3X3.kernel_size == 3
        assert Operation.MAX3X3.family == "max"
        assert Operation.SEP7X7.family == "sep"


class TestValidate:
    def test_block0_input_index_2_is_violation(self):
        g = genome_from_rows([[2, 0, 1, 1]] + [[0, 1, 1, 1]] * 4)
        violations = validate_genome(g)
        assert len(violations) == 1
        assert "block 0" in violations[0] and "2" in violations[0]

    def test_minimal_legal_indices_ok(self):
        assert validate_genome(all_identity_genome()) == []

    def test_block4_input_bounds_by_enumeration(self):
        # Legal input set for block b is exactly {0..b+1}.
        for b in range(5):
            rows = [[0, 1, 1, 1]] * 5
            legal = set(range(input_bound(b)))
            for idx in range(8):
                rows_b = [list(r) for r in rows]
                rows_b[b][0] = idx
                g = genome_from_rows(rows_b)
                assert (validate_genome(g) == []) == (idx in legal)

    def test_block4_index_6_is_violation(self):
        rows = [[0, 1, 1, 1]] * 4 + [[6, 0, 1, 1]]
        assert validate_genome(genome_from_rows(rows)) != []


class TestRandomGenome:
    def test_deterministic_for_fixed_seed(self):
        a = random_genome(np.random.default_rng(17))
        b = random_genome(np.random.default_rng(17))
        assert a == b

    def test_all_samples_valid(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            assert validate_genome(random_genome(rng)) == []

    def test_block0_input_frequencies_uniform(self):
        rng = np.random.default_rng(5)
        counts = {0: 0, 1: 0}
        n = 10_000
        for _ in range(n):
            counts[random_genome(rng).blocks[0].input1] += 1
        for v in counts.values():
            assert abs(v / n - 0.5) < 0.02

    def test_op_frequencies_uniform(self):
        rng = np.random.default_rng(6)
        counts = np.zeros(8)
        n = 10_000
        for _ in range(n):
            counts[int(random_genome(rng).blocks[2].op1)] += 1
        assert np.all(np.abs(counts / n - 0.125) < 0.02)


class TestEncodeDecode:
    def test_all_identity_layout(self):
        g = all_identity_genome()
        assert encode(g) == (0, 1, 1, 1) * 5

    def test_round_trip_random(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            g = random_genome(rng)
            assert decode(encode(g)) == g

    def test_wrong_length_rejected(self):
        with pytest.raises(GenomeError):
            decode([0] * 19)

    def test_out_of_range_code_rejected(self):
        vec = list(encode(all_identity_genome()))
        vec[2] = 9
        with pytest.raises(GenomeError):
            decode(vec)

    def test_input_bound_violation_rejected(self):
        vec = list(encode(all_identity_genome()))
        vec[0] = 3
        with pytest.raises(GenomeError):
            decode(vec)

    def test_encode_rejects_invalid_genome(self):
        g = genome_from_rows([[3, 0, 1, 1]] + [[0, 1, 1, 1]] * 4)
        with pytest.raises(GenomeError):
            encode(g)

    def test_json_round_trip(self):
        rng = np.random.default_rng(12)
        g = random_genome(rng)
        assert CellGenome.from_json_dict(g.to_json_dict()) == g


class TestSearchSpaceSize:
    def test_one_block(self):
        assert search_space_size(1) == 256

    def test_two_blocks_matches_formula(self):
        assert search_space_size(2) == 256 * 9 * 64

    def test_five_blocks_exact(self):
        assert search_space_size(5) == 556_627_761_561_600

    def test_zero_blocks_rejected(self):
        with pytest.raises(ValueError):
            search_space_size(0)


class TestEnumerate:
    def test_one_block_count_and_uniqueness(self):
        genomes = list(enumerate_genomes(1))
        assert len(genomes) == search_space_size(1) == 256
        assert len({encode(g) for g in genomes}) == 256

    def test_two_block_count_matches_size(self):
        count = sum(1 for _ in enumerate_genomes(2))
        assert count == search_space_size(2)

    def test_first_emitted_is_minimal_encoding(self):
        first = next(iter(enumerate_genomes(1)))
        assert encode(first) == (0, 0, 0, 0)

    def test_lexicographic_order(self):
        encodings = [encode(g) for g in enumerate_genomes(1)]
        assert encodings == sorted(encodings)

    def test_five_blocks_exceeds_cap(self):
        with pytest.raises(ValueError):
            enumerate_genomes(5)

    def test_custom_cap(self):
        with pytest.raises(ValueError):
            enumerate_genomes(1, cap=100)
        assert ENUMERATION_CAP == 1_000_000


class TestUnusedOutputs:
    def test_external_only_leaves_all_unused(self):
        assert unused_block_outputs(all_identity_genome()) == {0, 1, 2, 3, 4}

    def test_single_internal_consumer(self):
        rows = [[0, 1, 1, 1], [2, 0, 1, 1]] + [[0, 1, 1, 1]] * 3
        assert unused_block_outputs(genome_from_rows(rows)) == {1, 2, 3, 4}

    def test_chain_leaves_only_last(self):
        rows = [[0, 1, 1, 1]] + [[2 + b - 1, 2 + b - 1, 1, 1] for b in range(1, 5)]
        assert unused_block_outputs(genome_from_rows(rows)) == {4}

    def test_last_block_always_unused(self):
        rng = np.random.default_rng(13)
        for _ in range(300):
            g = random_genome(rng)
            assert 4 in unused_block_outputs(g)


class TestMutate:
    def test_zero_fields_rejected(self):
        with pytest.raises(ValueError):
            mutate(all_identity_genome(), np.random.default_rng(0), 0)

    def test_single_field_hamming_at_most_one(self):
        rng = np.random.default_rng(21)
        base = all_identity_genome()
        for _ in range(200):
            out = mutate(base, rng, 1)
            distance = sum(a != b for a, b in zip(encode(base), encode(out)))
            assert distance <= 1

    def test_mutants_always_valid(self):
        rng = np.random.default_rng(22)
        g = random_genome(rng)
        for _ in range(1000):
            n = int(rng.integers(1, 21))
            g2 = mutate(g, rng, n)
            assert validate_genome(g2) == []
            assert sum(a != b for a, b in zip(encode(g), encode(g2))) <= n
