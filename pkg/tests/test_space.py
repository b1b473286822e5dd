import hashlib
import json

import numpy as np
import pytest

from srsearch.space import (
    ArchSpec,
    ArchValidationError,
    CellSpec,
    NodeSpec,
    NormalOp,
    SpaceConfig,
    TokenDecodeError,
    UpsampleOp,
    arch_from_json,
    arch_to_dot,
    arch_to_json,
    arch_to_tokens,
    cell_cardinality,
    enumerate_archs,
    random_arch,
    slot_alphabets,
    space_cardinality,
    tokens_to_arch,
    validate_arch,
)

from conftest import parse_dot

CFG = SpaceConfig()


def zero_arch(cfg=CFG):
    return tokens_to_arch([0] * cfg.token_count, cfg)


class TestOps:
    def test_counts_and_codes(self):
        assert len(NormalOp) == 7
        assert len(UpsampleOp) == 5
        assert [op.code for op in NormalOp] == list(range(7))
        assert [op.code for op in UpsampleOp] == list(range(5))

    def test_code_stability(self):
        # serialized archives depend on this exact assignment
        assert NormalOp.IDENTITY.code == 0
        assert NormalOp.RCAB.code == 6
        assert UpsampleOp.AREA.code == 0
        assert UpsampleOp.DECONV.code == 4


class TestValidate:
    def test_position_out_of_range(self):
        arch = zero_arch()
        bad = ArchSpec(arch.normal_cell, arch.upsample_cell, 13, 12)
        violations = validate_arch(bad, CFG)
        assert any("position out of range" in v for v in violations)

    def test_forward_reference(self):
        arch = zero_arch()
        nodes = list(arch.normal_cell.nodes)
        nodes[0] = NodeSpec(1, 0, -2, 0)  # node 0 referencing node 1
        bad = ArchSpec(CellSpec("normal", tuple(nodes)), arch.upsample_cell, 1, 12)
        violations = validate_arch(bad, CFG)
        assert any("forward reference" in v for v in violations)

    def test_bad_op_code(self):
        arch = zero_arch()
        nodes = list(arch.upsample_cell.nodes)
        nodes[0] = NodeSpec(-2, 5, -1, 0)  # upsample alphabet is 0..4
        bad = ArchSpec(arch.normal_cell, CellSpec("upsample", tuple(nodes)), 1, 12)
        assert any("op code out of range" in v for v in validate_arch(bad, CFG))

    def test_random_archs_validate(self, rng):
        for _ in range(2000):
            assert validate_arch(random_arch(CFG, rng), CFG) == []


class TestTokens:
    def test_length(self):
        assert CFG.token_count == 33
        assert len(arch_to_tokens(zero_arch(), CFG)) == 33

    def test_zero_arch_is_all_zero(self):
        arch = zero_arch()
        assert all(n.src_a == -2 and n.src_b == -2 for n in arch.normal_cell.nodes)
        assert arch.position == 1
        assert arch_to_tokens(arch, CFG) == [0] * 33

    def test_roundtrip_from_archs(self, rng):
        for _ in range(1000):
            a = random_arch(CFG, rng)
            assert tokens_to_arch(arch_to_tokens(a, CFG), CFG) == a

    def test_roundtrip_from_tokens(self, rng):
        sizes = slot_alphabets(CFG)
        for _ in range(1000):
            toks = [int(rng.integers(s)) for s in sizes]
            assert arch_to_tokens(tokens_to_arch(toks, CFG), CFG) == toks

    def test_prefix_decodable_alphabets(self):
        # slot alphabet depends only on the slot index and cfg
        sizes = slot_alphabets(CFG)
        assert sizes[:8] == [2, 7, 2, 7, 3, 7, 3, 7]
        assert sizes[16:20] == [2, 5, 2, 5]
        assert sizes[-1] == 12

    def test_wrong_length(self):
        with pytest.raises(TokenDecodeError) as exc:
            tokens_to_arch([0] * 32, CFG)
        assert "32" in str(exc.value)

    def test_out_of_alphabet_names_index(self):
        toks = [0] * 33
        toks[1] = 7  # first normal-op slot, alphabet 0..6
        with pytest.raises(TokenDecodeError) as exc:
            tokens_to_arch(toks, CFG)
        assert exc.value.index == 1

    def test_encode_rejects_invalid_arch(self):
        arch = zero_arch()
        bad = ArchSpec(arch.normal_cell, arch.upsample_cell, 0, 12)
        with pytest.raises(ArchValidationError) as exc:
            arch_to_tokens(bad, CFG)
        assert exc.value.violations


class TestRandom:
    def test_seed_reproducible(self):
        a = random_arch(CFG, np.random.default_rng(77))
        b = random_arch(CFG, np.random.default_rng(77))
        assert a == b

    def test_slot_marginals_uniform(self):
        # 1e5 draws; every symbol count within 3 sigma of its binomial mean
        n = 100_000
        rng = np.random.default_rng(0)
        sizes = slot_alphabets(CFG)
        counts = [np.zeros(s, dtype=np.int64) for s in sizes]
        for _ in range(n):
            toks = arch_to_tokens(random_arch(CFG, rng), CFG)
            for i, t in enumerate(toks):
                counts[i][t] += 1
        for i, (size, cnt) in enumerate(zip(sizes, counts)):
            p = 1.0 / size
            sigma = (n * p * (1 - p)) ** 0.5
            dev = np.abs(cnt - n * p).max()
            assert dev <= 3 * sigma, f"slot {i}: worst deviation {dev} > 3 sigma {3 * sigma:.1f}"


class TestCardinality:
    def test_single_node_cell(self):
        cfg = SpaceConfig(B=3, L=1)
        assert cell_cardinality(cfg, "normal") == 2 * 2 * 7 * 7 == 196
        assert cell_cardinality(cfg, "upsample") == 100

    def test_brute_force_enumeration_matches(self):
        cfg = SpaceConfig(B=3, L=2)
        seen = set()
        for arch in enumerate_archs(cfg):
            seen.add(tuple(arch_to_tokens(arch, cfg)))
        assert len(seen) == space_cardinality(cfg) == 196 * 100 * 2

    def test_closed_form_b6(self):
        assert cell_cardinality(CFG, "normal") == 14400 * 7**8 == 83_013_134_400
        assert cell_cardinality(CFG, "upsample") == 14400 * 5**8 == 5_625_000_000
        assert space_cardinality(CFG) == 83_013_134_400 * 5_625_000_000 * 12


class TestJson:
    def test_roundtrip(self, rng):
        for _ in range(100):
            a = random_arch(CFG, rng)
            b, cfg2 = arch_from_json(arch_to_json(a, CFG))
            assert b == a and cfg2 == CFG

    def test_schema_fields(self):
        doc = json.loads(arch_to_json(zero_arch(), CFG))
        assert doc["schema_version"] == 1
        assert doc["B"] == 6 and doc["L"] == 12
        assert doc["position"] == 1
        assert doc["normal_cell"][0] == [-2, "identity", -2, "identity"]
        assert doc["upsample_cell"][0] == [-2, "area", -2, "area"]

    def test_bad_version_rejected(self):
        doc = json.loads(arch_to_json(zero_arch(), CFG))
        doc["schema_version"] = 99
        with pytest.raises(ValueError):
            arch_from_json(json.dumps(doc))


class TestDot:
    def test_parses_and_structure(self, rng):
        arch = random_arch(CFG, rng)
        graphs = parse_dot(arch_to_dot(arch))
        assert [g.name for g in graphs] == ["normal_cell", "upsample_cell", "network"]
        cell_graph = graphs[0]
        # 2 inputs + 4 intermediates + out
        assert {"in_-2", "in_-1", "n0", "n1", "n2", "n3", "out"} <= cell_graph.nodes
        # 8 labeled op edges + 4 concat edges
        assert len(cell_graph.edges) == 12
        chain = graphs[2]
        assert len(chain.edges) == 13  # stem -> 12 layers -> tail

    def test_zero_arch_edges_from_first_input(self):
        graphs = parse_dot(arch_to_dot(zero_arch()))
        op_edges = [e for e in graphs[0].edges if e[2]]
        assert len(op_edges) == 8
        assert all(src == "in_-2" for src, _dst, _a in op_edges)

    def test_distinct_archs_distinct_text(self, rng):
        hashes = set()
        for _ in range(300):
            a = random_arch(CFG, rng)
            hashes.add(hashlib.sha256(arch_to_dot(a).encode()).hexdigest())
        assert len(hashes) >= 299  # random collisions in 300 draws are negligible

    def test_slot_order_distinguished(self):
        # swapped (src, op) pairs of one node must not collapse to one graph
        n1 = [NodeSpec(-2, 1, -1, 2)] + [NodeSpec(-2, 0, -2, 0)] * 3
        n2 = [NodeSpec(-1, 2, -2, 1)] + [NodeSpec(-2, 0, -2, 0)] * 3
        up = zero_arch().upsample_cell
        a = ArchSpec(CellSpec("normal", tuple(n1)), up, 1, 12)
        b = ArchSpec(CellSpec("normal", tuple(n2)), up, 1, 12)
        assert arch_to_dot(a) != arch_to_dot(b)
