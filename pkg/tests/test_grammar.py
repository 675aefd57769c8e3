import math

import numpy as np
import pytest

from gramdet import grammar as g
from gramdet.grammar import (IMAGE_VAR, MORPH_OPS, OPERATORS, FeatureProgram, Node, OpDef,
                             ProgramBuilder, ProgramError, Variant, build_grammar, evaluate,
                             identity_program, sample_program, validate)
from gramdet.progtext import parse_program
from gramdet.raster import StructuringElement

EXAMPLE = "normDiff(I, erode(I, se=ellipse(theta=1.5707963267948966, k=4, ratio=0.3)))"

FORBIDDEN = {
    Variant.FULL: set(),
    Variant.HAAR: set(OPERATORS) - {"convolve"},
    Variant.NO_MORPH: set(MORPH_OPS),
    Variant.NO_HAAR: {"convolve"},
}


def check_structure(prog):
    """Independent structural check: leaf, topological order, reachability."""
    nodes = prog.nodes
    assert nodes[0] == IMAGE_VAR
    assert sum(n.op == "I" for n in nodes) == 1
    for i, n in enumerate(nodes):
        assert all(j < i for j in n.inputs)
    reach = {len(nodes) - 1}
    for i in range(len(nodes) - 1, -1, -1):
        if i in reach:
            reach.update(nodes[i].inputs)
    assert reach == set(range(len(nodes)))


class TestGrammarData:
    def test_full_productions(self):
        gr = build_grammar(Variant.FULL)
        assert set(gr.productions) == {"Feature", "Binary", "NLBinary", "Unary", "Compound",
                                       "Morph", "NLUnary", "LUnary"}
        assert len(gr.productions["Feature"]) == 4
        assert len(gr.productions["Compound"]) == 2

    def test_all_ops_reachable_in_full(self):
        rng = np.random.default_rng(0)
        seen = set()
        for _ in range(2000):
            seen.update(sample_program(rng=rng).ops())
        assert seen == set(OPERATORS)

    def test_undefined_nonterminal_rejected(self):
        with pytest.raises(ValueError, match="undefined"):
            g.Grammar({"Feature": (("nt", "Missing", ()),)}, {"Feature": ("X",)})

    def test_no_morph_drops_rules(self):
        gr = build_grammar(Variant.NO_MORPH)
        assert "Morph" not in gr.productions
        assert all(r[1] != "ptile" for r in gr.productions["NLUnary"])

    def test_no_haar_drops_convolve(self):
        gr = build_grammar(Variant.NO_HAAR)
        assert all(r[1] != "convolve" for r in gr.productions["LUnary"])


class TestSampling:
    def test_example_derivation_producible(self):
        # with max_depth=2 the inner Compound is forced to Unary, so the
        # target shape normDiff(I, erode(I, se)) has probability 1/1024
        rng = np.random.default_rng(1)
        for _ in range(30000):
            p = sample_program(rng=rng, max_depth=2)
            if p.ops() == ["erode", "normDiff"] and p.nodes[2].inputs == (0, 1):
                assert isinstance(p.nodes[1].params[0], StructuringElement)
                break
        else:
            pytest.fail("normDiff(I, erode(I, se)) never sampled")

    def test_haar_only_shape(self, rng):
        for _ in range(200):
            p = sample_program(variant=Variant.HAAR, rng=rng)
            assert [n.op for n in p.nodes] == ["I", "convolve"]
            assert p.nodes[1].inputs == (0,)

    @pytest.mark.parametrize("variant", list(Variant))
    def test_fuzz_validates(self, variant):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            p = sample_program(variant=variant, rng=rng)
            assert validate(p, variant) == []
            check_structure(p)
            assert not FORBIDDEN[variant] & set(p.ops())

    def test_deterministic_per_seed(self):
        a = [sample_program(rng=np.random.default_rng(s)) for s in range(20)]
        b = [sample_program(rng=np.random.default_rng(s)) for s in range(20)]
        assert a == b
        assert len(set(a)) > 10

    def test_max_depth_bounds_compound_chain(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            p = sample_program(rng=rng, max_depth=1)
            # Feature -> Compound -> Unary at worst: one binary on top of unary chains
            assert len(p) <= 8

    def test_max_depth_precondition(self):
        with pytest.raises(ValueError):
            sample_program(max_depth=0)

    def test_image_leaf_shared(self, rng):
        for _ in range(200):
            p = sample_program(rng=rng)
            assert sum(n.op == "I" for n in p.nodes) == 1


class TestValidate:
    def test_forbidden_op_reported(self):
        p = parse_program(EXAMPLE)
        assert validate(p, Variant.FULL) == []
        msgs = validate(p, Variant.NO_MORPH)
        assert any("erode" in m and "not allowed" in m for m in msgs)
        assert validate(p, Variant.HAAR)

    def test_parameter_range(self):
        se = StructuringElement(0.0, 3, 20.0)
        p = FeatureProgram((IMAGE_VAR, Node("erode", (se,), (0,))))
        assert any("structuring element" in m for m in validate(p))

    def test_unreachable_and_order(self):
        nodes = (IMAGE_VAR, Node("ggm", (1.0,), (0,)), Node("ggm", (2.0,), (0,)))
        assert any("unreachable" in m for m in validate(FeatureProgram(nodes)))
        bad = (IMAGE_VAR, Node("ggm", (1.0,), (2,)), Node("ggm", (2.0,), (0,)))
        assert any("topological" in m for m in validate(FeatureProgram(bad)))

    def test_sigma_type(self):
        p = FeatureProgram((IMAGE_VAR, Node("ggm", (1,), (0,))))
        assert validate(p)


class TestEvaluate:
    def test_identity(self, rng):
        img = rng.random((9, 7))
        np.testing.assert_array_equal(evaluate(identity_program(), img), img)

    def test_example_on_constant_is_zero(self):
        p = parse_program(EXAMPLE)
        out = evaluate(p, np.full((32, 32), 0.7))
        assert out.shape == (32, 32)
        np.testing.assert_array_equal(out, 0.0)

    def test_shared_node_evaluated_once(self, monkeypatch, rng):
        calls = []
        real = OPERATORS["ggm"]

        def counted(x, sigma):
            calls.append(sigma)
            return real.fn(x, sigma)

        monkeypatch.setitem(OPERATORS, "ggm", OpDef(real.arity, real.params, counted))
        b = ProgramBuilder()
        s = b.add("ggm", (1.5,), (0,))
        left = b.add("sigmoid", (0.0, 0.0), (s,))
        right = b.add("sigmoid", (1.0, 0.0), (s,))
        p = b.build(b.add("mult", (), (left, right)))
        assert p.parent_counts()[1] == 2
        evaluate(p, rng.random((16, 16)))
        assert calls == [1.5]

    def test_builder_hash_conses(self):
        b = ProgramBuilder()
        assert b.add("ggm", (1.0,), (0,)) == b.add("ggm", (1.0,), (0,))

    def test_error_carries_index(self, monkeypatch, rng):
        def boom(x, sigma):
            raise RuntimeError("bad")

        monkeypatch.setitem(OPERATORS, "laplace", OpDef(1, OPERATORS["laplace"].params, boom))
        b = ProgramBuilder()
        s = b.add("ggm", (1.0,), (0,))
        p = b.build(b.add("laplace", (1.0,), (s,)))
        with pytest.raises(ProgramError) as ei:
            evaluate(p, rng.random((8, 8)))
        assert ei.value.index == 2 and ei.value.op == "laplace"

    def test_outputs_finite_and_shaped(self):
        rng = np.random.default_rng(11)
        img = rng.random((40, 40))
        for _ in range(100):
            out = evaluate(sample_program(rng=rng), img)
            assert out.shape == img.shape
            assert np.all(np.isfinite(out))

    def test_cache_reused(self, rng):
        img = rng.random((16, 16))
        p = parse_program(EXAMPLE)
        cache = {}
        first = evaluate(p, img, cache)
        cache[2] = np.full_like(img, math.pi)
        assert np.all(evaluate(p, img, cache) == math.pi)
        assert first.shape == img.shape
