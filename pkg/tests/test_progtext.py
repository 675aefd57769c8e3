import numpy as np
import pytest

from gramdet.grammar import ProgramBuilder, Variant, evaluate, sample_program
from gramdet.progtext import ProgramSyntaxError, parse_program, serialize_program

EXAMPLE = "normDiff(I, erode(I, se=ellipse(theta=1.5707963267948966, k=4, ratio=0.3)))"


class TestRoundTrip:
    @pytest.mark.parametrize("variant", list(Variant))
    def test_fuzzed_programs(self, variant):
        rng = np.random.default_rng(99)
        for _ in range(250):
            p = sample_program(variant=variant, rng=rng)
            text = serialize_program(p)
            assert parse_program(text) == p
            assert serialize_program(parse_program(text)) == text

    def test_example_text_is_fixed_point(self):
        assert serialize_program(parse_program(EXAMPLE)) == EXAMPLE

    def test_shared_node_label(self):
        b = ProgramBuilder()
        s = b.add("ggm", (1.5,), (0,))
        p = b.build(b.add("mult", (), (s, s)))
        text = serialize_program(p)
        assert text == "mult(#1=ggm(I, sigma=1.5), #1)"
        assert parse_program(text) == p

    def test_whitespace_insensitive(self):
        spaced = EXAMPLE.replace(",", " ,\n  ").replace("(", " ( ")
        assert parse_program(spaced) == parse_program(EXAMPLE)

    def test_reevaluation_bit_identical(self, rng):
        img = rng.random((48, 48))
        p = parse_program(EXAMPLE)
        a = evaluate(p, img)
        b = evaluate(parse_program(serialize_program(p)), img)
        assert a.tobytes() == b.tobytes()

    def test_bare_image(self):
        p = parse_program("I")
        assert len(p) == 1 and serialize_program(p) == "I"


class TestErrors:
    def test_unterminated(self):
        with pytest.raises(ProgramSyntaxError) as ei:
            parse_program("erode(I")
        assert ei.value.offset == 7
        assert ei.value.line == 1 and ei.value.column == 8

    def test_line_and_column(self):
        with pytest.raises(ProgramSyntaxError) as ei:
            parse_program("mult(I,\n  I, ?)")
        assert (ei.value.line, ei.value.column) == (2, 6)

    @pytest.mark.parametrize("text", [
        "frobnicate(I)",
        "ggm(I)",
        "ggm(I, sigma=abc)",
        "ggm(I, width=1.0)",
        "#3",
        "mult(I, I) extra",
        "erode(I, se=ellipse(theta=0.0, k=0, ratio=1.0))",
        "convolve(I, kernel=vj(kind=nope, w=1, h=1, x=0, y=0))",
    ])
    def test_rejected(self, text):
        with pytest.raises(ProgramSyntaxError):
            parse_program(text)
