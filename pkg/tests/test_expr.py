import numpy as np
import pytest

from invisible_eit.errors import ParseError
from invisible_eit.expr import parse_expression

PTS = np.array([[0.1, -0.2], [0.3, 0.4], [-0.5, 0.0]])
X, Y = PTS.T


@pytest.mark.parametrize("text, expected", [
    ("1", np.ones(3)),
    ("x + y + 1", X + Y + 1),
    ("exp(-(x + 0.5)^2 - y^2)", np.exp(-(X + 0.5) ** 2 - Y ** 2)),
    ("-y", -Y),
    ("2^3^2", np.full(3, 512.0)),
    ("-x^2", -X ** 2),
    ("2*x/4 - y*3", X / 2 - 3 * Y),
    ("sin(pi*x) + cos(y) * e", np.sin(np.pi * X) + np.cos(Y) * np.e),
    ("sqrt(abs(x)) + log(2)", np.sqrt(np.abs(X)) + np.log(2)),
    ("1.5e-1 * .5", np.full(3, 0.075)),
])
def test_evaluates(text, expected):
    np.testing.assert_allclose(parse_expression(text)(PTS), expected, rtol=1e-15)


def test_constant_broadcasts_to_point_shape():
    vals = parse_expression("3")(np.zeros((4, 5, 2)))
    assert vals.shape == (4, 5)


@pytest.mark.parametrize("text, column", [
    ("x + ", 4),
    ("x $ y", 3),
    ("foo(x)", 1),
    ("(x + y", 7),
    ("x y", 3),
    ("z", 1),
])
def test_errors_report_column(text, column):
    with pytest.raises(ParseError) as info:
        parse_expression(text)
    assert info.value.line == 1
    assert info.value.column == column
