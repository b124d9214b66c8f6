import pytest

from sgain.config import dumps_model, loads_model, parse_model, save_model
from sgain.errors import ConfigError, CooperativityError, ModelError, UnsupportedNoiseError
from sgain.models import BUILTIN_NAMES, builtin

BASE = """
[meta]
name = "tiny"

[linear]
dim = 2
structure = "general"
A = [-1, {a12}, 0, -1]

[[noise]]
{noise}

[feedback]
family = "constant"
[feedback.params]
value = [1, "1/2"]
"""


def doc(a12="0", noise='diag = [1, "1/3"]'):
    return BASE.format(a12=a12, noise=noise)


def test_minimal_model():
    m = loads_model(doc())
    assert m.name == "tiny" and m.dim == 2
    assert m.feedback.gamma[1] == pytest.approx(0.5)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_round_trip(name, tmp_path):
    m = builtin(name)
    path = tmp_path / f"{name}.toml"
    save_model(m, path)
    back = parse_model(path)
    assert back == m
    assert dumps_model(back) == dumps_model(m)


def test_negative_offdiagonal_names_entry():
    with pytest.raises(CooperativityError, match="a_12"):
        loads_model(doc(a12="-1"))


def test_nondiagonal_noise_rejected():
    with pytest.raises(UnsupportedNoiseError, match="off-diagonal"):
        loads_model(doc(noise="matrix = [[1, 1], [0, 1]]"))
    m = loads_model(doc(noise="matrix = [[1, 0], [0, 2]]"))
    assert m.linear.noise == ((1, 2),)


def test_syntax_and_schema_errors(tmp_path):
    with pytest.raises(ConfigError, match="syntax"):
        loads_model("[linear")
    with pytest.raises(ConfigError, match="unknown key"):
        loads_model(doc() + "\n[extra]\nx = 1\n")
    with pytest.raises(ConfigError, match="missing"):
        loads_model("[meta]\nname='x'\n")
    with pytest.raises(ConfigError, match="cannot read"):
        parse_model(tmp_path / "missing.toml")
    with pytest.raises(ModelError, match="unknown feedback family"):
        loads_model(doc().replace('family = "constant"', 'family = "magic"'))
    with pytest.raises(ConfigError, match=r"expected 4 entries"):
        loads_model(doc().replace("A = [-1, 0, 0, -1]", "A = [-1, 0, 0]"))


def test_rows_form_for_A():
    m = loads_model(doc().replace("A = [-1, 0, 0, -1]", "A = [[-1, 0], [0, -1]]"))
    assert m.linear.A == ((-1, 0), (0, -1))


def test_custom_expression_config():
    text = doc().replace('family = "constant"', 'family = "custom_expression"').replace(
        'value = [1, "1/2"]', 'expressions = ["1 + x1/(1+x1)", "2"]\nmonotonicity = "monotone"')
    m = loads_model(text)
    assert m.feedback.non_rigorous
    assert m.h([[0.0, 0.0]])[0].tolist() == [1.0, 2.0]
