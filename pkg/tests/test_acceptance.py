"""One test per acceptance criterion; the summary lines are repeated at the end of the run."""
import pytest

from aiphase import acceptance

LINES: dict[int, str] = {}


def _run(check):
    res = check()
    LINES[res.number] = res.line()
    print(res.line())
    assert res.passed, res.line()


def test_criterion_1_loop_integral_closed_forms():
    _run(acceptance.check_closed_forms)


def test_criterion_2_cubic_gradient_shift():
    _run(acceptance.check_cubic_shift)


def test_criterion_3_validity_magnitudes_for_earth_cubic_term():
    _run(acceptance.check_earth_cubic_magnitudes)


def test_criterion_4_scale_table():
    _run(acceptance.check_scale_table)


def test_criterion_5_classical_oracle_convergence():
    _run(acceptance.check_classical_convergence)


@pytest.mark.slow
def test_criterion_6_quantum_oracle_equivalence():
    _run(acceptance.check_quantum_equivalence)


def test_criterion_7_structural_properties():
    _run(acceptance.check_properties)
