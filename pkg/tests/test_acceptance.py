"""Acceptance criteria 1-11, each reported as one PASS/FAIL line in the terminal summary."""
import pytest

from daomtl import desk, verify
from daomtl.trainer import load_data

from conftest import ACCEPTANCE_LINES


def record(number, result):
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {result.line()}"
    print(ACCEPTANCE_LINES[number])
    assert result.passed, result.detail


def test_criterion_01_gradient_suite():
    # the check itself fails when the 60 s budget is exceeded
    record(1, verify.check_gradients(trials=100))


def test_criterion_02_alpha_beta_closed_forms():
    record(2, verify.check_alpha_beta(draws=100))


def test_criterion_03_simplex():
    record(3, verify.check_simplex(n=10_000))


def test_criterion_04_score_mapping():
    record(4, verify.check_score_mapping(points=100_000))


def test_criterion_05_imbalance_reductions():
    record(5, verify.check_imbalance_reductions(batches_=200))


def test_criterion_06_weighted_recall():
    record(6, verify.check_weighted_recall(matrices=500))


def test_criterion_07_lora():
    record(7, verify.check_lora(steps=100))


@pytest.fixture(scope="module")
def desk_sweep(tmp_path_factory):
    cfg = desk.desk_config()
    rows = desk.run_desk_sweep(tmp_path_factory.mktemp("desk"), cfg)
    _, val = load_data(cfg)
    return rows, val


def dao_row(rows):
    return next(r for r in rows if r["mode"] == "dao")


@pytest.mark.slow
def test_criterion_08_desk_training(desk_sweep):
    rows, val = desk_sweep
    record(8, desk.check_training(dao_row(rows), val.labels))


@pytest.mark.slow
def test_criterion_09_weight_trend(desk_sweep):
    rows, _ = desk_sweep
    record(9, desk.check_weight_trend(dao_row(rows)))


@pytest.mark.slow
def test_criterion_10_sweep(desk_sweep):
    rows, _ = desk_sweep
    record(10, desk.check_sweep(rows))


def test_criterion_11_reproducibility(tmp_path):
    record(11, desk.check_reproducibility(tmp_path))
