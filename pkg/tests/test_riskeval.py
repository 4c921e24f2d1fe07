import numpy as np
import pytest

from advloss.attack import AttackSpec, pgd
from advloss.datasets import make_blobs
from advloss.errors import DimensionTooLargeError, EmptyDatasetError
from advloss.expr import make_context
from advloss.losses import SurrogateLoss, get_loss
from advloss.model import MlpModel, forward, init_model
from advloss.riskeval import (REPORT_FIELDS, approx_risk, approximation_error, find_landscape_anchors,
                              grid_oracle_risk, landscape_grid, read_landscape_csv, read_reports,
                              write_landscape_csv, write_reports)


def clean_error(model, ds):
    return float(np.mean(np.argmax(forward(model, ds.features), axis=1) != ds.labels))


def test_eps_zero_is_clean_error(std_model, blobs_eval):
    rep = approx_risk(std_model, get_loss("ce"), blobs_eval, AttackSpec(epsilon=0.0))
    assert rep.r_double_prime == clean_error(std_model, blobs_eval)
    assert rep.adversarial_accuracy == rep.clean_accuracy
    assert rep.adversarial_accuracy + rep.r_double_prime == 1.0


def test_constant_loss_cannot_steer(std_model, blobs_eval):
    const = SurrogateLoss.from_text("zero", "0")
    spec = AttackSpec(epsilon=0.09, random_start=False)
    assert approx_risk(std_model, const, blobs_eval, spec).r_double_prime == clean_error(std_model, blobs_eval)


def test_batch_partition_and_workers(std_model, blobs_eval):
    spec = AttackSpec(epsilon=0.09, seed=4)
    base = approx_risk(std_model, get_loss("bs5"), blobs_eval, spec, batch_size=256)
    for bs in (1, 7, 64):
        assert approx_risk(std_model, get_loss("bs5"), blobs_eval, spec, batch_size=bs) == base
    assert approx_risk(std_model, get_loss("bs5"), blobs_eval, spec, batch_size=50, workers=3) == base


def test_report_fields_and_round_trip(tmp_path, std_model, blobs_eval):
    reps = [approx_risk(std_model, get_loss(n), blobs_eval, AttackSpec(epsilon=0.05, seed=2)) for n in ("ce", "bs5")]
    path = tmp_path / "r.csv"
    write_reports(reps, path)
    assert path.read_text().splitlines()[0] == ",".join(REPORT_FIELDS)
    back = read_reports(path)
    for rep, row in zip(reps, back):
        for key in REPORT_FIELDS:
            want = getattr(rep, key)
            if isinstance(want, float):
                assert row[key] == pytest.approx(want, abs=5e-7)
            else:
                assert row[key] == want


def test_empty_dataset(std_model, blobs_eval):
    with pytest.raises(EmptyDatasetError):
        approx_risk(std_model, get_loss("ce"), blobs_eval.head(0), AttackSpec())
    with pytest.raises(EmptyDatasetError):
        grid_oracle_risk(std_model, blobs_eval.head(0), 0.1)


def test_oracle_basics(std_model, blobs_eval):
    assert grid_oracle_risk(std_model, blobs_eval, 0.0, 5) == clean_error(std_model, blobs_eval)
    with pytest.raises(DimensionTooLargeError):
        grid_oracle_risk(init_model([4, 3], np.random.default_rng(0)), make_blobs(5, 4, 3), 0.1)
    with pytest.raises(ValueError):
        grid_oracle_risk(std_model, blobs_eval, 0.1, grid_steps=2)


def test_oracle_far_from_boundary():
    # boundary x0 = 0.5; samples at distance 0.2 and eps 0.1 cannot cross it
    m = MlpModel((np.array([[1.0, 0.0], [-1.0, 0.0]]),), (np.array([-0.5, 0.5]),))
    ds = make_blobs(2, 2, 2).__class__(np.array([[0.7, 0.3], [0.3, 0.6]]), np.array([0, 1]), 2)
    assert grid_oracle_risk(m, ds, 0.1, 10) == 0.0
    assert grid_oracle_risk(m, ds, 0.21, 10) == 1.0


def test_oracle_monotone_on_nested_lattices(std_model, blobs_eval):
    for eps in (0.03, 0.06):
        r = [grid_oracle_risk(std_model, blobs_eval, eps, g) for g in (3, 6, 12, 24)]
        assert r == sorted(r)
    # (eps, g) -> (2 eps, 2 g) keeps every old lattice point
    for eps, g in ((0.02, 5), (0.04, 10)):
        assert grid_oracle_risk(std_model, blobs_eval, 2 * eps, 2 * g) >= grid_oracle_risk(std_model, blobs_eval, eps, g)
    assert grid_oracle_risk(std_model, blobs_eval, 0.05) >= clean_error(std_model, blobs_eval)


def test_approximation_error():
    assert approximation_error(0.4, 0.35) == pytest.approx(0.05)
    assert approximation_error(0.3, 0.3) == 0.0


def test_landscape_corners(tmp_path, std_model, blobs_eval):
    spec = AttackSpec(epsilon=0.09, seed=0)
    found = find_landscape_anchors(std_model, SurrogateLoss.from_text("weak", "(sum p)"), get_loss("ce"),
                                   blobs_eval, spec)
    assert found is not None
    i, x_hc, x_bs = found
    x, y = blobs_eval.features[i:i + 1], blobs_eval.labels[i:i + 1]
    losses = [get_loss("zero_one"), get_loss("ce"), get_loss("bs3")]
    alphas, betas, grids = landscape_grid(std_model, losses, x, y, x_hc, x_bs, resolution=5)
    clean = make_context(forward(std_model, x), y)
    for loss in losses:
        assert grids[loss.name][0, 0] == loss.value(clean)
    assert grids["zero_one"][0, -1] == 1.0
    assert grids["zero_one"][-1, 0] == 0.0
    assert set(np.unique(grids["zero_one"])) <= {0.0, 1.0}
    path = tmp_path / "ce.csv"
    write_landscape_csv(alphas, betas, grids["ce"], path)
    a, b, v = read_landscape_csv(path)
    np.testing.assert_allclose(v, grids["ce"], atol=5e-7)
    np.testing.assert_allclose(a, alphas, atol=5e-7)
    with pytest.raises(ValueError):
        landscape_grid(std_model, losses, x, y, x_hc[:, :1], x_bs)
