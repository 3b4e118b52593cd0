import csv

import numpy as np
import pytest

from flowseg import (
    FlowField,
    Mask,
    MetricReport,
    dice,
    endpoint_error,
    evaluate_run,
    mae,
    write_report,
)


def mask_from_pixels(h, w, pixels):
    data = np.zeros((h, w), dtype=np.uint8)
    for x, y in pixels:
        data[y, x] = 1
    return Mask(data)


class TestDice:
    def test_identical_nonempty(self, rng):
        m = Mask((rng.random((10, 10)) < 0.3).astype(np.uint8))
        assert dice(m, m) == 1.0

    def test_disjoint(self):
        a = mask_from_pixels(8, 8, [(0, 0), (1, 0)])
        b = mask_from_pixels(8, 8, [(5, 5), (6, 5)])
        assert dice(a, b) == 0.0

    def test_hand_computed_half(self):
        pred = mask_from_pixels(8, 8, [(0, 0), (0, 1)])
        gt = mask_from_pixels(8, 8, [(0, 1), (1, 1)])
        assert dice(pred, gt) == pytest.approx(0.5)

    def test_both_empty_is_one(self):
        assert dice(Mask.zeros(8, 8), Mask.zeros(8, 8)) == 1.0

    def test_symmetry(self, rng):
        a = Mask((rng.random((12, 12)) < 0.4).astype(np.uint8))
        b = Mask((rng.random((12, 12)) < 0.4).astype(np.uint8))
        assert dice(a, b) == dice(b, a)

    def test_one_iff_equal_nonempty(self, rng):
        a = Mask((rng.random((10, 10)) < 0.4).astype(np.uint8))
        b_data = a.data.copy()
        b_data[0, 0] ^= 1
        assert dice(a, Mask(b_data)) < 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="differ"):
            dice(Mask.zeros(8, 8), Mask.zeros(8, 9))

    def test_permutation_invariance(self, rng):
        a = (rng.random(100) < 0.4).astype(np.uint8)
        b = (rng.random(100) < 0.4).astype(np.uint8)
        perm = rng.permutation(100)
        d1 = dice(Mask(a.reshape(10, 10)), Mask(b.reshape(10, 10)))
        d2 = dice(Mask(a[perm].reshape(10, 10)), Mask(b[perm].reshape(10, 10)))
        assert d1 == pytest.approx(d2)


class TestMae:
    def test_identical(self, rng):
        m = Mask((rng.random((10, 10)) < 0.3).astype(np.uint8))
        assert mae(m, m) == 0.0

    def test_complementary(self):
        a = Mask(np.ones((8, 8), dtype=np.uint8))
        b = Mask.zeros(8, 8)
        assert mae(a, b) == 1.0

    def test_single_differing_pixel(self):
        a = mask_from_pixels(10, 10, [(3, 3)])
        b = Mask.zeros(10, 10)
        assert mae(a, b) == pytest.approx(0.01)

    def test_zero_iff_equal(self, rng):
        a = Mask((rng.random((10, 10)) < 0.4).astype(np.uint8))
        b = a.data.copy()
        b[5, 5] ^= 1
        assert mae(a, Mask(b)) > 0.0

    def test_equals_symmetric_difference_rate(self, rng):
        a_data = (rng.random((12, 12)) < 0.4).astype(np.uint8)
        b_data = (rng.random((12, 12)) < 0.4).astype(np.uint8)
        a, b = Mask(a_data), Mask(b_data)
        sym_diff = int(((a_data == 1) & (b_data == 0)).sum()
                       + ((b_data == 1) & (a_data == 0)).sum())
        assert mae(a, b) == pytest.approx(sym_diff / 144.0)


class TestEndpointError:
    def test_identical(self, rng):
        u = rng.standard_normal((8, 8))
        v = rng.standard_normal((8, 8))
        fl = FlowField(u=u, v=v)
        assert endpoint_error(fl, fl) == 0.0

    def test_three_four_five(self):
        a = FlowField(u=np.zeros((8, 8)), v=np.zeros((8, 8)))
        b = FlowField(u=np.full((8, 8), 3.0), v=np.full((8, 8), 4.0))
        assert endpoint_error(a, b) == pytest.approx(5.0)

    def test_matches_brute_force(self, rng):
        u1, v1 = rng.standard_normal((2, 9, 9))
        u2, v2 = rng.standard_normal((2, 9, 9))
        a = FlowField(u=u1, v=v1)
        b = FlowField(u=u2, v=v2)
        total = 0.0
        for y in range(9):
            for x in range(9):
                total += ((u1[y, x] - u2[y, x]) ** 2 + (v1[y, x] - v2[y, x]) ** 2) ** 0.5
        assert endpoint_error(a, b) == pytest.approx(total / 81.0, rel=1e-12)

    def test_margin(self, rng):
        u = np.zeros((8, 8))
        u[0, :] = 100.0
        a = FlowField(u=u, v=np.zeros((8, 8)))
        b = FlowField(u=np.zeros((8, 8)), v=np.zeros((8, 8)))
        assert endpoint_error(a, b, margin=1) == 0.0
        with pytest.raises(ValueError, match="margin"):
            endpoint_error(a, b, margin=4)

    def test_dimension_mismatch(self):
        a = FlowField(u=np.zeros((8, 8)), v=np.zeros((8, 8)))
        b = FlowField(u=np.zeros((8, 9)), v=np.zeros((8, 9)))
        with pytest.raises(ValueError, match="differ"):
            endpoint_error(a, b)


class TestEvaluateRun:
    def test_perfect_predictions(self, rng):
        gt = [Mask((rng.random((8, 8)) < 0.3).astype(np.uint8)) for _ in range(5)]
        rep = evaluate_run(list(gt), gt, policy="all_frames")
        assert rep.dice_mean == pytest.approx(100.0)
        assert rep.mae_mean == 0.0
        assert rep.n_frames == 5

    def test_all_empty_predictions_half_catheter(self):
        empty = Mask.zeros(8, 8)
        blob = mask_from_pixels(8, 8, [(1, 1), (2, 1), (2, 2)])
        gt = [empty, blob, empty, blob]
        preds = [None, None, None, None]
        rep = evaluate_run(preds, gt, policy="all_frames")
        # empty-vs-empty frames score 1.0, the rest 0.0
        assert rep.dice_mean == pytest.approx(50.0)

    def test_policies_differ_when_empty_gt_exists(self):
        empty = Mask.zeros(8, 8)
        blob = mask_from_pixels(8, 8, [(1, 1)])
        gt = [empty, blob]
        preds = [None, blob]
        all_frames = evaluate_run(preds, gt, policy="all_frames")
        catheter = evaluate_run(preds, gt, policy="catheter_frames_only")
        assert all_frames.n_frames == 2
        assert catheter.n_frames == 1
        assert all_frames.dice_mean == pytest.approx(100.0)
        assert catheter.dice_mean == pytest.approx(100.0)
        preds2 = [Mask(np.ones((8, 8), dtype=np.uint8)), blob]
        assert (evaluate_run(preds2, gt, policy="all_frames").dice_mean
                != evaluate_run(preds2, gt, policy="catheter_frames_only").dice_mean)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="predictions"):
            evaluate_run([None], [Mask.zeros(8, 8), Mask.zeros(8, 8)])

    def test_unknown_policy(self):
        with pytest.raises(ValueError, match="policy"):
            evaluate_run([None], [Mask.zeros(8, 8)], policy="bogus")

    def test_no_frames_to_score(self):
        with pytest.raises(ValueError, match="no frames"):
            evaluate_run([None], [Mask.zeros(8, 8)], policy="catheter_frames_only")

    def test_population_std(self):
        blob = mask_from_pixels(8, 8, [(1, 1)])
        gt = [blob, blob]
        preds = [blob, None]
        rep = evaluate_run(preds, gt, policy="all_frames")
        # dice values are [1, 0]: mean 0.5, population std 0.5
        assert rep.dice_mean == pytest.approx(50.0)
        assert rep.dice_std == pytest.approx(50.0)


class TestMetricReport:
    def test_validation(self):
        with pytest.raises(ValueError):
            MetricReport("m", dice_mean=120.0, dice_std=0, mae_mean=0, mae_std=0, n_frames=1)
        with pytest.raises(ValueError):
            MetricReport("m", dice_mean=50.0, dice_std=-1, mae_mean=0, mae_std=0, n_frames=1)


class TestWriteReport:
    def test_single_report_csv(self, tmp_path):
        rep = MetricReport("demo", dice_mean=61.5, dice_std=2.0,
                           mae_mean=0.01, mae_std=0.002, n_frames=90)
        out = tmp_path / "report.csv"
        write_report([rep], out)
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("method,dice_mean")
        row = lines[1].split(",")
        assert row[0] == "demo"
        assert float(row[1]) == pytest.approx(61.5)

    def test_reference_rows_appended(self, tmp_path):
        rep = MetricReport("demo", dice_mean=61.5, dice_std=2.0,
                           mae_mean=0.01, mae_std=0.002, n_frames=90)
        out = tmp_path / "report.csv"
        write_report([rep], out, include_reference=True)
        with open(out) as f:
            rows = list(csv.DictReader(f))
        by_method = {r["method"]: r for r in rows}
        assert float(by_method["reference-synthetic"]["dice_mean"]) == pytest.approx(72.8)
        assert float(by_method["reference-synthetic"]["mae_mean"]) == pytest.approx(0.0022)
        assert float(by_method["reference-phantom"]["dice_mean"]) == pytest.approx(41.9)
        assert float(by_method["reference-phantom"]["mae_mean"]) == pytest.approx(0.0051)
