import os

import numpy as np
import pytest

from plotkit import FigureSpec, SchemaError, render


def out_path(tmp_path, name):
    return str(tmp_path / name)


class TestAllKinds:
    def test_profile(self, profile_csv, tmp_path):
        out = out_path(tmp_path, "profile.png")
        series = render(FigureSpec("profile", [profile_csv], out))
        assert os.path.exists(out)
        assert series["z"].shape == (8,)

    def test_tau_vs_dt_one_series_per_alpha(self, sweep_csv, tmp_path):
        out = out_path(tmp_path, "tau.png")
        series = render(FigureSpec("tau-vs-dt", [sweep_csv], out))
        assert os.path.exists(out)
        # failed rows are dropped, so only the two healthy alphas remain
        assert sorted(series) == [0.0, 0.8]
        for entry in series.values():
            assert len(entry["dt"]) == 3
            assert np.all(np.diff(entry["dt"]) > 0)

    def test_tau_min_vs_alpha(self, sweep_csv, tmp_path):
        out = out_path(tmp_path, "taustar.png")
        series = render(FigureSpec("tau-min-vs-alpha", [sweep_csv], out))
        assert os.path.exists(out)
        np.testing.assert_allclose(series["alpha"], [0.0, 0.8])
        np.testing.assert_allclose(series["tau_star"], [6400, 4600])

    def test_cv_trace(self, trace_csv, tmp_path):
        out = out_path(tmp_path, "trace.png")
        series = render(FigureSpec("cv-trace", [trace_csv], out))
        assert os.path.exists(out)
        assert series["iteration"].size == 200

    def test_snapshots(self, snapshots_csv, tmp_path):
        out = out_path(tmp_path, "snaps.png")
        series = render(FigureSpec("free-energy-snapshots",
                                   [snapshots_csv], out))
        assert os.path.exists(out)
        assert sorted(series) == [3600, 24000, 36000]

    def test_rejection_stacked_sums_to_global(self, rejection_csv, tmp_path):
        out = out_path(tmp_path, "rej.png")
        series = render(FigureSpec("rejection-stacked", [rejection_csv],
                                   out))
        assert os.path.exists(out)
        np.testing.assert_allclose(series["bar_totals"], series["global"],
                                   atol=1e-9)


class TestValidation:
    def test_missing_columns_no_file(self, tmp_path, profile_csv):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        out = out_path(tmp_path, "never.png")
        with pytest.raises(SchemaError) as err:
            render(FigureSpec("tau-vs-dt", [str(bad)], out))
        assert "tau_hat" in str(err.value)
        assert not os.path.exists(out)

    def test_empty_table_no_file(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("# meta\nscheme,alpha,dt,tau_hat,ci_low,ci_high\n")
        out = out_path(tmp_path, "never2.png")
        with pytest.raises(SchemaError):
            render(FigureSpec("tau-vs-dt", [str(empty)], out))
        assert not os.path.exists(out)

    def test_unknown_kind(self, profile_csv, tmp_path):
        with pytest.raises(SchemaError):
            render(FigureSpec("pie", [profile_csv],
                              out_path(tmp_path, "x.png")))

    def test_unknown_rejection_category(self, tmp_path):
        bad = tmp_path / "rej.csv"
        bad.write_text("scheme,alpha,dt,category,count,percent\n"
                       "rmhmc,0,0.1,mystery,1,0.5\n")
        with pytest.raises(SchemaError):
            render(FigureSpec("rejection-stacked", [str(bad)],
                              out_path(tmp_path, "x.png")))


class TestPurity:
    def test_same_bytes_same_series(self, sweep_csv, tmp_path):
        s1 = render(FigureSpec("tau-vs-dt", [sweep_csv],
                               out_path(tmp_path, "a.png")))
        s2 = render(FigureSpec("tau-vs-dt", [sweep_csv],
                               out_path(tmp_path, "b.png")))
        assert sorted(s1) == sorted(s2)
        for k in s1:
            for field in s1[k]:
                np.testing.assert_array_equal(s1[k][field], s2[k][field])
