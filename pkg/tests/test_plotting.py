from __future__ import annotations

import numpy as np

from blowup_lab.diagnostics import TimeSeries, extrapolate_blowup, fit_power_law
from blowup_lab.plotting import plot_b_loglog, plot_inverse_q


def synthetic_blowup():
    t = 1.0 - np.geomspace(1.0, 1e-4, 400)
    return TimeSeries(t, Q=1.0 / (1.0 - t) - 0.5)


class TestPlots:
    def test_b_loglog(self, tmp_path):
        t = np.geomspace(1e-3, 1e4, 200)
        s = TimeSeries(t, B=3.0 * t)
        fit = fit_power_law(s, "B", (1e2, 1e4))
        path = plot_b_loglog(s, fit, tmp_path / "b.svg", 1.0)
        text = path.read_text()
        assert text.startswith("<?xml") and "<svg" in text

    def test_inverse_q_with_root(self, tmp_path):
        s = synthetic_blowup()
        t_star, fit = extrapolate_blowup(s)
        path = plot_inverse_q(s, fit, t_star, tmp_path / "q.svg")
        assert path.stat().st_size > 0

    def test_without_fit(self, tmp_path):
        s = synthetic_blowup()
        assert plot_inverse_q(s, None, None, tmp_path / "q.svg").is_file()
        t = np.geomspace(1, 10, 20)
        assert plot_b_loglog(TimeSeries(t, B=t), None, tmp_path / "b.svg", 1.2).is_file()

    def test_byte_stable(self, tmp_path):
        s = synthetic_blowup()
        t_star, fit = extrapolate_blowup(s)
        a = plot_inverse_q(s, fit, t_star, tmp_path / "a.svg").read_bytes()
        b = plot_inverse_q(s, fit, t_star, tmp_path / "b.svg").read_bytes()
        assert a == b
