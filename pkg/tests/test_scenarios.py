import numpy as np
import pytest

from nsd_ensemble import fem, scenarios
from nsd_ensemble.config import parse_config_text
from nsd_ensemble.mesh import build_y_domain_mesh


@pytest.fixture(scope="module")
def ydomain():
    m = build_y_domain_mesh(8)
    return m, fem.build_spaces(m)


@pytest.mark.parametrize("case", [(2, -1, -1), (1, -1, -1), (3, -1, -1), (0.5, 0.25, -0.75)])
def test_flux_values(ydomain, case):
    m, sp_ = ydomain
    fluxes = dict(zip(("S0", "S1", "S2"), map(float, case)))
    vals, flux = scenarios.flux_dirichlet_values(sp_, fluxes)
    for s, Q in fluxes.items():
        assert flux[s] == pytest.approx(Q, abs=1e-13)
    U = np.zeros((1, sp_.n_u))
    U[0, sp_.u_dirichlet] = vals
    for s, Q in fluxes.items():
        assert scenarios.segment_mean_inflow(sp_, U, s)[0] == pytest.approx(Q, abs=1e-13)
    # no flow through the walls: total outward flux over gamma_f equals the segment balance
    eq = fem.edge_quadrature(sp_.velocity, m.gamma_f)
    uq = np.einsum("ebc,eqb->eqc", U[0][sp_.u_edge_index(eq)], eq.phi)
    net_in = -np.sum(eq.w * np.einsum("eqc,ec->eq", uq, eq.normal))
    assert net_in == pytest.approx(sum(case), abs=1e-12)


def test_balanced_case_sums_to_zero(ydomain):
    _, sp_ = ydomain
    _, flux = scenarios.flux_dirichlet_values(sp_, {"S0": 2.0, "S1": -1.0, "S2": -1.0})
    assert abs(sum(flux.values())) <= 1e-14


def test_vertex_sampling(ydomain):
    m, sp_ = ydomain
    f = fem.interpolate(lambda xy: xy[:, 0] + 2 * xy[:, 1], sp_.head)
    v = scenarios.vertex_values(sp_.head, f, fill=np.nan)
    ok = ~np.isnan(v)
    np.testing.assert_allclose(v[ok], m.vertices[ok, 0] + 2 * m.vertices[ok, 1], atol=1e-14)
    assert ok.sum() == len(np.unique(m.triangles[m.subdomain == 1]))


def test_timing_counters():
    rc = parse_config_text("scenario = timing\nmesh.n = 4\nscheme.t_end = 0.5\nstudy.repeats = 1\n")
    rows = scenarios.timing_rows(rc, Js=(1, 100))
    for row in rows:
        assert row["ensemble.factorizations"] == 2
        assert row["individual.factorizations"] == 2 * row["J"]


def test_longtime_without_forcing():
    rc = parse_config_text("scenario = longtime\nmesh.n = 2\nscheme.t_end = 20.0\n"
                           "study.amplitude = 0.0\nstudy.orders = (2, 4)\n")
    out = scenarios.run_scenario(rc)
    rows = out["tables"]["longtime"]
    last = [r for r in rows if r["step"] == 40]
    assert len(last) == 6
    for r in last:
        assert abs(r["r"] - rc.ensemble.sav.c_r) <= 1e-6
        assert r["energy"] == 0.0


def test_y_domain_small():
    rc = parse_config_text("scenario = y-domain\nmesh.n = 8\nscheme.J = 5\nscheme.t_end = 0.5\n"
                           "study.fluxes = [(2, -1, -1)]\n")
    out = scenarios.run_scenario(rc)
    row = out["tables"]["y_domain_fluxes"][0]
    assert row["prescribed_total"] == pytest.approx(0.0, abs=1e-14)
    assert row["mean_inflow_S0"] > 0 > row["mean_inflow_S1"] and row["mean_inflow_S2"] < 0
    fields = out["vtk"]["case1"]
    assert fields["velocity_mean"].shape == (out["mesh"].n_vertices, 2)
    assert all(np.all(np.isfinite(f)) for f in fields.values())
    assert out["metadata"]["case1.count.main_factorizations"] == 2
