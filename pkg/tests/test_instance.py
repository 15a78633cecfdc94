import dataclasses
import json

import numpy as np
import pytest

from llm_alloc.errors import InstanceFormatError
from llm_alloc.instance import (Globals, GpuTier, Instance, ModelSpec,
                                QueryType, ErrorBase, calibrate,
                                generate_instance, read_instance,
                                structurally_equal, to_dict, write_instance)

from helpers import tiny_instance


def _one_cell_instance(tau=1.0, B=2.0, sigma=1.0, bw=1000.0, err_infl=1.0,
                       e0=0.03):
    q = QueryType(id=0, lam=1000.0, h=100, f=100, delta=10.0, epsilon=0.05,
                  rho=0.1, phi=1000.0, theta=12.0, tau=tau)
    m = ModelSpec(id=0, B=B, beta=32768.0, g=2.0, act=2000.0)
    t = GpuTier(id=0, cap=24.0, pflops=100.0, bw=bw, nvlink=600.0, price=1.0,
                sigma=sigma, err_infl=err_infl, tp_set=(1, 2))
    return calibrate(Instance(
        queries=(q,), models=(m,), tiers=(t,), globals=Globals(),
        error_base=ErrorBase(e0=np.array([[e0]]))))


def test_calibrate_d_comp_direct_substitution():
    inst = _one_cell_instance(tau=1.0, B=2.0, sigma=1.0, bw=1000.0)
    assert inst.coeffs.d_comp[0, 0, 0] == pytest.approx(0.002, abs=1e-15)


def test_calibrate_int8_halves_compute_terms():
    fp16 = _one_cell_instance(sigma=1.0)
    int8 = _one_cell_instance(sigma=0.5)
    assert int8.coeffs.d_comp[0, 0, 0] == pytest.approx(
        fp16.coeffs.d_comp[0, 0, 0] / 2)
    assert int8.coeffs.alpha[0, 0, 0] == pytest.approx(
        fp16.coeffs.alpha[0, 0, 0] / 2)


def test_calibrate_error_inflation_int4():
    inst = _one_cell_instance(err_infl=1.35, e0=0.04)
    assert inst.coeffs.e_bar[0, 0, 0] == pytest.approx(0.054, abs=1e-12)


def test_calibrate_t_res_units():
    inst = _one_cell_instance(bw=1000.0)
    # r=200 tokens * 32768 bytes/token / 1000 GB/s
    expect = 200 * 32768.0 / (1000.0 * 1e9)
    assert inst.coeffs.t_res[0, 0, 0] == pytest.approx(expect, rel=1e-12)


def test_calibration_monotone_in_bandwidth():
    ds = [_one_cell_instance(bw=bw).coeffs.d_comp[0, 0, 0]
          for bw in (500.0, 1000.0, 2000.0, 3350.0)]
    assert all(a > b for a, b in zip(ds, ds[1:]))


def test_e_bar_at_least_e0_equality_on_fp16():
    inst = generate_instance((3, 3, 4), seed=5)
    e0 = inst.error_base.e0[:, :, None]
    assert np.all(inst.coeffs.e_bar >= e0 - 1e-15)
    for k, tier in enumerate(inst.tiers):
        if tier.err_infl == 1.0:
            assert np.allclose(inst.coeffs.e_bar[:, :, k],
                               inst.error_base.e0)


def test_generator_deterministic():
    a = generate_instance((6, 6, 10), seed=42)
    b = generate_instance((6, 6, 10), seed=42)
    assert json.dumps(to_dict(a)) == json.dumps(to_dict(b))
    c = generate_instance((6, 6, 10), seed=43)
    assert json.dumps(to_dict(a)) != json.dumps(to_dict(c))


def test_generator_defaults_and_ranges():
    inst = generate_instance((6, 6, 10), seed=1)
    g = inst.globals
    assert (g.budget, g.horizon, g.storage_cap, g.eta, g.phase1_frac) == \
        (100.0, 24.0, 1000.0, 0.9, 0.8)
    for q in inst.queries:
        assert 0.02 <= q.epsilon <= 0.08
        assert 1.5 <= q.delta <= 25.0
    for t in inst.tiers:
        assert 0.35 <= t.price <= 2.50
        assert t.sigma in (1.0, 0.5, 0.25)


def test_generator_scales_past_catalog():
    inst = generate_instance((8, 8, 12), seed=3)
    assert inst.I == 8 and inst.J == 8 and inst.K == 12
    # model sizes interpolate geometrically over the 1B..70B span
    B = [m.B for m in inst.models]
    assert B[0] == pytest.approx(2.0) and B[-1] == pytest.approx(140.0)
    assert all(b1 < b2 for b1, b2 in zip(B, B[1:]))


def test_roundtrip_identity(tmp_path):
    inst = generate_instance((4, 4, 5), seed=9)
    path = tmp_path / "inst.json"
    write_instance(inst, path)
    back = read_instance(path)
    assert structurally_equal(inst, back)


def test_missing_field_names_path(tmp_path):
    inst = generate_instance((2, 2, 2), seed=0)
    d = to_dict(inst)
    del d["tiers"][0]["cap"]
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(d))
    with pytest.raises(InstanceFormatError, match=r"tiers\[0\]\.cap"):
        read_instance(path)


def test_schema_version_required(tmp_path):
    inst = generate_instance((2, 2, 2), seed=0)
    d = to_dict(inst)
    d["schema"] = "nope/9"
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    with pytest.raises(InstanceFormatError, match="schema"):
        read_instance(path)


def test_invariant_violation_reported(tmp_path):
    inst = generate_instance((2, 2, 2), seed=0)
    d = to_dict(inst)
    d["queries"][0]["epsilon"] = 1.5
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    with pytest.raises(InstanceFormatError, match=r"queries\[0\]\.epsilon"):
        read_instance(path)


def test_tiny_fixture_parses_and_calibrates(tmp_path):
    inst = tiny_instance(0)
    path = tmp_path / "tiny.json"
    write_instance(inst, path)
    back = read_instance(path)
    assert back.coeffs is not None
    assert structurally_equal(inst, back)
    assert all(t.tp_set == (1, 2) for t in back.tiers)
