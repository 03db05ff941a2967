import json
import math

import pytest

from mtcp import experiments as ex
from mtcp.errors import ConfigError, SchemaMismatch, SupercriticalityCheckFailed
from mtcp.harris import uniform_kernel

SMALL = {
    "extinction": dict(t_grid=[5, 10], replicas=20, control_replicas=5, speed_allowance=0.9),
    "survival": dict(K=[0, 4], horizon=10, replicas=20, speed_allowance=1.0),
    "interface_tightness": dict(lam=3, kernel="uniform:2", t_grid=[5, 10], replicas=20, speed_allowance=1.3),
    "inversion_tightness": dict(lam=3, kernel="uniform:2", t_grid=[5, 10], replicas=20, speed_allowance=1.3, bootstrap=20),
    "density_decay": dict(N=[1, 2], t_grid=[2, 4, 8], replicas=20, speed_allowance=1.0, bootstrap=20),
    "coalescence_tail": dict(distances=[1, 4], t_grid=[2, 8], replicas=20, margin=5, bootstrap=20),
    "edge_speed": dict(K=[0, 5], t_grid=[5, 10], replicas=20, speed_allowance=1.0),
    "interface_event": dict(s_grid=[2, 4], gap=2, replicas=10, count_halfwidth=5, speed_allowance=1.0),
    "rwalk_tail": dict(x0=[2], N_grid=[4, 16], replicas=2000, coupled_paths=50),
    "renewal_structure": dict(margins=[5, 10], horizon=30, replicas=10, speed_allowance=1.0, bootstrap=20),
}


def _cfg(kind, **kw):
    d = dict(kind=kind, master_seed=3, supercritical_check=False)
    d.update(SMALL[kind])
    d.update(kw)
    return ex.ExperimentConfig.from_json(d)


def test_config_round_trip():
    c = _cfg("coalescence_tail")
    d = json.loads(json.dumps(c.to_json()))
    assert d["lambda"] == 4.0
    assert ex.ExperimentConfig.from_json(d) == c


def test_config_errors():
    with pytest.raises(ConfigError):
        ex.ExperimentConfig.from_json({"kind": "extinction", "bogus": 1})
    with pytest.raises(ConfigError):
        ex.ExperimentConfig.from_json({"kind": "nope"})
    with pytest.raises(ConfigError):
        ex.ExperimentConfig.from_json({"lambda": 2})
    with pytest.raises(SchemaMismatch):
        ex.ExperimentConfig.from_json({"kind": "extinction", "schema_version": 99})


def test_overrides_and_kernels():
    c = _cfg("survival").with_overrides(lam=5, replicas=7)
    assert c.lam == 5.0 and c.replicas == 7
    assert ex.parse_kernel("uniform:3") == uniform_kernel(3)
    assert ex.parse_kernel({"uniform": 2}) == uniform_kernel(2)
    assert ex.parse_kernel({"-1": 1, "1": 1}).R == 1
    assert _cfg("survival", speed_allowance=None).kappa == 12.0


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"kind": "survival", "K": [1], "horizon": 5}))
    assert ex.load_config(str(p)).K == (1,)
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        ex.load_config(str(p))


def test_window_invariant_enforced():
    c = _cfg("survival", window=[-5, 5])
    with pytest.raises(ConfigError):
        ex.run(c)


def test_supercriticality_guard():
    c = _cfg("survival", lam=1.0, supercritical_check=True)
    with pytest.raises(SupercriticalityCheckFailed):
        ex.run(c)


@pytest.mark.parametrize("kind", sorted(SMALL))
def test_every_kind_runs(kind, monkeypatch, tmp_path):
    monkeypatch.setattr(ex, "MIN_PUBLISHED", 5)
    rep = ex.run(_cfg(kind, min_valid=5))
    assert rep.kind == kind and rep.cells and rep.checks
    for c in rep.cells:
        assert set(c) >= {"stat", "key", "estimate", "stderr", "valid", "contaminated", "censored", "published"}
    csv_path, json_path = rep.write(str(tmp_path))
    back = ex.ExperimentReport.from_json(json.load(open(json_path)))
    assert back.to_json() == json.loads(rep.dumps())
    assert open(csv_path).readline().startswith("stat,")


def test_rerun_is_bit_identical():
    a = ex.run(_cfg("interface_tightness"))
    b = ex.run(_cfg("interface_tightness"))
    assert a.dumps(with_runtime=False) == b.dumps(with_runtime=False)


def test_jobs_do_not_change_results():
    a = ex.run(_cfg("density_decay"), jobs=1)
    b = ex.run(_cfg("density_decay"), jobs=2)
    assert a.dumps(with_runtime=False) == b.dumps(with_runtime=False)


def test_aggregate_matches_single_run():
    whole = ex.run(_cfg("survival", replicas=40))
    parts = [ex.run(_cfg("survival", replicas=20, replica_offset=o)) for o in (0, 20)]
    pooled = ex.aggregate(parts)
    for c in pooled.cells:
        w = whole.cell(c["stat"], **c["key"])
        assert c["valid"] == w["valid"]
        assert c["estimate"] == pytest.approx(w["estimate"], abs=1e-12)
        assert c["stderr"] == pytest.approx(w["stderr"], abs=1e-12)


def test_aggregate_rejects_mismatch():
    a = ex.run(_cfg("survival"))
    b = ex.run(_cfg("survival", horizon=12))
    with pytest.raises(SchemaMismatch):
        ex.aggregate([a, b])


def test_report_accessors():
    rep = ex.run(_cfg("survival"))
    assert rep.cell("survives", K=4)["key"] == {"K": 4}
    assert len(rep.select("survives")) == 2
    with pytest.raises(KeyError):
        rep.check("missing")
    assert isinstance(rep.passed, bool)
    assert not math.isnan(rep.runtime)


def test_shipped_configs_load():
    import pathlib

    paths = sorted((pathlib.Path(__file__).parent.parent / "configs").glob("*.json"))
    assert paths
    for p in paths:
        assert ex.load_config(str(p)).kind in ex.KINDS
