import math

import numpy as np
import pytest
import yaml

from hughes_sl.config import (
    ScenarioConfig, apply_overrides, dump_config, from_dict, parse_config, write_config,
)
from hughes_sl.errors import ConfigurationError
from hughes_sl.fp import DensityField
from hughes_sl.grid import GridSpec, NodeClass
from hughes_sl.io import (
    format_metrics, parse_mask, pgm_bytes, read_density_csv, read_metrics, read_pgm,
    write_density_csv, write_metrics, write_pgm,
)
from hughes_sl.runner import initial_density, prepare
from hughes_sl.scenarios import (
    BUILTINS, builtin, builtin_les_halles, builtin_turnstiles, builtin_two_doors,
    turnstile_rectangles,
)

MINIMAL = """
name: doors
grid: {L: 1.0, M: 13}
clock: {dt: 0.08, T: 20}
geometry:
  exits:
    - {id: left, start: [0, 0.13], end: [0, 0.27]}
    - {id: right, start: [1, 0.49], end: [1, 0.51]}
initial: {M0: 0.7, lo: [0.3333333333333333, 0.3333333333333333], hi: [0.6666666666666666, 0.6666666666666666]}
"""

FINGERPRINTS = {
    "two_doors": "9540ce701fcaebd9",
    "turnstiles_c0.1": "fd24f1d57572b523",
    "turnstiles_c0.2": "0604896d6dc8c9b0",
    "turnstiles_c0.3": "3ea7fcb1f6c7d5f4",
    "turnstiles_none": "200dae8d265f4e35",
    "les_halles_2014": "fc805cd4144705f5",
    "les_halles_2016": "95ea201d8a4960ea",
}


def test_minimal_config_defaults(tmp_path):
    p = tmp_path / "doors.yaml"
    p.write_text(MINIMAL)
    cfg = parse_config(p)
    assert cfg.physics.delta == 1e-6
    assert cfg.hjb.n_theta == 32 and cfg.hjb.n_rho == 4
    assert cfg.h == 0.08
    assert cfg.node_map().fingerprint() == FINGERPRINTS["two_doors"]


def test_negative_epsilon_rejected(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text(MINIMAL + "physics: {epsilon: -0.1}\n")
    with pytest.raises(ConfigurationError, match="physics.epsilon"):
        parse_config(p)


def test_missing_mask_named(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("grid: {M: 10}\ngeometry: {mask: nowhere.mask}\n")
    with pytest.raises(ConfigurationError, match="nowhere.mask"):
        parse_config(p)


def test_unknown_key_rejected():
    with pytest.raises(ConfigurationError, match="physics.epsilom"):
        from_dict({"grid": {"M": 10}, "physics": {"epsilom": 0.1}})


def test_overlapping_exits_rejected():
    cfg = from_dict(yaml.safe_load(MINIMAL))
    cfg.geometry.exits[1].start = (0.0, 0.2)
    cfg.geometry.exits[1].end = (0.0, 0.3)
    with pytest.raises(ConfigurationError):
        cfg.node_map()


def test_config_round_trip(tmp_path):
    for name in BUILTINS:
        cfg = builtin(name)
        write_config(cfg, tmp_path / "c.yaml")
        again = parse_config(tmp_path / "c.yaml")
        assert again.to_dict() == cfg.to_dict()


def test_overrides():
    cfg = apply_overrides(builtin_two_doors(), ["physics.epsilon=0.02", "hjb.n_rho=3"])
    assert cfg.physics.epsilon == 0.02 and cfg.hjb.n_rho == 3
    with pytest.raises(ConfigurationError, match="physics.nope"):
        apply_overrides(cfg, ["physics.nope=1"])
    with pytest.raises(ConfigurationError):
        apply_overrides(cfg, ["physics.epsilon"])


def test_two_doors_builtin():
    cfg = builtin_two_doors()
    widths = {e.id: math.dist(e.start, e.end) for e in cfg.geometry.exits}
    assert widths == pytest.approx({"left": 0.14, "right": 0.02})
    sides = {e.id: e.start[0] for e in cfg.geometry.exits}
    assert sides == {"left": 0.0, "right": 1.0}
    assert cfg.grid.M == 13 and cfg.clock.dt == 0.08 and cfg.h == 0.08
    area = np.prod(np.subtract(cfg.initial.hi, cfg.initial.lo))
    assert area == pytest.approx(1 / 9)
    m0 = initial_density(cfg, cfg.node_map())
    assert m0.total_mass == pytest.approx(0.7 / 9, abs=1e-12)


def test_turnstile_barriers():
    rects = turnstile_rectangles(0.1)
    assert len(rects) == 9
    for r in rects:
        assert (r.lo[0], r.hi[0]) == pytest.approx((0.4, 0.6))
        assert r.hi[1] - r.lo[1] == pytest.approx(0.04)
    assert turnstile_rectangles(None) == []
    with pytest.raises(ConfigurationError):
        turnstile_rectangles(0.0)


def test_turnstile_counts_bounded_by_spacing():
    # barriers 0.04 high spaced c apart can meet [0, 1] at most floor(1.04/c) + 1
    # times, so 7 barriers at c = 0.2 and 5 at c = 0.3 cannot occur
    for c, got in ((0.1, 9), (0.2, 5), (0.3, 3)):
        assert len(turnstile_rectangles(c)) == got
        assert got <= math.floor(1.04 / c) + 1


def test_turnstile_scenario():
    cfg = builtin_turnstiles(0.2)
    nm = cfg.node_map()
    assert nm.exit_ids == ["exit"]
    assert nm.count(NodeClass.GHOST) > 0
    ex = cfg.geometry.exits[0]
    assert (ex.start, ex.end) == ((1.0, 0.45), (1.0, 0.55))


@pytest.mark.parametrize("name", sorted(FINGERPRINTS))
def test_builtin_fingerprints(name):
    assert builtin(name).node_map().fingerprint() == FINGERPRINTS[name]


def test_les_halles_extra_exit():
    a = builtin_les_halles(2014).node_map()
    b = builtin_les_halles(2016).node_map()
    assert len(a.exit_ids) == 1 and len(b.exit_ids) == 2
    assert builtin_les_halles(2016).running_cost_field().max() == 2.0


def test_unknown_builtin():
    with pytest.raises(ConfigurationError):
        builtin("three_doors")


def test_mask_parse_skips_comments():
    assert parse_mask("; c\n\n#a#\n#.#\n###\n") == ("#a#", "#.#", "###")


def test_csv_layout(tmp_path):
    g = GridSpec(1.0, 6)
    v = np.linspace(0, 1, g.size) / 3
    write_density_csv(DensityField(g, v), tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "x,y,value"
    assert len(lines) == g.size + 1
    back = read_density_csv(tmp_path / "d.csv")
    assert np.array_equal(back[:, 2], v)
    assert np.array_equal(back[:, :2], g.node_positions())


def test_pgm_zero_field(tmp_path):
    g = GridSpec(1.0, 4)
    data = pgm_bytes(np.zeros(g.size), g)
    assert data.startswith(b"P5\n5 5\n65535\n")
    assert data[len(b"P5\n5 5\n65535\n"):] == bytes(2 * 25)


def test_pgm_orientation_and_scale(tmp_path):
    g = GridSpec(1.0, 4)
    v = np.zeros(g.size)
    v[g.flat(0, 4)] = 0.5  # top-left pixel
    v[g.flat(4, 0)] = 2.0  # bottom-right pixel, the maximum
    write_pgm(v, tmp_path / "a.pgm", grid=g)
    img = read_pgm(tmp_path / "a.pgm")
    assert img[0, 0] == round(0.25 * 65535)
    assert img[-1, -1] == 65535
    assert np.count_nonzero(img) == 2


def test_non_finite_field_rejected(tmp_path):
    g = GridSpec(1.0, 4)
    with pytest.raises(ValueError):
        write_density_csv(np.full(g.size, np.nan), tmp_path / "x.csv", grid=g)


def test_metrics_round_trip(tmp_path):
    rec = {"evac_time": 4.32, "evac_step": 54, "evacuated": True, "x": None,
           "split": {"left": 51.85, "right": 48.15}, "levels": [0.1, 0.05],
           "small": 1 / 3}
    write_metrics(rec, tmp_path / "m.txt")
    back = read_metrics(tmp_path / "m.txt")
    assert back == {"evac_time": 4.32, "evac_step": 54, "evacuated": True, "x": None,
                    "split.left": 51.85, "split.right": 48.15, "levels": [0.1, 0.05],
                    "small": 1 / 3}
    with pytest.raises(ValueError):
        format_metrics({"a": "two\nlines"})


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        write_metrics({"a": 1}, tmp_path / "missing" / "m.txt")
