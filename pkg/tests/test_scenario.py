import numpy as np
import pytest

from scengen.errors import ParseError, StructuralError
from scengen.scenario import (
    Scenario,
    Scene,
    VehicleAction,
    VehicleState,
    flatten_bv_actions,
    flatten_scene,
    read_scenario_log,
    scene_with_actions,
    unflatten_scene,
    validate_scenario,
    write_scenario_log,
)


def make_scene(t=0, n_bvs=2):
    av = VehicleState(x=300.0, y=5.625, v=25.0, theta=0.0)
    bvs = tuple(
        VehicleState(x=300.0 + 8.0 * (i + 1), y=1.875, v=24.0 + i, theta=0.01 * i)
        for i in range(n_bvs)
    )
    acts = tuple(VehicleAction(dv=0.1 * i, dtheta=-0.001 * i) for i in range(n_bvs))
    return Scene(t=t, av=av, bvs=bvs, bv_actions=acts)


def test_flatten_round_trip():
    scene = make_scene()
    flat = flatten_scene(scene)
    assert flat.shape == (4 * 3,)
    back = unflatten_scene(flat, flatten_bv_actions(scene), t=scene.t)
    assert back.av == scene.av
    assert back.bvs == scene.bvs
    assert back.bv_actions == scene.bv_actions


def test_unflatten_rejects_bad_sizes():
    with pytest.raises(StructuralError):
        unflatten_scene(np.zeros(5))
    with pytest.raises(StructuralError):
        unflatten_scene(np.zeros(4))  # AV alone is not a scene
    with pytest.raises(StructuralError):
        unflatten_scene(np.zeros(12), bv_actions=np.zeros(3))


def test_scene_action_count_checked():
    av = VehicleState(0.0, 1.875, 20.0, 0.0)
    bv = VehicleState(10.0, 1.875, 20.0, 0.0)
    with pytest.raises(StructuralError):
        Scene(t=0, av=av, bvs=(bv,), bv_actions=(VehicleAction(), VehicleAction()))
    scene = Scene(t=0, av=av, bvs=(bv,))
    assert scene.bv_actions == (VehicleAction(0.0, 0.0),)


def test_log_round_trip(tmp_path):
    frames = []
    scene = make_scene(t=0)
    for k in range(5):
        frames.append(make_scene(t=k))
    sc = Scenario(frames=frames, dt=0.04, outcome="horizon")
    path = tmp_path / "ep.log"
    write_scenario_log(sc, path)
    back = read_scenario_log(path)
    assert back.outcome == "horizon"
    assert back.dt == 0.04
    assert len(back.frames) == 5
    for a, b in zip(sc.frames, back.frames):
        assert a.t == b.t
        assert abs(a.av.x - b.av.x) < 1e-6
        assert abs(a.bvs[1].v - b.bvs[1].v) < 1e-6
        assert abs(a.bv_actions[1].dtheta - b.bv_actions[1].dtheta) < 1e-6
    # identical bytes when written again
    path2 = tmp_path / "ep2.log"
    write_scenario_log(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_log_parse_errors(tmp_path):
    p = tmp_path / "bad.log"
    p.write_text("")
    with pytest.raises(ParseError):
        read_scenario_log(p)
    p.write_text("0 1 2 3\n")
    with pytest.raises(ParseError):
        read_scenario_log(p)  # no header
    p.write_text("# dt=0.04\n")
    with pytest.raises(ParseError):
        read_scenario_log(p)  # header missing outcome
    p.write_text("# dt=0.04 outcome=horizon\n")
    with pytest.raises(ParseError):
        read_scenario_log(p)  # no frames
    p.write_text("# dt=0.04 outcome=horizon\n0 1.0 2.0\n")
    with pytest.raises(ParseError):
        read_scenario_log(p)  # too few fields for two vehicles
    good = "0 " + " ".join(["1.0"] * 12)
    p.write_text(f"# dt=0.04 outcome=horizon\n{good}\n{good} 9.0\n")
    with pytest.raises(ParseError) as err:
        read_scenario_log(p)  # field count changes mid-file
    assert "line 3" in str(err.value)
    p.write_text("# dt=0.04 outcome=horizon\n0 " + " ".join(["x"] * 12) + "\n")
    with pytest.raises(ParseError):
        read_scenario_log(p)


def test_validate_scenario():
    frames = [make_scene(t=k) for k in range(3)]
    ok = Scenario(frames=frames, dt=0.04, outcome="av_collision")
    assert validate_scenario(ok) == []

    assert validate_scenario(Scenario(frames=[], dt=0.04, outcome="horizon"))
    assert validate_scenario(Scenario(frames=frames, dt=0.0, outcome="horizon"))
    assert validate_scenario(Scenario(frames=frames, dt=0.04, outcome="meteor"))

    skipped = [make_scene(t=0), make_scene(t=2)]
    problems = validate_scenario(Scenario(frames=skipped, dt=0.04, outcome="horizon"))
    assert any("expected" in p for p in problems)

    mixed = [make_scene(t=0, n_bvs=2), make_scene(t=1, n_bvs=1)]
    problems = validate_scenario(Scenario(frames=mixed, dt=0.04, outcome="horizon"))
    assert any("vehicle count" in p for p in problems)


def test_scene_with_actions():
    scene = make_scene()
    out = scene_with_actions(scene, VehicleAction(0.2, 0.0), scene.bv_actions)
    assert out.av_action == VehicleAction(0.2, 0.0)
    assert out.t == scene.t and out.av == scene.av
