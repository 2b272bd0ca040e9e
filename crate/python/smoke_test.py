"""Smoke test for the Python bindings.

Build and install first:
    pip install --no-build-isolation -e crates/python
then run:
    python3 python/smoke_test.py
"""

import math
import tempfile

import scenemo


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b}"


def main():
    body = scenemo.BodyModel()
    names = scenemo.BodyModel.joint_names()
    assert len(names) == 24
    zero = [[0.0, 0.0, 0.0]] * 24
    joints = body.joints(zero, [0.0, 0.0, 0.9])
    assert len(joints) == 24
    assert len(body.vertices(zero, [0.0, 0.0, 0.9])) > 100
    assert len(body.faces) > 100

    cfg = scenemo.default_config("simulate")
    cfg["motion"]["duration_s"] = 2.0
    cfg["drift"]["seed"] = 5
    seq = scenemo.simulate(cfg)
    assert len(seq) == 40
    close(seq.rate_hz, 20.0, 0.0)
    assert seq.manifest()["coordinate_convention"] == "z-up, meters"

    with tempfile.TemporaryDirectory() as d:
        seq.save(d)
        again = scenemo.Sequence.load(d)
        assert again.frame_times == seq.frame_times
        assert again.motion("ground_truth") == seq.motion("ground_truth")

    same = seq.evaluate(seq, pred_field="ground_truth")
    for key in ("mpjpe_mm", "pa_mpjpe_mm", "g_mpjpe_mm"):
        assert same[key] == 0.0, (key, same[key])
    drifted = seq.evaluate(seq)
    assert drifted["g_mpjpe_mm"] > 1.0

    opt = scenemo.default_config("optimize")
    opt["max_iters"] = 5
    refined, report = seq.optimize(opt)
    for w in report["windows"]:
        assert w["final"]["total"] <= w["initial"]["total"]
    after = refined.evaluate(seq)
    assert after["g_mpjpe_mm"] < drifted["g_mpjpe_mm"]

    gt = seq.joints("ground_truth")
    assert scenemo.mpjpe(gt, gt) == 0.0
    assert scenemo.g_mpjpe(gt, gt) == 0.0
    shifted = [[[p[0] + 0.1, p[1], p[2]] for p in f] for f in gt]
    close(scenemo.g_mpjpe(shifted, gt), 100.0, 1e-9)
    close(scenemo.mpjpe(shifted, gt), 0.0, 1e-9)

    times = [0.1 * i for i in range(50)]
    traj = [[t, math.sin(t), 0.9] for t in times]
    moved = [[p[0] + 1.0, p[1], p[2]] for p in traj]
    close(scenemo.ate(times, moved, traj)["rmse"], 1.0, 1e-12)
    close(scenemo.ate(times, moved, traj, "rigid")["rmse"], 0.0, 1e-9)
    close(scenemo.rpe(times, moved, traj, 1.0)["max"], 0.0, 1e-12)

    values = [math.exp(-((t - 2.0) ** 2) / 0.02) for t in times]
    peaks = scenemo.detect_peaks(times, values, 0.5, 0.5)
    assert len(peaks) == 1 and abs(peaks[0] - 2.0) < 0.05, peaks

    yaw, tx, ty = 0.3, 2.0, -1.0
    imu = [[t, math.sin(t)] for t in times]
    lidar = [
        [math.cos(yaw) * x - math.sin(yaw) * y + tx, math.sin(yaw) * x + math.cos(yaw) * y + ty]
        for x, y in imu
    ]
    cal = scenemo.trajectory_align(imu, lidar)
    close(cal["r_wi"]["yaw"], yaw, 1e-9)

    k = {"fx": 600.0, "fy": 600.0, "cx": 320.0, "cy": 240.0, "width": 640, "height": 480}
    ext = {"rotation": [0.1, -0.2, 0.05], "translation": [0.2, -0.1, 4.0]}
    world = [[math.sin(i), math.cos(2 * i), 0.3 * (i % 4)] for i in range(10)]
    pixels, valid = scenemo.project(world, k, ext)
    assert all(valid)
    pnp = scenemo.solve_pnp(world, pixels, k)
    assert pnp["rmse"] < 1e-6, pnp

    close(scenemo.iou([0, 0, 2, 2], [1, 0, 3, 2]), 1.0 / 3.0, 1e-12)
    close(scenemo.giou([0, 0, 1, 1], [2, 0, 3, 1]), -1.0 / 3.0, 1e-12)

    try:
        scenemo.Sequence.load("/nonexistent/container")
    except scenemo.ScenemoError as e:
        assert e.args[0] == "missing_file"
    else:
        raise AssertionError("expected ScenemoError")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
