"""Smoke test for the grasp_detect extension module.

Build first:
    cargo build --release -p grasp-python --features extension-module
then run:
    python3 crates/python/python/smoke_test.py
"""

import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", ".."))


def import_module():
    try:
        import grasp_detect  # noqa: F401
    except ImportError:
        for profile in ("release", "debug"):
            lib = os.path.join(ROOT, "target", profile, "libgrasp_detect.so")
            if os.path.exists(lib):
                break
        else:
            sys.exit("libgrasp_detect.so not found; build it with --features extension-module")
        tmp = tempfile.mkdtemp()
        shutil.copy(lib, os.path.join(tmp, "grasp_detect.so"))
        sys.path.insert(0, tmp)
    import grasp_detect

    return grasp_detect


def main():
    gd = import_module()

    a = gd.GraspRect(50, 50, 20, 10, 0)
    assert abs(gd.iou(a, a) - 1.0) < 1e-12
    b = gd.GraspRect(50, 50, 20, 10, 90)
    assert abs(gd.iou(a, b) - 100 / 300) < 1e-9
    assert gd.angle_diff(170, -170) == 20
    assert gd.canonical_angle(90) == -90
    assert gd.is_success(a, [b], angle_thr=90.0, iou_thr=0.25)
    assert not gd.is_success(a, [b])
    assert len(a.polygon()) == 4 and abs(a.area() - 200) < 1e-12

    grid = gd.AnchorGrid(320, 16, 91, 26, 6)
    assert len(grid) == 2400 and grid.shape == (20, 20, 6)
    anchor = grid.anchor(0)
    g = gd.GraspRect(12, 9, 80, 20, -60)
    delta = gd.encode(g, anchor, 6)
    back = gd.decode(delta, anchor, 6)
    for u, v in zip(back.to_tuple(), g.to_tuple()):
        assert abs(u - v) < 1e-9, (back, g)
    d = gd.decode((1.0, 0.5, math.log(2), 0, 0), (100, 50, 91, 26, 0), 6)
    assert abs(d.x - 191) < 1e-9 and abs(d.w - 182) < 1e-9

    scene = gd.generate_scene(seed=3)
    assert scene.shape == (3, 64, 64) and len(scene.grasps) > 0
    scenes = gd.generate_scenes(4, seed=1)
    assert [s.object_id for s in scenes] == [s.object_id for s in gd.generate_scenes(4, seed=1)]

    model = gd.Model("iterations = 2\nbatch_size = 2")
    ranked = model.predict(scene, mode="primary")
    assert len(ranked) == model.num_candidates == 384
    scores = [s for _, s in ranked]
    assert scores == sorted(scores, reverse=True)
    model.fit(scenes)
    acc = model.evaluate(scenes, mode="scorer")
    assert 0.0 <= acc <= 1.0

    path = os.path.join(tempfile.mkdtemp(), "model.ckpt")
    model.save(path)
    loaded = gd.Model.load(path)
    top = [(g.to_tuple(), s) for g, s in model.predict(scene)[:5]]
    assert top == [(g.to_tuple(), s) for g, s in loaded.predict(scene)[:5]]

    try:
        gd.Model("no_such_key = 1")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown config key accepted")

    print("grasp_detect smoke test passed:", model)


if __name__ == "__main__":
    main()
