"""Smoke test for the mpstack Python module.

Build and install first, e.g. `pip install maturin && maturin develop -m crates/py/Cargo.toml`,
then run `python python/smoke.py`.
"""

import tempfile
from pathlib import Path

import mpstack


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        mpstack.write_procedural_scene(str(tmp / "scene"), seed=3, width=64, height=48, hard_core=True)
        scene = mpstack.Scene.load(str(tmp / "scene"))
        front, second = scene.plane_ids[:2]
        print(scene, "depths:", [round(d, 2) for d in scene.depths()])

        edited = scene.reorder(front, second).remove(second).drag(front, 5, 4, scale=0.9, rotation=10)
        assert edited.validate()["passed"]
        edited.export(str(tmp / "edited"))
        back = mpstack.Scene.load(str(tmp / "edited"))
        assert back.render() == edited.render(), "export must replay exactly"
        assert back.undo(0).render() == scene.render()
        print("edited:", edited, "-> round trip ok")

        split = mpstack.sgmp(scene.depth_map(), planes=4)
        print("sgmp refined depths:", [round(d, 3) for d in split["refined"]])

        alpha = scene.alpha(front)
        report = mpstack.evaluate([alpha], [alpha, scene.alpha(second)])
        print("eval: sad=%.4f missed=%d" % (report["sad"], report["missed"]))

        index = mpstack.synth_dataset(str(tmp / "data"), count=5, seed=1, width=48, height=32)
        print("dataset:", len(index["scenes"]), "scenes")
    print("smoke test passed")


if __name__ == "__main__":
    main()
