use std::ffi::CString;

use pyo3::prelude::*;

use mpstack::mpstack as module;

// Runs Python against the module through an embedded interpreter; the
// interpreter can be set up only once per process, so this is one test.
#[test]
fn module_from_python() {
    let dir = tempfile::tempdir().unwrap();
    pyo3::append_to_inittab!(module);
    Python::initialize();
    let code = format!(
        r#"
import mpstack

s = mpstack.Scene.procedural(5, 40, 30, hard_core=True, soft_edges=False, min_instances=3, max_instances=3)
assert (s.width, s.height, s.instance_count) == (40, 30, 3), s
ids = s.plane_ids
assert len(s.render()) == 30 and len(s.render()[0][0]) == 3
assert s.render_png()[:8] == b"\x89PNG\r\n\x1a\n"

removed = s.remove(ids[0])
assert removed.log_len == 1 and removed.instance_count == 2
assert s.log_len == 0

r = s.reorder(ids[0], ids[1]).reorder(ids[1], ids[0])
assert r.render() == s.render()
try:
    s.reorder(ids[1], ids[0])
    raise SystemExit("expected an order violation")
except mpstack.MpstackError as e:
    assert str(e).startswith("order_violation"), e

# Scenes read from disk are already on the storage grid, so an exported
# edit log replays to the identical stack.
mpstack.write_procedural_scene({src:?}, 5, 40, 30, hard_core=True)
loaded = mpstack.Scene.load({src:?})
edited = loaded.drag(loaded.plane_ids[1], 3, 2, 0.8).paste(mpstack.Scene.procedural(6, 40, 30), 0, 10, 5)
assert edited.instance_count == loaded.instance_count + 1, edited
assert edited.validate()["passed"], edited.validate()
edited.export({out:?})
back = mpstack.Scene.load({out:?})
assert back.log_len == 2 and back.render() == edited.render()
assert back.undo(0).render() == loaded.render()

a = s.alpha(ids[0])
assert mpstack.sad(a, a) == 0.0 and mpstack.iou(a, a) == 1.0
report = mpstack.evaluate([a], [a, s.alpha(ids[1])])
assert report["missed"] == 1 and report["pairs"][0]["iou"] == 1.0

split = mpstack.sgmp(s.depth_map(), planes=3)
assert len(split["masks"]) == 3 and split["refined"] == sorted(split["refined"])
assert abs(sum(split["masks"][k][4][7] for k in range(3)) - 1.0) < 1e-9

assert mpstack.editing_metrics(s.render(), s.render())["psnr"] == 100.0
index = mpstack.synth_dataset({data:?}, 5, seed=2, width=32, height=24)
assert [e["split"] for e in index["scenes"]].count("train") == 3
"#,
        src = dir.path().join("source").to_str().unwrap(),
        out = dir.path().join("exported").to_str().unwrap(),
        data = dir.path().join("data").to_str().unwrap(),
    );
    Python::attach(|py| {
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, None, None) {
            e.print(py);
            panic!("python checks failed: {e}");
        }
    });
}
