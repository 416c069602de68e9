use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};

fn with_module<F: FnOnce(Python<'_>, &Bound<'_, PyDict>)>(f: F) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "grasp_detect").unwrap();
        grasp_detect::grasp_detect(&m).unwrap();
        let globals = PyDict::new(py);
        globals.set_item("gd", m).unwrap();
        f(py, &globals);
    });
}

fn run(py: Python<'_>, globals: &Bound<'_, PyDict>, code: &str) {
    let code = std::ffi::CString::new(code).unwrap();
    if let Err(e) = py.run(&code, Some(globals), None) {
        e.print(py);
        panic!("python snippet failed");
    }
}

#[test]
fn geometry_and_codec_from_python() {
    with_module(|py, g| {
        run(
            py,
            g,
            r#"
a = gd.GraspRect(50, 50, 20, 10, 0)
b = gd.GraspRect(50, 50, 20, 10, 90)
assert abs(gd.iou(a, b) - 1 / 3) < 1e-9
assert gd.angle_diff(170, -170) == 20
assert gd.GraspRect(0, 0, 2, 1, 90).theta == -90
assert not gd.is_success(a, [b])
grid = gd.AnchorGrid(320, 16, 91, 26, 6)
assert len(grid) == 2400
assert grid.cell_of(17.0, 1.0) == (0, 1)
g = gd.decode((1.0, 0.5, 0.0, 0.0, 1.0), (100, 50, 91, 26, 0), 6)
assert abs(g.x - 191) < 1e-9 and abs(g.theta - 30) < 1e-9
d = gd.encode(g, (100, 50, 91, 26, 0), 6)
assert max(abs(u - v) for u, v in zip(d, (1.0, 0.5, 0.0, 0.0, 1.0))) < 1e-9
"#,
        );
    });
}

#[test]
fn errors_map_to_python_exceptions() {
    with_module(|py, g| {
        run(
            py,
            g,
            r#"
for bad in (lambda: gd.GraspRect(0, 0, -1, 1, 0),
            lambda: gd.AnchorGrid(30, 16, 1, 1, 6),
            lambda: gd.Model("nope = 1"),
            lambda: gd.generate_scenes(1, config="length = [70.0, 80.0]")):
    try:
        bad()
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")
try:
    gd.Model.load("/nonexistent/model.ckpt")
except OSError:
    pass
else:
    raise AssertionError("expected OSError")
"#,
        );
    });
}

#[test]
fn scenes_and_models_from_python() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    with_module(|py, g| {
        g.set_item("path", path.to_str().unwrap()).unwrap();
        run(
            py,
            g,
            r#"
cfg = "image_size = 32\nlength = [10.0, 16.0]\nthickness = [3.0, 5.0]\nradius = [5.0, 7.0]\ndistractor_radius = [1.5, 2.5]\nopening_margin = 3.0"
scenes = gd.generate_scenes(3, seed=2, config=cfg)
assert scenes[0].shape == (3, 32, 32)
assert len(scenes[0].pixels) == 3 * 32 * 32
custom = gd.Scene(scenes[0].pixels, 32, 32, scenes[0].grasps, "custom")
assert custom.object_id == "custom"
m = gd.Model("iterations = 1\nbatch_size = 1\nimage_size = 32\nfe_channels = [4, 8]\nfe_stride_total = 4\nk = 3\nt = 4")
assert m.num_candidates == 8 * 8 * 3
m.fit(scenes)
top = m.predict(custom, mode="scorer")[0]
m.save(path)
assert gd.Model.load(path).predict(custom, mode="scorer")[0] == top
assert 0.0 <= m.evaluate(scenes, mode="primary") <= 1.0
"#,
        );
    });
}
