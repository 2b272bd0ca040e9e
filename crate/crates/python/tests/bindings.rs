use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<R>(f: impl FnOnce(Python<'_>, &Bound<'_, PyModule>) -> R) -> R {
    Python::initialize();
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(scenemo_py::scenemo_module)(py).into_bound(py).cast_into::<PyModule>().unwrap();
        f(py, &m)
    })
}

#[test]
fn metrics_round_trip_through_python_values() {
    with_module(|py, m| {
        let locals = PyDict::new(py);
        locals.set_item("sm", m).unwrap();
        py.run(
            c"
gt = [[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.5]]]
pred = [[[0.2, 0.0, 0.0], [1.2, 0.0, 0.0], [0.2, 1.0, 0.5]]]
g = sm.g_mpjpe(pred, gt)
r = sm.mpjpe(pred, gt)
i = sm.iou([0, 0, 1, 1], [0, 0, 1, 1])
",
            None,
            Some(&locals),
        )
        .unwrap();
        let g: f64 = locals.get_item("g").unwrap().unwrap().extract().unwrap();
        let r: f64 = locals.get_item("r").unwrap().unwrap().extract().unwrap();
        let i: f64 = locals.get_item("i").unwrap().unwrap().extract().unwrap();
        assert!((g - 200.0).abs() < 1e-9);
        assert!(r.abs() < 1e-9);
        assert_eq!(i, 1.0);
    });
}

#[test]
fn errors_carry_a_kind() {
    with_module(|py, m| {
        let e = m.getattr("Sequence").unwrap().call_method1("load", ("/definitely/not/here",)).unwrap_err();
        assert!(e.is_instance(py, &m.getattr("ScenemoError").unwrap().cast_into().unwrap()));
        let kind: String = e.value(py).getattr("args").unwrap().get_item(0).unwrap().extract().unwrap();
        assert_eq!(kind, "missing_file");
    });
}

#[test]
fn default_configs_are_dicts() {
    with_module(|_py, m| {
        for kind in ["simulate", "optimize", "refine_camera", "evaluate"] {
            let c = m.getattr("default_config").unwrap().call1((kind,)).unwrap();
            assert!(c.cast::<PyDict>().is_ok(), "{kind}");
        }
        assert!(m.getattr("default_config").unwrap().call1(("nope",)).is_err());
    });
}
