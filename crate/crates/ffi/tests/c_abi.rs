use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use probfuse::fusion::average_probabilities;
use probfuse::synthetic::{complementary_bundle, write_bundle};
use probfuse_ffi::*;

fn last_error() -> String {
    let p = pf_last_error();
    assert!(!p.is_null(), "expected an error message");
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { pf_string_free(p) };
    s
}

/// Two models, four samples, two classes.
fn small_bundle() -> *mut PfBundle {
    let probs = [
        0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7, //
        0.7, 0.3, 0.4, 0.6, 0.2, 0.8, 0.1, 0.9,
    ];
    let labels = [0usize, 1, 0, 1];
    let mut b = ptr::null_mut();
    let st = unsafe { pf_bundle_from_arrays(2, 4, 2, probs.as_ptr(), labels.as_ptr(), &mut b) };
    assert_eq!(st, PfStatus::Ok);
    b
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(pf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn shape_and_simple_average() {
    let b = small_bundle();
    let (mut k, mut n, mut c) = (0, 0, 0);
    assert_eq!(unsafe { pf_bundle_shape(b, &mut k, &mut n, &mut c) }, PfStatus::Ok);
    assert_eq!((k, n, c), (2, 4, 2));

    let mut probs = [0.0; 8];
    let mut labels = [9usize; 4];
    assert_eq!(unsafe { pf_average(b, ptr::null(), probs.as_mut_ptr(), labels.as_mut_ptr()) }, PfStatus::Ok);
    assert_eq!(labels, [0, 1, 1, 1]);
    assert!((probs[0] - 0.8).abs() < 1e-12);
    assert!((probs[4] - 0.4).abs() < 1e-12);

    let w = [1.0, 0.0];
    assert_eq!(unsafe { pf_average(b, w.as_ptr(), probs.as_mut_ptr(), ptr::null_mut()) }, PfStatus::Ok);
    assert_eq!(probs[4], 0.6);

    let bad = [0.7, 0.7];
    assert_eq!(unsafe { pf_average(b, bad.as_ptr(), probs.as_mut_ptr(), ptr::null_mut()) }, PfStatus::InvalidInput);
    assert!(last_error().contains("weights"));
    unsafe { pf_bundle_free(b) };
}

#[test]
fn loads_files_like_the_core_crate() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = complementary_bundle(3, 40, 4);
    let files = write_bundle(&bundle, dir.path()).unwrap();
    let c = |p: &Path| CString::new(p.to_str().unwrap()).unwrap();
    let models: Vec<CString> = files.models.iter().map(|p| c(p)).collect();
    let model_ptrs: Vec<_> = models.iter().map(|s| s.as_ptr()).collect();
    let (labels, classes) = (c(&files.labels), c(&files.classes));
    let mut b = ptr::null_mut();
    let st = unsafe { pf_bundle_load(model_ptrs.as_ptr(), 2, labels.as_ptr(), classes.as_ptr(), &mut b) };
    assert_eq!(st, PfStatus::Ok);

    let mut probs = vec![0.0; 40 * 4];
    assert_eq!(unsafe { pf_average(b, ptr::null(), probs.as_mut_ptr(), ptr::null_mut()) }, PfStatus::Ok);
    let expected = average_probabilities(&bundle, None).unwrap();
    assert_eq!(probs.as_slice(), expected.as_flat());
    unsafe { pf_bundle_free(b) };

    let missing = CString::new(dir.path().join("nope.csv").to_str().unwrap()).unwrap();
    let ptrs = [missing.as_ptr()];
    let st = unsafe { pf_bundle_load(ptrs.as_ptr(), 1, labels.as_ptr(), classes.as_ptr(), &mut b) };
    assert_eq!(st, PfStatus::InvalidInput);
    assert!(last_error().contains("nope.csv"));
}

#[test]
fn invalid_inputs_map_to_status_codes() {
    let probs = [0.5, 0.2];
    let labels = [0usize];
    let mut b = ptr::null_mut();
    let st = unsafe { pf_bundle_from_arrays(1, 1, 2, probs.as_ptr(), labels.as_ptr(), &mut b) };
    assert_eq!(st, PfStatus::InvalidInput);
    assert!(b.is_null());
    assert!(last_error().contains("sums to"));

    let st = unsafe { pf_bundle_from_arrays(1, 1, 2, ptr::null(), labels.as_ptr(), &mut b) };
    assert_eq!(st, PfStatus::NullPointer);
    assert!(last_error().contains("probs"));

    let st = unsafe { pf_bundle_shape(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, PfStatus::NullPointer);

    let bundle = small_bundle();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { pf_stack_train(bundle, 99, 0, &mut model) }, PfStatus::InvalidInput);
    assert!(last_error().contains("meta kind"));
    unsafe { pf_bundle_free(bundle) };
}

#[test]
fn success_clears_the_last_error() {
    let st = unsafe { pf_bundle_shape(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, PfStatus::NullPointer);
    let b = small_bundle();
    assert!(pf_last_error().is_null());
    unsafe { pf_bundle_free(b) };
}

#[test]
fn optimized_weights_lie_on_the_simplex() {
    let b = small_bundle();
    let mut w = [0.0; 2];
    let mut acc = 0.0;
    let st = unsafe { pf_optimize_weights(b, 0.01, 4, 1, w.as_mut_ptr(), &mut acc) };
    assert_eq!(st, PfStatus::Ok);
    assert!(w.iter().all(|&x| x >= 0.0));
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(acc, 1.0);

    let st = unsafe { pf_optimize_weights(b, 0.0, 4, 1, w.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, PfStatus::InvalidInput);
    unsafe { pf_bundle_free(b) };
}

#[test]
fn metrics_of_a_majority_predictor() {
    let pred = [0usize; 5];
    let truth = [0usize, 0, 0, 1, 1];
    let mut m = PfMetrics::default();
    assert_eq!(unsafe { pf_metrics(5, 2, pred.as_ptr(), truth.as_ptr(), &mut m) }, PfStatus::Ok);
    assert!((m.accuracy - 0.6).abs() < 1e-12);
    assert!((m.macro_precision - 0.3).abs() < 1e-12);
    assert!((m.macro_recall - 0.5).abs() < 1e-12);
    assert!((m.macro_f1 - 0.375).abs() < 1e-12);

    let out_of_range = [2usize; 5];
    let st = unsafe { pf_metrics(5, 2, out_of_range.as_ptr(), truth.as_ptr(), &mut m) };
    assert_eq!(st, PfStatus::InvalidInput);
}

#[test]
fn meta_model_round_trips_through_json() {
    let b = small_bundle();
    for kind in [PfMetaKind::Logistic, PfMetaKind::LinearSvm, PfMetaKind::Mlp, PfMetaKind::RandomForest] {
        let mut model = ptr::null_mut();
        assert_eq!(unsafe { pf_stack_train(b, kind as u32, 5, &mut model) }, PfStatus::Ok);
        let mut before = [0.0; 8];
        let mut labels = [0usize; 4];
        let st = unsafe { pf_stack_predict(model, b, before.as_mut_ptr(), labels.as_mut_ptr()) };
        assert_eq!(st, PfStatus::Ok);
        assert!(labels.iter().all(|&y| y < 2), "{kind:?}");

        let mut json = ptr::null_mut();
        assert_eq!(unsafe { pf_meta_model_to_json(model, &mut json) }, PfStatus::Ok);
        let mut restored = ptr::null_mut();
        assert_eq!(unsafe { pf_meta_model_from_json(json, &mut restored) }, PfStatus::Ok);
        let mut after = [0.0; 8];
        let st = unsafe { pf_stack_predict(restored, b, after.as_mut_ptr(), ptr::null_mut()) };
        assert_eq!(st, PfStatus::Ok);
        assert_eq!(before, after);
        unsafe {
            pf_string_free(json);
            pf_meta_model_free(model);
            pf_meta_model_free(restored);
        }
    }
    let junk = CString::new("{\"not\": \"a model\"}").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { pf_meta_model_from_json(junk.as_ptr(), &mut m) }, PfStatus::InvalidInput);
    unsafe { pf_bundle_free(b) };
}

#[test]
fn energy_and_emissions() {
    let samples = [
        PfPowerSample { timestamp_s: 0.0, cpu_w: 100.0, gpu_w: 0.0, ram_w: 0.0 },
        PfPowerSample { timestamp_s: 1800.0, cpu_w: 100.0, gpu_w: 0.0, ram_w: 0.0 },
    ];
    let mut e = PfEnergy::default();
    assert_eq!(unsafe { pf_integrate_energy(samples.as_ptr(), 2, 3600.0, &mut e) }, PfStatus::Ok);
    assert!((e.total_kwh - 0.1).abs() <= 1e-12 * 0.1);

    let mut r = PfEmissions::default();
    assert_eq!(unsafe { pf_compute_emissions(&e, 0.205, &mut r) }, PfStatus::Ok);
    assert!((r.emissions_kg - 0.0205).abs() < 1e-15);
    assert_eq!(r.rate_kg_per_s, r.emissions_kg / 3600.0);

    assert_eq!(unsafe { pf_integrate_energy(samples.as_ptr(), 1, 10.0, &mut e) }, PfStatus::InvalidInput);
    e.duration_s = 0.0;
    assert_eq!(unsafe { pf_compute_emissions(&e, 0.205, &mut r) }, PfStatus::InvalidInput);
}

fn target_dir() -> Option<PathBuf> {
    // target/<profile>/deps/<test binary>
    Some(std::env::current_exe().ok()?.parent()?.parent()?.to_path_buf())
}

#[test]
fn c_program_links_against_the_static_library() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let Some(lib) = target_dir().map(|d| d.join("libprobfuse_ffi.a")).filter(|p| p.exists()) else {
        eprintln!("skipping: static library not built");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let exe = Path::new(env!("CARGO_TARGET_TMPDIR")).join("probfuse_smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "C smoke test failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
