//! Exercises the extern "C" surface from Rust: status codes, last-error
//! text, and value agreement with the library calls each function wraps.

use std::ffi::{CStr, CString};
use std::ptr;

use moselect::decision::{
    model_fingerprint, save_calibration, EntropyCalibration, FeatureMode, Gmm1d, GmmComponent,
    DEFAULT_MO_ZERO_SLACK,
};
use moselect::ic::{ic_select, sample_covariance, EigenProfile, IcRule};
use moselect::sim::{build_dataset, substream, ScenarioConfig, StreamDomain};
use moselect::vae::{save_model, train, TrainConfig, VaeVariant};
use moselect_capi::*;

fn last_error() -> String {
    let p = moselect_last_error();
    assert!(!p.is_null(), "failure left no error message");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(moselect_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn entropy_agrees_and_rejects_bad_input() {
    let values = [0.2, 0.5, 0.3];
    let mut h = f64::NAN;
    let code = unsafe { moselect_entropy(values.as_ptr(), values.len(), &mut h) };
    assert_eq!(code, MOSELECT_OK);
    let expected = moselect::decision::entropy(&values).unwrap();
    assert_eq!(h, expected);

    let code = unsafe { moselect_entropy(ptr::null(), 3, &mut h) };
    assert_eq!(code, MOSELECT_ERR_NULL_POINTER);
    assert!(last_error().contains("values"));

    let code = unsafe { moselect_entropy(values.as_ptr(), 0, &mut h) };
    assert_eq!(code, MOSELECT_ERR_INVALID_ARGUMENT);

    let zeros = [0.0, 0.0];
    let code = unsafe { moselect_entropy(zeros.as_ptr(), zeros.len(), &mut h) };
    assert_eq!(code, MOSELECT_ERR_DEGENERATE_DATA);
}

#[test]
fn snr_conversion_agrees() {
    let mut v = f64::NAN;
    let code = unsafe { moselect_snr_to_noise_var(7.5, &mut v) };
    assert_eq!(code, MOSELECT_OK);
    assert_eq!(v, moselect::sim::snr_to_noise_var(7.5).unwrap());

    let code = unsafe { moselect_snr_to_noise_var(f64::NAN, &mut v) };
    assert_ne!(code, MOSELECT_OK);
    assert!(!last_error().is_empty());
}

#[test]
fn steering_vector_agrees() {
    let n = 8;
    let mut out = vec![f64::NAN; 2 * n];
    let code = unsafe { moselect_steering_vector(0.3, n, out.as_mut_ptr()) };
    assert_eq!(code, MOSELECT_OK);
    let expected = moselect::sim::steering_vector(0.3, n).unwrap();
    for (i, z) in expected.iter().enumerate() {
        assert_eq!(out[2 * i], z.re);
        assert_eq!(out[2 * i + 1], z.im);
    }
}

#[test]
fn sample_covariance_agrees() {
    let (n, t) = (4, 6);
    let mut rng = substream(314, StreamDomain::EvalNoise, 9, 9);
    let y = ndarray::Array2::from_shape_fn((n, t), |_| moselect::sim::complex_gaussian(1.0, &mut rng));

    // Column-major interleaved: snapshot t first, antenna i within it.
    let mut flat = Vec::with_capacity(2 * n * t);
    for tt in 0..t {
        for i in 0..n {
            flat.push(y[(i, tt)].re);
            flat.push(y[(i, tt)].im);
        }
    }
    let mut out = vec![f64::NAN; 2 * n * n];
    let code = unsafe { moselect_sample_covariance(flat.as_ptr(), n, t, out.as_mut_ptr()) };
    assert_eq!(code, MOSELECT_OK);

    let expected = sample_covariance(&y).unwrap();
    for i in 0..n {
        for j in 0..n {
            let base = 2 * (i * n + j);
            assert!((out[base] - expected[(i, j)].re).abs() < 1e-12);
            assert!((out[base + 1] - expected[(i, j)].im).abs() < 1e-12);
        }
    }
}

#[test]
fn ic_select_agrees_and_validates_rule() {
    let eigs = [8.0, 6.0, 1.05, 0.95, 1.0, 0.98];
    let t = 200;
    for (rule_code, rule) in [(0, IcRule::Aic), (1, IcRule::Mdl)] {
        let mut order = usize::MAX;
        let code =
            unsafe { moselect_ic_select(eigs.as_ptr(), eigs.len(), t, rule_code, &mut order) };
        assert_eq!(code, MOSELECT_OK);
        let expected = ic_select(&EigenProfile::new(eigs.to_vec(), t).unwrap(), rule).unwrap();
        assert_eq!(order, expected.selected_order);
    }

    let mut order = usize::MAX;
    let code = unsafe { moselect_ic_select(eigs.as_ptr(), eigs.len(), t, 7, &mut order) };
    assert_eq!(code, MOSELECT_ERR_INVALID_ARGUMENT);
    assert!(last_error().contains("rule"));

    let bad = [1.0, f64::NAN];
    let code = unsafe { moselect_ic_select(bad.as_ptr(), bad.len(), t, 0, &mut order) };
    assert_eq!(code, MOSELECT_ERR_INVALID_ARGUMENT);
}

fn tiny_calibration(model_hash: String) -> EntropyCalibration {
    EntropyCalibration {
        gmm: Gmm1d {
            components: vec![
                GmmComponent {
                    weight: 0.5,
                    mean: 0.4,
                    variance: 0.01,
                },
                GmmComponent {
                    weight: 0.5,
                    mean: 1.1,
                    variance: 0.01,
                },
            ],
        },
        thresholds: vec![0.75],
        component_to_mo: vec![1, 2],
        mode: FeatureMode::Spectrum,
        mo_zero_slack: DEFAULT_MO_ZERO_SLACK,
        model_hash,
        snr_db: None,
    }
}

#[test]
fn handles_round_trip_and_predict_matches_the_library() {
    let scenario = ScenarioConfig {
        n_antennas: 4,
        oversampling: 2,
        max_order: 2,
        snr_range_db: (5.0, 15.0),
        t_snapshots: 1,
    };
    let dataset = build_dataset(&scenario, 40, 901).unwrap();
    let mut config = TrainConfig::new(VaeVariant::KnownNoise, 4, 2, 902);
    config.batch_size = 32;
    let outcome = train(&dataset, &config).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("model.bin");
    save_model(&outcome.params, &model_path).unwrap();
    let cal = tiny_calibration(model_fingerprint(&outcome.params));
    let cal_path = dir.path().join("cal.json");
    save_calibration(&cal, &cal_path).unwrap();

    let model_c = CString::new(model_path.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { moselect_model_load(model_c.as_ptr(), &mut model) },
        MOSELECT_OK
    );
    let mut n = 0usize;
    assert_eq!(
        unsafe { moselect_model_n_antennas(model, &mut n) },
        MOSELECT_OK
    );
    assert_eq!(n, 4);

    let cal_c = CString::new(cal_path.to_str().unwrap()).unwrap();
    let mut cal_handle = ptr::null_mut();
    assert_eq!(
        unsafe { moselect_calibration_load(cal_c.as_ptr(), &mut cal_handle) },
        MOSELECT_OK
    );

    // Realize one batch and compare the FFI prediction with the direct call.
    let mut rng = substream(903, StreamDomain::EvalNoise, 0, 0);
    let batch = dataset.samples[5].realize(&mut rng);
    let t = batch.y.ncols();
    let mut flat = Vec::with_capacity(2 * n * t);
    for tt in 0..t {
        for i in 0..n {
            flat.push(batch.y[(i, tt)].re);
            flat.push(batch.y[(i, tt)].im);
        }
    }
    let mut order = usize::MAX;
    let code = unsafe {
        moselect_predict_mo(
            model,
            cal_handle,
            flat.as_ptr(),
            n,
            t,
            batch.noise_var,
            &mut order,
        )
    };
    assert_eq!(code, MOSELECT_OK, "{}", last_error());
    let expected =
        moselect::decision::predict_mo(&batch, &outcome.params, &cal).unwrap();
    assert_eq!(order, expected);
    assert!(order <= 2);

    // Row-count mismatch is caught before any inference runs.
    let code = unsafe {
        moselect_predict_mo(model, cal_handle, flat.as_ptr(), 3, t, batch.noise_var, &mut order)
    };
    assert_eq!(code, MOSELECT_ERR_DIMENSION);
    assert!(last_error().contains("antenna"));

    let code = unsafe {
        moselect_predict_mo(model, cal_handle, flat.as_ptr(), n, t, -1.0, &mut order)
    };
    assert_eq!(code, MOSELECT_ERR_INVALID_ARGUMENT);

    // A calibration fingerprinted for some other model is refused.
    let stale = tiny_calibration("0000deadbeef".into());
    let stale_path = dir.path().join("stale.json");
    save_calibration(&stale, &stale_path).unwrap();
    let stale_c = CString::new(stale_path.to_str().unwrap()).unwrap();
    let mut stale_handle = ptr::null_mut();
    assert_eq!(
        unsafe { moselect_calibration_load(stale_c.as_ptr(), &mut stale_handle) },
        MOSELECT_OK
    );
    let code = unsafe {
        moselect_predict_mo(
            model,
            stale_handle,
            flat.as_ptr(),
            n,
            t,
            batch.noise_var,
            &mut order,
        )
    };
    assert_eq!(code, MOSELECT_ERR_CALIBRATION);
    assert!(last_error().contains("different model"));

    unsafe {
        moselect_calibration_free(stale_handle);
        moselect_calibration_free(cal_handle);
        moselect_model_free(model);
        moselect_model_free(ptr::null_mut());
        moselect_calibration_free(ptr::null_mut());
    }
}

#[test]
fn loads_report_missing_files_as_io() {
    let missing = CString::new("/nonexistent/moselect/model.bin").unwrap();
    let mut model = ptr::null_mut();
    let code = unsafe { moselect_model_load(missing.as_ptr(), &mut model) };
    assert_eq!(code, MOSELECT_ERR_IO);
    assert!(model.is_null() || code != MOSELECT_OK);
    assert!(!last_error().is_empty());

    let mut cal = ptr::null_mut();
    let code = unsafe { moselect_calibration_load(missing.as_ptr(), &mut cal) };
    assert_eq!(code, MOSELECT_ERR_IO);

    let code = unsafe { moselect_model_load(ptr::null(), &mut model) };
    assert_eq!(code, MOSELECT_ERR_NULL_POINTER);
}
