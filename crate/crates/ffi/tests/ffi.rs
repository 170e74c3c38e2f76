use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use robayes_ffi::*;

fn last_error() -> String {
    let p = robayes_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

const CHECKPOINT: &str =
    r#"{"d":2,"mu":[0.5,-1.0],"rho":[0.0,1.0],"prior":{"mean":0.0,"variance":1.0},"seed":3}"#;

fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

#[test]
fn posterior_handle_round_trip() {
    let json = CString::new(CHECKPOINT).unwrap();
    let mut h: *mut RobayesPosterior = ptr::null_mut();
    unsafe {
        assert_eq!(
            robayes_posterior_from_json(json.as_ptr(), &mut h),
            RobayesStatus::Ok
        );
        assert_eq!(robayes_posterior_dim(h), 2);
        let mut mu = [0.0; 2];
        let mut sigma = [0.0; 2];
        assert_eq!(
            robayes_posterior_mu(h, mu.as_mut_ptr(), 2),
            RobayesStatus::Ok
        );
        assert_eq!(
            robayes_posterior_sigma(h, sigma.as_mut_ptr(), 2),
            RobayesStatus::Ok
        );
        assert_eq!(mu, [0.5, -1.0]);
        assert!((sigma[0] - softplus(0.0)).abs() < 1e-15);
        assert!((sigma[1] - softplus(1.0)).abs() < 1e-15);

        let eps = [1.0, -2.0];
        let mut th = [0.0; 2];
        assert_eq!(
            robayes_posterior_draw(h, eps.as_ptr(), th.as_mut_ptr(), 2),
            RobayesStatus::Ok
        );
        assert!((th[0] - (0.5 + sigma[0])).abs() < 1e-15);
        assert!((th[1] - (-1.0 - 2.0 * sigma[1])).abs() < 1e-15);

        let mut kl = 0.0;
        assert_eq!(robayes_posterior_kl(h, &mut kl), RobayesStatus::Ok);
        let mut kl2 = 0.0;
        assert_eq!(
            robayes_kl_gaussian(mu.as_ptr(), sigma.as_ptr(), 2, 0.0, 1.0, &mut kl2),
            RobayesStatus::Ok
        );
        assert!((kl - kl2).abs() < 1e-15);

        assert_eq!(
            robayes_posterior_mu(h, mu.as_mut_ptr(), 3),
            RobayesStatus::ShapeMismatch
        );
        assert!(last_error().contains("dimension"));
        robayes_posterior_free(h);
        robayes_posterior_free(ptr::null_mut());
    }
}

#[test]
fn bad_inputs_map_to_codes() {
    unsafe {
        let mut h: *mut RobayesPosterior = ptr::null_mut();
        let bad = CString::new("{not json").unwrap();
        assert_eq!(
            robayes_posterior_from_json(bad.as_ptr(), &mut h),
            RobayesStatus::Config
        );
        assert!(h.is_null());
        assert_eq!(
            robayes_posterior_from_json(ptr::null(), &mut h),
            RobayesStatus::NullPointer
        );
        let missing = CString::new("/nonexistent/checkpoint.json").unwrap();
        assert_eq!(
            robayes_posterior_load(missing.as_ptr(), &mut h),
            RobayesStatus::Io
        );
        assert!(last_error().contains("nonexistent"));

        let mut v = 0.0;
        assert_eq!(
            robayes_t_log_loss(0.5, 1.5, &mut v),
            RobayesStatus::Contract
        );
        assert_eq!(
            robayes_t_log_loss(0.5, 0.5, ptr::null_mut()),
            RobayesStatus::NullPointer
        );
        assert_eq!(robayes_posterior_dim(ptr::null()), 0);
        let sigma = [0.0];
        let mu = [0.0];
        assert_eq!(
            robayes_kl_gaussian(mu.as_ptr(), sigma.as_ptr(), 1, 0.0, 1.0, &mut v),
            RobayesStatus::Contract
        );
    }
}

#[test]
fn metric_wrappers_match_closed_forms() {
    unsafe {
        let mut v = 0.0;
        assert_eq!(robayes_t_log_loss(0.25, 0.5, &mut v), RobayesStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);

        let probs = [0.2, 0.4];
        assert_eq!(
            robayes_mt_loss(probs.as_ptr(), 2, 1, 0.5, &mut v),
            RobayesStatus::Ok
        );
        assert!((v + 2.0 * (0.3f64.sqrt() - 1.0)).abs() < 1e-12);

        // one bin, confidence 0.9, half right
        let p = [0.9, 0.1, 0.9, 0.1];
        let labels = [0usize, 1];
        assert_eq!(
            robayes_ece(p.as_ptr(), 2, 2, labels.as_ptr(), 10, &mut v),
            RobayesStatus::Ok
        );
        assert!((v - 0.4).abs() < 1e-12);
        assert_eq!(
            robayes_accuracy(p.as_ptr(), 2, 2, labels.as_ptr(), &mut v),
            RobayesStatus::Ok
        );
        assert!((v - 0.5).abs() < 1e-12);

        let id = [0.9, 0.8];
        let ood = [0.85, 0.1];
        assert_eq!(
            robayes_auroc(id.as_ptr(), 2, ood.as_ptr(), 2, &mut v),
            RobayesStatus::Ok
        );
        assert!((v - 0.75).abs() < 1e-12);

        let x = [0.0];
        let y = [1.3];
        assert_eq!(
            robayes_mmd(x.as_ptr(), 1, y.as_ptr(), 1, 1, &mut v),
            RobayesStatus::Ok
        );
        let want = 2.0 / (2.0 * std::f64::consts::PI).sqrt() * (1.0 - (-1.3f64 * 1.3 / 2.0).exp());
        assert!((v - want).abs() < 1e-12);

        let d = [(-1.0f64).exp(), (-3.0f64).exp()];
        assert_eq!(robayes_nll(d.as_ptr(), 2, &mut v), RobayesStatus::Ok);
        assert!((v - 2.0).abs() < 1e-12);

        let pred = [3.0, -4.0];
        let tgt = [0.0, 0.0];
        assert_eq!(
            robayes_mse(pred.as_ptr(), tgt.as_ptr(), 2, 1, false, &mut v),
            RobayesStatus::Ok
        );
        assert!((v - 3.5).abs() < 1e-12);
        assert_eq!(
            robayes_mse(pred.as_ptr(), tgt.as_ptr(), 2, 1, true, &mut v),
            RobayesStatus::Ok
        );
        assert!((v - 12.5).abs() < 1e-12);

        assert_eq!(
            robayes_auroc(ptr::null(), 0, ood.as_ptr(), 2, &mut v),
            RobayesStatus::Contract
        );
    }
}

#[test]
fn run_experiment_writes_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{
          "task": "channel-gain-density",
          "data": { "n_train": 10, "n_test": 20 },
          "model": { "family": "gaussian-location" },
          "prior": { "mean": -5.0, "variance": 5.0 },
          "objective": { "m": 2, "t": 0.8, "beta": 1.0, "family": "density" },
          "training": { "learning_rate": 0.05, "steps": 30 },
          "eval": { "seeds": [4] }
        }"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let c = CString::new(cfg.to_str().unwrap()).unwrap();
    let o = CString::new(out.to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(
            robayes_run_experiment(c.as_ptr(), o.as_ptr()),
            RobayesStatus::Ok
        );
        let ck = CString::new(
            out.join("cell-00-seed-4")
                .join("checkpoint.json")
                .to_str()
                .unwrap(),
        )
        .unwrap();
        let mut h: *mut RobayesPosterior = ptr::null_mut();
        assert_eq!(
            robayes_posterior_load(ck.as_ptr(), &mut h),
            RobayesStatus::Ok
        );
        assert_eq!(robayes_posterior_dim(h), 1);
        robayes_posterior_free(h);

        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "{}").unwrap();
        let b = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(
            robayes_run_experiment(b.as_ptr(), o.as_ptr()),
            RobayesStatus::Config
        );
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(robayes_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("robayes.h").is_file(), "header not generated");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"robayes.h\"\n\
         int main(void) {\n\
           double v;\n\
           RobayesPosterior *h = 0;\n\
           RobayesStatus s = robayes_t_log_loss(0.25, 0.5, &v);\n\
           robayes_posterior_free(h);\n\
           return s == ROBAYES_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let out = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg("-I")
            .arg(&include)
            .arg(&src)
            .output()
            .unwrap_or_else(|e| panic!("{compiler} unavailable: {e}"));
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
