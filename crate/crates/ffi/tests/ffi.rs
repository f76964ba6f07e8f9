use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use cwtm::backbone::{BackboneConfig, BackboneMode, ContextualEmbeddingDoc, EmbeddingCache, EmbeddingSource};
use cwtm::corpus::DocumentRecord;
use cwtm::geometry::{sample_dirichlet, DirichletPrior};
use cwtm::model::{CwtmModel as Model, TrainConfig};
use cwtm::tensor::Matrix;
use cwtm_ffi::*;

fn corpus() -> Vec<DocumentRecord> {
    (0..12)
        .map(|i| {
            let words = if i % 2 == 0 { "sun moon star sky moon" } else { "rock sand stone clay sand" };
            DocumentRecord::new(format!("d{i}"), words)
        })
        .collect()
}

fn toy_checkpoint(dir: &Path) -> (Model, CString) {
    let bb = BackboneConfig {
        dim: 8,
        layers: 1,
        heads: 2,
        prompt_len: 2,
        ..BackboneConfig::default()
    };
    let cfg = TrainConfig {
        num_topics: 3,
        hidden: 8,
        ..TrainConfig::default()
    };
    let model = Model::new(cfg, bb, &corpus(), None).unwrap();
    let path = dir.join("toy.ckpt");
    model.save(&path).unwrap();
    (model, CString::new(path.to_str().unwrap()).unwrap())
}

fn last_error() -> String {
    let p = cwtm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn toy_model_matches_the_engine() {
    let dir = tempfile::tempdir().unwrap();
    let (model, path) = toy_checkpoint(dir.path());
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(cwtm_model_load(path.as_ptr(), ptr::null(), &mut handle), CwtmStatus::Ok);
        assert_eq!(cwtm_model_num_topics(handle), 3);
        assert_eq!(cwtm_model_dim(handle), 8);
        let text = CString::new("moon sky unseenword").unwrap();
        let mut theta = [0.0; 3];
        assert_eq!(cwtm_infer_text(handle, text.as_ptr(), theta.as_mut_ptr(), 3), CwtmStatus::Ok);
        let want = model.infer_document(&DocumentRecord::new("x", "moon sky unseenword")).unwrap();
        assert_eq!(&theta, want.document.theta_d.as_slice());

        let mut small = [0.0; 2];
        assert_eq!(cwtm_infer_text(handle, text.as_ptr(), small.as_mut_ptr(), 2), CwtmStatus::BufferTooSmall);
        assert!(last_error().contains("3 needed"));
        let empty = CString::new("  ").unwrap();
        assert_eq!(cwtm_infer_text(handle, empty.as_ptr(), theta.as_mut_ptr(), 3), CwtmStatus::Data);

        let rows: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(cwtm_infer_embeddings(handle, rows.as_ptr(), 2, 8, theta.as_mut_ptr(), 3), CwtmStatus::Ok);
        assert!((theta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(cwtm_infer_embeddings(handle, rows.as_ptr(), 4, 4, theta.as_mut_ptr(), 3), CwtmStatus::InvalidArgument);
        cwtm_model_free(handle);
    }
}

#[test]
fn cached_model_needs_its_cache() {
    let dir = tempfile::tempdir().unwrap();
    let docs = vec![
        ContextualEmbeddingDoc::new("a", vec!["x".into(), "y".into()], Matrix::from_vec(2, 4, vec![0.1, 0.2, 0.3, 0.4, -0.1, 0.0, 0.5, 0.2]), EmbeddingSource::Cached).unwrap(),
        ContextualEmbeddingDoc::new("b", vec!["y".into()], Matrix::from_vec(1, 4, vec![0.3, -0.3, 0.1, 0.0]), EmbeddingSource::Cached).unwrap(),
    ];
    let cache = EmbeddingCache::new(4, docs).unwrap();
    let cache_path = dir.path().join("c.cwec");
    cache.write(&cache_path).unwrap();
    let bb = BackboneConfig {
        mode: BackboneMode::Cached,
        heads: 2,
        ..BackboneConfig::default()
    };
    let cfg = TrainConfig {
        num_topics: 2,
        hidden: 4,
        ..TrainConfig::default()
    };
    let records = vec![DocumentRecord::new("a", "x y"), DocumentRecord::new("b", "y")];
    let model = Model::new(cfg, bb, &records, Some(cache)).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    model.save(&ckpt).unwrap();
    let ckpt = CString::new(ckpt.to_str().unwrap()).unwrap();
    let cache_c = CString::new(cache_path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(cwtm_model_load(ckpt.as_ptr(), ptr::null(), &mut handle), CwtmStatus::InvalidArgument);
        assert!(handle.is_null());
        assert_eq!(cwtm_model_load(ckpt.as_ptr(), cache_c.as_ptr(), &mut handle), CwtmStatus::Ok);
        let rows = [0.1, 0.2, 0.3, 0.4];
        let mut theta = [0.0; 2];
        assert_eq!(cwtm_infer_embeddings(handle, rows.as_ptr(), 1, 4, theta.as_mut_ptr(), 2), CwtmStatus::Ok);
        let want = model
            .infer_embeddings(&ContextualEmbeddingDoc::new("q", vec!["x".into()], Matrix::from_vec(1, 4, rows.to_vec()), EmbeddingSource::Cached).unwrap())
            .unwrap();
        assert_eq!(&theta, want.document.theta_d.as_slice());
        cwtm_model_free(handle);
    }
}

#[test]
fn load_errors() {
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(cwtm_model_load(missing.as_ptr(), ptr::null(), &mut handle), CwtmStatus::Io);
        assert!(last_error().contains("/nonexistent/model.ckpt"));
        assert_eq!(cwtm_model_load(ptr::null(), ptr::null(), &mut handle), CwtmStatus::NullArgument);
        assert_eq!(cwtm_model_load(missing.as_ptr(), ptr::null(), ptr::null_mut()), CwtmStatus::NullArgument);
        assert_eq!(cwtm_model_num_topics(ptr::null()), 0);
        cwtm_model_free(ptr::null_mut());
        let mut theta = [0.0; 3];
        let text = CString::new("a").unwrap();
        assert_eq!(cwtm_infer_text(ptr::null(), text.as_ptr(), theta.as_mut_ptr(), 3), CwtmStatus::NullArgument);
    }
}

#[test]
fn geometry_entry_points() {
    let mut out = 0.0;
    unsafe {
        let (a, b) = ([1.0, 0.0], [0.0, 1.0]);
        assert_eq!(cwtm_idk_kernel(a.as_ptr(), b.as_ptr(), 2, &mut out), CwtmStatus::Ok);
        let want = (-(std::f64::consts::FRAC_PI_2).powi(2)).exp();
        assert!((out - want).abs() < 1e-12);
        assert_eq!(cwtm_idk_kernel(a.as_ptr(), a.as_ptr(), 2, &mut out), CwtmStatus::Ok);
        assert!((out - 1.0).abs() < 1e-9);
        let bad = [0.7, 0.7];
        assert_eq!(cwtm_idk_kernel(a.as_ptr(), bad.as_ptr(), 2, &mut out), CwtmStatus::InvalidArgument);

        let q = [1.0, 0.0, 0.0, 1.0];
        let p = [0.5, 0.5, 0.5, 0.5];
        assert_eq!(cwtm_mmd_idk(q.as_ptr(), p.as_ptr(), 2, 2, &mut out), CwtmStatus::Ok);
        let kqq = want;
        let kqp = (-(std::f64::consts::FRAC_PI_4).powi(2)).exp();
        assert!((out - (kqq + 1.0 - 2.0 * kqp)).abs() < 1e-9, "{out}");
        let bad_q = [1.0, 0.5, 0.0, 1.0];
        assert_eq!(cwtm_mmd_idk(bad_q.as_ptr(), p.as_ptr(), 2, 2, &mut out), CwtmStatus::InvalidArgument);
        assert_eq!(cwtm_mmd_idk(q.as_ptr(), p.as_ptr(), 1, 4, &mut out), CwtmStatus::InvalidArgument);

        let mut draws = vec![0.0; 12];
        assert_eq!(cwtm_sample_dirichlet(0.1, 3, 4, 11, draws.as_mut_ptr(), 12), CwtmStatus::Ok);
        let want = sample_dirichlet(&DirichletPrior::new(0.1, 3).unwrap(), 4, 11).unwrap().to_flat();
        assert_eq!(draws, want);
        for row in draws.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(cwtm_sample_dirichlet(0.1, 3, 4, 11, draws.as_mut_ptr(), 11), CwtmStatus::BufferTooSmall);
        assert_eq!(cwtm_sample_dirichlet(-1.0, 3, 4, 11, draws.as_mut_ptr(), 12), CwtmStatus::InvalidArgument);
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cwtm.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["cwtm_model_load", "cwtm_model_free", "cwtm_infer_text", "cwtm_infer_embeddings", "cwtm_idk_kernel", "cwtm_mmd_idk", "cwtm_sample_dirichlet", "cwtm_last_error", "CWTM_STATUS_OK"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(status) = std::process::Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"]).arg(&header).status() else {
        eprintln!("no C compiler found; skipped syntax check");
        return;
    };
    assert!(status.success());
}
