use std::path::PathBuf;

use cwtm::backbone::{Backbone, BackboneConfig, BackboneMode, ContextualEmbeddingDoc, EmbeddingCache, EmbeddingSource};
use cwtm::corpus::{read_jsonl, DocumentRecord};
use cwtm::model::{CwtmModel, LossToggles, TrainConfig};
use cwtm::tensor::Matrix;
use cwtm::CwtmError;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

type Doc = (&'static str, Vec<(&'static str, [f32; 4])>);

fn expected() -> Vec<Doc> {
    vec![
        (
            "a",
            vec![
                ("river", [0.5, 0.25, -0.125, 1.0]),
                ("bank", [0.0, -0.5, 0.75, 0.25]),
                ("water", [1.5, 0.0, 0.125, -0.25]),
            ],
        ),
        ("b", vec![("bank", [0.25, 0.5, 0.5, -1.0]), ("money", [-0.75, 0.25, 0.0, 0.5])]),
        (
            "c",
            vec![
                ("café", [0.125, 0.125, -0.5, 0.0]),
                ("river", [0.375, 0.5, 0.0, 0.75]),
                ("river", [0.25, 0.625, -0.25, 0.5]),
            ],
        ),
        ("d", vec![("money", [-1.0, 0.0, 0.25, 0.375])]),
    ]
}

/// Byte-level encoder written from the file layout, independent of the crate.
fn encode(dim: u32, docs: &[Doc]) -> Vec<u8> {
    let mut out = b"CWEC".to_vec();
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(docs.len() as u64).to_le_bytes());
    for (id, words) in docs {
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        out.extend_from_slice(&(words.len() as u32).to_le_bytes());
        for (w, v) in words {
            out.extend_from_slice(&(w.len() as u16).to_le_bytes());
            out.extend_from_slice(w.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

#[test]
fn reads_the_committed_fixture_exactly() {
    let cache = EmbeddingCache::read(&fixture("tiny.cwec")).unwrap();
    assert_eq!(cache.dim(), 4);
    assert_eq!(cache.len(), 4);
    for (id, words) in expected() {
        let doc = cache.get(id).unwrap();
        assert_eq!(doc.source, EmbeddingSource::Cached);
        assert_eq!(doc.words, words.iter().map(|(w, _)| w.to_string()).collect::<Vec<_>>());
        for (i, (_, v)) in words.iter().enumerate() {
            let row: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            assert_eq!(doc.embeddings.row(i), row.as_slice(), "{id} word {i}");
        }
    }
    assert!(matches!(cache.get("zzz"), Err(CwtmError::CacheMiss(_))));
}

#[test]
fn encoding_matches_the_file_bytes() {
    let bytes = std::fs::read(fixture("tiny.cwec")).unwrap();
    assert_eq!(encode(4, &expected()), bytes);
    let cache = EmbeddingCache::from_bytes(&bytes).unwrap();
    assert_eq!(cache.to_bytes().unwrap(), bytes);
}

#[test]
fn rejects_corrupted_files() {
    let bytes = std::fs::read(fixture("tiny.cwec")).unwrap();
    let mut magic = bytes.clone();
    magic[0] = b'X';
    let mut version = bytes.clone();
    version[4] = 2;
    let mut dim = bytes.clone();
    dim[8..12].copy_from_slice(&0u32.to_le_bytes());
    let mut count = bytes.clone();
    count[12..20].copy_from_slice(&5u64.to_le_bytes());
    let mut trailing = bytes.clone();
    trailing.push(0);
    let mut nan = bytes.clone();
    let first_value = 20 + 2 + 1 + 4 + 2 + "river".len();
    nan[first_value..first_value + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    let mut utf8 = bytes.clone();
    utf8[20 + 2] = 0xff;
    for (what, b) in [
        ("magic", magic),
        ("version", version),
        ("dim", dim),
        ("count", count),
        ("trailing", trailing),
        ("nan", nan),
        ("utf8", utf8),
        ("truncated", bytes[..bytes.len() - 1].to_vec()),
        ("empty", Vec::new()),
    ] {
        assert!(matches!(EmbeddingCache::from_bytes(&b), Err(CwtmError::CacheFormat(_))), "{what}");
    }
}

fn cached_config() -> (TrainConfig, BackboneConfig) {
    (
        TrainConfig {
            num_topics: 3,
            batch_size: 2,
            epochs: 1,
            hidden: 8,
            ..TrainConfig::default()
        },
        BackboneConfig {
            mode: BackboneMode::Cached,
            heads: 2,
            ..BackboneConfig::default()
        },
    )
}

#[test]
fn cached_training_skips_the_mlm_term() {
    let docs = read_jsonl(&fixture("tiny.jsonl")).unwrap();
    let cache = EmbeddingCache::read(&fixture("tiny.cwec")).unwrap();
    let (cfg, bb) = cached_config();
    let mut model = CwtmModel::new(cfg, bb, &docs, Some(cache)).unwrap();
    assert_eq!(model.backbone_config().dim, 4);
    let history = model.train(&docs, true).unwrap();
    let last = history.epochs.last().unwrap();
    assert_eq!(last.epoch, 1);
    assert_eq!(last.steps, 2);
    assert_eq!(last.mlm_skipped_batches, 2);
    let losses = last.losses.unwrap();
    assert_eq!(losses.mlm, 0.0);
    assert!(losses.total().is_finite());
    assert!(last.seconds.is_none());

    let inf = model.infer_document(&docs[2]).unwrap();
    assert_eq!(inf.words.len(), 3);
    assert!((inf.document.theta_d.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn cached_mode_without_the_mlm_term_still_trains() {
    let docs = read_jsonl(&fixture("tiny.jsonl")).unwrap();
    let cache = EmbeddingCache::read(&fixture("tiny.cwec")).unwrap();
    let (mut cfg, bb) = cached_config();
    cfg.loss_toggles = LossToggles {
        mlm: false,
        ..LossToggles::all(true)
    };
    let mut model = CwtmModel::new(cfg, bb, &docs, Some(cache)).unwrap();
    let history = model.train(&docs, true).unwrap();
    assert_eq!(history.epochs.last().unwrap().losses.unwrap().mlm, 0.0);
}

#[test]
fn missing_document_is_a_cache_miss() {
    let docs = read_jsonl(&fixture("tiny.jsonl")).unwrap();
    let cache = EmbeddingCache::read(&fixture("tiny.cwec")).unwrap();
    let (cfg, bb) = cached_config();
    let model = CwtmModel::new(cfg, bb, &docs, Some(cache)).unwrap();
    let err = model.infer_document(&DocumentRecord::new("e", "river")).unwrap_err();
    assert!(matches!(err, CwtmError::CacheMiss(ref id) if id == "e"));
}

#[test]
fn toy_and_cached_backbones_are_interchangeable() {
    let docs: Vec<DocumentRecord> = [
        "river bank water flows past the bank",
        "money in the bank earns interest",
        "the river floods the low bank",
        "interest on money rises",
    ]
    .iter()
    .enumerate()
    .map(|(i, t)| DocumentRecord::new(format!("d{i}"), *t))
    .collect();
    let cfg = TrainConfig {
        num_topics: 4,
        batch_size: 2,
        epochs: 2,
        hidden: 16,
        ..TrainConfig::default()
    };
    let toy_bb = BackboneConfig {
        dim: 8,
        layers: 1,
        heads: 2,
        prompt_len: 2,
        ..BackboneConfig::default()
    };
    let mut toy = CwtmModel::new(cfg.clone(), toy_bb.clone(), &docs, None).unwrap();
    toy.train(&docs, true).unwrap();

    let tokenized: Vec<_> = docs.iter().map(|d| toy.tokenize(d)).collect();
    let exported = toy.backbone().embed(toy.store(), &tokenized).unwrap();
    let docs_f64: Vec<ContextualEmbeddingDoc> = exported
        .iter()
        .map(|d| ContextualEmbeddingDoc::new(d.doc_id.clone(), d.words.clone(), d.embeddings.clone(), EmbeddingSource::Cached).unwrap())
        .collect();
    let cached_bb = BackboneConfig {
        mode: BackboneMode::Cached,
        ..toy_bb
    };
    let in_memory = EmbeddingCache::new(8, docs_f64).unwrap();
    let cached = CwtmModel::from_parts(toy.store().clone(), Backbone::Cached(in_memory.clone()), cached_bb.clone(), cfg.clone()).unwrap();
    for d in &docs {
        let a = toy.infer_document(d).unwrap();
        let b = cached.infer_document(d).unwrap();
        assert_eq!(a.document.theta_d, b.document.theta_d, "{}", d.id);
        assert_eq!(a.weights, b.weights);
    }

    // Through a file the rows are stored as f32.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.cwec");
    in_memory.write(&path).unwrap();
    let on_disk = EmbeddingCache::read(&path).unwrap();
    let from_file = CwtmModel::from_parts(toy.store().clone(), Backbone::Cached(on_disk), cached_bb, cfg).unwrap();
    for (d, e) in docs.iter().zip(&exported) {
        let rounded = Matrix::from_vec(
            e.embeddings.rows(),
            e.embeddings.cols(),
            e.embeddings.data().iter().map(|&x| x as f32 as f64).collect(),
        );
        let emb = ContextualEmbeddingDoc::new(d.id.clone(), e.words.clone(), rounded, EmbeddingSource::Toy).unwrap();
        let expected = toy.infer_embeddings(&emb).unwrap();
        let got = from_file.infer_document(d).unwrap();
        assert_eq!(expected.document.theta_d, got.document.theta_d);
        let drift: f64 = toy
            .infer_document(d)
            .unwrap()
            .document
            .theta_d
            .as_slice()
            .iter()
            .zip(got.document.theta_d.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-4, "{drift}");
    }
}
