use ctxclip::scoring::{build_anchors, score_all};
use ctxclip::schema::{render_manifest, PromptManifest};
use ctxclip::store::{load_normalized, load_raw, save_bundle};
use ctxclip::{AttributeSchema, Error};

fn write_bundle(dir: &std::path::Path, manifest: &str, rows: &[[f32; 3]]) {
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("manifest.json"), manifest).unwrap();
    let bytes: Vec<u8> = rows.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(dir.join("embeddings.bin"), bytes).unwrap();
}

fn schema() -> AttributeSchema {
    serde_json::from_str(
        r#"{"base_template": "a photo of a {class}", "classes": ["dog", "cat"],
            "attributes": [{"name": "orientation", "values": [
                {"name": "upright", "descriptions": ["upright"]},
                {"name": "upside-down", "descriptions": ["upside-down", "the photo is upside-down"]}]}]}"#,
    )
    .unwrap()
}

#[test]
fn exporter_style_bundle_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("images");
    write_bundle(
        &src,
        r#"{"dtype": "f32", "dim": 3, "count": 2, "ids": ["a.jpg", "b.jpg"],
            "labels": [1, null], "groups": [{"orientation": "upright"}, null],
            "encoder": "ViT-B/16", "normalized": false}"#,
        &[[3.0, 4.0, 0.0], [0.0, 0.0, 2.0]],
    );
    let raw = load_raw(&src).unwrap();
    assert_eq!(raw.matrix.row(0), [3.0, 4.0, 0.0]);
    assert_eq!(raw.metadata.label(0), Some(1));
    assert_eq!(raw.metadata.label(1), None);
    assert_eq!(raw.metadata.group(0).unwrap()["orientation"], "upright");
    assert_eq!(raw.extra["encoder"], "ViT-B/16");

    let normalized = load_normalized(&src).unwrap();
    assert_eq!(normalized.matrix.row(0), [0.6, 0.8, 0.0]);

    let copy = dir.path().join("copy");
    save_bundle(&raw, &copy).unwrap();
    let again = load_raw(&copy).unwrap();
    assert_eq!(again.matrix.data(), raw.matrix.data());
    assert_eq!(again.extra, raw.extra);
    let copy2 = dir.path().join("copy2");
    save_bundle(&again, &copy2).unwrap();
    for f in ["manifest.json", "embeddings.bin"] {
        assert_eq!(std::fs::read(copy.join(f)).unwrap(), std::fs::read(copy2.join(f)).unwrap());
    }
}

#[test]
fn truncated_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_bundle(dir.path(), r#"{"dtype": "f32", "dim": 3, "count": 2, "ids": ["a", "b"]}"#, &[[1.0, 0.0, 0.0]]);
    let err = load_raw(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Store { .. }), "{err}");
    assert!(err.to_string().contains("expected 24 bytes"), "{err}");
}

#[test]
fn zero_row_is_rejected_on_normalization() {
    let dir = tempfile::tempdir().unwrap();
    write_bundle(dir.path(), r#"{"dtype": "f32", "dim": 3, "count": 1, "ids": ["z"]}"#, &[[0.0, 0.0, 0.0]]);
    assert!(load_raw(dir.path()).is_ok());
    assert!(load_normalized(dir.path()).is_err());
}

#[test]
fn manifest_jsonl_keys_text_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let schema = schema();
    let manifest = render_manifest(&schema).unwrap();
    let path = dir.path().join("prompts.jsonl");
    manifest.write_jsonl(&path).unwrap();
    let read = PromptManifest::read_jsonl(&path).unwrap();
    assert_eq!(read, manifest);
    let ids: Vec<&str> = read.entries.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, ["0:0:0", "0:1:0", "0:1:1", "1:0:0", "1:1:0", "1:1:1"]);

    // An exporter embeds every line; rows may come back in any order.
    let vecs = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.6, 0.8], [0.0, 0.0, 1.0], [0.6, 0.8, 0.0], [0.8, 0.6, 0.0]];
    let ids_json: Vec<String> = ids.iter().rev().map(|i| format!("\"{i}\"")).collect();
    let rows: Vec<[f32; 3]> = vecs.iter().rev().copied().collect();
    let texts_dir = dir.path().join("texts");
    write_bundle(
        &texts_dir,
        &format!(r#"{{"dtype": "f32", "dim": 3, "count": 6, "ids": [{}]}}"#, ids_json.join(", ")),
        &rows,
    );
    let texts = load_normalized(&texts_dir).unwrap();
    let anchors = build_anchors(&texts.matrix, &read, &schema, 1000).unwrap();
    assert_eq!(anchors.anchor(0, 0), [1.0, 0.0, 0.0]);
    // Mean of (0, 1, 0) and (0, 0.6, 0.8) is (0, 0.8, 0.4), then renormalized.
    let a = anchors.anchor(0, 1);
    let s = 0.8f32.hypot(0.4);
    assert!(a[0].abs() < 1e-7 && (a[1] - 0.8 / s).abs() < 1e-6 && (a[2] - 0.4 / s).abs() < 1e-6, "{a:?}");

    let images_dir = dir.path().join("images");
    write_bundle(&images_dir, r#"{"dtype": "f32", "dim": 3, "count": 1, "ids": ["x"]}"#, &[[0.0, 0.0, 5.0]]);
    let images = load_normalized(&images_dir).unwrap();
    let rows = score_all(&images.matrix, &anchors).unwrap();
    assert!((rows[0].get(1, 0) - 1.0).abs() < 1e-9);
}

#[test]
fn missing_text_row_names_the_id() {
    let schema = schema();
    let manifest = render_manifest(&schema).unwrap();
    let texts = ctxclip::EmbeddingMatrix::new(3, vec!["0:0:0".into()], vec![1.0, 0.0, 0.0]).unwrap();
    let err = build_anchors(&texts, &manifest, &schema, 1000).unwrap_err();
    assert!(err.to_string().contains("0:1:0"), "{err}");
}
