use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{GrayImage, RgbImage};
use rxtriage_core::ingest::{Eye, ManifestBand, ManifestLine};
use rxtriage_core::maps;
use rxtriage_core::synthetic::{write_archive, ArchiveSpec};
use rxtriage_core::triage::ScoreDb;
use rxtriage_core::BackgroundModel;

fn rxtriage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rxtriage"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn rxtriage")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn small_archive(dir: &Path, n: usize, cal: Vec<usize>) -> PathBuf {
    let spec = ArchiveSpec {
        n_sequences: n,
        width: 20,
        height: 12,
        cal_target: cal,
        ..ArchiveSpec::default()
    };
    write_archive(&spec, dir).unwrap()
}

/// A sequence whose six bands are filled by `f(band, pixel)`.
fn write_flat_sequence(root: &Path, id: &str, w: u32, h: u32, f: impl Fn(usize, usize) -> u8) -> String {
    let dir = root.join(id);
    std::fs::create_dir_all(&dir).unwrap();
    RgbImage::from_pixel(w, h, image::Rgb([200, 200, 200]))
        .save(dir.join("rgb.png"))
        .unwrap();
    for k in 0..6 {
        let plane: Vec<u8> = (0..(w * h) as usize).map(|px| f(k, px)).collect();
        GrayImage::from_raw(w, h, plane)
            .unwrap()
            .save(dir.join(format!("L{}.png", k + 1)))
            .unwrap();
    }
    serde_json::to_string(&ManifestLine {
        sequence_id: id.into(),
        eye: Eye::Right,
        sol: 1,
        rgb: format!("{id}/rgb.png"),
        bands: (0..6)
            .map(|k| ManifestBand {
                filter: format!("R{}", k + 1),
                wavelength_nm: 440.0 + 100.0 * k as f64,
                path: format!("{id}/L{}.png", k + 1),
            })
            .collect(),
        cal_target: false,
    })
    .unwrap()
}

fn fit_score(dir: &Path, manifest: &Path) -> (PathBuf, PathBuf) {
    let model = dir.join("model.json");
    let scores = dir.join("scores.jsonl");
    let out = rxtriage(&["fit", "--manifest", p(manifest), "--out", p(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = rxtriage(&[
        "score",
        "--model",
        p(&model),
        "--manifest",
        p(manifest),
        "--scores-out",
        p(&scores),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (model, scores)
}

#[test]
fn fit_counts_every_non_calibration_pixel() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_archive(dir.path(), 3, vec![2]);
    let model_path = dir.path().join("m.json");
    let out = rxtriage(&["fit", "--manifest", p(&manifest), "--out", p(&model_path)]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("training_pixel_count\t480\n"), "{text}");
    let model = BackgroundModel::load(&model_path).unwrap();
    assert_eq!(model.training_pixel_count(), 2 * 20 * 12);
    assert!(!model.brightness_corrected());
    assert_eq!(model.ridge_lambda(), 1e-6);
    assert!(text.contains(&format!("fingerprint\t{}", model.fingerprint())));
}

#[test]
fn singular_data_without_ridge_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let line = write_flat_sequence(dir.path(), "flat", 4, 4, |_, _| 77);
    let manifest = dir.path().join("manifest.jsonl");
    std::fs::write(&manifest, line).unwrap();
    let out = rxtriage(&[
        "fit",
        "--manifest",
        p(&manifest),
        "--out",
        p(&dir.path().join("m.json")),
        "--lambda",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not invertible"));
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn missing_manifest_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rxtriage(&[
        "fit",
        "--manifest",
        p(&dir.path().join("nope.jsonl")),
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn brightness_flag_recorded_and_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_archive(dir.path(), 2, vec![]);
    let model_path = dir.path().join("m.json");
    let out = rxtriage(&[
        "fit",
        "--manifest",
        p(&manifest),
        "--out",
        p(&model_path),
        "--brightness-correct",
    ]);
    assert!(out.status.success());
    assert!(BackgroundModel::load(&model_path).unwrap().brightness_corrected());

    // scoring loads cubes in the model's own mode
    let scores = dir.path().join("s.jsonl");
    let out = rxtriage(&[
        "score",
        "--model",
        p(&model_path),
        "--manifest",
        p(&manifest),
        "--scores-out",
        p(&scores),
    ]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn local_per_image_writes_one_model_per_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_archive(dir.path(), 3, vec![1]);
    let out_dir = dir.path().join("local");
    let out = rxtriage(&[
        "fit",
        "--manifest",
        p(&manifest),
        "--out",
        p(&out_dir),
        "--local-per-image",
    ]);
    assert!(out.status.success());
    for id in ["mcam10000", "mcam10002"] {
        let m = BackgroundModel::load(&out_dir.join(format!("{id}.json"))).unwrap();
        assert_eq!(m.training_pixel_count(), 240);
    }
    assert!(!out_dir.join("mcam10001.json").exists());
}

#[test]
fn score_empty_manifest_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_archive(dir.path(), 2, vec![]);
    let (model, _) = fit_score(dir.path(), &manifest);
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = rxtriage(&[
        "score",
        "--model",
        p(&model),
        "--manifest",
        p(&empty),
        "--scores-out",
        p(&dir.path().join("x.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn score_skips_broken_sequences_with_partial_exit() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_archive(dir.path(), 3, vec![]);
    let (model, scores) = fit_score(dir.path(), &manifest);
    std::fs::write(dir.path().join("mcam10001/L3.png"), b"garbage").unwrap();
    let out = rxtriage(&[
        "score",
        "--model",
        p(&model),
        "--manifest",
        p(&manifest),
        "--scores-out",
        p(&scores),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).contains("scored\t2\nskipped\t1\n"));
    let db = ScoreDb::load(&scores).unwrap();
    let mut ids: Vec<_> = db.scores.iter().map(|s| s.sequence_id.as_str()).collect();
    ids.sort();
    assert_eq!(ids, ["mcam10000", "mcam10002"]);
}

#[test]
fn maps_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_archive(dir.path(), 2, vec![]);
    let (model_path, _) = fit_score(dir.path(), &manifest);
    let maps_dir = dir.path().join("maps");
    let out = rxtriage(&[
        "score",
        "--model",
        p(&model_path),
        "--manifest",
        p(&manifest),
        "--scores-out",
        p(&dir.path().join("s2.jsonl")),
        "--maps-dir",
        p(&maps_dir),
    ]);
    assert!(out.status.success());

    let model = BackgroundModel::load(&model_path).unwrap();
    let m = rxtriage_core::ingest::load_manifest(&manifest).unwrap();
    for rec in &m.entries {
        let want = rxtriage_core::pipeline::score_sequence(rec, &model, "").unwrap();
        let got = maps::read_map(&maps_dir.join(maps::map_file_name(&rec.sequence_id))).unwrap();
        assert_eq!((got.width, got.height), (20, 12));
        assert!(got
            .scores
            .iter()
            .zip(&want.scores)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn rescore_keeps_dispositions() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_archive(dir.path(), 2, vec![]);
    let (model, scores) = fit_score(dir.path(), &manifest);
    let mut db = ScoreDb::load(&scores).unwrap();
    let d = rxtriage_core::triage::Disposition::new(
        "mcam10001".to_string(),
        rxtriage_core::triage::DispositionState::Flagged,
        Some("keep".into()),
        chrono::Utc::now(),
    )
    .unwrap();
    db.upsert_disposition(&scores, d).unwrap();
    let out = rxtriage(&[
        "score",
        "--model",
        p(&model),
        "--manifest",
        p(&manifest),
        "--scores-out",
        p(&scores),
    ]);
    assert!(out.status.success());
    let db = ScoreDb::load(&scores).unwrap();
    assert_eq!(db.disposition("mcam10001").unwrap().note.as_deref(), Some("keep"));
    assert_eq!(db.scores.len(), 2);
}

#[test]
fn rank_top_and_bottom() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_archive(dir.path(), 25, vec![]);
    let (_, scores) = fit_score(dir.path(), &manifest);

    let full = stdout(&rxtriage(&["rank", "--scores", p(&scores)]));
    let full_rows: Vec<&str> = full.lines().skip(1).collect();
    assert_eq!(full.lines().next(), Some("sequence_id,rank,key,value"));
    assert_eq!(full_rows.len(), 25);

    let out = rxtriage(&["rank", "--scores", p(&scores), "--top", "10", "--bottom", "10"]);
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 20);
    assert_eq!(rows[..10], full_rows[..10]);
    assert_eq!(rows[10..], full_rows[15..]);

    let overlapping = stdout(&rxtriage(&[
        "rank",
        "--scores",
        p(&scores),
        "--top",
        "20",
        "--bottom",
        "20",
    ]));
    assert_eq!(overlapping.lines().count(), 26);

    let values: Vec<f64> = full_rows
        .iter()
        .map(|r| r.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[0] >= w[1]));
    let asc = stdout(&rxtriage(&[
        "rank",
        "--scores",
        p(&scores),
        "--key",
        "mean",
        "--order",
        "asc",
    ]));
    assert!(asc.lines().skip(1).all(|l| l.contains(",mean,")));

    let bad = rxtriage(&["rank", "--scores", p(&scores), "--key", "median"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn spearman_of_a_ranking_with_itself_and_its_reverse() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_archive(dir.path(), 6, vec![]);
    let (_, scores) = fit_score(dir.path(), &manifest);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(rxtriage(&["rank", "--scores", p(&scores), "--csv", p(&a)])
        .status
        .success());
    assert!(
        rxtriage(&["rank", "--scores", p(&scores), "--order", "asc", "--csv", p(&b)])
            .status
            .success()
    );

    assert_eq!(
        stdout(&rxtriage(&["spearman", "--a", p(&a), "--b", p(&a)])),
        "1.000000\n"
    );
    assert_eq!(
        stdout(&rxtriage(&["spearman", "--a", p(&a), "--b", p(&b)])),
        "-1.000000\n"
    );

    let other = dir.path().join("other.csv");
    std::fs::write(&other, "sequence_id,rank,key,value\nzzz,1,max,1.0\n").unwrap();
    assert_eq!(
        rxtriage(&["spearman", "--a", p(&a), "--b", p(&other)]).status.code(),
        Some(2)
    );
}

#[test]
fn render_global_shares_one_scale() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_archive(dir.path(), 3, vec![]);
    let (model, _) = fit_score(dir.path(), &manifest);
    let render = |id: &str, norm: &str| {
        let out_path = dir.path().join(format!("{id}-{norm}.png"));
        let out = rxtriage(&[
            "render",
            "--model",
            p(&model),
            "--manifest",
            p(&manifest),
            "--sequence",
            id,
            "--norm",
            norm,
            "--out",
            p(&out_path),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        image::open(&out_path).unwrap().to_rgb8()
    };
    let model = BackgroundModel::load(&model).unwrap();
    let pct = *model.score_percentiles();
    let cm = rxtriage_core::render::ColorMap::default();
    let m = rxtriage_core::ingest::load_manifest(&manifest).unwrap();
    for id in ["mcam10000", "mcam10001"] {
        let img = render(id, "global");
        let map = rxtriage_core::pipeline::score_sequence(m.get(id).unwrap(), &model, "").unwrap();
        // every pixel colored by the archive-wide stretch, independent of the map's own range
        for (i, px) in img.pixels().enumerate() {
            let t = ((map.scores[i] - pct.p01) / (pct.p999 - pct.p01)).clamp(0.0, 1.0);
            assert_eq!(px.0, cm.color_at(t));
        }
        let local = render(id, "local");
        assert_eq!(local.dimensions(), (20, 12));
        assert!(local.pixels().any(|px| px.0 == [252, 255, 164]));
        assert!(local.pixels().any(|px| px.0 == [0, 0, 4]));
    }
}

#[test]
fn render_unknown_sequence_or_bad_colormap() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_archive(dir.path(), 2, vec![]);
    let (model, _) = fit_score(dir.path(), &manifest);
    let base = ["render", "--model", p(&model), "--manifest", p(&manifest), "--out"];
    let out_path = dir.path().join("x.png");
    let mut args = base.to_vec();
    args.extend([p(&out_path), "--sequence", "mcam99999"]);
    assert_eq!(rxtriage(&args).status.code(), Some(2));

    let cm = dir.path().join("cm.json");
    std::fs::write(&cm, r#"{"stops":[{"position":0.5,"color":[0,0,0]}]}"#).unwrap();
    let mut args = base.to_vec();
    args.extend([p(&out_path), "--sequence", "mcam10000", "--colormap", p(&cm)]);
    assert_eq!(rxtriage(&args).status.code(), Some(2));

    std::fs::write(
        &cm,
        r#"{"stops":[{"position":0.0,"color":[0,0,0]},{"position":1.0,"color":[255,0,0]}]}"#,
    )
    .unwrap();
    assert_eq!(rxtriage(&args).status.code(), Some(0));
    let img = image::open(&out_path).unwrap().to_rgb8();
    assert!(img.pixels().all(|px| px.0[1] == 0 && px.0[2] == 0));
}

#[test]
fn training_sequence_scores_average_band_count() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_archive(dir.path(), 1, vec![]);
    let model = dir.path().join("m.json");
    assert!(
        rxtriage(&["fit", "--manifest", p(&manifest), "--out", p(&model), "--lambda", "0"])
            .status
            .success()
    );
    let scores = dir.path().join("s.jsonl");
    assert!(rxtriage(&[
        "score",
        "--model",
        p(&model),
        "--manifest",
        p(&manifest),
        "--scores-out",
        p(&scores)
    ])
    .status
    .success());
    let db = ScoreDb::load(&scores).unwrap();
    assert!((db.scores[0].mean - 6.0).abs() < 1e-6 * 6.0, "{}", db.scores[0].mean);
}
