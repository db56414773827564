use std::fs;
use std::process::ExitCode;

use rayon::prelude::*;
use rxtriage_core::ingest::{self, ArchiveManifest, NARROW_BANDS};
use rxtriage_core::maps;
use rxtriage_core::pipeline::{self, PipelineError};
use rxtriage_core::render::{ColorMap, RenderError};
use rxtriage_core::triage::{self, ScoreDb, SequenceScore};
use rxtriage_core::{fit_local, write_atomic, BackgroundModel};
use rxtriage_service::ServiceConfig;

use crate::error::CliError;
use crate::{FitArgs, RankArgs, RenderArgs, ScoreArgs, ServeArgs, SpearmanArgs};

type CmdResult = Result<ExitCode, CliError>;

/// Load a manifest and drop calibration-target sequences.
fn load_archive(path: &std::path::Path) -> Result<ArchiveManifest, CliError> {
    let manifest = ingest::load_manifest(path)?;
    let kept = ingest::filter_archive(&manifest);
    let dropped = manifest.len() - kept.len();
    if dropped > 0 {
        log::info!("excluded {dropped} calibration-target sequence(s)");
    }
    Ok(kept)
}

pub fn fit(args: &FitArgs) -> CmdResult {
    if !(args.lambda.is_finite() && args.lambda >= 0.0) {
        return Err(CliError::validation(format!(
            "--lambda must be finite and non-negative, got {}",
            args.lambda
        )));
    }
    let manifest = load_archive(&args.manifest)?;
    log::info!("fitting over {} sequence(s)", manifest.len());

    if args.local_per_image {
        fs::create_dir_all(&args.out).map_err(|e| CliError::io(format!("{}: {e}", args.out.display())))?;
        for record in &manifest.entries {
            let cube = ingest::load_cube(record, args.brightness_correct)?;
            let model = fit_local(&cube, args.lambda)
                .map_err(|e| CliError::validation(format!("{}: {e}", record.sequence_id)))?;
            let path = args.out.join(format!("{}.json", record.sequence_id));
            model.save(&path)?;
            println!(
                "{}\t{}\t{}",
                record.sequence_id,
                model.training_pixel_count(),
                model.fingerprint()
            );
        }
        return Ok(ExitCode::SUCCESS);
    }

    let model = pipeline::fit_archive(&manifest, args.brightness_correct, args.lambda)?;
    model.save(&args.out)?;
    println!("training_pixel_count\t{}", model.training_pixel_count());
    println!("n_bands\t{}", model.n_bands());
    println!("ridge_lambda\t{}", model.ridge_lambda());
    println!("brightness_corrected\t{}", model.brightness_corrected());
    println!("fingerprint\t{}", model.fingerprint());
    Ok(ExitCode::SUCCESS)
}

pub fn score(args: &ScoreArgs) -> CmdResult {
    let model = BackgroundModel::load(&args.model)?;
    if model.n_bands() != NARROW_BANDS {
        return Err(CliError::validation(format!(
            "model has {} bands; sequences carry {NARROW_BANDS}",
            model.n_bands()
        )));
    }
    let manifest = load_archive(&args.manifest)?;
    if manifest.is_empty() {
        return Err(CliError::validation("manifest has no sequences to score"));
    }
    if let Some(dir) = &args.maps_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    }
    let fingerprint = model.fingerprint();

    enum Failure {
        Skipped(PipelineError),
        Io(String),
    }

    let results: Vec<Result<SequenceScore, Failure>> = manifest
        .entries
        .par_iter()
        .map(|record| {
            let (map, score) = pipeline::score_and_aggregate(record, &model, &fingerprint).map_err(Failure::Skipped)?;
            if let Some(dir) = &args.maps_dir {
                let path = dir.join(maps::map_file_name(&record.sequence_id));
                maps::write_map(&path, &map).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            }
            Ok(score)
        })
        .collect();

    let mut scores = Vec::with_capacity(results.len());
    let mut skipped = 0usize;
    for (record, result) in manifest.entries.iter().zip(results) {
        match result {
            Ok(s) => scores.push(s),
            Err(Failure::Skipped(e)) => {
                skipped += 1;
                log::warn!("skipped {}: {e}", record.sequence_id);
            }
            Err(Failure::Io(msg)) => return Err(CliError::io(msg)),
        }
    }

    // Existing dispositions survive a rescore.
    let mut db = ScoreDb::load(&args.scores_out)?;
    let scored = scores.len();
    db.set_scores(scores);
    db.persist(&args.scores_out)?;

    println!("scored\t{scored}");
    println!("skipped\t{skipped}");
    println!("fingerprint\t{fingerprint}");
    if skipped > 0 {
        log::warn!("{skipped} of {} sequence(s) skipped", manifest.len());
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn rank(args: &RankArgs) -> CmdResult {
    let db = ScoreDb::load(&args.scores)?;
    let ranked = triage::rank(&db.scores, args.key, args.order)?;
    let positioned: Vec<(usize, &SequenceScore)> = ranked.iter().enumerate().map(|(i, s)| (i + 1, s)).collect();

    let rows: Vec<(usize, &SequenceScore)> = if args.top.is_none() && args.bottom.is_none() {
        positioned
    } else {
        let n = positioned.len();
        let top = args.top.unwrap_or(0).min(n);
        let bottom_start = n - args.bottom.unwrap_or(0).min(n);
        positioned
            .into_iter()
            .enumerate()
            .filter(|(i, _)| *i < top || *i >= bottom_start)
            .map(|(_, row)| row)
            .collect()
    };

    let mut buf = Vec::new();
    triage::write_ranking_csv(&mut buf, &rows, args.key)?;
    if let Some(path) = &args.csv {
        write_atomic(path, &buf).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    }
    print!("{}", String::from_utf8(buf).expect("csv is utf-8"));
    Ok(ExitCode::SUCCESS)
}

pub fn render(args: &RenderArgs) -> CmdResult {
    let model = BackgroundModel::load(&args.model)?;
    let manifest = ingest::load_manifest(&args.manifest)?;
    let record = manifest
        .get(&args.sequence)
        .ok_or_else(|| CliError::validation(format!("unknown sequence {}", args.sequence)))?;
    let colormap = match &args.colormap {
        Some(path) => ColorMap::from_file(path).map_err(|e| match e {
            RenderError::Io(_) => CliError::io(format!("{}: {e}", path.display())),
            other => CliError::validation(other.to_string()),
        })?,
        None => ColorMap::default(),
    };
    let png = pipeline::render_sequence(record, &model, &model.fingerprint(), args.norm, &colormap)?;
    write_atomic(&args.out, &png).map_err(|e| CliError::io(format!("{}: {e}", args.out.display())))?;
    println!("{}\t{}\t{}", record.sequence_id, args.norm, args.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn spearman(args: &SpearmanArgs) -> CmdResult {
    let a = triage::read_ranking_csv(&args.a)?;
    let b = triage::read_ranking_csv(&args.b)?;
    let rho = triage::spearman(&a, &b)?;
    println!("{rho:.6}");
    Ok(ExitCode::SUCCESS)
}

pub fn serve(args: &ServeArgs) -> CmdResult {
    let config = ServiceConfig {
        port: args.port,
        model_path: args.model.clone(),
        manifest_path: args.manifest.clone(),
        score_db_path: args.scores.clone(),
        static_dir: args.static_dir.clone(),
        cache_capacity: args.cache_capacity,
        cors_origin: args.cors_origin.clone(),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io(e.to_string()))?;
    runtime.block_on(rxtriage_service::serve(config)).map_err(|e| match e {
        rxtriage_service::StateError::Io(io) => CliError::io(io.to_string()),
        other => CliError::validation(other.to_string()),
    })?;
    Ok(ExitCode::SUCCESS)
}
