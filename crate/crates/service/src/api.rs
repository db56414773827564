use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, Method};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use rxtriage_core::ingest::SequenceRecord;
use rxtriage_core::pipeline;
use rxtriage_core::render::NormalizationMode;
use rxtriage_core::triage::{self, Disposition, DispositionState, RankKey, SequenceScore, SortOrder, MAX_NOTE_CHARS};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

use crate::error::ApiError;
use crate::state::AppState;
use crate::API_VERSION;

type Shared = Arc<AppState>;

pub fn router(state: Shared, static_dir: Option<&Path>, cors_origin: Option<&str>) -> Router {
    let origin = match cors_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);

    let api = Router::new()
        .route("/api/model", get(model_info))
        .route("/api/sequences", get(list_sequences))
        .route("/api/sequences/{id}", get(sequence_detail))
        .route("/api/sequences/{id}/heatmap.png", get(heatmap))
        .route("/api/sequences/{id}/rgb.png", get(rgb_product))
        .route("/api/sequences/{id}/band/{file}", get(band_product))
        .route("/api/sequences/{id}/disposition", post(set_disposition))
        .with_state(state);

    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(cors)
}

fn record<'a>(state: &'a AppState, id: &str) -> Result<&'a SequenceRecord, ApiError> {
    state
        .record(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown sequence {id}")))
}

fn png(bytes: Bytes) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn model_info(State(state): State<Shared>) -> Json<Value> {
    let m = &state.model;
    Json(json!({
        "v": API_VERSION,
        "n_bands": m.n_bands(),
        "band_wavelengths": m.band_wavelengths(),
        "brightness_corrected": m.brightness_corrected(),
        "ridge_lambda": m.ridge_lambda(),
        "fingerprint": state.fingerprint,
        "score_percentiles": m.score_percentiles(),
        "training_pixel_count": m.training_pixel_count(),
    }))
}

fn item_json(record: &SequenceRecord, score: Option<&SequenceScore>, state: DispositionState) -> Value {
    json!({
        "sequence_id": record.sequence_id,
        "sol": record.sol,
        "eye": record.eye,
        "scores": score.map(|s| json!({
            "max": s.max,
            "mean": s.mean,
            "variance": s.variance,
            "p99": s.p99,
        })),
        "disposition": state,
    })
}

/// Scores for the loaded model restricted to sequences in the manifest,
/// ordered by the triage ranking.
pub(crate) fn ranked(state: &AppState, key: RankKey, order: SortOrder) -> Result<Vec<SequenceScore>, ApiError> {
    let db = state.db.read().expect("db lock");
    let scores: Vec<SequenceScore> = db
        .scores_for_model(&state.fingerprint)
        .into_iter()
        .filter(|s| state.record(&s.sequence_id).is_some())
        .collect();
    triage::rank(&scores, key, order).map_err(ApiError::internal)
}

fn parse_param<T: std::str::FromStr>(params: &HashMap<String, String>, name: &str) -> Result<Option<T>, ApiError>
where
    T::Err: std::fmt::Display,
{
    params
        .get(name)
        .map(|raw| {
            raw.parse::<T>()
                .map_err(|e| ApiError::bad_request(format!("invalid {name}: {e}")))
        })
        .transpose()
}

async fn list_sequences(
    State(state): State<Shared>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Json<Value>, ApiError> {
    let key: RankKey = parse_param(&params, "sort")?.unwrap_or_default();
    let order: SortOrder = parse_param(&params, "order")?.unwrap_or_default();
    let limit: Option<usize> = parse_param(&params, "limit")?;
    let offset: usize = parse_param(&params, "offset")?.unwrap_or(0);

    let ranked = ranked(&state, key, order)?;
    let total = ranked.len();
    let db = state.db.read().expect("db lock");
    let items: Vec<Value> = ranked
        .iter()
        .skip(offset)
        .take(limit.unwrap_or(usize::MAX))
        .filter_map(|s| {
            let rec = state.record(&s.sequence_id)?;
            Some(item_json(rec, Some(s), db.state_of(&s.sequence_id)))
        })
        .collect();
    Ok(Json(json!({ "v": API_VERSION, "total": total, "items": items })))
}

async fn sequence_detail(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    let rec = record(&state, &id)?;
    let db = state.db.read().expect("db lock");
    let score = db
        .scores
        .iter()
        .find(|s| s.sequence_id == id && s.model_fingerprint == state.fingerprint);
    let mut item = item_json(rec, score, db.state_of(&id));
    item["width"] = json!(rec.width);
    item["height"] = json!(rec.height);
    item["model_fingerprint"] = json!(state.fingerprint);
    item["bands"] = rec
        .bands
        .iter()
        .map(|b| json!({ "filter": b.filter_id, "wavelength_nm": b.wavelength_nm }))
        .collect();
    item["argmax"] = json!(score.map(|s| [s.argmax.0, s.argmax.1]));
    item["note"] = json!(db.disposition(&id).and_then(|d| d.note.clone()));
    Ok(Json(json!({ "v": API_VERSION, "item": item })))
}

async fn heatmap(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let mode: NormalizationMode = parse_param(&params, "norm")?.unwrap_or_default();
    record(&state, &id)?;
    let key = (id.clone(), mode, state.fingerprint.clone());
    if let Some(hit) = state.cache.lock().expect("cache lock").get(&key) {
        return Ok(png(hit.clone()));
    }
    let worker = Arc::clone(&state);
    let bytes = tokio::task::spawn_blocking(move || {
        let rec = worker.record(&id).expect("checked above");
        pipeline::render_sequence(rec, &worker.model, &worker.fingerprint, mode, &worker.colormap)
    })
    .await
    .map_err(ApiError::internal)?
    .map_err(ApiError::internal)?;
    let bytes = Bytes::from(bytes);
    state.cache.lock().expect("cache lock").put(key, bytes.clone());
    Ok(png(bytes))
}

async fn read_product(path: &Path) -> Result<Response, ApiError> {
    let bytes = tokio::fs::read(path).await.map_err(ApiError::internal)?;
    Ok(png(Bytes::from(bytes)))
}

async fn rgb_product(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let rec = record(&state, &id)?;
    read_product(&rec.rgb_path).await
}

async fn band_product(
    State(state): State<Shared>,
    UrlPath((id, file)): UrlPath<(String, String)>,
) -> Result<Response, ApiError> {
    let rec = record(&state, &id)?;
    let k = file
        .strip_suffix(".png")
        .ok_or_else(|| ApiError::not_found(format!("no such product {file}")))?;
    let k: usize = k
        .parse()
        .map_err(|_| ApiError::bad_request(format!("band index must be an integer, got {k:?}")))?;
    if !(1..=rec.bands.len()).contains(&k) {
        return Err(ApiError::bad_request(format!(
            "band index {k} out of range 1..={} (the RGB reference is /rgb.png)",
            rec.bands.len()
        )));
    }
    read_product(&rec.bands[k - 1].path).await
}

#[derive(Deserialize)]
struct DispositionBody {
    state: String,
    #[serde(default)]
    note: Option<String>,
}

async fn set_disposition(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    record(&state, &id)?;
    let body: DispositionBody =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))?;
    let new_state: DispositionState = body.state.parse().map_err(ApiError::bad_request)?;
    if let Some(note) = &body.note {
        let chars = note.chars().count();
        if chars > MAX_NOTE_CHARS {
            return Err(ApiError::too_large(format!(
                "note is {chars} characters; the limit is {MAX_NOTE_CHARS}"
            )));
        }
    }

    let _writer = state.writer.lock().await;
    let disposition =
        Disposition::new(id, new_state, body.note, Utc::now()).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let worker = Arc::clone(&state);
    let stored = disposition.clone();
    tokio::task::spawn_blocking(move || {
        let mut db = worker.db.write().expect("db lock");
        db.upsert_disposition(&worker.db_path, stored)
    })
    .await
    .map_err(ApiError::internal)?
    .map_err(ApiError::internal)?;
    Ok(Json(json!({ "v": API_VERSION, "disposition": disposition })))
}
