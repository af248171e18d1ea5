//! HTTP service behind the volume-ratio tuner.
//!
//! `GET /api/balloon?kappa=` returns the balloon initialization with a shaded
//! preview; `POST /api/accept` persists the chosen value. Computations run
//! one at a time, and a request that was overtaken while waiting is answered
//! with the result for the newest value instead of its own.

use std::io::Cursor;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use anyhow::Context;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use image::{ImageBuffer, ImageFormat, Luma};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;
use ucps::balloon::init_depth_balloon;
use ucps::scene::{CameraIntrinsics, PixelDomain};

use crate::args::ServeArgs;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalloonPreview {
    pub kappa: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major perspective depth, `null` outside the mask.
    pub depth: Vec<Option<f64>>,
    /// Base64 PNG of the balloon lit head-on.
    pub shaded_preview: String,
}

/// Balloon initialization plus a Lambertian rendering of its normals under a
/// light along the viewing direction.
pub fn balloon_preview(domain: &PixelDomain, k: &CameraIntrinsics, kappa: f64) -> ucps::Result<BalloonPreview> {
    let init = init_depth_balloon(domain, k, kappa)?;
    let (w, h) = (domain.width(), domain.height());
    let mut depth = vec![None; w * h];
    let mut shade = vec![0u8; w * h];
    for (j, &(u, v)) in domain.pixels().iter().enumerate() {
        depth[v * w + u] = Some(init.depth.values()[j]);
        // normals face the camera with n₃ < 0
        let s = (-init.normals.normals()[j].z).clamp(0.0, 1.0);
        shade[v * w + u] = (s * 255.0).round() as u8;
    }
    let img = ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, shade).expect("buffer size");
    let mut png = Vec::new();
    img.write_to(&mut Cursor::new(&mut png), ImageFormat::Png)
        .map_err(|source| ucps::Error::Image { path: "preview.png".into(), source })?;
    Ok(BalloonPreview {
        kappa,
        width: w,
        height: h,
        depth,
        shaded_preview: base64::engine::general_purpose::STANDARD.encode(png),
    })
}

pub struct Tuner {
    domain: PixelDomain,
    intrinsics: CameraIntrinsics,
    accept_file: PathBuf,
    /// Most recently requested κ.
    newest: Mutex<f64>,
    /// Held while computing; keeps the last result and its κ.
    last: tokio::sync::Mutex<Option<(f64, Arc<String>)>>,
}

impl Tuner {
    pub fn new(domain: PixelDomain, intrinsics: CameraIntrinsics, accept_file: PathBuf) -> Arc<Self> {
        Arc::new(Tuner { domain, intrinsics, accept_file, newest: Mutex::new(f64::NAN), last: tokio::sync::Mutex::new(None) })
    }
}

#[derive(Debug, Deserialize)]
pub struct KappaQuery {
    kappa: f64,
}

#[derive(Debug, Deserialize)]
pub struct AcceptBody {
    kappa: f64,
}

fn bad_request(msg: impl Into<String>) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "error": msg.into() }))).into_response()
}

fn check_kappa(kappa: f64) -> Result<(), Response> {
    if kappa > 0.0 && kappa.is_finite() {
        Ok(())
    } else {
        Err(bad_request(format!("kappa must be a positive number, got {kappa}")))
    }
}

async fn balloon(State(t): State<Arc<Tuner>>, query: Result<Query<KappaQuery>, QueryRejection>) -> Response {
    let kappa = match query {
        Ok(Query(q)) => q.kappa,
        Err(e) => return bad_request(e.body_text()),
    };
    if let Err(r) = check_kappa(kappa) {
        return r;
    }
    *t.newest.lock().expect("poisoned") = kappa;
    let mut last = t.last.lock().await;
    let wanted = *t.newest.lock().expect("poisoned");
    let body = match last.as_ref() {
        Some((k, body)) if *k == wanted => body.clone(),
        _ => {
            let tuner = t.clone();
            let computed = tokio::task::spawn_blocking(move || {
                balloon_preview(&tuner.domain, &tuner.intrinsics, wanted).map(|p| serde_json::to_string(&p).expect("serializable"))
            })
            .await;
            let body = match computed {
                Ok(Ok(s)) => Arc::new(s),
                Ok(Err(e)) => return bad_request(e.to_string()),
                Err(e) => return (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": e.to_string() }))).into_response(),
            };
            *last = Some((wanted, body.clone()));
            body
        }
    };
    ([(header::CONTENT_TYPE, "application/json")], (*body).clone()).into_response()
}

async fn accept(State(t): State<Arc<Tuner>>, body: Result<Json<AcceptBody>, JsonRejection>) -> Response {
    let kappa = match body {
        Ok(Json(b)) => b.kappa,
        Err(e) => return bad_request(e.body_text()),
    };
    if let Err(r) = check_kappa(kappa) {
        return r;
    }
    match ucps::io::write_json(&t.accept_file, &json!({ "kappa": kappa })) {
        Ok(()) => {
            info!("accepted kappa {kappa} into {}", t.accept_file.display());
            Json(json!({ "kappa": kappa, "path": t.accept_file })).into_response()
        }
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": e.to_string() }))).into_response(),
    }
}

async fn index() -> &'static str {
    "GET /api/balloon?kappa=<positive number>\nPOST /api/accept {\"kappa\": <positive number>}\n"
}

pub fn router(tuner: Arc<Tuner>, assets: Option<PathBuf>) -> Router {
    let api = Router::new().route("/api/balloon", get(balloon)).route("/api/accept", post(accept)).with_state(tuner);
    match assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    }
}

pub async fn run(a: ServeArgs) -> anyhow::Result<()> {
    let domain = ucps::io::load_mask(&a.mask)?;
    let k = ucps::io::read_intrinsics(&a.intrinsics)?;
    let app = router(Tuner::new(domain, k, a.accept_file.clone()), a.assets.clone());
    let addr = format!("{}:{}", a.host, a.port);
    let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
    info!("listening on http://{addr}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            info!("shutting down");
        })
        .await?;
    Ok(())
}
