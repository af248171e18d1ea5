use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use tower::ServiceExt;
use ucps::scene::{CameraIntrinsics, PixelDomain};
use ucps_cli::serve::{router, BalloonPreview, Tuner};

fn disk() -> (PixelDomain, CameraIntrinsics) {
    let d = PixelDomain::disk(32, 28, 15.5, 13.5, 11.0).unwrap();
    (d, CameraIntrinsics::new(40.0, 40.0, 15.5, 13.5).unwrap())
}

fn app(accept: &std::path::Path) -> (Router, Arc<Tuner>) {
    let (d, k) = disk();
    let t = Tuner::new(d, k, accept.to_path_buf());
    (router(t.clone(), None), t)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_json(uri: &str, body: &str) -> Request<Body> {
    Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_owned())).unwrap()
}

#[tokio::test]
async fn balloon_returns_depth_with_mean_kappa_and_a_png_preview() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = app(&tmp.path().join("k.json"));
    let (domain, _) = disk();
    for kappa in [1.0, 2.0, 7.5, 40.0, 100.0] {
        let (status, body) = send(&app, get(&format!("/api/balloon?kappa={kappa}"))).await;
        assert_eq!(status, StatusCode::OK);
        let p: BalloonPreview = serde_json::from_slice(&body).unwrap();
        assert_eq!((p.kappa, p.width, p.height), (kappa, 32, 28));
        assert_eq!(p.depth.len(), 32 * 28);
        let inside: Vec<f64> = p.depth.iter().flatten().copied().collect();
        assert_eq!(inside.len(), domain.len());
        for (cell, &m) in p.depth.iter().zip(domain.mask()) {
            assert_eq!(cell.is_some(), m);
        }
        let mean = inside.iter().sum::<f64>() / inside.len() as f64;
        assert!((mean - kappa).abs() <= 1e-8 * kappa, "{mean} vs {kappa}");
        let png = base64::engine::general_purpose::STANDARD.decode(&p.shaded_preview).unwrap();
        let img = image::load_from_memory(&png).unwrap();
        assert_eq!((img.width(), img.height()), (32, 28));
    }
}

#[tokio::test]
async fn nonpositive_or_missing_kappa_is_a_bad_request() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = app(&tmp.path().join("k.json"));
    for uri in ["/api/balloon?kappa=0", "/api/balloon?kappa=-2", "/api/balloon", "/api/balloon?kappa=abc"] {
        let (status, body) = send(&app, get(uri)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert!(v["error"].as_str().is_some_and(|s| !s.is_empty()));
    }
    let (status, _) = send(&app, post_json("/api/accept", r#"{"kappa": -1}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(!tmp.path().join("k.json").exists());
}

#[tokio::test]
async fn accept_persists_kappa_verbatim() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("k.json");
    let (app, _) = app(&file);
    for kappa in [2.84, 24.77, 0.1 + 0.2] {
        let (status, _) = send(&app, post_json("/api/accept", &format!(r#"{{"kappa": {kappa}}}"#))).await;
        assert_eq!(status, StatusCode::OK);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&file).unwrap()).unwrap();
        assert_eq!(v["kappa"].as_f64().unwrap(), kappa);
    }
}

#[tokio::test]
async fn overtaken_requests_get_the_newest_result() {
    // a large mask keeps the first computation busy while two more queue up
    let d = PixelDomain::disk(160, 160, 79.5, 79.5, 75.0).unwrap();
    let k = CameraIntrinsics::new(200.0, 200.0, 79.5, 79.5).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let app = router(Tuner::new(d, k, tmp.path().join("k.json")), None);
    let request = |kappa: f64| {
        let app = app.clone();
        tokio::spawn(async move {
            let (status, body) = send(&app, get(&format!("/api/balloon?kappa={kappa}"))).await;
            assert_eq!(status, StatusCode::OK);
            serde_json::from_slice::<BalloonPreview>(&body).unwrap().kappa
        })
    };
    let first = request(30.0);
    tokio::time::sleep(std::time::Duration::from_millis(30)).await;
    let stale = request(40.0);
    let newest = request(50.0);
    assert_eq!(first.await.unwrap(), 30.0);
    assert_eq!(stale.await.unwrap(), 50.0);
    assert_eq!(newest.await.unwrap(), 50.0);
}

#[tokio::test]
async fn index_lists_the_api() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = app(&tmp.path().join("k.json"));
    let (status, body) = send(&app, get("/")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().contains("/api/balloon"));
}
