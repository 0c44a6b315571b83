mod common;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use common::{fixture, service};
use crashcast_core::model::BoundingBox;
use crashcast_core::pipeline::write_csv;
use crashcast_service::api::start;
use crashcast_service::clock::{Clock, ManualClock};
use crashcast_service::loadtest::{run_load_test, LoadProfile};
use crashcast_service::service::{anchor, HotspotResponse, InsertReport, MetricsReport, PredictionResponse};
use crashcast_service::Service;
use serde_json::{json, Value};

async fn serve() -> (String, Arc<Service>, Arc<ManualClock>) {
    let (s, clock) = service();
    s.refresh().unwrap();
    let (addr, _) = start(s.clone(), SocketAddr::from(([127, 0, 0, 1], 0)), Duration::from_millis(50)).await.unwrap();
    (format!("http://{addr}"), s, clock)
}

fn center(s: &Service) -> Value {
    let cell = s.predictor().unwrap().active_cells()[0];
    serde_json::to_value(anchor(&cell.bounds(), &s.config().region()).unwrap()).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn predict_statuses() {
    let (url, s, _) = serve().await;
    let client = reqwest::Client::new();
    let ok = client.post(format!("{url}/predict")).json(&json!({"location": center(&s)})).send().await.unwrap();
    assert_eq!(ok.status(), 200);
    let body: PredictionResponse = ok.json().await.unwrap();
    assert!(body.core.risk_score >= 0.0 && body.core.risk_score <= 1.0);
    assert!((body.core.severity_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let raw: Value = client
        .post(format!("{url}/predict"))
        .json(&json!({"location": center(&s), "weather_override": {"category": "4"}}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(raw["weather_category"], "4");
    for key in ["risk_score", "severity_probs", "contributing_factors", "dominant_factor", "recommended_actions", "cache_tier"] {
        assert!(raw.get(key).is_some(), "missing {key}");
    }

    let status = |body: &'static str| {
        let client = client.clone();
        let url = url.clone();
        async move {
            client
                .post(format!("{url}/predict"))
                .header("content-type", "application/json")
                .body(body)
                .send()
                .await
                .unwrap()
                .status()
                .as_u16()
        }
    };
    assert_eq!(status("{not json").await, 400);
    assert_eq!(status(r#"{"location": {"lat": 40.0}}"#).await, 400);
    assert_eq!(status(r#"{"location": {"lat": 40.0, "lon": -77.0}, "surprise": 1}"#).await, 400);
    assert_eq!(status(r#"{"location": {"lat": 30.0, "lon": -77.0}}"#).await, 422);
    assert_eq!(status(r#"{"location": {"lat": 40.0, "lon": -77.0}, "weather_override": {"category": "9"}}"#).await, 400);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn hotspots_and_health() {
    let (url, _, _) = serve().await;
    let client = reqwest::Client::new();
    let b = BoundingBox::PENNSYLVANIA;
    let q = format!("min_lat={}&min_lon={}&max_lat={}&max_lon={}", b.min_lat, b.min_lon, b.max_lat, b.max_lon);
    let top: HotspotResponse =
        client.get(format!("{url}/hotspots?{q}&k=5")).send().await.unwrap().json().await.unwrap();
    assert_eq!(top.hotspots.len(), 5);
    assert!(top.hotspots.windows(2).all(|w| w[0].risk_score >= w[1].risk_score));
    assert_eq!(client.get(format!("{url}/hotspots?min_lat=1")).send().await.unwrap().status(), 400);
    assert_eq!(client.get(format!("{url}/hotspots?{q}&k=lots")).send().await.unwrap().status(), 400);
    let health: Value = client.get(format!("{url}/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!(health["status"], "ok");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn crashes_round_trip() {
    let (url, _, _) = serve().await;
    let client = reqwest::Client::new();
    let records: Vec<_> = fixture().records.iter().take(40).cloned().collect();
    let mut csv = Vec::new();
    write_csv(&mut csv, &records[..20]).unwrap();
    let a: InsertReport = client
        .post(format!("{url}/crashes"))
        .header("content-type", "text/csv")
        .body(csv)
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let b: InsertReport =
        client.post(format!("{url}/crashes")).json(&records[20..]).send().await.unwrap().json().await.unwrap();
    assert_eq!(a.inserted + a.rejected.len(), 20);
    assert_eq!(b.inserted + b.rejected.len(), 20);
    let b = BoundingBox::PENNSYLVANIA;
    let q = format!("min_lat={}&min_lon={}&max_lat={}&max_lon={}", b.min_lat, b.min_lon, b.max_lat, b.max_lon);
    let got: Vec<Value> = client.get(format!("{url}/crashes?{q}")).send().await.unwrap().json().await.unwrap();
    let m: MetricsReport = client.get(format!("{url}/metrics")).send().await.unwrap().json().await.unwrap();
    assert_eq!(got.len(), m.stored_records);
    assert_eq!(m.counters.crashes_inserted as usize, m.stored_records);
    assert_eq!(
        client.post(format!("{url}/crashes")).json(&json!({"not": "a list"})).send().await.unwrap().status(),
        400
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn small_load_test_agrees_with_server_counters() {
    let (url, s, clock) = serve().await;
    let mut profile = LoadProfile::new(url, 8, Duration::from_millis(800), 1.1);
    profile.at = Some(clock.now());
    profile.agreement_samples = 30;
    let report = run_load_test(&profile).await.unwrap();
    assert_eq!(report.errors, 0, "{:?}", report.first_error);
    assert!(report.requests > 0);
    let p = report.latency_ms;
    assert!(p.p50 <= p.p95 && p.p95 <= p.p99);
    assert_eq!(report.server_tiers.total(), report.tiers.total());
    assert!((report.server_hit_rate - report.hit_rate).abs() <= 0.01);
    assert!(report.agreement.samples > 0);
    assert!(report.agreement.max_abs_diff <= 0.02);
    assert_eq!(report.targets, s.predictor().unwrap().active_cells().len());
}
