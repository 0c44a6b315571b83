use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use crashcast_core::model::BoundingBox;
use crashcast_core::rng::stream;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::metrics::{percentiles, CacheTier, Percentiles, TierCounts};
use crate::service::{HotspotResponse, LatLon, MetricsReport};
use crate::ServiceError;

#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfile {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub url: String,
    pub concurrency: usize,
    pub duration: Duration,
    pub zipf: f64,
    pub seed: u64,
    /// Area whose active cells are targeted.
    pub bbox: BoundingBox,
    /// Request timestamp; the server's clock when absent.
    pub at: Option<DateTime<Utc>>,
    /// Keys re-requested with caches bypassed to check cached answers.
    pub agreement_samples: usize,
}

impl LoadProfile {
    pub fn new(url: impl Into<String>, concurrency: usize, duration: Duration, zipf: f64) -> Self {
        LoadProfile {
            url: url.into().trim_end_matches('/').to_string(),
            concurrency,
            duration,
            zipf,
            seed: 0,
            bbox: BoundingBox::PENNSYLVANIA,
            at: None,
            agreement_samples: 200,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub samples: usize,
    pub max_abs_diff: f64,
    pub mean_abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub concurrency: usize,
    pub duration_s: f64,
    pub zipf: f64,
    pub targets: usize,
    pub requests: u64,
    pub errors: u64,
    pub throughput_rps: f64,
    pub latency_ms: Percentiles,
    /// Tiers as reported in the responses.
    pub tiers: TierCounts,
    pub hit_rate: f64,
    /// Tier counter increase seen on the server during the run.
    pub server_tiers: TierCounts,
    pub server_hit_rate: f64,
    pub agreement: Agreement,
    /// First failed request, if any.
    pub first_error: Option<String>,
}

#[derive(Deserialize)]
struct PredictReply {
    risk_score: f64,
    cache_tier: CacheTier,
}

#[derive(Serialize)]
struct PredictBody {
    location: LatLon,
    #[serde(skip_serializing_if = "Option::is_none")]
    at: Option<DateTime<Utc>>,
    bypass_cache: bool,
}

fn unreachable(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::LoadTest(format!("service unreachable: {e}"))
}

async fn server_tiers(client: &reqwest::Client, url: &str) -> Result<TierCounts, ServiceError> {
    let m: MetricsReport =
        client.get(format!("{url}/metrics")).send().await.map_err(unreachable)?.json().await.map_err(unreachable)?;
    Ok(m.counters.tiers)
}

async fn predict(client: &reqwest::Client, url: &str, body: &PredictBody) -> Result<PredictReply, reqwest::Error> {
    client.post(format!("{url}/predict")).json(body).send().await?.error_for_status()?.json().await
}

/// Closed loop: each client sends its next request as soon as the previous
/// one returns. Targets are the active cells in `bbox`, ranked by a seeded
/// shuffle and drawn with Zipf weights.
pub async fn run_load_test(profile: &LoadProfile) -> Result<LatencyReport, ServiceError> {
    if profile.concurrency == 0 {
        return Err(ServiceError::LoadTest("concurrency must be positive".into()));
    }
    let url = profile.url.as_str();
    let client = reqwest::Client::builder()
        .pool_max_idle_per_host(profile.concurrency)
        .timeout(Duration::from_secs(60))
        .build()
        .map_err(unreachable)?;
    let b = &profile.bbox;
    let mut hot_url = format!("{url}/hotspots?min_lat={}&min_lon={}&max_lat={}&max_lon={}", b.min_lat, b.min_lon, b.max_lat, b.max_lon);
    if let Some(at) = profile.at {
        hot_url.push_str(&format!("&at={}", at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)));
    }
    let hot: HotspotResponse = client
        .get(hot_url)
        .send()
        .await
        .map_err(unreachable)?
        .error_for_status()
        .map_err(unreachable)?
        .json()
        .await
        .map_err(unreachable)?;
    let mut targets: Vec<LatLon> = hot.hotspots.iter().map(|h| h.center).collect();
    if targets.is_empty() {
        return Err(ServiceError::LoadTest("no active cells in the target area".into()));
    }
    targets.shuffle(&mut stream(profile.seed, 0));
    let zipf = Zipf::new(targets.len() as f64, profile.zipf).map_err(|e| ServiceError::LoadTest(e.to_string()))?;

    let before = server_tiers(&client, url).await?;
    let start = Instant::now();
    let deadline = start + profile.duration;
    let mut tasks = Vec::with_capacity(profile.concurrency);
    for c in 0..profile.concurrency {
        let client = client.clone();
        let targets = targets.clone();
        let url = url.to_string();
        let at = profile.at;
        let mut rng = stream(profile.seed, 1 + c as u64);
        tasks.push(tokio::spawn(async move {
            let mut samples: Vec<(f64, Result<CacheTier, String>)> = Vec::new();
            while Instant::now() < deadline {
                let rank = zipf.sample(&mut rng) as usize;
                let body = PredictBody { location: targets[rank.clamp(1, targets.len()) - 1], at, bypass_cache: false };
                let t = Instant::now();
                let reply = predict(&client, &url, &body).await;
                samples.push((t.elapsed().as_secs_f64() * 1e3, reply.map(|r| r.cache_tier).map_err(|e| format!("{e:?}"))));
            }
            samples
        }));
    }
    let mut latencies = Vec::new();
    let mut tiers = TierCounts::default();
    let mut errors = 0;
    let mut first_error = None;
    for t in tasks {
        for (ms, tier) in t.await.map_err(|e| ServiceError::LoadTest(e.to_string()))? {
            match tier {
                Ok(CacheTier::Primary) => tiers.primary += 1,
                Ok(CacheTier::Secondary) => tiers.secondary += 1,
                Ok(CacheTier::Miss) => tiers.miss += 1,
                Err(e) => {
                    errors += 1;
                    first_error.get_or_insert(e);
                }
            }
            latencies.push(ms);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let after = server_tiers(&client, url).await?;
    let server_tiers = TierCounts {
        primary: after.primary - before.primary,
        secondary: after.secondary - before.secondary,
        miss: after.miss - before.miss,
    };

    let mut agreement = Agreement::default();
    let mut rng = stream(profile.seed, u64::MAX);
    let mut diffs = Vec::new();
    for _ in 0..profile.agreement_samples.min(targets.len() * 4) {
        let location = targets[(zipf.sample(&mut rng) as usize).clamp(1, targets.len()) - 1];
        let location = if rng.random_bool(0.5) { location } else { targets[rng.random_range(0..targets.len())] };
        let cached = predict(&client, url, &PredictBody { location, at: profile.at, bypass_cache: false }).await;
        let fresh = predict(&client, url, &PredictBody { location, at: profile.at, bypass_cache: true }).await;
        if let (Ok(a), Ok(b)) = (cached, fresh) {
            diffs.push((a.risk_score - b.risk_score).abs());
        }
    }
    if !diffs.is_empty() {
        agreement = Agreement {
            samples: diffs.len(),
            max_abs_diff: diffs.iter().copied().fold(0.0, f64::max),
            mean_abs_diff: diffs.iter().sum::<f64>() / diffs.len() as f64,
        };
    }

    Ok(LatencyReport {
        concurrency: profile.concurrency,
        duration_s: elapsed,
        zipf: profile.zipf,
        targets: targets.len(),
        requests: latencies.len() as u64,
        errors,
        throughput_rps: latencies.len() as f64 / elapsed,
        latency_ms: percentiles(&mut latencies),
        hit_rate: tiers.hit_rate(),
        tiers,
        server_hit_rate: server_tiers.hit_rate(),
        server_tiers,
        agreement,
        first_error,
    })
}
