//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use color_mapper::backend::wire::{WireError, WireImage, WireRequest, WireResponse};
use color_mapper::{
    calibrate, CalibrationConfig, CalibrationRecord, Embedding, ImageBuffer, MaskBuffer, Probe, Rgb, Simulator,
    SimulatorSpec, StubEncoder,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::sync::{Arc, Mutex};

pub const PROMPT1: &str = "make the car light blue";
pub const PROMPT2: &str = "make the car dark blue";

/// A 32x32 gray image whose central 16x16 block is masked, probed at its center.
pub struct Scenario {
    pub e1: Embedding,
    pub e2: Embedding,
    pub simulator: Simulator,
    pub image: ImageBuffer,
    pub mask: MaskBuffer,
    pub probe: Probe,
}

pub fn color0() -> Rgb {
    Rgb::new(0.55, 0.75, 0.95).unwrap()
}

pub fn color1() -> Rgb {
    Rgb::new(0.05, 0.1, 0.45).unwrap()
}

pub fn center_mask(size: usize, lo: usize, hi: usize) -> MaskBuffer {
    let on: Vec<bool> = (0..size * size)
        .map(|i| (lo..hi).contains(&(i % size)) && (lo..hi).contains(&(i / size)))
        .collect();
    MaskBuffer::from_bools(size, size, &on).unwrap()
}

/// Stub-encoded endpoints with a simulator anchored on them.
pub fn scenario() -> Scenario {
    let enc = StubEncoder::default();
    let e1 = enc.encode(PROMPT1).unwrap();
    let e2 = enc.encode(PROMPT2).unwrap();
    let simulator = Simulator::new(SimulatorSpec::new(e1.clone(), e2.clone(), color0(), color1())).unwrap();
    Scenario {
        e1,
        e2,
        simulator,
        image: ImageBuffer::filled(32, 32, Rgb::new(0.5, 0.5, 0.5).unwrap()).unwrap(),
        mask: center_mask(32, 8, 24),
        probe: Probe::new(16, 16, 1),
    }
}

impl Scenario {
    pub fn config(&self) -> CalibrationConfig {
        CalibrationConfig::new(self.probe)
    }

    pub fn calibrate(&self) -> CalibrationRecord {
        calibrate(&self.simulator, &self.e1, &self.e2, &self.image, &self.mask, &self.config()).unwrap()
    }
}

pub fn random_embedding(rng: &mut ChaCha8Rng, tokens: usize, channels: usize) -> Embedding {
    Embedding::new(
        tokens,
        channels,
        (0..tokens * channels).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// Cyclic Jacobi eigendecomposition: the covariance oracle for PCA.
// ---------------------------------------------------------------------------

/// Eigenvalues (descending) and unit eigenvectors (as rows) of a symmetric matrix.
pub fn jacobi_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                let (row_p, row_q) = (a[p].clone(), a[q].clone());
                for k in 0..n {
                    a[p][k] = c * row_p[k] - s * row_q[k];
                    a[q][k] = s * row_p[k] + c * row_q[k];
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap());
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

/// Sample covariance (divisor n − 1) of row vectors.
pub fn covariance(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    cov.iter_mut()
        .flat_map(|row| row.iter_mut())
        .for_each(|v| *v /= (n - 1) as f64);
    (mean, cov)
}

/// Largest principal angle between the row spaces of two orthonormal row sets.
pub fn max_principal_angle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let m = a.len();
    let cross: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| dot(x, y)).collect())
        .collect();
    // Singular values squared of `cross` are the eigenvalues of cross · crossᵀ.
    let gram: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| dot(&cross[i], &cross[j])).collect())
        .collect();
    let (values, _) = jacobi_eigen(&gram);
    let smallest = values.last().copied().unwrap_or(1.0).clamp(0.0, 1.0);
    // sin of the largest angle, well conditioned near zero.
    (1.0 - smallest).max(0.0).sqrt().asin()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Remote fixture server.
// ---------------------------------------------------------------------------

/// What the fixture does with `/{mode}/generate`:
/// `echo` returns the input, `paint` fills every pixel (violating confinement), `shrink`
/// drops a row, `fail` answers 500 with a JSON error, `teapot` answers 418 with plain text,
/// `garbage` answers 200 with a non-JSON body, `nan` returns a NaN pixel.
pub struct FixtureServer {
    pub addr: std::net::SocketAddr,
    pub requests: Arc<Mutex<Vec<WireRequest>>>,
}

impl FixtureServer {
    pub fn url(&self, mode: &str) -> String {
        format!("http://{}/{mode}", self.addr)
    }

    pub fn last_request(&self) -> WireRequest {
        self.requests.lock().unwrap().last().cloned().expect("a request was captured")
    }
}

type Captured = Arc<Mutex<Vec<WireRequest>>>;

async fn generate(
    State(captured): State<Captured>,
    Path(mode): Path<String>,
    Json(req): Json<WireRequest>,
) -> axum::response::Response {
    use axum::response::IntoResponse;
    captured.lock().unwrap().push(req.clone());
    let mut pixels = req.image.decode_raw().unwrap();
    let (h, w) = (req.image.height, req.image.width);
    let respond = |data: Vec<f64>, h: usize, w: usize| {
        let image = ImageBuffer::new(h, w, data).unwrap();
        Json(WireResponse {
            image: WireImage::encode(&image),
        })
        .into_response()
    };
    match mode.as_str() {
        "echo" => respond(pixels, h, w),
        "paint" => {
            pixels.iter_mut().for_each(|v| *v = 0.25);
            respond(pixels, h, w)
        }
        "shrink" => {
            pixels.truncate((h - 1) * w * 3);
            respond(pixels, h - 1, w)
        }
        "fail" => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(WireError {
                error: "sampler exploded".into(),
            }),
        )
            .into_response(),
        "teapot" => (StatusCode::IM_A_TEAPOT, "short and stout").into_response(),
        "garbage" => (StatusCode::OK, "not json").into_response(),
        "nan" => {
            let mut image = WireImage::encode(&ImageBuffer::new(h, w, pixels).unwrap());
            let mut raw = image.decode_raw().unwrap();
            raw[0] = f64::NAN;
            image.data = color_mapper::backend::wire::encode_f32s(&raw);
            Json(WireResponse { image }).into_response()
        }
        "slow" => {
            tokio::time::sleep(std::time::Duration::from_secs(5)).await;
            respond(pixels, h, w)
        }
        _ => (StatusCode::NOT_FOUND, "unknown mode").into_response(),
    }
}

async fn health(Path(mode): Path<String>) -> (StatusCode, &'static str) {
    if mode == "fail" {
        (StatusCode::SERVICE_UNAVAILABLE, "down")
    } else {
        (StatusCode::OK, "ok")
    }
}

/// Starts the fixture on an ephemeral port in a background runtime.
pub fn start_fixture() -> FixtureServer {
    let requests: Captured = Arc::default();
    let state = requests.clone();
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let app = Router::new()
                .route("/{mode}/generate", post(generate))
                .route("/{mode}/health", get(health))
                .layer(axum::extract::DefaultBodyLimit::disable())
                .with_state(state);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    FixtureServer {
        addr: rx.recv().unwrap(),
        requests,
    }
}
