use std::sync::{Arc, Mutex};
use std::thread;

use synth_eval::code::Lang;
use synth_eval::encoder::{cosine, PoolingStrategy};
use synth_eval::remote::{remote_embed, ClientConfig, EmbedRequest, RemoteEmbedder, Snippet};
use synth_eval::Error;

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Good,
    WrongDim,
    ShortVector,
    DropVector,
    BadJson,
    NotReady,
}

const DIM: usize = 12;

/// Deterministic vector for a snippet with awkward decimals.
fn server_vector(code: &str, pooling: &str) -> Vec<f64> {
    let mut v = vec![0.0; DIM];
    for (i, b) in code.bytes().enumerate() {
        let k = (usize::from(b) * 31 + i * 7) % DIM;
        v[k] += (f64::from(b) / 97.0 - 0.6) * std::f64::consts::E / 3.0;
    }
    if pooling == "cls-relu" {
        v.iter_mut().for_each(|x| *x = x.max(0.0));
    }
    v
}

struct Mock {
    url: String,
    served: Arc<Mutex<Vec<Vec<f64>>>>,
}

fn mock(mode: Mode) -> Mock {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let served = Arc::new(Mutex::new(Vec::new()));
    let log = served.clone();
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let json = |s: String, code: u16| {
                tiny_http::Response::from_string(s)
                    .with_status_code(code)
                    .with_header("Content-Type: application/json".parse::<tiny_http::Header>().unwrap())
            };
            let resp = match (req.method().as_str(), req.url()) {
                ("GET", "/v1/health") if mode == Mode::NotReady => {
                    json(r#"{"status":"loading","model":"m","dim":0}"#.into(), 503)
                }
                ("GET", "/v1/health") => json(format!(r#"{{"status":"ok","model":"m","dim":{DIM}}}"#), 200),
                ("POST", "/v1/embed") => {
                    let mut body = String::new();
                    req.as_reader().read_to_string(&mut body).unwrap();
                    let parsed: EmbedRequest = serde_json::from_str(&body).unwrap();
                    let pooling = serde_json::to_value(parsed.pooling).unwrap();
                    let mut vectors: Vec<Vec<f64>> = parsed
                        .snippets
                        .iter()
                        .map(|s| server_vector(&s.code, pooling.as_str().unwrap()))
                        .collect();
                    log.lock().unwrap().extend(vectors.iter().cloned());
                    let mut dim = DIM;
                    match mode {
                        Mode::WrongDim => dim = DIM + 1,
                        Mode::ShortVector => {
                            vectors[0].pop();
                        }
                        Mode::DropVector => {
                            vectors.pop();
                        }
                        _ => {}
                    }
                    if mode == Mode::BadJson {
                        json(r#"{"dim": 12, "vectors": "nope"}"#.into(), 200)
                    } else {
                        json(serde_json::json!({"dim": dim, "vectors": vectors}).to_string(), 200)
                    }
                }
                _ => json("{}".into(), 404),
            };
            let _ = req.respond(resp);
        }
    });
    Mock { url, served }
}

fn config(url: &str, pooling: PoolingStrategy) -> ClientConfig {
    ClientConfig::new(url, "m", pooling)
}

#[test]
fn health_reports_dimension() {
    let m = mock(Mode::Good);
    let c = RemoteEmbedder::connect(config(&m.url, PoolingStrategy::Summary)).unwrap();
    assert_eq!(c.dim(), DIM);
    assert_eq!(c.health().status, "ok");
}

#[test]
fn one_snippet_gives_one_vector_of_advertised_dim() {
    let m = mock(Mode::Good);
    let v = remote_embed(&config(&m.url, PoolingStrategy::Summary), &[(Lang::Python, "a = a + b")]).unwrap();
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].dim(), DIM);
}

#[test]
fn empty_list_makes_no_request() {
    let v = remote_embed(&config("http://127.0.0.1:9", PoolingStrategy::Summary), &[]).unwrap();
    assert!(v.is_empty());
}

#[test]
fn vectors_round_trip_in_order() {
    let m = mock(Mode::Good);
    let mut cfg = config(&m.url, PoolingStrategy::Summary);
    cfg.max_batch = 2;
    let codes = ["x = 1", "def f(a):\n    return a", "y = y * 3", "x = 1", "return 0"];
    let snippets: Vec<(Lang, &str)> = codes.iter().map(|c| (Lang::Python, *c)).collect();
    let got = remote_embed(&cfg, &snippets).unwrap();
    let served = m.served.lock().unwrap().clone();
    assert_eq!(got.len(), codes.len());
    for (i, code) in codes.iter().enumerate() {
        let want = server_vector(code, "cls");
        for (a, b) in got[i].0.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(got[i].0, served[i]);
    }
    assert_eq!(got[0], got[3]);
}

#[test]
fn relu_pooling_is_nonnegative_and_cosine_in_unit_range() {
    let m = mock(Mode::Good);
    let cfg = config(&m.url, PoolingStrategy::SummaryRelu);
    let got = remote_embed(
        &cfg,
        &[(Lang::Python, "def f(a, b):\n    a = a + b\n    return a"), (Lang::Python, "def f(a, b):\n    a = a - b\n    return a")],
    )
    .unwrap();
    assert!(got.iter().flat_map(|v| &v.0).all(|&x| x >= 0.0));
    let c = cosine(&got[0], &got[1]).unwrap();
    assert!((0.0..=1.0).contains(&c));
}

#[test]
fn request_uses_wire_names() {
    let req = EmbedRequest {
        model: "m".into(),
        pooling: PoolingStrategy::FirstLastAvg,
        snippets: vec![Snippet { lang: Lang::Java, code: "int x;".into() }],
    };
    let v = serde_json::to_value(&req).unwrap();
    assert_eq!(v["pooling"], "first-last-avg");
    assert_eq!(v["snippets"][0]["lang"], "java");
    for p in PoolingStrategy::ALL {
        assert_eq!(serde_json::to_value(p).unwrap(), p.name());
    }
}

#[test]
fn protocol_errors_are_typed() {
    let one = [(Lang::Python, "x = 1")];
    let cases = [
        (Mode::WrongDim, "dim"),
        (Mode::ShortVector, "dim"),
        (Mode::DropVector, "protocol"),
        (Mode::BadJson, "protocol"),
        (Mode::NotReady, "backend"),
    ];
    for (mode, want) in cases {
        let m = mock(mode);
        let err = remote_embed(&config(&m.url, PoolingStrategy::Summary), &one).unwrap_err();
        let ok = match want {
            "dim" => matches!(err, Error::DimensionMismatch(..)),
            "protocol" => matches!(err, Error::ProtocolMismatch(_)),
            _ => matches!(err, Error::BackendFailure(_)),
        };
        assert!(ok, "{want}: {err}");
    }
}

#[test]
fn refused_connection_is_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    let err = remote_embed(
        &config(&format!("http://127.0.0.1:{port}"), PoolingStrategy::Summary),
        &[(Lang::Java, "int x;")],
    )
    .unwrap_err();
    assert!(matches!(err, Error::Transport(_)), "{err}");
}
