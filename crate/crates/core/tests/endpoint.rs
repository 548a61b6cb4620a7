use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rzero_core::backends::{endpoint_sample, EndpointChallenger, EndpointConfig, GeneratorBackend, RetryPolicy};
use rzero_core::Error;

struct Request {
    auth: Option<String>,
    body: serde_json::Value,
}

struct Mock {
    url: String,
    requests: Arc<Mutex<Vec<Request>>>,
    peak_in_flight: Arc<AtomicUsize>,
}

fn read_request(stream: &mut TcpStream) -> Option<Request> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut length = 0;
    let mut auth = None;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (k, v) = h.split_once(':')?;
        match k.to_ascii_lowercase().as_str() {
            "content-length" => length = v.trim().parse().ok()?,
            "authorization" => auth = Some(v.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    Some(Request {
        auth,
        body: serde_json::from_slice(&body).ok()?,
    })
}

fn completion(content: &str) -> String {
    serde_json::json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}).to_string()
}

/// Serves scripted (status, body) responses in arrival order; the last entry
/// repeats once the script runs out.
fn mock(script: Vec<(u16, String)>, delay: Duration) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let in_flight = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let served = Arc::new(AtomicUsize::new(0));
    let script = Arc::new(script);
    {
        let requests = requests.clone();
        let peak = peak.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let (requests, in_flight, peak, served, script) =
                    (requests.clone(), in_flight.clone(), peak.clone(), served.clone(), script.clone());
                thread::spawn(move || {
                    let Some(req) = read_request(&mut stream) else { return };
                    let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    let k = served.fetch_add(1, Ordering::SeqCst);
                    requests.lock().unwrap().push(req);
                    thread::sleep(delay);
                    let (status, body) = &script[k.min(script.len() - 1)];
                    in_flight.fetch_sub(1, Ordering::SeqCst);
                    let resp = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                });
            }
        });
    }
    Mock {
        url,
        requests,
        peak_in_flight: peak,
    }
}

fn config(url: &str, key_env: &str) -> EndpointConfig {
    std::env::set_var(key_env, "secret-token");
    EndpointConfig {
        base_url: url.to_string(),
        model_name: "test-model".into(),
        api_key_env: key_env.into(),
        retry: RetryPolicy {
            max_attempts: 3,
            backoff_ms: 1,
        },
        ..EndpointConfig::default()
    }
}

#[test]
fn zero_requests_touch_no_network() {
    let cfg = EndpointConfig {
        base_url: "http://127.0.0.1:9/v1".into(),
        api_key_env: "RZERO_TEST_KEY_UNSET".into(),
        ..EndpointConfig::default()
    };
    assert!(endpoint_sample(&cfg, "s", "u", 0).unwrap().is_empty());
}

#[test]
fn echo_server_returns_n_identical_strings() {
    let m = mock(vec![(200, completion("fixed reply"))], Duration::ZERO);
    let cfg = config(&m.url, "RZERO_TEST_KEY_ECHO");
    let out = endpoint_sample(&cfg, "system text", "user text", 3).unwrap();
    assert_eq!(out, vec!["fixed reply"; 3]);

    let reqs = m.requests.lock().unwrap();
    assert_eq!(reqs.len(), 3);
    for r in reqs.iter() {
        assert_eq!(r.auth.as_deref(), Some("Bearer secret-token"));
        assert_eq!(r.body["model"], "test-model");
        assert_eq!(r.body["temperature"], 1.0);
        assert_eq!(r.body["top_p"], 0.99);
        assert_eq!(r.body["messages"][0]["role"], "system");
        assert_eq!(r.body["messages"][0]["content"], "system text");
        assert_eq!(r.body["messages"][1]["content"], "user text");
    }
}

#[test]
fn retries_server_errors_then_succeeds() {
    let m = mock(
        vec![(500, "{}".into()), (500, "{}".into()), (200, completion("ok"))],
        Duration::ZERO,
    );
    let cfg = config(&m.url, "RZERO_TEST_KEY_RETRY");
    assert_eq!(endpoint_sample(&cfg, "s", "u", 1).unwrap(), vec!["ok"]);
    assert_eq!(m.requests.lock().unwrap().len(), 3);
}

#[test]
fn exhausted_retries_report_last_status() {
    let m = mock(vec![(503, "{}".into())], Duration::ZERO);
    let cfg = config(&m.url, "RZERO_TEST_KEY_EXHAUST");
    match endpoint_sample(&cfg, "s", "u", 1) {
        Err(Error::Transport { attempts, status, .. }) => {
            assert_eq!(attempts, 3);
            assert_eq!(status, Some(503));
        }
        other => panic!("expected transport error, got {other:?}"),
    }
}

#[test]
fn client_errors_are_not_retried() {
    let m = mock(vec![(400, "{\"error\":\"bad\"}".into())], Duration::ZERO);
    let cfg = config(&m.url, "RZERO_TEST_KEY_FATAL");
    match endpoint_sample(&cfg, "s", "u", 1) {
        Err(Error::Transport { attempts, status, .. }) => {
            assert_eq!(attempts, 1);
            assert_eq!(status, Some(400));
        }
        other => panic!("expected transport error, got {other:?}"),
    }
    assert_eq!(m.requests.lock().unwrap().len(), 1);
}

#[test]
fn missing_credentials_are_a_config_error() {
    let cfg = EndpointConfig {
        api_key_env: "RZERO_TEST_KEY_NEVER_SET".into(),
        ..EndpointConfig::default()
    };
    assert!(matches!(endpoint_sample(&cfg, "s", "u", 2), Err(Error::Config(_))));
}

#[test]
fn concurrency_stays_under_ceiling() {
    let m = mock(vec![(200, completion("x"))], Duration::from_millis(60));
    let mut cfg = config(&m.url, "RZERO_TEST_KEY_CEILING");
    cfg.max_in_flight = 2;
    assert_eq!(endpoint_sample(&cfg, "s", "u", 8).unwrap().len(), 8);
    let peak = m.peak_in_flight.load(Ordering::SeqCst);
    assert!(peak <= 2, "peak in flight {peak}");
    assert!(peak >= 1);
}

#[test]
fn challenger_uses_fixed_prompt() {
    let m = mock(vec![(200, completion("<question>q</question>\n\\boxed{1}"))], Duration::ZERO);
    let backend = EndpointChallenger {
        config: config(&m.url, "RZERO_TEST_KEY_CHALLENGER"),
    };
    assert!(!backend.capabilities().trainable);
    let out = backend.sample_questions(2, 0).unwrap();
    assert_eq!(out.len(), 2);
    let reqs = m.requests.lock().unwrap();
    assert_eq!(
        reqs[0].body["messages"][1]["content"],
        "Generate one new, challenging reasoning question now. Remember to format the output exactly as instructed."
    );
}
