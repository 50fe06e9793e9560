//! Contract tests for the `/v1/*` protocol.
//!
//! Every body crossing [`SchemaChecked`] is validated against the shipped
//! schema file. The same stub handler answers both in-process and over a
//! real TCP socket, so the HTTP client is exercised end to end.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use editflow::backends::wire::{self, SCHEMA};
use editflow::backends::{
    roles, BackendConfig, BackendError, BackendMode, EditorMode, EditorScript, HttpBackend, HttpEndpoints, MockBackend, MockScript,
    RawInstance, ReqwestTransport, SessionClient, Transport,
};
use editflow::geometry::{rel_to_pixel, PixelBox, RelBox};
use editflow::harness::CaseSet;
use editflow::planner::{ActionKind, EditRequest, Engine, EngineConfig, Route};
use editflow::raster::{ImageBuffer, Mask};

fn validator(def: &str) -> jsonschema::Validator {
    let mut schema: Value = serde_json::from_str(SCHEMA).unwrap();
    schema["$ref"] = json!(format!("#/$defs/{def}"));
    jsonschema::validator_for(&schema).expect("schema compiles")
}

fn defs_for(path: &str) -> (&'static str, &'static str) {
    match path {
        wire::EDIT_PATH => ("EditRequest", "EditResponse"),
        wire::SEGMENT_PATH => ("SegmentRequest", "SegmentResponse"),
        wire::COMPLETE_PATH => ("CompleteRequest", "CompleteResponse"),
        other => panic!("unexpected endpoint {other}"),
    }
}

fn check(def: &str, body: &Value) -> Result<(), String> {
    let v = validator(def);
    let errors: Vec<String> = v.iter_errors(body).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(format!("{def}: {}", errors.join("; ")))
    }
}

/// Reference server behaviour: identity editor, full-frame segmenter and a
/// completion endpoint that answers the engine's roles for a Route A session.
fn stub_handle(path: &str, body: &Value) -> (u16, Value) {
    let (req_def, resp_def) = defs_for(path);
    if let Err(e) = check(req_def, body) {
        return (400, json!({ "error": e }));
    }
    let resp = match path {
        wire::EDIT_PATH => json!({ "image": body["image"] }),
        wire::SEGMENT_PATH => {
            let img = wire::decode_image(body["image"].as_str().unwrap()).unwrap();
            let dims = img.dims();
            let full = PixelBox::new(0, 0, dims.width, dims.height);
            let inst = RawInstance { mask: Mask::from_box(dims, full), region: full, score: 1.0 };
            serde_json::to_value(wire::encode_instances(&[inst])).unwrap()
        }
        _ => {
            let role = body["role"].as_str().unwrap();
            let text = match role.split(':').next().unwrap() {
                roles::PROFILE => r#"{"target": "scene", "constraint": "none", "scope": "scene_level", "scene_context": "", "small_target": false, "multi_target": false}"#.to_string(),
                roles::ROUTER => "A".into(),
                roles::REWRITE => "DIRECT".into(),
                roles::VERIFY => r#"{"status": "success", "is_finished": true, "reasoning": "done"}"#.into(),
                _ => body["parts"][0]["text"].as_str().unwrap_or("").to_string(),
            };
            json!({ "text": text })
        }
    };
    check(resp_def, &resp).expect("stub replies conform");
    (200, resp)
}

/// Wraps a transport, validating every request and response body and
/// counting physical calls.
struct SchemaChecked<T> {
    inner: T,
    calls: AtomicU32,
    violations: Mutex<Vec<String>>,
}

impl<T> SchemaChecked<T> {
    fn new(inner: T) -> Self {
        Self { inner, calls: AtomicU32::new(0), violations: Mutex::new(Vec::new()) }
    }
}

impl<T: Transport> Transport for SchemaChecked<T> {
    fn post_json(&self, url: &str, body: &Value, timeout: Duration) -> Result<Value, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let path = &url[url.find("/v1/").expect("versioned path")..];
        let (req_def, resp_def) = defs_for(path);
        if let Err(e) = check(req_def, body) {
            self.violations.lock().unwrap().push(e);
        }
        let reply = self.inner.post_json(url, body, timeout)?;
        if let Err(e) = check(resp_def, &reply) {
            self.violations.lock().unwrap().push(e);
        }
        Ok(reply)
    }
}

struct InProcess;

impl Transport for InProcess {
    fn post_json(&self, url: &str, body: &Value, _: Duration) -> Result<Value, BackendError> {
        let path = &url[url.find("/v1/").unwrap()..];
        match stub_handle(path, body) {
            (200, v) => Ok(v),
            (code, v) => Err(BackendError::Status { code, body: v.to_string() }),
        }
    }
}

fn endpoints(base: &str) -> HttpEndpoints {
    HttpEndpoints {
        editor: base.into(),
        segmenter: base.into(),
        mllm: base.into(),
        editor_timeout: Duration::from_secs(10),
        timeout: Duration::from_secs(10),
    }
}

fn sample_image() -> ImageBuffer {
    ImageBuffer::from_fn(24, 16, |x, y| [(x * 10) as u8, (y * 15) as u8, 77, 255]).unwrap()
}

fn route_a_session(transport: Arc<dyn Transport>) -> editflow::planner::SessionOutput {
    let backend = Arc::new(HttpBackend::new(endpoints("http://stub"), transport));
    let engine = Engine::new(backend, EngineConfig::default()).unwrap();
    engine.run_session("wire", &EditRequest::new(sample_image(), "brighten the scene").unwrap()).unwrap()
}

#[test]
fn client_bodies_conform_in_process() {
    let transport = Arc::new(SchemaChecked::new(InProcess));
    let out = route_a_session(transport.clone());
    assert_eq!(out.route(), Some(Route::ADirect));
    assert_eq!(out.ledger.editor_calls, 1);
    assert_eq!(out.image, sample_image());
    assert!(transport.violations.lock().unwrap().is_empty(), "{:?}", transport.violations.lock().unwrap());
    // No retries happened, so every wire call is a ledger entry.
    assert_eq!(transport.calls.load(Ordering::SeqCst), out.ledger.total());

    let backend = HttpBackend::new(endpoints("http://stub/"), transport.clone());
    let client = SessionClient::new(Arc::new(backend), "wire", 0);
    let inst = client.segment(&sample_image(), "everything").unwrap();
    assert_eq!((inst.len(), inst[0].score, inst[0].region), (1, 1.0, PixelBox::new(0, 0, 24, 16)));
    assert!(transport.violations.lock().unwrap().is_empty());
}

#[test]
fn schema_rejects_malformed_bodies() {
    let img = wire::encode_image(&sample_image());
    assert!(check("EditRequest", &json!({ "image": img, "instruction": "" })).is_err());
    assert!(check("SegmentResponse", &json!({ "instances": [{ "mask": img, "box": [0, 0, 1], "score": 0.5 }] })).is_err());
    assert!(check("SegmentResponse", &json!({ "instances": [{ "mask": img, "box": [0, 0, 1, 1], "score": 1.3 }] })).is_err());
    assert!(check("CompleteRequest", &json!({ "role": "x", "parts": [], "temperature": 0 })).is_err());
    assert!(check("CompleteRequest", &json!({ "role": "x", "parts": [{ "type": "audio" }], "temperature": 0 })).is_err());
    let (code, body) = stub_handle(wire::EDIT_PATH, &json!({ "instruction": "x" }));
    assert_eq!(code, 400);
    assert!(check("Error", &body).is_ok());
}

fn read_request(stream: &mut TcpStream) -> Option<(String, Value)> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_string();
    let mut len = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some((path, serde_json::from_slice(&body).unwrap_or(Value::Null)))
}

/// One-connection-at-a-time HTTP server around [`stub_handle`].
fn serve() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let Some((path, body)) = read_request(&mut stream) else { continue };
            let (code, reply) = stub_handle(&path, &body);
            let text = reply.to_string();
            let status = if code == 200 { "200 OK" } else { "400 Bad Request" };
            let _ = write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
        }
    });
    format!("http://{addr}")
}

#[test]
fn session_over_tcp_completes_route_a() {
    let base = serve();
    let transport = Arc::new(SchemaChecked::new(ReqwestTransport::new(Some("t0ken".into())).unwrap()));
    let backend = Arc::new(HttpBackend::new(endpoints(&base), transport.clone()));
    let engine = Engine::new(backend, EngineConfig::default()).unwrap();
    let out = engine.run_session("tcp", &EditRequest::new(sample_image(), "brighten the scene").unwrap()).unwrap();
    assert_eq!(out.route(), Some(Route::ADirect));
    assert_eq!(out.ledger.editor_calls, 1);
    assert_eq!(out.image, sample_image());
    assert!(transport.violations.lock().unwrap().is_empty());
    assert_eq!(transport.calls.load(Ordering::SeqCst), out.ledger.total());

    // A 400 from the server surfaces as a status error.
    let raw = ReqwestTransport::new(None).unwrap();
    let err = raw.post_json(&format!("{base}/v1/edit"), &json!({ "instruction": "x" }), Duration::from_secs(5)).unwrap_err();
    assert!(matches!(err, BackendError::Status { code: 400, .. }), "{err:?}");
}

#[test]
fn closed_port_is_a_backend_error_after_retries() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let config = BackendConfig {
        mode: BackendMode::Live,
        editor_url: Some(url.clone()),
        segmenter_url: Some(url.clone()),
        mllm_url: Some(url),
        timeout_secs: 2,
        editor_timeout_secs: 2,
        ..BackendConfig::default()
    };
    let client = SessionClient::new(config.build().unwrap(), "closed", config.retry_limit);
    let err = client.edit(&sample_image(), "anything").unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)), "{err:?}");
    assert_eq!(client.ledger().editor_calls, 0);
}

#[test]
fn identity_editor_leaves_everything_outside_the_paste_region() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let mut script: MockScript = serde_json::from_slice(&std::fs::read(root.join("mock_script.json")).unwrap()).unwrap();
    let cases = CaseSet::load(&root.join("cases")).unwrap();
    for case in cases.cases.iter().filter(|c| c.oracle_route == Some(Route::CLocal)) {
        script.cases.get_mut(&case.id).unwrap().editor = Some(EditorScript::Mode(EditorMode::Echo));
        let engine = Engine::new(Arc::new(MockBackend::new(script.clone())), EngineConfig::default()).unwrap();
        let out = engine.run_session(&case.id, &EditRequest::new(case.image.clone(), case.instruction.clone()).unwrap()).unwrap();
        assert_eq!(out.route(), Some(Route::CLocal));
        let crop = out.trace.steps.iter().find(|s| s.action == ActionKind::Crop).expect("a crop step");
        let rel: RelBox = serde_json::from_value(crop.calls[0].payload["rel_box"].clone()).unwrap();
        let region = rel_to_pixel(&rel, case.image.dims());
        for y in 0..case.image.height() {
            for x in 0..case.image.width() {
                let inside = x >= region.x && y >= region.y && x < region.x + region.w && y < region.y + region.h;
                if !inside {
                    assert_eq!(out.image.pixel(x, y), case.image.pixel(x, y), "{} ({x}, {y}) outside {region:?}", case.id);
                } else {
                    let (a, b) = (out.image.pixel(x, y), case.image.pixel(x, y));
                    assert!(a.iter().zip(b).all(|(p, q)| (*p as i32 - q as i32).abs() <= 1), "{} ({x}, {y})", case.id);
                }
            }
        }
    }
}
