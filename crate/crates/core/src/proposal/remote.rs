use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::replay::TraceRecord;
use super::{Backend, PromptBundle, ProposalError};

pub const DEFAULT_API_KEY_ENV: &str = "TANGRAM_API_KEY";

/// Settings for an OpenAI-style chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub max_concurrent: usize,
    pub min_interval_ms: u64,
    /// Directory receiving verbatim request/response bodies.
    #[serde(default)]
    pub log_dir: Option<PathBuf>,
    /// Replayable trace of raw answers, appended as JSONL.
    #[serde(default)]
    pub trace_path: Option<PathBuf>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 120,
            max_retries: 4,
            backoff_base_ms: 500,
            backoff_max_ms: 16_000,
            max_concurrent: 4,
            min_interval_ms: 0,
            log_dir: None,
            trace_path: None,
        }
    }
}

impl RemoteConfig {
    pub fn validate(&self) -> Result<(), ProposalError> {
        if self.endpoint.trim().is_empty() || self.model.trim().is_empty() {
            return Err(ProposalError::InvalidConfig("remote backend needs an endpoint and a model".into()));
        }
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(ProposalError::InvalidConfig(format!("endpoint `{}` is not an http(s) URL", self.endpoint)));
        }
        if self.max_concurrent == 0 {
            return Err(ProposalError::InvalidConfig("max_concurrent must be at least 1".into()));
        }
        Ok(())
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.backoff_base_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.backoff_max_ms))
    }
}

/// Caps concurrent requests and spaces their start times.
#[derive(Debug)]
pub struct RateLimiter {
    max_concurrent: usize,
    min_interval: Duration,
    state: Mutex<(usize, Option<Instant>)>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a RateLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut st = self.limiter.state.lock().unwrap_or_else(|e| e.into_inner());
        st.0 -= 1;
        self.limiter.freed.notify_one();
    }
}

impl RateLimiter {
    pub fn new(max_concurrent: usize, min_interval: Duration) -> Self {
        RateLimiter {
            max_concurrent: max_concurrent.max(1),
            min_interval,
            state: Mutex::new((0, None)),
            freed: Condvar::new(),
        }
    }

    /// Blocks until a slot is free and the spacing since the previous start
    /// has elapsed.
    pub fn acquire(&self) -> Permit<'_> {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        while st.0 >= self.max_concurrent {
            st = self.freed.wait(st).unwrap_or_else(|e| e.into_inner());
        }
        st.0 += 1;
        let now = Instant::now();
        let start = match st.1 {
            Some(prev) if prev + self.min_interval > now => prev + self.min_interval,
            _ => now,
        };
        st.1 = Some(start);
        drop(st);
        let wait = start.saturating_duration_since(Instant::now());
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
        Permit { limiter: self }
    }
}

pub struct RemoteBackend {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    limiter: RateLimiter,
    log: Option<Mutex<File>>,
    trace: Option<Mutex<File>>,
}

fn append_file(path: &std::path::Path) -> Result<File, ProposalError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(OpenOptions::new().create(true).append(true).open(path)?)
}

fn write_line(sink: &Option<Mutex<File>>, v: &Value) -> Result<(), ProposalError> {
    if let Some(f) = sink {
        let mut f = f.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(f, "{}", serde_json::to_string(v)?)?;
        f.flush()?;
    }
    Ok(())
}

fn data_url(png: &[u8]) -> String {
    format!("data:image/png;base64,{}", B64.encode(png))
}

/// Chat-completions request body for a prompt.
pub(crate) fn request_body(model: &str, bundle: &PromptBundle<'_>) -> Result<Value, ProposalError> {
    let mut content = Vec::new();
    for (i, e) in bundle.exemplars.iter().enumerate() {
        content.push(json!({"type": "text", "text": format!("Example {}:", i + 1)}));
        if !bundle.text_only_exemplars {
            content.push(json!({"type": "image_url", "image_url": {"url": data_url(&e.image.png()?)}}));
        }
        content.push(json!({"type": "text", "text": format!("Answer: {}", e.answer_text)}));
    }
    content.push(json!({"type": "text", "text": bundle.task_text}));
    content.push(json!({"type": "image_url", "image_url": {"url": data_url(&bundle.target_image.png()?)}}));
    if let Some(h) = &bundle.feedback_hint {
        content.push(json!({"type": "text", "text": h}));
    }
    Ok(json!({
        "model": model,
        "temperature": bundle.temperature,
        "messages": [
            {"role": "system", "content": bundle.system_text},
            {"role": "user", "content": content},
        ],
    }))
}

/// Text of the first choice; accepts string or multi-part content.
pub(crate) fn response_text(body: &str) -> Result<String, ProposalError> {
    let v: Value = serde_json::from_str(body).map_err(|e| ProposalError::BadResponse(e.to_string()))?;
    let content = &v["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts.iter().filter_map(|p| p["text"].as_str()).collect::<Vec<_>>().join("")),
        _ => Err(ProposalError::BadResponse("missing choices[0].message.content".into())),
    }
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self, ProposalError> {
        cfg.validate()?;
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{} is not set; sending requests without authorization", cfg.api_key_env);
        }
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build();
        let log = cfg
            .log_dir
            .as_ref()
            .map(|d| append_file(&d.join("requests.jsonl")).map(Mutex::new))
            .transpose()?;
        let trace = cfg.trace_path.as_deref().map(append_file).transpose()?.map(Mutex::new);
        Ok(RemoteBackend {
            limiter: RateLimiter::new(cfg.max_concurrent, Duration::from_millis(cfg.min_interval_ms)),
            cfg,
            agent,
            api_key,
            log,
            trace,
        })
    }

    fn send(&self, body: &str) -> Result<(u16, String), ureq::Error> {
        let _permit = self.limiter.acquire();
        let mut req = self.agent.post(&self.cfg.endpoint).set("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {k}"));
        }
        let resp = req.send_string(body)?;
        let status = resp.status();
        Ok((status, resp.into_string()?))
    }
}

impl Backend for RemoteBackend {
    fn identity(&self) -> String {
        format!("remote({} @ {})", self.cfg.model, self.cfg.endpoint)
    }

    fn complete(&self, bundle: &PromptBundle<'_>) -> Result<String, ProposalError> {
        let request = request_body(&self.cfg.model, bundle)?;
        let body = serde_json::to_string(&request)?;
        let mut attempt = 0;
        loop {
            let (status, text, retryable) = match self.send(&body) {
                Ok((s, t)) => (Some(s), t, false),
                Err(ureq::Error::Status(s, resp)) => {
                    (Some(s), resp.into_string().unwrap_or_default(), s == 429 || s >= 500)
                }
                Err(ureq::Error::Transport(t)) => (None, t.to_string(), true),
            };
            write_line(
                &self.log,
                &json!({
                    "scene_id": bundle.scene_id,
                    "iteration": bundle.iteration,
                    "attempt": attempt,
                    "request": request,
                    "status": status,
                    "response": text,
                }),
            )?;
            match status {
                Some(200..=299) => {
                    let raw = response_text(&text)?;
                    let rec = TraceRecord {
                        scene_id: bundle.scene_id.clone(),
                        iteration: bundle.iteration,
                        raw_text: raw.clone(),
                    };
                    write_line(&self.trace, &serde_json::to_value(rec)?)?;
                    return Ok(raw);
                }
                _ if retryable && attempt < self.cfg.max_retries => {
                    let wait = self.cfg.backoff(attempt);
                    log::warn!(
                        "{} iteration {}: attempt {} failed ({}), retrying in {:?}",
                        bundle.scene_id,
                        bundle.iteration,
                        attempt + 1,
                        status.map_or_else(|| text.clone(), |s| format!("HTTP {s}")),
                        wait
                    );
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Some(s) => return Err(ProposalError::Http { status: s, body: text }),
                None => {
                    return Err(ProposalError::Transport {
                        attempts: attempt + 1,
                        message: text,
                    })
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, make_task, Split, SynthConfig, TaskMode};
    use crate::proposal::{build_prompt, propose, ExemplarPool, PromptOptions, SceneImage};
    use std::io::{BufRead, BufReader, Read};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serves one scripted `(status, body)` per connection and records
    /// request bodies.
    fn mock_server(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<(String, String)>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = seen.clone();
        std::thread::spawn(move || {
            for (status, body) in script {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = line.trim().to_string();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen2.lock().unwrap().push((auth, String::from_utf8(buf).unwrap()));
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (url, seen)
    }

    fn fixture() -> (crate::dataset::SceneAnnotation, ExemplarPool) {
        let scenes = generate_synthetic(&SynthConfig::new(3, Split::Single, 4)).unwrap();
        let pool = ExemplarPool::new(&scenes, 64);
        (scenes[0].clone(), pool)
    }

    fn config(url: String) -> RemoteConfig {
        RemoteConfig {
            endpoint: url,
            model: "test-model".into(),
            api_key_env: "TANGRAM_TEST_KEY_UNSET".into(),
            backoff_base_ms: 1,
            max_retries: 2,
            timeout_secs: 10,
            ..Default::default()
        }
    }

    fn ok_body(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    #[test]
    fn retries_then_succeeds_and_logs() {
        let (url, seen) = mock_server(vec![
            (503, "busy".into()),
            (429, "slow down".into()),
            (200, ok_body("Here: {\"pos\": [4.5, 5.5]}")),
        ]);
        let dir = std::env::temp_dir().join(format!("tangram-remote-{}", std::process::id()));
        let mut cfg = config(url);
        cfg.log_dir = Some(dir.clone());
        cfg.trace_path = Some(dir.join("trace.jsonl"));
        let backend = RemoteBackend::new(cfg).unwrap();
        let (scene, pool) = fixture();
        let task = make_task(&scene, TaskMode::Pos).unwrap();
        let img = SceneImage::from_scene(&scene, 64);
        let opts = PromptOptions { k: 2, temperature: 0.3, ..Default::default() };
        let b = build_prompt(&task, &pool, &img, 2, 0.42, &opts).unwrap();
        let r = propose(&backend, &b).unwrap();
        assert_eq!(r.parsed.unwrap()[0].pos, Some(crate::geometry::Point::new(4.5, 5.5)));

        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        let req: Value = serde_json::from_str(&seen[2].1).unwrap();
        assert_eq!(req["model"], "test-model");
        assert_eq!(req["temperature"], 0.3);
        let parts = req["messages"][1]["content"].as_array().unwrap();
        let images = parts.iter().filter(|p| p["type"] == "image_url").count();
        assert_eq!(images, 3);
        assert!(parts[1]["image_url"]["url"].as_str().unwrap().starts_with("data:image/png;base64,"));
        assert!(parts.last().unwrap()["text"].as_str().unwrap().starts_with("previous IoU=0.42."));

        let log = std::fs::read_to_string(dir.join("requests.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 3);
        let trace = std::fs::read_to_string(dir.join("trace.jsonl")).unwrap();
        let rec: TraceRecord = serde_json::from_str(trace.trim()).unwrap();
        assert_eq!(rec.iteration, 2);
        assert_eq!(rec.raw_text, "Here: {\"pos\": [4.5, 5.5]}");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn gives_up_after_retries() {
        let (url, seen) = mock_server(vec![(500, "a".into()), (500, "b".into()), (500, "c".into())]);
        let backend = RemoteBackend::new(config(url)).unwrap();
        let (scene, pool) = fixture();
        let task = make_task(&scene, TaskMode::Pos).unwrap();
        let img = SceneImage::from_scene(&scene, 64);
        let b = build_prompt(&task, &pool, &img, 1, 0.0, &PromptOptions { k: 0, ..Default::default() }).unwrap();
        match backend.complete(&b) {
            Err(ProposalError::Http { status: 500, body }) => assert_eq!(body, "c"),
            other => panic!("{other:?}"),
        }
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, seen) = mock_server(vec![(400, "bad".into())]);
        let backend = RemoteBackend::new(config(url)).unwrap();
        let (scene, pool) = fixture();
        let task = make_task(&scene, TaskMode::Pos).unwrap();
        let img = SceneImage::from_scene(&scene, 64);
        let b = build_prompt(&task, &pool, &img, 1, 0.0, &PromptOptions { k: 0, ..Default::default() }).unwrap();
        assert!(matches!(backend.complete(&b), Err(ProposalError::Http { status: 400, .. })));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn sends_bearer_key_from_env() {
        let (url, seen) = mock_server(vec![(200, ok_body("{\"angle\": 1}"))]);
        let mut cfg = config(url);
        cfg.api_key_env = "TANGRAM_TEST_KEY_SET".into();
        std::env::set_var("TANGRAM_TEST_KEY_SET", "sk-test");
        let backend = RemoteBackend::new(cfg).unwrap();
        let (scene, pool) = fixture();
        let task = make_task(&scene, TaskMode::Angle).unwrap();
        let img = SceneImage::from_scene(&scene, 64);
        let b = build_prompt(&task, &pool, &img, 1, 0.0, &PromptOptions { k: 0, ..Default::default() }).unwrap();
        backend.complete(&b).unwrap();
        assert_eq!(seen.lock().unwrap()[0].0, "Authorization: Bearer sk-test");
    }

    #[test]
    fn transport_failure_is_reported() {
        // Bind then drop to get a closed port.
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let backend = RemoteBackend::new(config(format!("http://127.0.0.1:{port}/x"))).unwrap();
        let (scene, pool) = fixture();
        let task = make_task(&scene, TaskMode::Pos).unwrap();
        let img = SceneImage::from_scene(&scene, 64);
        let b = build_prompt(&task, &pool, &img, 1, 0.0, &PromptOptions { k: 0, ..Default::default() }).unwrap();
        assert!(matches!(backend.complete(&b), Err(ProposalError::Transport { attempts: 3, .. })));
    }

    #[test]
    fn multipart_content_is_joined() {
        let body = json!({"choices": [{"message": {"content": [{"type": "text", "text": "{\"a\":"}, {"type": "text", "text": "1}"}]}}]});
        assert_eq!(response_text(&body.to_string()).unwrap(), "{\"a\":1}");
        assert!(response_text("{}").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RemoteConfig::default().validate().is_err());
        let mut c = config("ftp://x".into());
        assert!(c.validate().is_err());
        c.endpoint = "https://api.example/v1/chat/completions".into();
        assert!(c.validate().is_ok());
        assert_eq!(c.backoff(0), Duration::from_millis(1));
        assert_eq!(c.backoff(3), Duration::from_millis(8));
        c.backoff_max_ms = 5;
        assert_eq!(c.backoff(3), Duration::from_millis(5));
    }

    #[test]
    fn limiter_caps_concurrency_and_spaces_starts() {
        let limiter = Arc::new(RateLimiter::new(2, Duration::from_millis(5)));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let starts = Arc::new(Mutex::new(Vec::new()));
        let handles: Vec<_> = (0..6)
            .map(|_| {
                let (l, a, p, s) = (limiter.clone(), active.clone(), peak.clone(), starts.clone());
                std::thread::spawn(move || {
                    let _permit = l.acquire();
                    s.lock().unwrap().push(Instant::now());
                    let now = a.fetch_add(1, Ordering::SeqCst) + 1;
                    p.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(10));
                    a.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
        let mut s = starts.lock().unwrap().clone();
        s.sort();
        for w in s.windows(2) {
            assert!(w[1] - w[0] >= Duration::from_millis(4), "{:?}", w[1] - w[0]);
        }
    }
}
