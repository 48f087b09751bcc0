use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use econ_agent::{create_session, BackendConfig, SessionConfig, StepEvent};
use econ_cli::{router, AppState, ServerConfig};
use econ_core::data::{load_csv, CsvOptions};
use econ_core::regression::{ols, RegressionSpec};
use serde_json::{json, Value};

const PS_TASK: &str = "Please use the propensity score regression method to compute the effect of tobacco on dbrwt. \
You also need to control the following control variables: rectype, csex, dmar, alcohol, mrace3, adequacy.\n\n\
Besides, you need to consider the following requirements: mrace3, adequacy are multi-class categorical variables. \
Trim the samples with the highest 10% score and the lowest 10% score.\n\n\
You could load the corresponding data from births.csv.\n\n\
At the end of the program, please print the coefficient, standard error and p-value in JSON format.";

const CLUSTER: &str = "Also cluster standard errors by state.";

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../agent/tests/fixtures")
}

fn session_config(backend: BackendConfig, data_dir: &Path, out: &Path) -> SessionConfig {
    SessionConfig { backend, data_dir: data_dir.to_path_buf(), output_path: Some(out.to_path_buf()), ..SessionConfig::default() }
}

async fn start(session: SessionConfig, data_dir: &Path, max_sessions: usize) -> String {
    let config = ServerConfig {
        bind: SocketAddr::from(([127, 0, 0, 1], 0)),
        data_dir: data_dir.to_path_buf(),
        max_sessions,
        session,
        snapshot: None,
    };
    let app = router(AppState::new(config).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

async fn new_session(client: &reqwest::Client, base: &str) -> String {
    let resp = client.post(format!("{base}/sessions")).send().await.unwrap();
    assert_eq!(resp.status(), 201);
    resp.json::<Value>().await.unwrap()["id"].as_str().unwrap().to_string()
}

async fn send(client: &reqwest::Client, base: &str, id: &str, text: &str) -> Value {
    let resp = client.post(format!("{base}/sessions/{id}/messages")).json(&json!({"text": text})).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    resp.json().await.unwrap()
}

/// Event identity without session id and timing fields.
fn shape(e: &Value) -> (String, Option<u64>, Option<u64>) {
    (e["event"].as_str().unwrap().to_string(), e["subtask_id"].as_u64(), e["attempt"].as_u64())
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn http_session_matches_in_process_session() {
    let dir = tempfile::tempdir().unwrap();
    let backend = BackendConfig::Scripted(fixtures().join("followups.json"));

    let local = tokio::task::spawn_blocking({
        let config = session_config(backend.clone(), &fixtures(), &dir.path().join("local.json"));
        move || {
            let mut s = create_session(config).unwrap();
            s.run_request(PS_TASK).unwrap();
            s.handle_followup(CLUSTER).unwrap();
            let events: Vec<Value> = s.events().iter().map(|e| serde_json::to_value(e).unwrap()).collect();
            (events, s.last_report().unwrap().json_text.clone())
        }
    })
    .await
    .unwrap();

    let base = start(session_config(backend, &fixtures(), &dir.path().join("remote.json")), &fixtures(), 4).await;
    let client = reqwest::Client::new();
    let id = new_session(&client, &base).await;
    let first = send(&client, &base, &id, PS_TASK).await;
    assert_eq!(first["accepted"], true);
    assert_eq!(first["outcome"]["kind"], "report");
    let second = send(&client, &base, &id, CLUSTER).await;
    assert_eq!(second["intent"], "continue_refine");
    assert_eq!(second["rerun"], json!([3, 4]));

    let polled: Vec<Value> =
        client.get(format!("{base}/sessions/{id}/events/poll")).send().await.unwrap().json().await.unwrap();
    let remote: Vec<_> = polled.iter().map(shape).collect();
    let expected: Vec<_> = local.0.iter().map(shape).collect();
    assert_eq!(remote, expected);
    let seqs: Vec<u64> = polled.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (1..=polled.len() as u64).collect::<Vec<_>>());

    let body = client.get(format!("{base}/sessions/{id}/result")).send().await.unwrap().text().await.unwrap();
    assert_eq!(body, local.1);

    let plan: Value = client.get(format!("{base}/sessions/{id}/plan")).send().await.unwrap().json().await.unwrap();
    assert_eq!(plan["plan"]["subtasks"].as_array().unwrap().len(), 4);

    let tail: Vec<StepEvent> =
        client.get(format!("{base}/sessions/{id}/events/poll?after=3")).send().await.unwrap().json().await.unwrap();
    assert_eq!(tail.len(), polled.len() - 3);
    assert_eq!(tail[0].seq, 4);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn event_stream_replays_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let config = session_config(BackendConfig::Rules, &fixtures(), &dir.path().join("r.json"));
    let base = start(config, &fixtures(), 2).await;
    let client = reqwest::Client::new();
    let id = new_session(&client, &base).await;
    send(&client, &base, &id, PS_TASK).await;
    let total: Vec<Value> =
        client.get(format!("{base}/sessions/{id}/events/poll")).send().await.unwrap().json().await.unwrap();

    let mut resp = client
        .get(format!("{base}/sessions/{id}/events"))
        .header("Last-Event-ID", "2")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("text/event-stream"));
    let mut text = String::new();
    let wanted = total.len() - 2;
    let deadline = tokio::time::Instant::now() + std::time::Duration::from_secs(10);
    while text.matches("\ndata:").count() + usize::from(text.starts_with("data:")) < wanted {
        let chunk = tokio::time::timeout_at(deadline, resp.chunk()).await.expect("stream stalled").unwrap().unwrap();
        text.push_str(std::str::from_utf8(&chunk).unwrap());
    }
    let ids: Vec<u64> =
        text.lines().filter_map(|l| l.strip_prefix("id:")).map(|v| v.trim().parse().unwrap()).collect();
    assert_eq!(ids, (3..=total.len() as u64).collect::<Vec<_>>());
    assert!(text.contains("event: final_report") || text.contains("event:final_report"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn errors_and_limits() {
    let dir = tempfile::tempdir().unwrap();
    let config = session_config(BackendConfig::Rules, dir.path(), &dir.path().join("r.json"));
    let base = start(config, dir.path(), 1).await;
    let client = reqwest::Client::new();

    for path in ["plan", "events/poll", "result"] {
        let resp = client.get(format!("{base}/sessions/nope/{path}")).send().await.unwrap();
        assert_eq!(resp.status(), 404, "{path}");
        assert!(resp.json::<Value>().await.unwrap()["error"].as_str().unwrap().contains("nope"));
    }
    let resp = client.post(format!("{base}/sessions/nope/messages")).json(&json!({"text": "hi"})).send().await.unwrap();
    assert_eq!(resp.status(), 404);

    let id = new_session(&client, &base).await;
    assert_eq!(client.post(format!("{base}/sessions")).send().await.unwrap().status(), 503);
    assert_eq!(client.get(format!("{base}/sessions/{id}/result")).send().await.unwrap().status(), 404);
    let resp = client.post(format!("{base}/sessions/{id}/messages")).json(&json!({"text": "  "})).send().await.unwrap();
    assert_eq!(resp.status(), 400);
    let resp = client
        .post(format!("{base}/sessions/{id}/messages"))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert!(resp.status().is_client_error());

    let tools: Vec<Value> = client.get(format!("{base}/tools")).send().await.unwrap().json().await.unwrap();
    assert_eq!(tools.len(), 16);
    assert!(tools.iter().any(|t| t["name"] == "ps_matching" && t["summary"].is_object()));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn uploaded_dataset_can_be_referenced() {
    let dir = tempfile::tempdir().unwrap();
    let config = session_config(BackendConfig::Rules, dir.path(), &dir.path().join("r.json"));
    let base = start(config, dir.path(), 4).await;
    let client = reqwest::Client::new();
    let bytes = std::fs::read(fixtures().join("other.csv")).unwrap();

    let form = reqwest::multipart::Form::new()
        .part("file", reqwest::multipart::Part::bytes(bytes.clone()).file_name("../my data.csv"));
    let resp = client.post(format!("{base}/datasets")).multipart(form).send().await.unwrap();
    assert_eq!(resp.status(), 201);
    let info: Value = resp.json().await.unwrap();
    assert_eq!(info["name"], "my_data.csv");
    assert_eq!(info["rows"], 80);
    assert_eq!(info["columns"], json!(["y", "x"]));
    assert!(dir.path().join("my_data.csv").is_file());

    let form =
        reqwest::multipart::Form::new().part("file", reqwest::multipart::Part::bytes(b"x".to_vec()).file_name("a.xlsx"));
    assert_eq!(client.post(format!("{base}/datasets")).multipart(form).send().await.unwrap().status(), 415);
    let form = reqwest::multipart::Form::new()
        .part("file", reqwest::multipart::Part::bytes(b"a,b\n1\n".to_vec()).file_name("broken.csv"));
    assert_eq!(client.post(format!("{base}/datasets")).multipart(form).send().await.unwrap().status(), 422);
    assert!(!dir.path().join("broken.csv").exists());

    let id = new_session(&client, &base).await;
    let reply = send(
        &client,
        &base,
        &id,
        "Please use the OLS method to compute the effect of x on y. There is no control variable.\n\n\
         You could load the corresponding data from my_data.csv.",
    )
    .await;
    assert_eq!(reply["accepted"], true);
    let result: Value = client.get(format!("{base}/sessions/{id}/result")).send().await.unwrap().json().await.unwrap();
    let table = load_csv(&fixtures().join("other.csv"), &CsvOptions::default()).unwrap();
    let fit = ols(&table, &RegressionSpec::new("y", &["x"])).unwrap();
    let i = fit.coefficient_names.iter().position(|n| n == "x").unwrap();
    let b = result["coefficient"].as_f64().unwrap();
    assert!((b - fit.coefficients[i]).abs() < 1e-8 * fit.coefficients[i].abs());
}
