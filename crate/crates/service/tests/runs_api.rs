mod common;

use common::*;
use serde_json::{json, Value};

fn kinds(lines: &[String]) -> Vec<String> {
    lines
        .iter()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["kind"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn program_run_completes_and_replays_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), |_| {}).await;
    let program = labrun_core::corpus::clean_program(3);
    let (status, run) = srv.post("/runs", json!({ "program": program })).await;
    assert_eq!(status, 201, "{run}");
    assert_eq!(run["status"], "running");
    let id = run["id"].as_str().unwrap();
    let done = srv.wait_run(id, is_terminal).await;
    assert_eq!(done["status"], "completed");

    let (lines, close) = srv.stream(id, 0).await;
    assert_eq!(close.unwrap().code, 1000.into());
    assert_eq!(lines, log_lines(dir.path(), &done));
    assert_eq!(lines.len() as u64, done["events"].as_u64().unwrap());
    for (i, l) in lines.iter().enumerate() {
        let env: Value = serde_json::from_str(l).unwrap();
        assert_eq!(env["seq"], i as u64);
        assert_eq!(env["run_id"], id);
        assert!(env["timestamp"].as_str().unwrap().ends_with('Z'));
    }
    assert_eq!(kinds(&lines).last().unwrap(), "run_finished");

    let (suffix, _) = srv.stream(id, 5).await;
    assert_eq!(suffix, lines[5..]);
    let (past_end, _) = srv.stream(id, 10_000).await;
    assert!(past_end.is_empty());

    let (_, list) = srv.get("/runs").await;
    assert_eq!(list.as_array().unwrap().len(), 1);
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn intake_errors_map_to_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), |_| {}).await;

    let (s, body) = srv
        .post(
            "/runs",
            json!({ "program": "take_out_cells(containers=[\"ContainerZ\"])" }),
        )
        .await;
    assert_eq!(s, 400);
    assert_eq!(body["error"], "unrepairable_program");
    assert!(body["findings"]
        .as_array()
        .unwrap()
        .iter()
        .any(|f| f["kind"] == "unknown_container"));

    let (s, body) = srv.post("/runs", json!({ "program": "shake(" })).await;
    assert_eq!((s, body["error"].as_str()), (400, Some("parse_failure")));

    let (s, body) = srv
        .post("/runs", json!({ "program": "", "env": "mars" }))
        .await;
    assert_eq!((s, body["error"].as_str()), (404, Some("unknown_env")));

    let (s, _) = srv
        .post("/runs", json!({ "program": "", "query": HEPG2 }))
        .await;
    assert_eq!(s, 400);
    let (s, _) = srv
        .post("/runs", json!({ "program": "", "faults": ["9@x"] }))
        .await;
    assert_eq!(s, 400);
    let (s, _) = srv
        .post("/runs", json!({ "program": "", "colour": 1 }))
        .await;
    assert_eq!(s, 400);

    let (s, body) = srv
        .post(
            "/runs",
            json!({ "query": "How to resuscitate CHO cells in detail?" }),
        )
        .await;
    assert_eq!((s, body["error"].as_str()), (502, Some("provider_failure")));

    let (s, _) = srv.get("/runs/00000000-0000-0000-0000-000000000000").await;
    assert_eq!(s, 404);
    let (s, _) = srv.get("/runs/nope").await;
    assert_eq!(s, 404);
    let (s, _) = srv.post("/runs/nope/stop", json!({})).await;
    assert_eq!(s, 404);

    let ws =
        tokio_tungstenite::connect_async(srv.ws_url("00000000-0000-0000-0000-000000000000", 0))
            .await;
    match ws {
        Err(tokio_tungstenite::tungstenite::Error::Http(resp)) => assert_eq!(resp.status(), 404),
        other => panic!("expected 404, got {:?}", other.map(|_| ())),
    }
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn query_runs_attach_the_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), |_| {}).await;
    let (s, run) = srv.post("/runs", json!({ "query": HEPG2 })).await;
    assert_eq!(s, 201);
    assert!(run["transcript"]
        .as_str()
        .unwrap()
        .contains("take_out_cells"));
    let done = srv.wait_run(run["id"].as_str().unwrap(), is_terminal).await;
    assert_eq!(done["status"], "completed");
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn emergency_stop_lands_between_micro_phases() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), |c| c.step_delay_ms = 20).await;
    let program = labrun_core::corpus::long_program(30, 1);
    let (_, run) = srv.post("/runs", json!({ "program": program })).await;
    let id = run["id"].as_str().unwrap().to_string();
    srv.wait_run(&id, |r| r["events"].as_u64().unwrap() > 6)
        .await;

    let (s, stopped) = srv.post(&format!("/runs/{id}/stop"), json!({})).await;
    assert_eq!(s, 200, "{stopped}");
    assert_eq!(stopped["status"], "aborted");
    let (s, again) = srv.post(&format!("/runs/{id}/stop"), json!({})).await;
    assert_eq!(
        (s, again["error"].as_str()),
        (409, Some("already_terminal"))
    );

    let (lines, _) = srv.stream(&id, 0).await;
    let k = kinds(&lines);
    assert_eq!(k.last().unwrap(), "run_finished");
    let last: Value = serde_json::from_str(lines.last().unwrap()).unwrap();
    assert_eq!(last["payload"]["status"], "aborted");
    let stop: Value = serde_json::from_str(&lines[lines.len() - 2]).unwrap();
    assert_eq!(stop["kind"], "alert_raised");
    assert_eq!(stop["payload"]["cause"]["type"], "operator_stop");
    assert!(!k[..k.len() - 2].contains(&"alert_raised".to_string()));
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn alert_resolution_paths() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), |_| {}).await;

    let (_, run) = srv
        .post("/runs", json!({ "query": HEPG2, "faults": ["2@1"] }))
        .await;
    let id = run["id"].as_str().unwrap().to_string();
    let suspended = srv
        .wait_run(&id, |r| r["status"] == "awaiting_replan")
        .await;
    let alert = &suspended["alerts"][0];
    assert_eq!(alert["state"]["state"], "open");
    assert_eq!(alert["cause"]["scenario_id"], 2);

    let (s, _) = srv
        .post(
            &format!("/runs/{id}/alerts/7/resolve"),
            json!({ "action": "abort" }),
        )
        .await;
    assert_eq!(s, 404);
    let (s, body) = srv
        .post(
            &format!("/runs/{id}/alerts/x/resolve"),
            json!({ "action": "abort" }),
        )
        .await;
    assert_eq!((s, body["error"].as_str()), (404, Some("unknown_alert")));
    let (s, _) = srv
        .post(
            &format!("/runs/{id}/alerts/1/resolve"),
            json!({ "action": "teleport" }),
        )
        .await;
    assert_eq!(s, 400);
    let (s, body) = srv
        .post(
            &format!("/runs/{id}/alerts/1/resolve"),
            json!({ "action": "abort" }),
        )
        .await;
    assert_eq!((s, body["status"].as_str()), (200, Some("aborted")));
    let (s, body) = srv
        .post(
            &format!("/runs/{id}/alerts/1/resolve"),
            json!({ "action": "abort" }),
        )
        .await;
    assert_eq!((s, body["error"].as_str()), (409, Some("alert_not_open")));

    let (_, run) = srv
        .post("/runs", json!({ "query": HEPG2, "faults": ["2@1"] }))
        .await;
    let id = run["id"].as_str().unwrap().to_string();
    let suspended = srv
        .wait_run(&id, |r| r["status"] == "awaiting_replan")
        .await;
    let (s, body) = srv
        .post(
            &format!("/runs/{id}/alerts/1/resolve"),
            json!({ "action": "replace_program", "program": "shake(" }),
        )
        .await;
    assert_eq!((s, body["error"].as_str()), (400, Some("parse_failure")));
    let (s, body) = srv
        .post("/check", json!({ "program": remaining(&suspended) }))
        .await;
    assert_eq!(
        s, 400,
        "from the initial lab the dish is still in the incubator: {body}"
    );
    let (s, body) = srv
        .post(
            "/check",
            json!({ "program": remaining(&suspended), "run": id }),
        )
        .await;
    assert_eq!(s, 200, "{body}");
    let (s, body) = srv
        .post(
            "/check",
            json!({ "program": "remove_liquid(volume=5, container=\"TubeA\")", "run": id }),
        )
        .await;
    assert_eq!(s, 400);
    assert!(!body["findings"].as_array().unwrap().is_empty());
    let (s, body) = srv
        .post(
            &format!("/runs/{id}/alerts/1/resolve"),
            json!({ "action": "replace_program", "program": remaining(&suspended) }),
        )
        .await;
    assert_eq!(s, 200, "{body}");
    assert_eq!(body["status"], "running");
    assert_eq!(body["revision"], 1);
    let done = srv.wait_run(&id, is_terminal).await;
    assert_eq!(done["status"], "completed");
    assert_eq!(done["alerts"][0]["state"]["state"], "resolved");
    let (s, _) = srv
        .post("/check", json!({ "program": "", "run": id }))
        .await;
    assert_eq!(s, 409);
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn idempotency_key_dedupes_retries() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), |_| {}).await;
    let body = json!({ "program": labrun_core::corpus::clean_program(1) });
    let (a, b) = tokio::join!(
        srv.post_keyed("/runs", body.clone(), Some("k-1")),
        srv.post_keyed("/runs", body.clone(), Some("k-1")),
    );
    assert_eq!(a, b);
    let (c, second) = srv.post_keyed("/runs", body.clone(), Some("k-2")).await;
    assert_eq!(c, 201);
    srv.wait_run(second["id"].as_str().unwrap(), is_terminal)
        .await;
    let (_, list) = srv.get("/runs").await;
    assert_eq!(list.as_array().unwrap().len(), 2);

    let id = a.1["id"].as_str().unwrap().to_string();
    srv.wait_run(&id, is_terminal).await;
    let stop = format!("/runs/{id}/stop");
    let first = srv.post_keyed(&stop, json!({}), Some("s")).await;
    let retry = srv.post_keyed(&stop, json!({}), Some("s")).await;
    assert_eq!(first, retry);
    srv.shutdown().await;

    // The journal survives a restart.
    let srv = start(dir.path(), |_| {}).await;
    assert_eq!(srv.post_keyed("/runs", body, Some("k-1")).await, a);
    let (_, list) = srv.get("/runs").await;
    assert_eq!(list.as_array().unwrap().len(), 2);
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn check_endpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), |_| {}).await;
    let (s, body) = srv
        .post(
            "/check",
            json!({ "program": "take_out_cells(containers=\"ContainerA\")\nremove_liquid(volume=\"5\", container=\"ContainerA\")" }),
        )
        .await;
    assert_eq!(s, 200, "{body}");
    assert!(body["findings"]
        .as_array()
        .unwrap()
        .iter()
        .any(|f| f["kind"] == "type_repair"));
    let repaired = body["program"].as_str().unwrap();
    assert!(
        repaired.contains("containers=[\"ContainerA\"]"),
        "{repaired}"
    );
    let (s, again) = srv.post("/check", json!({ "program": repaired })).await;
    assert_eq!(s, 200);
    assert!(again["findings"].as_array().unwrap().is_empty());
    assert_eq!(again["program"], repaired);

    let (s, body) = srv
        .post("/check", json!({ "program": "remove_liquid(volume=5" }))
        .await;
    assert_eq!((s, body["error"].as_str()), (400, Some("parse_failure")));
    let (s, body) = srv
        .post(
            "/check",
            json!({ "program": labrun_core::fixtures::FREEZE_HUVEC }),
        )
        .await;
    assert_eq!(s, 400);
    assert!(body["findings"]
        .as_array()
        .unwrap()
        .iter()
        .any(|f| f["kind"] == "precondition_violation"));
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn catalog_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), |_| {}).await;
    let (s, h) = srv.get("/health").await;
    assert_eq!((s, h["status"].as_str()), (200, Some("ok")));
    let (_, bench) = srv.get("/bench").await;
    assert_eq!(bench.as_array().unwrap().len(), 70);
    let (_, rubric) = srv.get("/rubric").await;
    assert_eq!(rubric.as_array().unwrap().len(), 5);
    let (_, envs) = srv.get("/envs").await;
    assert_eq!(envs, json!(["default"]));
    srv.shutdown().await;
}
