mod common;

use common::*;
use dbchat_core::demo::{demo_script, mock_gateway, DEMO_GOAL, SALES_DAG};
use dbchat_server::ServerOptions;
use reqwest::multipart::{Form, Part};
use serde_json::{json, Value};

fn paragraph(tag: &str) -> String {
    (0..30).map(|i| format!("{tag}{i:03}")).collect::<Vec<_>>().join(" ")
}

async fn upload(server: &TestServer, space: &str, form: Form) -> reqwest::Response {
    server.client.post(server.url(&format!("/api/knowledge/{space}/documents"))).multipart(form).send().await.unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn upload_counts_and_replaces_documents() {
    let server = start().await;
    let two = format!("{}\n\n{}\n", paragraph("a"), paragraph("b"));
    let resp = upload(&server, "docs", Form::new().part("file", Part::text(two).file_name("report.txt"))).await;
    assert_eq!(resp.status(), 200);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["chunks_indexed"], 2);
    assert_eq!(body["documents"][0]["doc_id"], "report.txt");

    let three = format!("{}\n\n{}\n\n{}", paragraph("c"), paragraph("d"), paragraph("e"));
    let form = Form::new().text("doc_id", "report.txt").part("file", Part::text(three).file_name("other-name"));
    let body: Value = upload(&server, "docs", form).await.json().await.unwrap();
    assert_eq!(body["chunks_indexed"], 3);
    let shown: Value = server.get("/api/knowledge/docs").await.json().await.unwrap();
    assert_eq!(shown["chunks"], 3);
    assert_eq!(shown["documents"], json!(["report.txt"]));
    let spaces: Value = server.get("/api/knowledge").await.json().await.unwrap();
    assert_eq!(spaces["spaces"], json!(["docs"]));
}

#[tokio::test(flavor = "multi_thread")]
async fn upload_rejects_bad_space_and_oversize() {
    let server = start().await;
    let resp = upload(&server, "Bad.Space", Form::new().part("file", Part::text("x").file_name("a"))).await;
    assert_eq!(resp.status(), 400);
    let resp = upload(&server, "ok", Form::new()).await;
    assert_eq!(resp.status(), 400);

    let big = "a".repeat(8 * 1024 * 1024 + 1);
    let resp = upload(&server, "ok", Form::new().part("file", Part::text(big).file_name("big"))).await;
    assert_eq!(resp.status(), 413);
    let exact = "word ".repeat(8 * 1024 * 1024 / 5);
    let resp = upload(&server, "ok", Form::new().part("file", Part::text(exact).file_name("fits"))).await;
    assert_eq!(resp.status(), 200);
}

#[tokio::test(flavor = "multi_thread")]
async fn configured_upload_limit_applies() {
    let options = ServerOptions { max_upload_bytes: 1000, ..ServerOptions::default() };
    let server = start_with(mock_gateway(demo_script()), options).await;
    let resp = upload(&server, "s", Form::new().part("file", Part::text("b".repeat(1001)).file_name("f"))).await;
    assert_eq!(resp.status(), 413);
    // far past the envelope allowance the transport limit answers, also 413
    let resp = upload(&server, "s", Form::new().part("file", Part::text("b".repeat(200_000)).file_name("f"))).await;
    assert_eq!(resp.status(), 413);
}

#[tokio::test(flavor = "multi_thread")]
async fn search_and_question_answering() {
    let server = start_script(demo_script().with("contains:How long do refunds take", "Five business days.")).await;
    let form = Form::new()
        .part("file", Part::text("Refunds take five business days. Mail help@shop.example.").file_name("faq"))
        .part("file", Part::text("The warehouse is in Lyon.").file_name("misc"));
    assert_eq!(upload(&server, "support", form).await.status(), 200);

    let hits: Value = server
        .post_json("/api/knowledge/support/search", json!({ "query": "refunds", "k": 1 }))
        .await
        .json()
        .await
        .unwrap();
    assert_eq!(hits["hits"][0]["hit"]["chunk_id"], "faq#0000");

    let answer: Value = server
        .post_json("/api/knowledge/support/qa", json!({ "question": "How long do refunds take?" }))
        .await
        .json()
        .await
        .unwrap();
    assert_eq!(answer["answer"], "Five business days.");
    assert!(answer["prompt"].as_str().unwrap().contains("[REDACTED:email]"));
    let empty = server.post_json("/api/knowledge/nothing/qa", json!({ "question": "q" })).await;
    assert_eq!(empty.status(), 409);
}

#[tokio::test(flavor = "multi_thread")]
async fn dag_create_validate_and_run() {
    let server = start().await;
    let resp = server.post_json("/api/dags", json!({ "dsl_source": SALES_DAG })).await;
    assert_eq!(resp.status(), 201);
    let created: Value = resp.json().await.unwrap();
    let id = created["dag_id"].as_str().unwrap().to_string();
    assert_eq!(created["nodes"], 6);

    let resp = server.post_json(&format!("/api/dags/{id}/run"), json!({ "inputs": { "goal": DEMO_GOAL } })).await;
    assert_eq!(resp.status(), 200);
    let conv = resp.headers()["x-conversation-id"].to_str().unwrap().to_string();
    let report: Value = resp.json().await.unwrap();
    let charts: Vec<&Value> =
        report["node_results"].as_object().unwrap().values().filter(|v| v["type"] == "chart").collect();
    assert_eq!(charts.len(), 3);
    assert!(report["failures"].as_array().unwrap().is_empty());
    let log: Value = server.get(&format!("/api/conversations/{conv}")).await.json().await.unwrap();
    assert_eq!(log["events"].as_array().unwrap().len(), 9);

    let missing = server.post_json(&format!("/api/dags/{id}/run"), json!({})).await;
    assert_eq!(missing.status(), 400);
    assert_eq!(server.post_json("/api/dags/dag-9999/run", json!({})).await.status(), 404);
    let listed: Value = server.get("/api/dags").await.json().await.unwrap();
    assert_eq!(listed["dags"][0]["dag_id"], id);
    let shown: Value = server.get(&format!("/api/dags/{id}")).await.json().await.unwrap();
    assert_eq!(shown["source"], SALES_DAG);
}

#[tokio::test(flavor = "multi_thread")]
async fn dag_errors_are_422_with_details() {
    let server = start().await;
    let cyclic = "dag \"loop\" {\n  node a: map()\n  node b: map()\n  a -> b\n  b -> a\n}\n";
    let resp = server.post_json("/api/dags", json!({ "dsl_source": cyclic })).await;
    assert_eq!(resp.status(), 422);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["kind"], "invalid");
    let cycle = body["violations"].as_array().unwrap().iter().find(|v| v["violation"] == "cycle").unwrap();
    assert_eq!(cycle["nodes"], json!(["a", "b"]));

    let resp = server.post_json("/api/dags", json!({ "dsl_source": "dag \"x\" {\n  node a map()\n}" })).await;
    assert_eq!(resp.status(), 422);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["kind"], "syntax");
    assert_eq!(body["line"], 2);
}
