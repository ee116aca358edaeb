use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use bilevel_conjoint::geometry::Mesh;
use bilevel_conjoint::survey::{http::router, FixedClock, Service};

fn app() -> axum::Router {
    router(Arc::new(Service::new(Arc::new(FixedClock::new(0.0)))))
}

async fn call(app: &axum::Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

fn small_study() -> Value {
    json!({
        "rounds": 2,
        "ga_first": { "population_size": 6, "max_generations": 3, "mutation_prob": 0.1, "mutation_delta": 0.05, "seed": 0 },
        "ga_second": { "population_size": 6, "max_generations": 3, "mutation_prob": 0.1, "mutation_delta": 0.05, "seed": 0 },
        "mcmc": { "iterations": 400, "burn_in": 200, "thin": 2 },
        "seed": 5
    })
}

#[tokio::test]
async fn health_probe() {
    let (s, v) = call(&app(), Method::GET, "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn bad_config_names_the_field() {
    let (s, v) = call(&app(), Method::POST, "/studies", Some(json!({ "rounds": "ten" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "config");
    assert_eq!(v["path"], "rounds");
    let (s, v) = call(&app(), Method::POST, "/studies", Some(json!({ "ga_first": { "populaton_size": 3 } }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["path"].as_str().unwrap().starts_with("ga_first"));
}

#[tokio::test]
async fn question_flow_mesh_and_finalize_guard() {
    let app = app();
    let (s, v) = call(&app, Method::POST, "/studies", Some(small_study())).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let study = v["study"].as_str().unwrap().to_string();
    let (s, v) = call(&app, Method::POST, &format!("/studies/{study}/sessions"), None).await;
    assert_eq!(s, StatusCode::CREATED);
    let session = v["session"].as_str().unwrap().to_string();

    let (s, q) = call(&app, Method::GET, &format!("/sessions/{session}/next"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(q["round"], 1);
    assert_eq!(q["question_type"], "form");
    assert!(q.get("function_profiles").is_none());

    // a purchase answer to a form question is a state error
    let (s, v) = call(&app, Method::POST, &format!("/sessions/{session}/answer"), Some(json!({"type": "purchase", "value": "left"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "state");

    let (s, _) = call(&app, Method::POST, &format!("/sessions/{session}/answer"), Some(json!({"type": "form", "value": "left_better"}))).await;
    assert_eq!(s, StatusCode::OK);
    let (_, q2) = call(&app, Method::GET, &format!("/sessions/{session}/next"), None).await;
    assert_eq!(q2["question_type"], "purchase");
    assert_eq!(q2["form_pair"], q["form_pair"]);
    assert_eq!(q2["function_profiles"][0]["labels"].as_array().unwrap().len(), 2);

    let mesh_url = q["mesh"][0].as_str().unwrap();
    let (s, m) = call(&app, Method::GET, &format!("{mesh_url}?resolution=2"), None).await;
    assert_eq!(s, StatusCode::OK);
    let m: Mesh = serde_json::from_value(m).unwrap();
    assert_eq!((m.vertices.len(), m.faces.len()), Mesh::expected_counts(2));
    let (s, _) = call(&app, Method::GET, &format!("{mesh_url}?resolution=0"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, Method::GET, "/designs/ffffffffffffffff/mesh", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = call(&app, Method::POST, &format!("/studies/{study}/finalize"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(v["message"].as_str().unwrap().contains(&session));
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let app = app();
    let (s, v) = call(&app, Method::GET, "/sessions/st00000000-r0001/next", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "not_found");
    let (s, _) = call(&app, Method::POST, "/studies/nope/sessions", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
