mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::{spawn_generate, StubReply};
use scopeforge::client::{ClientError, GenerationRequest, ModelClient, StopReason};

fn fixed(text: &str) -> common::GenerateFn {
    let text = text.to_string();
    Arc::new(move |_| StubReply::Text {
        text: text.clone(),
        stop_reason: None,
    })
}

#[tokio::test]
async fn fixed_string_end_of_stream() {
    let url = spawn_generate(fixed("return x + 1;")).await;
    let client = ModelClient::new(&url).unwrap();
    let r = client.complete(&GenerationRequest::default().with_prompt("int f(int x) {")).await.unwrap();
    assert_eq!(r.text, "return x + 1;");
    assert_eq!(r.stop_reason, StopReason::EndOfStream);
}

#[tokio::test]
async fn stop_sequence_truncates() {
    let url = spawn_generate(fixed("a();\n}<|endoftext|>junk after")).await;
    let client = ModelClient::new(&url).unwrap();
    let r = client.complete(&GenerationRequest::default().with_prompt("p")).await.unwrap();
    assert_eq!(r.text, "a();\n}");
    assert_eq!(r.stop_reason, StopReason::StopSequence);
}

#[tokio::test]
async fn request_body_follows_wire_format() {
    let seen = Arc::new(std::sync::Mutex::new(None));
    let sink = seen.clone();
    let url = spawn_generate(Arc::new(move |body| {
        *sink.lock().unwrap() = Some(body.clone());
        StubReply::Text {
            text: String::new(),
            stop_reason: Some("max_tokens".into()),
        }
    }))
    .await;
    let client = ModelClient::new(&url).unwrap();
    let req = GenerationRequest {
        max_new_tokens: 17,
        ..GenerationRequest::default().with_prompt("q")
    };
    let r = client.complete(&req).await.unwrap();
    assert_eq!(r.stop_reason, StopReason::MaxTokens);
    let body = seen.lock().unwrap().clone().unwrap();
    assert_eq!(body["prompt"], "q");
    assert_eq!(body["max_new_tokens"], 17);
    assert_eq!(body["stop"][0], "<|endoftext|>");
    assert_eq!(body["temperature"], 0.0);
}

#[tokio::test]
async fn slow_endpoint_times_out() {
    let url = spawn_generate(Arc::new(|_| StubReply::Delayed(Duration::from_secs(5), "late".into()))).await;
    let client = ModelClient::new(&url).unwrap();
    let req = GenerationRequest {
        timeout: Duration::from_millis(200),
        ..GenerationRequest::default().with_prompt("p")
    };
    let err = client.complete(&req).await.unwrap_err();
    assert!(matches!(err, ClientError::Timeout(_)), "{err}");
}

#[tokio::test]
async fn malformed_response() {
    let url = spawn_generate(Arc::new(|_| StubReply::Malformed)).await;
    let client = ModelClient::new(&url).unwrap();
    let err = client.complete(&GenerationRequest::default()).await.unwrap_err();
    assert!(matches!(err, ClientError::MalformedResponse(_)), "{err}");
}

#[tokio::test]
async fn unreachable_endpoint() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let mut client = ModelClient::new(&format!("http://{addr}")).unwrap();
    client.retry_backoff = Duration::from_millis(1);
    let err = client.complete(&GenerationRequest::default()).await.unwrap_err();
    assert!(matches!(err, ClientError::EndpointUnavailable(_)), "{err}");
}

#[tokio::test]
async fn transient_errors_are_retried() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let url = spawn_generate(Arc::new(move |_| {
        if c.fetch_add(1, Ordering::SeqCst) < 2 {
            StubReply::Status(503)
        } else {
            StubReply::Text {
                text: "ok".into(),
                stop_reason: None,
            }
        }
    }))
    .await;
    let mut client = ModelClient::new(&url).unwrap();
    client.retry_backoff = Duration::from_millis(1);
    let r = client.complete(&GenerationRequest::default()).await.unwrap();
    assert_eq!(r.text, "ok");
    assert_eq!(calls.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let url = spawn_generate(Arc::new(move |_| {
        c.fetch_add(1, Ordering::SeqCst);
        StubReply::Status(400)
    }))
    .await;
    let client = ModelClient::new(&url).unwrap();
    assert!(client.complete(&GenerationRequest::default()).await.is_err());
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn batch_preserves_order_and_isolates_failures() {
    let url = spawn_generate(Arc::new(|body| {
        let prompt = body["prompt"].as_str().unwrap_or_default().to_string();
        if prompt == "bad" {
            StubReply::Status(500)
        } else {
            StubReply::Text {
                text: format!("echo:{prompt}"),
                stop_reason: None,
            }
        }
    }))
    .await;
    let client = ModelClient::new(&url).unwrap();
    let tests: Vec<(String, String)> = ["a", "bad", "c"]
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("t{i}"), p.to_string()))
        .collect();
    let out = client.batch_predict(&tests, &GenerationRequest::default()).await;
    let ids: Vec<&str> = out.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ids, ["t0", "t1", "t2"]);
    assert_eq!(out[0].1.as_ref().unwrap().text, "echo:a");
    assert!(out[1].1.is_err());
    assert_eq!(out[2].1.as_ref().unwrap().text, "echo:c");

    let again = client.batch_predict(&tests, &GenerationRequest::default()).await;
    let texts = |o: &[(String, Result<scopeforge::client::GenerationResult, ClientError>)]| -> Vec<Option<String>> {
        o.iter().map(|(_, r)| r.as_ref().ok().map(|g| g.text.clone())).collect()
    };
    assert_eq!(texts(&out), texts(&again));
}

#[tokio::test]
async fn many_prompts_complete_in_input_order() {
    let url = spawn_generate(Arc::new(|body| {
        let prompt = body["prompt"].as_str().unwrap_or_default().to_string();
        let delay = 40 - (prompt.parse::<u64>().unwrap_or(0) % 5) * 10;
        StubReply::Delayed(Duration::from_millis(delay), prompt)
    }))
    .await;
    let client = ModelClient::new(&url).unwrap();
    let tests: Vec<(String, String)> = (0..20).map(|i| (format!("t{i}"), i.to_string())).collect();
    let out = client.batch_predict(&tests, &GenerationRequest::default()).await;
    for (i, (id, r)) in out.iter().enumerate() {
        assert_eq!(id, &format!("t{i}"));
        let r = r.as_ref().unwrap();
        assert_eq!(r.text, i.to_string());
        assert!(r.latency > Duration::ZERO);
    }
}
