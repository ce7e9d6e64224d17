//! Wire-protocol tests against a minimal in-process HTTP stub.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::thread;

use cascade_lab::cascade::StageModel;
use cascade_lab::remote::{remote_stage_call, RemoteStageModel};
use cascade_lab::token::{Label, TokenSeq, Vocabulary};

/// Serve `responses` one connection each, then stop. Returns the base URL.
fn stub_server(responses: Vec<String>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for body in responses {
            let (mut stream, _) = listener.accept().unwrap();
            // Drain the request headers and body enough to respond.
            let mut buf = [0u8; 4096];
            let _ = stream.read(&mut buf);
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(response.as_bytes()).unwrap();
        }
    });
    format!("http://{addr}/predict")
}

fn client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_millis(2000))
        .build()
        .unwrap()
}

#[test]
fn echo_stub_round_trips_class_output() {
    let url = stub_server(vec![
        r#"{"prediction": {"kind": "class", "value": 2}, "scores": [0.1, 0.2, 0.7], "output_token_count": 1}"#
            .to_string(),
    ]);
    let out = remote_stage_call(&client(), &url, "w0 w1", Some(3)).unwrap();
    assert_eq!(out.prediction, Label::Class(2));
    assert_eq!(out.scores, vec![0.1, 0.2, 0.7]);
    assert_eq!(out.output_token_count, 1);
}

#[test]
fn malformed_body_is_a_stage_error() {
    let url = stub_server(vec!["{not json".to_string()]);
    let err = remote_stage_call(&client(), &url, "w0", Some(2))
        .err()
        .expect("malformed body must fail");
    let msg = err.to_string();
    assert!(msg.contains(&url), "error names the endpoint: {msg}");
    assert!(msg.contains("malformed"), "{msg}");
}

#[test]
fn wrong_scores_arity_is_rejected() {
    let url = stub_server(vec![
        r#"{"prediction": {"kind": "class", "value": 0}, "scores": [1.0], "output_token_count": 1}"#
            .to_string(),
    ]);
    let err = remote_stage_call(&client(), &url, "w0", Some(3))
        .err()
        .expect("arity mismatch must fail");
    let msg = err.to_string();
    assert!(msg.contains("arity 1"), "{msg}");
    assert!(msg.contains("class_count 3"), "{msg}");
}

#[test]
fn remote_stage_model_decodes_through_vocabulary() {
    let url = stub_server(vec![
        r#"{"prediction": {"kind": "class", "value": 1}, "scores": [0.4, 0.6], "output_token_count": 2}"#
            .to_string(),
    ]);
    let vocab = Vocabulary::synthetic(8);
    let model = RemoteStageModel::new(url, 2000, vocab.clone(), 2, 5.0, 10.0).unwrap();
    let x = vocab.encode("w0 w3");
    let out = model.query(&x).unwrap();
    assert_eq!(out.prediction, Label::Class(1));
    assert_eq!(model.cost_of(&x), 5.0);
    assert_eq!(model.param_scale(), 10.0);
}

#[test]
fn unreachable_endpoint_is_a_stage_error() {
    // Bind-then-drop to obtain a port with no listener.
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let url = format!("http://127.0.0.1:{port}/predict");
    let err = remote_stage_call(&client(), &url, "w0", None)
        .err()
        .expect("dead endpoint must fail");
    assert!(err.to_string().contains("request failed"), "{err}");
}
