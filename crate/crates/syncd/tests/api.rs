//! Black-box tests of the `/v1` HTTP/JSON contract.

use std::net::SocketAddr;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use cloakdb_syncd::{spawn, ServerHandle, SyncdConfig};
use serde_json::{json, Value};

struct Http {
    agent: ureq::Agent,
    base: String,
}

impl Http {
    fn new(server: &ServerHandle) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Http {
            agent,
            base: format!("{}/v1", server.base_url()),
        }
    }

    fn call(
        &self,
        method: &str,
        path: &str,
        token: Option<&str>,
        body: Option<Value>,
    ) -> (u16, Value) {
        let url = format!("{}{}", self.base, path);
        let auth = token.map(|t| format!("Bearer {t}"));
        macro_rules! with_auth {
            ($req:expr) => {{
                let r = $req;
                match &auth {
                    Some(a) => r.header("Authorization", a),
                    None => r,
                }
            }};
        }
        let resp = match (method, body) {
            ("GET", _) => with_auth!(self.agent.get(&url)).call(),
            ("DELETE", _) => with_auth!(self.agent.delete(&url)).call(),
            ("POST", Some(b)) => with_auth!(self.agent.post(&url)).send_json(b),
            ("POST", None) => with_auth!(self.agent.post(&url)).send_empty(),
            _ => unreachable!(),
        }
        .expect("transport");
        let status = resp.status().as_u16();
        let text = resp.into_body().read_to_string().unwrap();
        let value = if text.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text).unwrap_or(Value::String(text))
        };
        (status, value)
    }

    fn register(&self, user: &str, pk: &[u8]) -> (u16, Value) {
        self.call(
            "POST",
            "/users",
            None,
            Some(json!({"user_id": user, "password": format!("pw-{user}"), "public_key": B64.encode(pk)})),
        )
    }

    fn login(&self, user: &str) -> String {
        let (s, v) = self.call(
            "POST",
            "/auth",
            None,
            Some(json!({"user_id": user, "password": format!("pw-{user}")})),
        );
        assert_eq!(s, 200, "{v}");
        v["token"].as_str().unwrap().to_owned()
    }

    fn user(&self, user: &str) -> String {
        let (s, v) = self.register(user, &[user.len() as u8; 32]);
        assert_eq!(s, 201, "{v}");
        self.login(user)
    }

    fn send(&self, token: &str, receiver: &str, payload: &[u8]) -> u64 {
        let (s, v) = self.call(
            "POST",
            "/rows",
            Some(token),
            Some(json!({"receiver": receiver, "encrypted_row": B64.encode(payload)})),
        );
        assert_eq!(s, 201, "{v}");
        v["row_id"].as_u64().unwrap()
    }

    fn deposit(
        &self,
        token: &str,
        id_row: u64,
        receiver: &str,
        key: &[u8],
        expiry: Option<&str>,
    ) -> (u16, Value) {
        self.call(
            "POST",
            "/keys",
            Some(token),
            Some(json!({"id_row": id_row, "receiver": receiver, "wrapped_key": B64.encode(key), "expiry_date": expiry})),
        )
    }

    fn pending(&self, token: &str) -> Vec<Value> {
        let (s, v) = self.call("GET", "/rows/pending", Some(token), None);
        assert_eq!(s, 200, "{v}");
        v.as_array().unwrap().clone()
    }
}

fn config(dir: &Path) -> SyncdConfig {
    let mut c = SyncdConfig::new(dir);
    c.password_iterations = 1_000;
    c.worker_threads = 2;
    c
}

fn start(dir: &Path) -> ServerHandle {
    spawn(config(dir), SocketAddr::from(([127, 0, 0, 1], 0))).unwrap()
}

fn assert_error(resp: (u16, Value), status: u16, code: &str) {
    assert_eq!(resp.0, status, "{}", resp.1);
    assert_eq!(resp.1["error"], code, "{}", resp.1);
    assert!(resp.1["message"].is_string());
}

#[test]
fn registration_and_authentication() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path());
    let http = Http::new(&server);

    let (s, v) = http.register("u1", &[7; 32]);
    assert_eq!(s, 201);
    assert_eq!(v["user_id"], "u1");
    assert_error(http.register("u1", &[8; 32]), 409, "conflict");
    assert_error(
        http.call(
            "POST",
            "/users",
            None,
            Some(json!({"user_id": "u2", "password": "", "public_key": B64.encode([1; 32])})),
        ),
        400,
        "bad_request",
    );
    assert_error(
        http.call(
            "POST",
            "/users",
            None,
            Some(json!({"user_id": "bad id", "password": "x", "public_key": B64.encode([1; 32])})),
        ),
        400,
        "bad_request",
    );
    assert_error(
        http.call(
            "POST",
            "/users",
            None,
            Some(json!({"user_id": "u3", "password": "x", "public_key": "not base64!"})),
        ),
        400,
        "bad_request",
    );

    // wrong password and unknown user are indistinguishable
    let wrong = http.call(
        "POST",
        "/auth",
        None,
        Some(json!({"user_id": "u1", "password": "nope"})),
    );
    let unknown = http.call(
        "POST",
        "/auth",
        None,
        Some(json!({"user_id": "ghost", "password": "nope"})),
    );
    assert_error(wrong.clone(), 401, "invalid_credentials");
    assert_eq!(wrong, unknown);

    let token = http.login("u1");
    let (s, v) = http.call("GET", "/users/u1/pubkey", Some(&token), None);
    assert_eq!(s, 200);
    assert_eq!(v["public_key"], B64.encode([7; 32]));
    assert_error(
        http.call("GET", "/users/ghost/pubkey", Some(&token), None),
        404,
        "not_found",
    );

    // every non-registration endpoint needs a token
    assert_error(http.call("GET", "/users", None, None), 401, "unauthorized");
    assert_error(
        http.call("GET", "/rows/pending", Some("forged"), None),
        401,
        "unauthorized",
    );
    assert_error(
        http.call("GET", "/users/u1/pubkey", None, None),
        401,
        "unauthorized",
    );
    assert_error(
        http.call("POST", "/rows", None, Some(json!({}))),
        401,
        "unauthorized",
    );
    assert_error(
        http.call("POST", "/rows/ack", None, Some(json!({"row_id": 0}))),
        401,
        "unauthorized",
    );
    assert_error(
        http.call(
            "POST",
            "/rows/0/resend",
            None,
            Some(json!({"receiver": "u1"})),
        ),
        401,
        "unauthorized",
    );
    assert_error(
        http.call("POST", "/keys", None, Some(json!({}))),
        401,
        "unauthorized",
    );
    assert_error(http.call("GET", "/keys/0", None, None), 401, "unauthorized");
    assert_error(
        http.call("DELETE", "/keys/0/u1", None, None),
        401,
        "unauthorized",
    );
    assert_error(
        http.call("GET", "/nowhere", Some(&token), None),
        404,
        "not_found",
    );
}

#[test]
fn user_listing_is_sorted_and_carries_no_digests() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path());
    let http = Http::new(&server);
    let t = http.user("carol");
    let (s, v) = http.call("GET", "/users", Some(&t), None);
    assert_eq!((s, v.as_array().unwrap().len()), (200, 1));
    http.user("alice");
    http.user("bob");
    let (_, v) = http.call("GET", "/users", Some(&t), None);
    let ids: Vec<&str> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|u| u["user_id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["alice", "bob", "carol"]);
    for u in v.as_array().unwrap() {
        let keys: Vec<&String> = u.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["public_key", "user_id"]);
    }
}

#[test]
fn send_pending_ack_and_resend() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path());
    let http = Http::new(&server);
    let a = http.user("alice");
    let b = http.user("bob");

    assert!(http.pending(&b).is_empty());
    let r1 = http.send(&a, "bob", b"first");
    let r2 = http.send(&a, "bob", b"second");
    assert!(r2 > r1);

    let rows = http.pending(&b);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["row_id"], r1);
    assert_eq!(rows[0]["sender"], "alice");
    assert_eq!(rows[0]["receiver"], "bob");
    assert_eq!(
        B64.decode(rows[0]["encrypted_row"].as_str().unwrap())
            .unwrap(),
        b"first"
    );
    let date = rows[0]["submission_date"].as_str().unwrap();
    assert!(
        chrono::DateTime::parse_from_rfc3339(date)
            .unwrap()
            .offset()
            .local_minus_utc()
            == 0
    );

    assert_error(
        http.call(
            "POST",
            "/rows",
            Some(&a),
            Some(json!({"receiver": "ghost", "encrypted_row": B64.encode(b"x")})),
        ),
        404,
        "not_found",
    );
    assert_error(
        http.call(
            "POST",
            "/rows",
            Some(&a),
            Some(json!({"receiver": "bob", "encrypted_row": ""})),
        ),
        400,
        "bad_request",
    );
    assert_error(
        http.call(
            "POST",
            "/rows",
            Some(&a),
            Some(json!({"receiver": "alice", "encrypted_row": B64.encode(b"x")})),
        ),
        400,
        "bad_request",
    );
    // failed sends persisted nothing
    assert_eq!(http.pending(&b).len(), 2);

    let (s, v) = http.call("POST", "/rows/ack", Some(&b), Some(json!({"row_id": r1})));
    assert_eq!((s, v["acknowledged"].as_u64()), (200, Some(1)));
    assert_eq!(http.pending(&b).len(), 1);
    // only the receiver can acknowledge
    assert_error(
        http.call("POST", "/rows/ack", Some(&a), Some(json!({"row_id": r2}))),
        404,
        "not_found",
    );
    assert_error(
        http.call("POST", "/rows/ack", Some(&b), Some(json!({}))),
        400,
        "bad_request",
    );
    let (s, v) = http.call(
        "POST",
        "/rows/ack",
        Some(&b),
        Some(json!({"row_ids": [r1, r2]})),
    );
    assert_eq!((s, v["acknowledged"].as_u64()), (200, Some(1)));
    assert!(http.pending(&b).is_empty());

    let (s, v) = http.call(
        "POST",
        &format!("/rows/{r1}/resend"),
        Some(&a),
        Some(json!({"receiver": "bob"})),
    );
    assert_eq!((s, v["row_id"].as_u64()), (200, Some(r1)));
    let rows = http.pending(&b);
    assert_eq!(rows.len(), 1);
    assert_eq!(
        B64.decode(rows[0]["encrypted_row"].as_str().unwrap())
            .unwrap(),
        b"first"
    );

    assert_error(
        http.call(
            "POST",
            &format!("/rows/{r1}/resend"),
            Some(&b),
            Some(json!({"receiver": "bob"})),
        ),
        403,
        "forbidden",
    );
    assert_error(
        http.call(
            "POST",
            "/rows/9999/resend",
            Some(&a),
            Some(json!({"receiver": "bob"})),
        ),
        404,
        "not_found",
    );
    assert_error(
        http.call(
            "POST",
            &format!("/rows/{r1}/resend"),
            Some(&a),
            Some(json!({"receiver": "alice"})),
        ),
        400,
        "bad_request",
    );
    assert_error(
        http.call(
            "POST",
            "/rows/abc/resend",
            Some(&a),
            Some(json!({"receiver": "bob"})),
        ),
        400,
        "bad_request",
    );
}

#[test]
fn key_deposit_fetch_expiry_and_delete() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path());
    let http = Http::new(&server);
    let a = http.user("alice");
    let b = http.user("bob");
    let c = http.user("carol");
    let row = http.send(&a, "bob", b"payload");

    assert_error(
        http.call("GET", &format!("/keys/{row}"), Some(&b), None),
        404,
        "denied",
    );
    assert_eq!(http.deposit(&a, row, "bob", b"wrapped-1", None).0, 204);
    let (s, v) = http.call("GET", &format!("/keys/{row}"), Some(&b), None);
    assert_eq!(s, 200);
    assert_eq!(v["id_row"], row);
    assert_eq!(v["sender"], "alice");
    assert_eq!(v["receiver"], "bob");
    assert_eq!(
        B64.decode(v["wrapped_key"].as_str().unwrap()).unwrap(),
        b"wrapped-1"
    );

    // a second deposit replaces the first
    assert_eq!(http.deposit(&a, row, "bob", b"wrapped-2", None).0, 204);
    let (_, v) = http.call("GET", &format!("/keys/{row}"), Some(&b), None);
    assert_eq!(
        B64.decode(v["wrapped_key"].as_str().unwrap()).unwrap(),
        b"wrapped-2"
    );

    // the sender is taken from the token
    assert_error(
        http.deposit(&c, row, "bob", b"evil", None),
        403,
        "forbidden",
    );
    assert_error(
        http.deposit(&a, row, "carol", b"k", None),
        400,
        "bad_request",
    );
    assert_error(http.deposit(&a, 4242, "bob", b"k", None), 404, "not_found");
    assert_error(http.deposit(&a, row, "bob", b"", None), 400, "bad_request");
    // other users see nothing for this row
    assert_error(
        http.call("GET", &format!("/keys/{row}"), Some(&c), None),
        404,
        "denied",
    );
    assert_error(
        http.call("GET", &format!("/keys/{row}"), Some(&a), None),
        404,
        "denied",
    );

    let past = http.send(&a, "bob", b"old");
    assert_eq!(
        http.deposit(&a, past, "bob", b"k", Some("2001-01-01T00:00:00Z"))
            .0,
        204
    );
    assert_error(
        http.call("GET", &format!("/keys/{past}"), Some(&b), None),
        404,
        "denied",
    );
    let future = http.send(&a, "bob", b"new");
    assert_eq!(
        http.deposit(&a, future, "bob", b"k", Some("2999-01-01T00:00:00Z"))
            .0,
        204
    );
    let (s, v) = http.call("GET", &format!("/keys/{future}"), Some(&b), None);
    assert_eq!(s, 200);
    assert_eq!(v["expiry_date"], "2999-01-01T00:00:00Z");

    assert_error(
        http.call("DELETE", &format!("/keys/{row}/bob"), Some(&b), None),
        403,
        "forbidden",
    );
    assert_eq!(
        http.call("DELETE", &format!("/keys/{row}/bob"), Some(&a), None)
            .0,
        204
    );
    assert_error(
        http.call("GET", &format!("/keys/{row}"), Some(&b), None),
        404,
        "denied",
    );
    assert_error(
        http.call("DELETE", &format!("/keys/{row}/bob"), Some(&a), None),
        404,
        "not_found",
    );
    assert_error(
        http.call("GET", "/keys/xyz", Some(&b), None),
        400,
        "bad_request",
    );

    // deleting the key leaves the pending row in place
    let ids: Vec<u64> = http
        .pending(&b)
        .iter()
        .map(|r| r["row_id"].as_u64().unwrap())
        .collect();
    assert!(ids.contains(&row));
}

#[test]
fn mailboxes_are_isolated_between_three_users() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path());
    let http = Http::new(&server);
    let tokens: Vec<String> = ["u1", "u2", "u3"].iter().map(|u| http.user(u)).collect();
    let users = ["u1", "u2", "u3"];
    let mut sent = Vec::new();
    for (i, from) in users.iter().enumerate() {
        for (j, to) in users.iter().enumerate() {
            if i != j {
                let payload = format!("{from}->{to}");
                let id = http.send(&tokens[i], to, payload.as_bytes());
                assert_eq!(
                    http.deposit(&tokens[i], id, to, payload.as_bytes(), None).0,
                    204
                );
                sent.push((id, i, j));
            }
        }
    }
    for (j, me) in users.iter().enumerate() {
        let rows = http.pending(&tokens[j]);
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert_eq!(r["receiver"], *me);
            let body = String::from_utf8(B64.decode(r["encrypted_row"].as_str().unwrap()).unwrap())
                .unwrap();
            assert!(body.ends_with(&format!("->{me}")));
        }
        for &(id, _, to) in &sent {
            let resp = http.call("GET", &format!("/keys/{id}"), Some(&tokens[j]), None);
            if to == j {
                assert_eq!(resp.0, 200);
            } else {
                assert_error(resp, 404, "denied");
            }
        }
    }
    // acknowledging another user's row is refused
    let (id, _, _) = sent.iter().find(|(_, _, to)| *to == 2).copied().unwrap();
    assert_error(
        http.call(
            "POST",
            "/rows/ack",
            Some(&tokens[1]),
            Some(json!({"row_id": id})),
        ),
        404,
        "not_found",
    );
}

#[test]
fn state_and_row_ids_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let mut last = 0;
    {
        let server = start(dir.path());
        let http = Http::new(&server);
        let a = http.user("alice");
        http.user("bob");
        for i in 0..5 {
            last = http.send(&a, "bob", format!("r{i}").as_bytes());
        }
        assert_eq!(http.deposit(&a, last, "bob", b"key", None).0, 204);
        server.shutdown().unwrap();
    }
    let server = start(dir.path());
    let http = Http::new(&server);
    // tokens are per instance; credentials persist
    let a = http.login("alice");
    let b = http.login("bob");
    assert_eq!(http.pending(&b).len(), 5);
    assert_eq!(
        http.call("GET", &format!("/keys/{last}"), Some(&b), None).0,
        200
    );
    let next = http.send(&a, "bob", b"after restart");
    assert!(next > last);
    assert_error(http.register("alice", &[1; 32]), 409, "conflict");
}

#[test]
fn concurrent_sends_get_distinct_increasing_ids() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path());
    let http = Http::new(&server);
    let a = http.user("alice");
    http.user("bob");
    let ids: Vec<u64> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let http = Http::new(&server);
                let a = a.clone();
                s.spawn(move || {
                    (0..25)
                        .map(|_| http.send(&a, "bob", b"x"))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().unwrap())
            .collect()
    });
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), 100);
}

#[test]
fn persisted_state_holds_no_password_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path());
    let http = Http::new(&server);
    http.user("alice");
    http.user("bob");
    server.shutdown().unwrap();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let bytes = std::fs::read(entry.unwrap().path()).unwrap();
        for pw in ["pw-alice", "pw-bob"] {
            assert!(!bytes.windows(pw.len()).any(|w| w == pw.as_bytes()));
            let encoded = B64.encode(pw);
            assert!(!bytes
                .windows(encoded.len())
                .any(|w| w == encoded.as_bytes()));
        }
    }
}
