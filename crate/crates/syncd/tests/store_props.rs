//! Random operation sequences against the store, checked step by step
//! against a plain in-memory model, with reopens in between.

use std::collections::BTreeMap;

use chrono::Utc;
use cloakdb_syncd::store::UserRecord;
use cloakdb_syncd::wire::DepositKeyRequest;
use cloakdb_syncd::Store;
use proptest::prelude::*;

const USERS: [&str; 3] = ["a", "b", "c"];

#[derive(Debug, Clone)]
enum Op {
    Send {
        from: usize,
        to: usize,
        len: usize,
    },
    Ack {
        who: usize,
        row: u64,
    },
    Resend {
        who: usize,
        row: u64,
        to: usize,
    },
    Deposit {
        who: usize,
        row: u64,
        to: usize,
        len: usize,
    },
    Delete {
        who: usize,
        row: u64,
        to: usize,
    },
    Reopen,
}

fn op() -> impl Strategy<Value = Op> {
    let u = 0..USERS.len();
    let row = 0u64..12;
    prop_oneof![
        4 => (u.clone(), u.clone(), 0usize..3).prop_map(|(from, to, len)| Op::Send { from, to, len }),
        2 => (u.clone(), row.clone()).prop_map(|(who, row)| Op::Ack { who, row }),
        1 => (u.clone(), row.clone(), u.clone()).prop_map(|(who, row, to)| Op::Resend { who, row, to }),
        3 => (u.clone(), row.clone(), u.clone(), 0usize..3)
            .prop_map(|(who, row, to, len)| Op::Deposit { who, row, to, len }),
        1 => (u.clone(), row, u).prop_map(|(who, row, to)| Op::Delete { who, row, to }),
        1 => Just(Op::Reopen),
    ]
}

#[derive(Default)]
struct Model {
    next: u64,
    /// row id -> (sender, receiver, payload, delivered)
    rows: BTreeMap<u64, (usize, usize, Vec<u8>, bool)>,
    /// (row id, receiver) -> (sender, wrapped key)
    keys: BTreeMap<(u64, usize), (usize, Vec<u8>)>,
}

fn open(dir: &std::path::Path) -> Store {
    Store::open(dir, 8).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn store_matches_model(ops in prop::collection::vec(op(), 1..60)) {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open(dir.path());
        for (i, u) in USERS.iter().enumerate() {
            store.register_user(UserRecord {
                user_id: u.to_string(),
                salt: vec![i as u8; 16],
                digest: vec![0; 32],
                iterations: 1,
                public_key: vec![i as u8 + 1; 32],
            }).unwrap();
        }
        let mut m = Model::default();
        let mut stamp = 0u8;
        for op in ops {
            stamp = stamp.wrapping_add(1);
            match op {
                Op::Send { from, to, len } => {
                    let payload = vec![stamp; len];
                    let got = store.send_row(USERS[from], USERS[to], payload.clone(), Utc::now());
                    if len == 0 || from == to {
                        prop_assert!(got.is_err());
                    } else {
                        let (id, _) = got.unwrap();
                        prop_assert_eq!(id, m.next);
                        m.next += 1;
                        m.rows.insert(id, (from, to, payload, false));
                    }
                }
                Op::Ack { who, row } => {
                    let got = store.acknowledge(USERS[who], &[row]);
                    match m.rows.get_mut(&row) {
                        Some(r) if r.1 == who => {
                            prop_assert_eq!(got.unwrap(), usize::from(!r.3));
                            r.3 = true;
                        }
                        _ => prop_assert!(got.is_err()),
                    }
                }
                Op::Resend { who, row, to } => {
                    let got = store.resend_row(USERS[who], row, USERS[to]);
                    match m.rows.get_mut(&row) {
                        Some(r) if r.0 == who && r.1 == to => {
                            prop_assert_eq!(got.unwrap(), row);
                            r.3 = false;
                        }
                        _ => prop_assert!(got.is_err()),
                    }
                }
                Op::Deposit { who, row, to, len } => {
                    let key = vec![stamp; len];
                    let got = store.deposit_key(USERS[who], DepositKeyRequest {
                        id_row: row,
                        receiver: USERS[to].to_string(),
                        wrapped_key: key.clone(),
                        expiry_date: None,
                    });
                    match m.rows.get(&row) {
                        Some(r) if r.0 == who && r.1 == to && len > 0 => {
                            prop_assert!(got.is_ok());
                            m.keys.insert((row, to), (who, key));
                        }
                        _ => prop_assert!(got.is_err()),
                    }
                }
                Op::Delete { who, row, to } => {
                    let got = store.delete_key(USERS[who], row, USERS[to]);
                    match m.keys.get(&(row, to)) {
                        Some(k) if k.0 == who => {
                            prop_assert!(got.is_ok());
                            m.keys.remove(&(row, to));
                        }
                        _ => prop_assert!(got.is_err()),
                    }
                }
                Op::Reopen => {
                    drop(store);
                    store = open(dir.path());
                }
            }
        }
        drop(store);
        let store = open(dir.path());

        prop_assert_eq!(store.next_row_id(), m.next);
        for (who, user) in USERS.iter().enumerate() {
            let pending: Vec<(u64, Vec<u8>)> = store
                .pending_for(user)
                .into_iter()
                .map(|p| (p.row_id, p.encrypted_row))
                .collect();
            let expected: Vec<(u64, Vec<u8>)> = m
                .rows
                .iter()
                .filter(|(_, r)| r.1 == who && !r.3)
                .map(|(id, r)| (*id, r.2.clone()))
                .collect();
            prop_assert_eq!(pending, expected);
            for row in 0..m.next + 2 {
                let got = store.decrypting_key(user, row, Utc::now()).ok().map(|k| k.wrapped_key);
                prop_assert_eq!(got, m.keys.get(&(row, who)).map(|k| k.1.clone()));
            }
        }
    }
}
