//! AES-256-GCM known-answer tests (McGrew & Viega GCM test cases 13-16, as
//! republished in NIST's GCM validation material) plus tamper rejection for
//! row envelopes and wrapped keys.

use cloakdb_core::crypto::{
    decrypt_row, encrypt_row, encrypt_with_nonce, generate_row_key, generate_user_keypair,
    unwrap_key, wrap_key, CipherEnvelope, RowKey,
};

struct Vector {
    key: &'static str,
    iv: &'static str,
    plaintext: &'static str,
    aad: &'static str,
    ciphertext: &'static str,
    tag: &'static str,
}

const K15: &str = "feffe9928665731c6d6a8f9467308308feffe9928665731c6d6a8f9467308308";
const P15: &str = "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a721c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b391aafd255";
const C15: &str = "522dc1f099567d07f47f37a32a84427d643a8cdcbfe5c0c97598a2bd2555d1aa8cb08e48590dbb3da7b08b1056828838c5f61e6393ba7a0abcc9f662898015ad";

const VECTORS: &[Vector] = &[
    Vector {
        key: "0000000000000000000000000000000000000000000000000000000000000000",
        iv: "000000000000000000000000",
        plaintext: "",
        aad: "",
        ciphertext: "",
        tag: "530f8afbc74536b9a963b4f1c4cb738b",
    },
    Vector {
        key: "0000000000000000000000000000000000000000000000000000000000000000",
        iv: "000000000000000000000000",
        plaintext: "00000000000000000000000000000000",
        aad: "",
        ciphertext: "cea7403d4d606b6e074ec5d3baf39d18",
        tag: "d0d1c8a799996bf0265b98b5d48ab919",
    },
    Vector {
        key: K15,
        iv: "cafebabefacedbaddecaf888",
        plaintext: P15,
        aad: "",
        ciphertext: C15,
        tag: "b094dac5d93471bdec1a502270e3cc6c",
    },
    Vector {
        key: K15,
        iv: "cafebabefacedbaddecaf888",
        plaintext: "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a721c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b39",
        aad: "feedfacedeadbeeffeedfacedeadbeefabaddad2",
        ciphertext: "522dc1f099567d07f47f37a32a84427d643a8cdcbfe5c0c97598a2bd2555d1aa8cb08e48590dbb3da7b08b1056828838c5f61e6393ba7a0abcc9f662",
        tag: "76fc6ece0f4e1768cddf8853bb2d551b",
    },
];

#[test]
fn aes256_gcm_known_answers() {
    for (i, v) in VECTORS.iter().enumerate() {
        let key = RowKey::from_slice(&hex::decode(v.key).unwrap()).unwrap();
        let nonce: [u8; 12] = hex::decode(v.iv).unwrap().try_into().unwrap();
        let env = encrypt_with_nonce(
            &hex::decode(v.plaintext).unwrap(),
            &key,
            nonce,
            &hex::decode(v.aad).unwrap(),
        );
        let expected = format!("{}{}", v.ciphertext, v.tag);
        assert_eq!(hex::encode(env.sealed()), expected, "vector {i}");
        assert_eq!(env.nonce(), &nonce);
    }
}

#[test]
fn no_aad_vector_decrypts_through_row_api() {
    let v = &VECTORS[2];
    let key = RowKey::from_slice(&hex::decode(v.key).unwrap()).unwrap();
    let bytes = hex::decode(format!("{}{}{}", v.iv, v.ciphertext, v.tag)).unwrap();
    let env = CipherEnvelope::from_bytes(&bytes).unwrap();
    assert_eq!(
        decrypt_row(&env, &key).unwrap(),
        hex::decode(v.plaintext).unwrap()
    );
}

#[test]
fn every_single_bit_flip_of_an_envelope_is_rejected() {
    let key = generate_row_key().unwrap();
    let bytes = encrypt_row(b"INSERT INTO students(id,name) VALUES(12,'Alice');", &key)
        .unwrap()
        .to_bytes();
    for bit in 0..bytes.len() * 8 {
        let mut t = bytes.clone();
        t[bit / 8] ^= 1 << (bit % 8);
        let env = CipherEnvelope::from_bytes(&t).unwrap();
        assert!(decrypt_row(&env, &key).is_err(), "bit {bit}");
    }
}

#[test]
fn every_single_bit_flip_of_a_wrapped_key_is_rejected() {
    let pair = generate_user_keypair().unwrap();
    let key = generate_row_key().unwrap();
    let wrapped = wrap_key(&key, &pair.public).unwrap();
    for bit in 0..wrapped.len() * 8 {
        let mut t = wrapped.clone();
        t[bit / 8] ^= 1 << (bit % 8);
        assert!(unwrap_key(&t, &pair.secret).is_err(), "bit {bit}");
    }
}

#[test]
fn wrap_round_trip_over_many_keys() {
    let pair = generate_user_keypair().unwrap();
    for _ in 0..1000 {
        let key = generate_row_key().unwrap();
        let wrapped = wrap_key(&key, &pair.public).unwrap();
        assert_eq!(unwrap_key(&wrapped, &pair.secret).unwrap(), key);
    }
}
