use fedgrant_core::error::JoseError;
use fedgrant_core::jwt::{
    encode_jwt, open_sdata, seal_sdata, verify_and_decode, Algorithm, JoseHeader, KeyMaterial,
};
use proptest::prelude::*;
use serde_json::{Map, Value};

fn claim_map() -> impl Strategy<Value = Map<String, Value>> {
    let leaf = prop_oneof![
        any::<i64>().prop_map(Value::from),
        any::<bool>().prop_map(Value::from),
        "[ -~]{0,24}".prop_map(Value::from),
    ];
    prop::collection::btree_map("[a-z_]{1,10}", leaf, 0..8).prop_map(|m| {
        m.into_iter()
            .filter(|(k, _)| k != "iat" && k != "exp")
            .collect()
    })
}

fn key_from(bytes: [u8; 32]) -> KeyMaterial {
    KeyMaterial::symmetric(bytes).unwrap()
}

proptest! {
    #[test]
    fn round_trip(claims in claim_map(), secret in any::<[u8; 32]>()) {
        let key = key_from(secret);
        let token = encode_jwt(&claims, &JoseHeader::new(Algorithm::HS256), &key).unwrap();
        prop_assert!(!token.contains('='));
        prop_assert_eq!(verify_and_decode(&token, &key, 0, 60).unwrap(), claims);
    }

    #[test]
    fn any_single_bit_flip_is_rejected(
        claims in claim_map(),
        secret in any::<[u8; 32]>(),
        pos in any::<prop::sample::Index>(),
        bit in 0u8..7,
    ) {
        let key = key_from(secret);
        let token = encode_jwt(&claims, &JoseHeader::new(Algorithm::HS256), &key).unwrap();
        let mut bytes = token.into_bytes();
        let i = pos.index(bytes.len());
        bytes[i] ^= 1 << bit;
        let tampered = String::from_utf8_lossy(&bytes).into_owned();
        match verify_and_decode(&tampered, &key, 0, 60) {
            Err(JoseError::MalformedToken(_)) | Err(JoseError::IntegrityFailure) => {}
            other => prop_assert!(false, "tampered token accepted: {:?}", other),
        }
    }

    #[test]
    fn seal_open_round_trip(claims in claim_map(), secret in any::<[u8; 32]>()) {
        let key = key_from(secret);
        let blob = seal_sdata(&claims, &key).unwrap();
        prop_assert!(serde_json::from_str::<Map<String, Value>>(&blob).is_err());
        prop_assert_eq!(open_sdata(&blob, &key).unwrap(), claims);
    }
}

#[test]
fn cross_key_rejection_hundred_pairs() {
    let mut false_accepts = 0;
    for i in 0..100 {
        let k1 = KeyMaterial::generate_symmetric();
        let k2 = KeyMaterial::generate_symmetric();
        let mut claims = Map::new();
        claims.insert("n".into(), i.into());
        let token = encode_jwt(&claims, &JoseHeader::new(Algorithm::HS256), &k1).unwrap();
        if verify_and_decode(&token, &k2, 0, 60).is_ok() {
            false_accepts += 1;
        }
    }
    assert_eq!(false_accepts, 0);
}
