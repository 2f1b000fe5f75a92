mod common;

use common::*;
use fedgrant_core::jwt::decode_unverified;
use fedgrant_core::share_grant::{
    issue_identity_share_token, validate_share_grant, GrantDecision, NoScim,
};
use fedgrant_core::token::{
    build_identity_share_claims, parse_form, AccessTokenRecord, IdentityShareClaims, Scope,
    SubjectData, TokenOrigin,
};
use proptest::prelude::*;
use serde_json::Value;

fn subject_data() -> impl Strategy<Value = SubjectData> {
    (
        "[a-zA-Z0-9_.-]{1,24}",
        "[a-z0-9]{1,12}@[a-z]{1,10}\\.[a-z]{2,4}",
        proptest::collection::btree_map("x_[a-z]{1,8}", any::<i32>(), 0..4),
    )
        .prop_map(|(s, e, extras)| {
            extras
                .into_iter()
                .fold(SubjectData::new(s, e), |d, (k, v)| {
                    d.with_extra(&k, v).unwrap()
                })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn claims_round_trip(data in subject_data(), now in 0i64..4_000_000_000, ttl in 1i64..100_000, n in 1usize..4) {
        let aud: Vec<String> = (0..n).map(|i| format!("https://peer{i}.example/idp")).collect();
        let claims = build_identity_share_claims(A, &aud, &data, now, ttl).unwrap();
        let json = serde_json::to_string(&claims).unwrap();
        let back: IdentityShareClaims = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &claims);
        prop_assert_eq!(back.exp - back.iat, ttl);
        let aud_json = &serde_json::to_value(&claims).unwrap()["aud"];
        prop_assert_eq!(aud_json.is_string(), n == 1);
    }

    #[test]
    fn subject_data_round_trip(data in subject_data()) {
        let back = SubjectData::from_map(data.to_map()).unwrap();
        prop_assert_eq!(&back, &data);
        let via_serde: SubjectData = serde_json::from_value(serde_json::to_value(&data).unwrap()).unwrap();
        prop_assert_eq!(via_serde, data);
    }

    #[test]
    fn scope_round_trip(words in proptest::collection::btree_set("[a-z_]{1,10}", 0..6)) {
        let scope: Scope = words.iter().map(String::as_str).collect();
        let parsed: Scope = scope.to_string().parse().unwrap();
        prop_assert_eq!(&parsed, &scope);
        let back: Scope = serde_json::from_value(serde_json::to_value(&scope).unwrap()).unwrap();
        prop_assert_eq!(back, scope);
    }

    #[test]
    fn access_record_round_trip(sub in "[a-z0-9]{1,10}", issued in 0i64..1_000_000, ttl in 1i64..10_000, federated in any::<bool>()) {
        let origin = if federated {
            TokenOrigin::IdentityShareGrant { origin_issuer: A.into() }
        } else {
            TokenOrigin::LocalLogin
        };
        let rec = AccessTokenRecord {
            token: "t".into(),
            subject: sub,
            client_id: CLIENT_B.into(),
            scope: "openid".parse().unwrap(),
            issuer: B.into(),
            issued_at: issued,
            expires_at: issued + ttl,
            origin,
        };
        let back: AccessTokenRecord = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
        prop_assert_eq!(back, rec);
    }

    #[test]
    fn form_round_trip(pairs in proptest::collection::btree_map("[a-z_]{1,8}", "\\PC{0,16}", 0..5)) {
        let body: Vec<String> = pairs
            .iter()
            .map(|(k, v)| {
                let enc: String = percent_encoding::utf8_percent_encode(v, percent_encoding::NON_ALPHANUMERIC).collect();
                format!("{k}={enc}")
            })
            .collect();
        prop_assert_eq!(parse_form(&body.join("&")).unwrap(), pairs);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Whatever A mints for B, B accepts with identical subject data, and a
    /// third domain refuses at the audience stage.
    #[test]
    fn mint_validate_closure(data in subject_data(), sealed in any::<bool>(), rs in any::<bool>(), now in 1_000_000i64..2_000_000_000, delay in 0i64..300) {
        let opts = LinkOpts { sealed, link: if rs { Link::Rs256 } else { Link::Hs256 }, ..LinkOpts::default() };
        let (a, b) = pair(&opts);
        let token = issue_identity_share_token(&data, &[B.to_owned()], &a, now).unwrap();
        prop_assert_eq!(decode_unverified(&token).unwrap().claims["sdata"].is_string(), sealed);
        match futures::executor::block_on(validate_share_grant(&grant_request(Some(&token)), &b, &NoScim, now + delay)) {
            GrantDecision::Accepted { subject_data, origin_issuer, .. } => {
                prop_assert_eq!(subject_data, data);
                prop_assert_eq!(origin_issuer, A);
            }
            other => prop_assert!(false, "{}", other),
        }
        let mut cfg = config_b(&opts);
        cfg["issuer"] = Value::from(C);
        let c = registry(cfg);
        let d = futures::executor::block_on(validate_share_grant(&grant_request(Some(&token)), &c, &NoScim, now));
        prop_assert_eq!(d.stage().map(|s| s.index()), Some(5));
    }
}
