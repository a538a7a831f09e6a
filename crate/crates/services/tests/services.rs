use std::sync::Arc;

use asky_core::envelope::encoded_len;
use asky_core::signing::package_digest;
use asky_core::token::TokenAuthority;
use asky_core::{
    encrypt_content, frame_package, open_envelope, Envelope, EnvelopeMode, Error, FileKey, SignedPackage, TaSigningKey,
};
use asky_services::access_control::{self, AccessControl, AccessControlConfig};
use asky_services::api::{ProvisionWriterShield, RoleName};
use asky_services::attest::measurement;
use asky_services::stack::{LocalStack, StackOptions};
use asky_services::storage::AuthKind;
use asky_services::writer_shield::{self, http_uploader_factory, InProcessOracle, WriterShield, WriterShieldConfig};
use asky_services::{tls, AccessControlClient, AdminChannel, ErrorCode, UserAuth, WriterShieldClient};
use rand::seq::SliceRandom;
use rand::Rng;

const R: &[RoleName] = &[RoleName::Reader];
const W: &[RoleName] = &[RoleName::Writer];
const RW: &[RoleName] = &[RoleName::Reader, RoleName::Writer];

async fn stack() -> LocalStack {
    LocalStack::start(StackOptions::default()).await.unwrap()
}

fn package(env: &Envelope, fk: &FileKey, body: &[u8]) -> Vec<u8> {
    frame_package(env, &encrypt_content(fk, body))
}

#[tokio::test]
async fn admin_requires_attestation_and_provisioning() {
    let ac = AccessControl::new(Arc::new(asky_core::metadata::MemoryBackend::new()), AccessControlConfig::default());
    let pki = tls::DevPki::localhost().unwrap();
    let server = tls::serve(
        ac.router(),
        "127.0.0.1:0".parse().unwrap(),
        tls::server_config(&pki.cert_pem, &pki.key_pem).unwrap(),
    )
    .await
    .unwrap();
    let client = AccessControlClient::new(&pki.ca_pem, &server.url()).unwrap();

    let err = client.attest(&measurement("something-else")).await.err().unwrap();
    assert_eq!(err.code(), Some(ErrorCode::AttestationFailed));

    let admin = client.attest(&measurement(access_control::SERVICE_NAME)).await.unwrap();
    let err = admin.login(&[1; 32]).await.unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::Unprovisioned));
    let err = admin.create_user("alice").await.unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::Unauthorized));

    admin.provision_access_control(&[7; 32], &[1; 32]).await.unwrap();
    admin.create_user("alice").await.unwrap();

    // A second provisioning is refused by default, even from an admin session.
    let err = admin.provision_access_control(&[8; 32], &[1; 32]).await.unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::AlreadyProvisioned));

    // Other channels need the admin credential before they may administer.
    let other = client.attest(&measurement(access_control::SERVICE_NAME)).await.unwrap();
    assert_eq!(other.create_group("g").await.unwrap_err().code(), Some(ErrorCode::Unauthorized));
    assert_eq!(other.login(&[2; 32]).await.unwrap_err().code(), Some(ErrorCode::Unauthorized));
    other.login(&[1; 32]).await.unwrap();
    other.create_group("g").await.unwrap();
    server.shutdown().await;
}

#[tokio::test]
async fn user_keys_and_credentials() {
    let s = stack().await;
    let admin = s.admin(0).await.unwrap();
    let ac = s.access_control_client(0);
    let (usk, auth) = admin.create_user("alice").await.unwrap();
    assert_eq!(ac.fetch_user_key(&auth).await.unwrap(), usk);
    assert_eq!(admin.create_user("alice").await.unwrap_err().code(), Some(ErrorCode::AlreadyExists));

    let unknown = UserAuth { uname: "nobody".into(), credential: [0; 32] };
    assert_eq!(ac.fetch_user_key(&unknown).await.unwrap_err().code(), Some(ErrorCode::NotFound));
    let forged = UserAuth { uname: "alice".into(), credential: [0; 32] };
    assert_eq!(ac.fetch_user_key(&forged).await.unwrap_err().code(), Some(ErrorCode::Unauthorized));
    s.shutdown().await;
}

#[tokio::test]
async fn bulk_user_creation_is_retrievable() {
    let ac = AccessControl::new(Arc::new(asky_core::metadata::MemoryBackend::new()), AccessControlConfig::default());
    ac.provision(asky_core::metadata::MasterKey::random(), [0; 32]).unwrap();
    let mut created = Vec::new();
    for i in 0..5000 {
        let name = format!("user{i}");
        let (usk, credential) = ac.create_user(&name).await.unwrap();
        created.push((UserAuth { uname: name, credential }, usk));
    }
    for (auth, usk) in &created {
        assert_eq!(&ac.fetch_user_key(auth).await.unwrap(), usk);
    }
}

struct Group {
    writer: UserAuth,
    readers: Vec<(UserAuth, asky_core::UserSecretKey)>,
}

async fn group(admin: &AdminChannel, gname: &str, readers: usize) -> Group {
    admin.create_group(gname).await.unwrap();
    let (_, writer) = admin.create_user(&format!("{gname}-writer")).await.unwrap();
    admin.add_member(gname, &writer.uname, W).await.unwrap();
    let mut rs = Vec::new();
    for i in 0..readers {
        let (usk, auth) = admin.create_user(&format!("{gname}-r{i}")).await.unwrap();
        admin.add_member(gname, &auth.uname, R).await.unwrap();
        rs.push((auth, usk));
    }
    Group { writer, readers: rs }
}

#[tokio::test]
async fn enveloping_sizes_permissions_and_revocation() {
    let s = stack().await;
    let admin = s.admin(0).await.unwrap();
    let ac = s.access_control_client(0);
    let g = group(&admin, "big", 100).await;
    let fk = FileKey::random();

    let env = ac.envelope(&g.writer, "big", &fk, EnvelopeMode::Indexed).await.unwrap();
    assert_eq!(env.to_bytes().len(), 22 + 8800);
    for (_, usk) in &g.readers {
        assert_eq!(open_envelope(usk, &env).unwrap(), fk);
    }

    // Adding one reader grows the envelope by exactly one member's share.
    let (new_usk, new_auth) = admin.create_user("late").await.unwrap();
    admin.add_member("big", "late", R).await.unwrap();
    for mode in [EnvelopeMode::Linear, EnvelopeMode::Indexed] {
        let env = ac.envelope(&g.writer, "big", &fk, mode).await.unwrap();
        assert_eq!(env.to_bytes().len(), encoded_len(mode, 101));
        assert_eq!(open_envelope(&new_usk, &env).unwrap(), fk);
    }

    admin.revoke_member("big", "late").await.unwrap();
    let env = ac.envelope(&g.writer, "big", &fk, EnvelopeMode::Linear).await.unwrap();
    assert_eq!(env.member_count(), 100);
    assert_eq!(open_envelope(&new_usk, &env), Err(Error::NotRecipient));
    assert_eq!(admin.revoke_member("big", "late").await.unwrap_err().code(), Some(ErrorCode::NotFound));

    // Readers may not envelope; the writer alone is not a reader.
    let reader = &g.readers[0].0;
    let err = ac.envelope(reader, "big", &fk, EnvelopeMode::Linear).await.unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::PermissionDenied));
    assert!(ac.can_write(&g.writer, "big").await.unwrap());
    assert!(!ac.can_write(reader, "big").await.unwrap());
    assert!(!ac.can_write(&new_auth, "big").await.unwrap());

    admin.create_group("empty").await.unwrap();
    admin.add_member("empty", &g.writer.uname, W).await.unwrap();
    let err = ac.envelope(&g.writer, "empty", &fk, EnvelopeMode::Linear).await.unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::EmptyReaderSet));
    let err = ac.envelope(&g.writer, "missing", &fk, EnvelopeMode::Linear).await.unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::NotFound));
    s.shutdown().await;
}

#[tokio::test]
async fn enveloping_only_for_writers_over_a_random_role_matrix() {
    let s = stack().await;
    let admin = s.admin(0).await.unwrap();
    let ac = s.access_control_client(0);
    let mut users = Vec::new();
    for i in 0..12 {
        users.push(admin.create_user(&format!("u{i}")).await.unwrap().1);
    }
    let mut rng = rand::thread_rng();
    for gi in 0..4 {
        let gname = format!("g{gi}");
        admin.create_group(&gname).await.unwrap();
        let mut writers = Vec::new();
        for u in &users {
            match rng.gen_range(0..4) {
                0 => {}
                1 => drop(admin.add_member(&gname, &u.uname, R).await.unwrap()),
                2 => {
                    admin.add_member(&gname, &u.uname, W).await.unwrap();
                    writers.push(u.uname.clone());
                }
                _ => {
                    admin.add_member(&gname, &u.uname, RW).await.unwrap();
                    writers.push(u.uname.clone());
                }
            }
        }
        // Guarantee at least one reader so writers succeed.
        admin.add_member(&gname, &users[0].uname, if writers.contains(&users[0].uname) { RW } else { R }).await.unwrap();
        for u in &users {
            let r = ac.envelope(u, &gname, &FileKey::random(), EnvelopeMode::Indexed).await;
            if writers.contains(&u.uname) {
                assert!(r.is_ok(), "{} should write {gname}", u.uname);
            } else {
                assert_eq!(r.unwrap_err().code(), Some(ErrorCode::PermissionDenied));
            }
        }
    }
    s.shutdown().await;
}

#[tokio::test]
async fn proxied_writes_are_signed_and_anonymous_at_storage() {
    let s = stack().await;
    let admin = s.admin(0).await.unwrap();
    let ac = s.access_control_client(0);
    let ws = s.writer_shield_client();
    let storage = s.storage_client();
    let g = group(&admin, "team", 3).await;

    let fk = FileKey::random();
    let env = ac.envelope(&g.writer, "team", &fk, EnvelopeMode::Linear).await.unwrap();
    let pkg = package(&env, &fk, b"hello");
    let stored = ws.proxy(&g.writer, "team", "obj1", pkg.clone()).await.unwrap();
    let object = storage.get_object(&s.bucket, "obj1").await.unwrap().unwrap();
    assert_eq!(stored.etag, asky_services::storage::etag(&object));
    let signed = SignedPackage::from_object_bytes(&object).unwrap();
    assert_eq!(signed.package, pkg);
    asky_core::verify_package(&s.verification_key, &signed).unwrap();

    // A reader is refused and nothing is stored.
    let err = ws.proxy(&g.readers[0].0, "team", "obj2", pkg.clone()).await.unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::PermissionDenied));
    assert_eq!(storage.get_object(&s.bucket, "obj2").await.unwrap(), None);

    let puts: Vec<_> = s.storage.access_log().snapshot().into_iter().filter(|r| r.op == "put").collect();
    assert_eq!(puts.len(), 1);
    assert_eq!(puts[0].auth, AuthKind::Credential);
    assert_eq!(puts[0].principal, None);
    assert!(!puts[0].headers.iter().any(|h| h == "authorization" || h == "x-asky-user"));
    s.shutdown().await;
}

#[tokio::test]
async fn token_path_produces_identical_object_layout() {
    let s = stack().await;
    let admin = s.admin(0).await.unwrap();
    let ac = s.access_control_client(0);
    let ws = s.writer_shield_client();
    let storage = s.storage_client();
    let g = group(&admin, "team", 2).await;

    let fk = FileKey::random();
    let env = ac.envelope(&g.writer, "team", &fk, EnvelopeMode::Indexed).await.unwrap();
    let pkg = package(&env, &fk, b"direct");
    let digest = package_digest(&pkg);
    let sig = ws.sign_digest(&g.writer, "team", &digest).await.unwrap();
    let grant = ws.token(&g.writer, "team", "tok1").await.unwrap();
    let object = SignedPackage { package: pkg.clone(), signature: sig }.to_object_bytes();
    storage.put_with_token(&grant.bucket, "tok1", &grant.token, object.clone()).await.unwrap();

    let fetched = storage.get_object(&s.bucket, "tok1").await.unwrap().unwrap();
    assert_eq!(fetched, object);
    let mut trace = Default::default();
    let plain = asky_core::reader::read_object(&s.verification_key, &g.readers[1].1, &fetched, &mut trace).unwrap();
    assert_eq!(plain, b"direct");

    // The digest signature does not cover other content.
    let other = package_digest(b"other");
    assert!(s.verification_key.verify_digest(&other, &sig).is_err());

    // Scope mismatch and expiry are rejected.
    let err = storage.put_with_token(&grant.bucket, "tok2", &grant.token, object.clone()).await.unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::TokenRejected));
    let expired = TokenAuthority::from_storage_secret(&s.storage_secret).issue(&s.bucket, "tok3", 1);
    let err = storage
        .put_with_token(&s.bucket, "tok3", &expired.to_query_value(), object.clone())
        .await
        .unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::TokenRejected));

    // Readers get neither tokens nor signatures.
    let reader = &g.readers[0].0;
    assert_eq!(ws.token(reader, "team", "x").await.unwrap_err().code(), Some(ErrorCode::PermissionDenied));
    assert_eq!(ws.sign_digest(reader, "team", &digest).await.unwrap_err().code(), Some(ErrorCode::PermissionDenied));

    let token_put = s
        .storage
        .access_log()
        .snapshot()
        .into_iter()
        .find(|r| r.op == "put" && r.status == 200)
        .unwrap();
    assert_eq!(token_put.auth, AuthKind::Token);
    assert_eq!(token_put.principal, None);
    s.shutdown().await;
}

#[tokio::test]
async fn storage_rejects_bad_credentials_and_serves_public_reads() {
    let s = stack().await;
    let storage = s.storage_client();
    let err = storage.put_object(b"wrong", &s.bucket, "k", b"x".to_vec()).await.unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::Unauthorized));
    storage.put_object(&s.storage_secret, &s.bucket, "k", b"one".to_vec()).await.unwrap();
    storage.put_object(&s.storage_secret, &s.bucket, "k", b"two".to_vec()).await.unwrap();
    assert_eq!(storage.get_object(&s.bucket, "k").await.unwrap().unwrap(), b"two");
    assert_eq!(storage.get_object(&s.bucket, "absent").await.unwrap(), None);
    let err = storage.put_object(&s.storage_secret, "nobucket", "k", vec![]).await.unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::NotFound));
    s.shutdown().await;
}

#[tokio::test]
async fn writer_shield_provisioning_and_key_rotation() {
    let s = stack().await;
    let admin = s.admin(0).await.unwrap();
    let g = group(&admin, "team", 1).await;

    // A fresh proxy refuses everything until provisioned.
    let fresh = WriterShield::new(
        Arc::new(InProcessOracle(s.access_control[0].clone())),
        http_uploader_factory(s.pki.ca_pem.clone()),
        WriterShieldConfig::default(),
    );
    let server = tls::serve(
        fresh.router(),
        "127.0.0.1:0".parse().unwrap(),
        tls::server_config(&s.pki.cert_pem, &s.pki.key_pem).unwrap(),
    )
    .await
    .unwrap();
    let ws = WriterShieldClient::with_http(s.http.clone(), &server.url()).unwrap();
    assert_eq!(ws.verification_key().await.unwrap_err().code(), Some(ErrorCode::Unprovisioned));
    let err = ws.proxy(&g.writer, "team", "o", vec![1]).await.unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::Unprovisioned));

    let provision = |seed: [u8; 32], endpoint: String| ProvisionWriterShield {
        signing_seed: hex::encode(seed),
        storage_endpoint: endpoint,
        bucket: s.bucket.clone(),
        storage_secret: hex::encode(s.storage_secret),
        admin_credential: hex::encode(s.admin_credential),
    };
    let ch = ws.attest(&measurement(writer_shield::SERVICE_NAME)).await.unwrap();
    ch.provision_writer_shield(&provision([1; 32], s.storage_url.clone())).await.unwrap();
    let old_vk = ws.verification_key().await.unwrap();
    assert_eq!(old_vk, TaSigningKey::from_seed(&[1; 32]).verification_key());
    let digest = package_digest(b"pkg");
    let old_sig = ws.sign_digest(&g.writer, "team", &digest).await.unwrap();

    // Rotation needs an admin session; a stranger's channel is refused.
    let stranger = ws.attest(&measurement(writer_shield::SERVICE_NAME)).await.unwrap();
    let err = stranger.provision_writer_shield(&provision([2; 32], s.storage_url.clone())).await.unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::Unauthorized));
    stranger.login(&s.admin_credential).await.unwrap();
    stranger.provision_writer_shield(&provision([2; 32], s.storage_url.clone())).await.unwrap();
    let new_vk = ws.verification_key().await.unwrap();
    assert_ne!(new_vk, old_vk);
    old_vk.verify_digest(&digest, &old_sig).unwrap();
    assert!(new_vk.verify_digest(&digest, &old_sig).is_err());

    // Storage outage surfaces as an upstream error and stores nothing.
    stranger.login(&s.admin_credential).await.unwrap();
    stranger
        .provision_writer_shield(&provision([2; 32], "https://127.0.0.1:1".into()))
        .await
        .unwrap();
    let err = ws.proxy(&g.writer, "team", "down", vec![1, 2, 3]).await.unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::Upstream));
    assert_eq!(s.storage_client().get_object(&s.bucket, "down").await.unwrap(), None);
    server.shutdown().await;
    s.shutdown().await;
}

#[tokio::test]
async fn revocation_is_honored_by_the_next_request() {
    let s = stack().await;
    let admin = s.admin(0).await.unwrap();
    let ws = s.writer_shield_client();
    let g = group(&admin, "team", 1).await;
    ws.token(&g.writer, "team", "a").await.unwrap();
    admin.revoke_member("team", &g.writer.uname).await.unwrap();
    let err = ws.token(&g.writer, "team", "b").await.unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::PermissionDenied));
    s.shutdown().await;
}

#[tokio::test]
async fn instances_share_one_metadata_store() {
    let s = LocalStack::start(StackOptions { access_control_instances: 3, ..Default::default() }).await.unwrap();
    let admins = [s.admin(0).await.unwrap(), s.admin(1).await.unwrap(), s.admin(2).await.unwrap()];
    admins[0].create_group("shared").await.unwrap();
    let (_, w) = admins[1].create_user("w").await.unwrap();
    let (usk, r) = admins[2].create_user("r").await.unwrap();
    admins[1].add_member("shared", "w", W).await.unwrap();
    admins[2].add_member("shared", "r", R).await.unwrap();
    let mut order = vec![0usize, 1, 2];
    order.shuffle(&mut rand::thread_rng());
    for i in order {
        let fk = FileKey::random();
        let env = s.access_control_client(i).envelope(&w, "shared", &fk, EnvelopeMode::Linear).await.unwrap();
        assert_eq!(open_envelope(&usk, &env).unwrap(), fk);
        assert_eq!(s.access_control_client(i).fetch_user_key(&r).await.unwrap(), usk);
    }
    s.shutdown().await;
}
