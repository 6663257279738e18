//! Session manager semantics without the network.

use std::sync::Arc;

use chrono::{Duration, TimeZone, Utc};
use elqa_core::rng::StreamRng;
use elqa_core::synth::{build, GenConfig};
use elqa_dashboard::cleansing::{
    register_cleansing, CleansingContext, CIRCUITS_TABLE, TYPE_SELECT,
};
use elqa_dashboard::{DashboardRegistry, Document, UiEvent};
use elqa_server::{ClientMessage, ServerError, ServerMessage, SessionManager};
use parking_lot::RwLock;

fn manager() -> SessionManager {
    let repo = build(&GenConfig::default()).unwrap().repository;
    let ctx = CleansingContext::new(Arc::new(RwLock::new(repo)), "https://a/{measurement_id}")
        .unwrap()
        .with_clock(Arc::new(|| Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()));
    let mut reg = DashboardRegistry::new();
    register_cleansing(&mut reg, ctx);
    SessionManager::new(reg)
}

fn msg(e: &UiEvent) -> Vec<u8> {
    serde_json::to_vec(&ClientMessage::from(e)).unwrap()
}

#[test]
fn create_sessions() {
    let m = manager();
    let a = m.create_session("cleansing").unwrap();
    let b = m.create_session("cleansing").unwrap();
    assert_ne!(a.session_id, b.session_id);
    assert!(a.session_id.len() >= 32);
    assert_eq!(a.document["revision"], 0);
    assert!(a.document["models"]["type_select"].is_object());
    assert!(matches!(m.create_session("nope"), Err(ServerError::UnknownDashboard(_))));
    assert_eq!(m.len(), 2);

    let doc = Document::from_payload(&a.document).unwrap();
    assert_eq!(doc, m.document(&a.session_id).unwrap());
}

#[test]
fn events_produce_patches_or_error_messages() {
    let m = manager();
    let s = m.create_session("cleansing").unwrap().session_id;
    let reply = m.handle_event(&s, &msg(&UiEvent::value_change(TYPE_SELECT, "RB"))).unwrap();
    assert!(matches!(reply, ServerMessage::Patch { revision: 1, .. }));

    let reply = m.handle_event(&s, b"{not json").unwrap();
    assert!(matches!(&reply, ServerMessage::Error { code, .. } if code == "MalformedMessage"));
    let reply = m.handle_event(&s, &msg(&UiEvent::value_change("ghost", "x"))).unwrap();
    assert!(matches!(&reply, ServerMessage::Error { code, .. } if code == "NoHandler"));
    let reply = m.handle_event(&s, &msg(&UiEvent::select(CIRCUITS_TABLE, &[1000]))).unwrap();
    assert!(matches!(&reply, ServerMessage::Error { code, .. } if code == "InvalidPayload"));
    assert_eq!(m.status(&s).unwrap().revision, 1);

    let reply = m.handle_event(&s, &msg(&UiEvent::select(CIRCUITS_TABLE, &[0]))).unwrap();
    assert!(matches!(reply, ServerMessage::Patch { revision: 2, .. }));
    assert!(matches!(m.handle_event("missing", b"{}"), Err(ServerError::UnknownSession(_))));
}

#[test]
fn expiry() {
    let m = manager();
    let now = Utc::now();
    assert_eq!(m.expire_sessions(now, 1800), 0);
    let s = m.create_session("cleansing").unwrap().session_id;
    let mut closed = m.subscribe(&s).unwrap();
    assert_eq!(m.expire_sessions(now + Duration::seconds(600), 1800), 0);
    assert_eq!(m.expire_sessions(now + Duration::days(365), 0), 0);
    assert_eq!(m.expire_sessions(now + Duration::seconds(1801), 1800), 1);
    assert_eq!(closed.borrow_and_update().as_deref(), Some("session expired"));
    assert!(matches!(
        m.handle_event(&s, &msg(&UiEvent::value_change(TYPE_SELECT, "RB"))),
        Err(ServerError::UnknownSession(_))
    ));
    assert!(m.is_empty());
}

#[test]
fn activity_refreshes_last_active() {
    let m = manager();
    let s = m.create_session("cleansing").unwrap().session_id;
    let t0 = m.status(&s).unwrap().last_active_at;
    std::thread::sleep(std::time::Duration::from_millis(5));
    m.handle_event(&s, b"garbage").unwrap();
    assert!(m.status(&s).unwrap().last_active_at > t0);
}

#[test]
fn interleaved_sessions_stay_isolated() {
    let m = manager();
    let ids: Vec<String> = (0..4).map(|_| m.create_session("cleansing").unwrap().session_id).collect();
    let mut mirrors: Vec<Document> = ids.iter().map(|s| m.document(s).unwrap()).collect();
    let types = ["(all)", "RB", "RQ"];
    let mut rng = StreamRng::new(5);
    for _ in 0..200 {
        let k = rng.below(ids.len());
        let ev = if rng.next_f64() < 0.5 {
            UiEvent::value_change(TYPE_SELECT, types[rng.below(3)])
        } else {
            let rows = mirrors[k].model("circuits_source").unwrap().row_count();
            UiEvent::select(CIRCUITS_TABLE, &[rng.below(rows.max(1))])
        };
        let before: Vec<Document> = ids.iter().map(|s| m.document(s).unwrap()).collect();
        let reply = m.handle_event(&ids[k], &msg(&ev)).unwrap();
        let patch = reply.patch().expect("patch");
        assert_eq!(patch.revision, mirrors[k].revision() + 1);
        mirrors[k] = mirrors[k].apply_patch(&patch).unwrap();
        for (j, s) in ids.iter().enumerate() {
            let now = m.document(s).unwrap();
            assert_eq!(now, mirrors[j]);
            if j != k {
                assert_eq!(now, before[j]);
            }
        }
    }
}

#[test]
fn concurrent_sessions_keep_gapless_revisions() {
    let m = Arc::new(manager());
    let handles: Vec<_> = (0..4)
        .map(|t| {
            let m = m.clone();
            std::thread::spawn(move || {
                let s = m.create_session("cleansing").unwrap().session_id;
                let mut mirror = m.document(&s).unwrap();
                for i in 0..25 {
                    let ev = UiEvent::value_change(TYPE_SELECT, ["RB", "RQ", "(all)"][(i + t) % 3]);
                    let patch = m.handle_event(&s, &msg(&ev)).unwrap().patch().unwrap();
                    assert_eq!(patch.revision, i as u64 + 1);
                    mirror = mirror.apply_patch(&patch).unwrap();
                }
                assert_eq!(mirror, m.document(&s).unwrap());
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}
