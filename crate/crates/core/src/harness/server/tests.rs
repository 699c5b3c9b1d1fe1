use super::*;
use crate::harness::experiment::run_episode;

fn hub() -> Arc<Hub> {
    Arc::new(Hub::new(ExperimentConfig::default(), None).unwrap())
}

fn hello(conn: &mut Connection) -> String {
    let out = conn.handle_line(r#"{"type":"hello"}"#);
    match &out[0] {
        ServerMessage::Welcome { session, resumed, .. } => {
            assert!(!resumed);
            assert!(matches!(out[1], ServerMessage::Frame(_)));
            session.clone()
        }
        other => panic!("expected welcome, got {other:?}"),
    }
}

fn is_error(out: &[ServerMessage]) -> bool {
    matches!(out, [ServerMessage::Error { .. }])
}

#[test]
fn malformed_lines_get_error_replies() {
    let mut conn = Connection::new(hub());
    assert!(is_error(&conn.handle_line("not json")));
    assert!(is_error(&conn.handle_line(r#"{"type":"reset"}"#)), "before hello");
    hello(&mut conn);
    assert!(is_error(&conn.handle_line(r#"{"type":"warp"}"#)));
    assert!(is_error(&conn.handle_line(r#"{"type":"reset","extra":1}"#)));
    assert!(is_error(&conn.handle_line(r#"{"type":"set_speed","speed":-1}"#)));
    assert!(is_error(&conn.handle_line(r#"{"type":"set_mode","strategy":"adaptive"}"#)), "no model loaded");
    assert!(matches!(conn.handle_line(r#"{"type":"reset"}"#)[0], ServerMessage::Ack { .. }));
}

#[test]
fn rejected_corrections_leave_the_session_alone() {
    let hub = hub();
    let mut conn = Connection::new(hub.clone());
    let id = hello(&mut conn);
    let before = hub.live(&id).unwrap().lock().unwrap().session().theta().to_vec();
    for bad in [
        r#"{"type":"apply_correction","torque":[1,2,3],"waypoint_index":0}"#,
        r#"{"type":"apply_correction","torque":[1,2,3],"waypoint_index":20}"#,
        r#"{"type":"apply_correction","torque":[1,2],"waypoint_index":5}"#,
        r#"{"type":"apply_correction","torque":[1e9,0,0],"waypoint_index":5}"#,
    ] {
        assert!(is_error(&conn.handle_line(bad)), "{bad}");
    }
    let live = hub.live(&id).unwrap();
    let l = live.lock().unwrap();
    assert_eq!(l.session().theta(), before.as_slice());
    assert!(l.session().audits().is_empty());
}

#[test]
fn zero_torque_is_audited_without_update() {
    let mut conn = Connection::new(hub());
    hello(&mut conn);
    let out = conn.handle_line(r#"{"type":"apply_correction","torque":[0,0,0],"waypoint_index":5}"#);
    match &out[0] {
        ServerMessage::Audit { record } => {
            assert_eq!(record.rule, "none");
            assert_eq!(record.theta_before, record.theta_after);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn playback_ticks_pauses_and_resumes() {
    let hub = hub();
    let mut conn = Connection::new(hub.clone());
    let id = hello(&mut conn);
    assert!(conn.tick().is_none(), "paused sessions do not tick");
    conn.handle_line(r#"{"type":"set_speed","speed":0.5}"#);
    conn.handle_line(r#"{"type":"play"}"#);
    for _ in 0..4 {
        assert!(matches!(conn.tick(), Some(ServerMessage::Frame(_))));
    }
    assert_eq!(hub.live(&id).unwrap().lock().unwrap().playhead(), 2.0);
    // dropping the client pauses its session
    conn.pause();
    drop(conn);
    let mut again = Connection::new(hub.clone());
    let out = again.handle_line(&format!(r#"{{"type":"hello","session":"{id}"}}"#));
    assert!(matches!(&out[0], ServerMessage::Welcome { resumed: true, .. }));
    match &out[1] {
        ServerMessage::Frame(f) => {
            assert_eq!(f.index, 2.0);
            assert!(!f.playing);
        }
        other => panic!("{other:?}"),
    }
    assert!(is_error(&again.handle_line(r#"{"type":"hello","session":"nope"}"#)));
}

#[test]
fn playback_stops_at_the_goal() {
    let mut conn = Connection::new(hub());
    hello(&mut conn);
    conn.handle_line(r#"{"type":"set_speed","speed":7}"#);
    conn.handle_line(r#"{"type":"play"}"#);
    let mut last = None;
    while let Some(ServerMessage::Frame(f)) = conn.tick() {
        last = Some(f);
    }
    let f = last.unwrap();
    assert_eq!(f.index, 20.0);
    assert!(!f.playing);
    assert_eq!(f.pose.points.len(), 4);
    assert_eq!(f.jacobian.len(), 3);
}

#[test]
fn replayed_corrections_reproduce_the_headless_record() {
    let hub = hub();
    let cfg = hub.config().clone();
    let sc = Arc::new(cfg.scenario().unwrap());
    let setup = TaskSetup::new(&cfg, &sc, "human_distance").unwrap();
    let headless = run_episode(&cfg, &sc, None, &setup, Strategy::Fixed, 4).unwrap();
    let mut conn = Connection::new(hub);
    let hello = format!(
        r#"{{"type":"hello","task":"human_distance","strategy":"fixed","episode":4,"seed":{}}}"#,
        headless.seed
    );
    conn.handle_line(&hello);
    for a in &headless.audits {
        let msg = ClientMessage::ApplyCorrection {
            torque: a.torque.clone(),
            waypoint_index: a.waypoint_index,
        };
        let line = serde_json::to_string(&msg).unwrap();
        assert!(matches!(conn.handle_line(&line)[0], ServerMessage::Audit { .. }));
    }
    match &conn.handle_line(r#"{"type":"get_record"}"#)[0] {
        ServerMessage::Record { record } => assert_eq!(**record, headless),
        other => panic!("{other:?}"),
    }
}
