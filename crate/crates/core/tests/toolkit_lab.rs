//! Toolkit operations exercised against a live lab server: stateful
//! sessions, enumeration over gated routes, credential attempts, and body
//! truncation on the wire path.

use std::collections::BTreeSet;
use std::rc::Rc;

use flagrun_core::clock::ManualClock;
use flagrun_core::lab::{scenarios, LabServer};
use flagrun_core::toolkit::{
    default_login_success, parse_target, Method, Scope, Toolkit, TRUNCATION_MARKER,
};

fn toolkit_for(server: &LabServer) -> Toolkit {
    Toolkit::new(
        Scope::new([server.addr().to_string()]),
        Rc::new(ManualClock::default()),
    )
}

#[test]
fn session_flow_enumeration_and_brute_force_against_the_portal() {
    let server = LabServer::start(scenarios::xben_005_scenario("flag{kit}"), 0).unwrap();
    let base = parse_target(&server.base_url()).unwrap();
    let mut kit = toolkit_for(&server);

    // gated route redirects before login
    let (before, _) = kit
        .http_request(Method::Get, &base, "/edit_profile", &[], None)
        .unwrap();
    assert_eq!(before.status, 302);

    // credential attempts find demo/demo and keep the session cookie
    let users = vec!["admin".to_string(), "demo".to_string()];
    let passwords = vec!["password".to_string(), "demo".to_string()];
    let (found, exchanges) = kit
        .brute_force_credentials(&base, "/login", &users, &passwords, 0, default_login_success)
        .unwrap();
    assert_eq!(found, Some(("demo".to_string(), "demo".to_string())));
    assert_eq!(exchanges.len(), 4, "admin/pw, admin/demo, demo/pw, demo/demo");
    assert_eq!(kit.jar.get("session"), Some("s1"));

    // the authenticated session now sees the gated route
    let wordlist: Vec<String> = vec![
        "login".into(),
        "edit_profile".into(),
        "missing_one".into(),
        "missing_two".into(),
    ];
    let (entries, _) = kit
        .enumerate_paths(&base, &wordlist, &BTreeSet::from([200]))
        .unwrap();
    let paths: Vec<&str> = entries.iter().map(|e| e.path.as_str()).collect();
    assert!(paths.contains(&"/login"));
    assert!(paths.contains(&"/edit_profile"));
    assert_eq!(entries.len(), 2, "the two missing paths are 404-filtered");

    // the profile form carries the hidden field for this session
    let (profile, _) = kit
        .http_request(Method::Get, &base, "/edit_profile", &[], None)
        .unwrap();
    assert_eq!(profile.status, 200);
    assert!(profile.body.contains("name=\"is_admin\""));
}

#[test]
fn nonexistent_paths_all_404_and_are_filtered_out() {
    let server = LabServer::start(scenarios::xben_005_scenario("flag{kit2}"), 0).unwrap();
    let base = parse_target(&server.base_url()).unwrap();
    let mut kit = toolkit_for(&server);
    let wordlist: Vec<String> = vec!["ghost1".into(), "ghost2".into(), "ghost3".into()];
    let (all, _) = kit
        .enumerate_paths(&base, &wordlist, &BTreeSet::new())
        .unwrap();
    assert!(all.iter().all(|e| e.status == 404));
    let (filtered, _) = kit
        .enumerate_paths(&base, &wordlist, &BTreeSet::from([200]))
        .unwrap();
    assert!(filtered.is_empty());
}

#[test]
fn reflected_parameter_round_trip_shows_the_input() {
    let server = LabServer::start(scenarios::motivating_scenario("flag{kit3}"), 0).unwrap();
    let base = parse_target(&server.base_url()).unwrap();
    let mut kit = toolkit_for(&server);
    let (result, exchange) = kit
        .http_request(Method::Get, &base, "/page?name=test", &[], None)
        .unwrap();
    assert_eq!(result.status, 200);
    assert!(result.body.contains("value=\"test\""));
    assert!(exchange.request.starts_with("GET /page?name=test HTTP/1.1\r\n"));
}

#[test]
fn oversized_bodies_are_truncated_with_the_marker_on_the_wire_path() {
    let server = LabServer::start(scenarios::xben_005_scenario("flag{kit4}"), 0).unwrap();
    let base = parse_target(&server.base_url()).unwrap();
    let mut kit = Toolkit::new(
        Scope::new([server.addr().to_string()]),
        Rc::new(ManualClock::default()),
    )
    .with_body_cap(64);
    let (result, _) = kit.http_request(Method::Get, &base, "/", &[], None).unwrap();
    assert!(result.body.len() <= 64);
    assert!(result.body.ends_with(TRUNCATION_MARKER));
}
