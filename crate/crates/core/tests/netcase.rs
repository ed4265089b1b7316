use std::path::PathBuf;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use stochopf::netcase::{compute_ptdf, load_case, parse_case, CaseError, GridCase};

fn fixture(name: &str) -> GridCase {
    load_case(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap()
}

fn balanced(n: usize, raw: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = raw.iter().take(n).copied().collect();
    p.resize(n, 0.0);
    let s: f64 = p.iter().sum();
    p[n - 1] -= s;
    p
}

#[test]
fn fixtures_load() {
    let c5 = fixture("case5.json");
    assert_eq!((c5.n_buses(), c5.lines.len(), c5.generators.len()), (5, 6, 2));
    let c39 = fixture("case39.json");
    assert_eq!((c39.n_buses(), c39.lines.len(), c39.generators.len()), (39, 46, 10));
    assert_eq!(c39.storages.len(), 5);
    assert_eq!(c39.disturbances.len(), 7);
}

#[test]
fn missing_case_file_is_an_io_error() {
    let err = load_case("/definitely/not/here.json").unwrap_err();
    assert!(matches!(err, CaseError::Io { .. }), "{err}");
}

#[test]
fn disconnected_case_is_rejected() {
    let doc = r#"{"buses":[1,2,3],"lines":[{"id":1,"from":1,"to":2,"x":0.1,"p_line_max":1.0}],
        "generators":[{"bus":1,"u_min":0,"u_max":1,"ramp_frac":1,"gamma2":0,"gamma1":1,"gamma0":0}]}"#;
    let err = parse_case(doc).unwrap_err();
    assert!(matches!(err, CaseError::Disconnected(3) | CaseError::Validation(_)), "{err}");
}

#[test]
fn reference_row_is_zero_and_flows_stay_bounded() {
    let c = fixture("case39.json");
    let ptdf = compute_ptdf(&c, 31).unwrap();
    let r = c.bus_index(31).unwrap();
    for l in 0..ptdf.n_lines() {
        assert_eq!(ptdf.get(l, r), 0.0);
        for b in 0..c.n_buses() {
            assert!(ptdf.get(l, b).abs() <= 1.0 + 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Balanced injections give the same flows whichever bus holds the angle reference.
    #[test]
    fn flows_do_not_depend_on_reference(raw in prop::collection::vec(-2.0f64..2.0, 39), r1 in 0usize..39, r2 in 0usize..39) {
        let c = fixture("case39.json");
        let p = balanced(c.n_buses(), &raw);
        let a = compute_ptdf(&c, c.bus_id(r1)).unwrap().flows(&p);
        let b = compute_ptdf(&c, c.bus_id(r2)).unwrap().flows(&p);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-8, "{x} vs {y}");
        }
    }

    // Net outflow at each bus equals its injection.
    #[test]
    fn flows_conserve_power(raw in prop::collection::vec(-2.0f64..2.0, 5)) {
        let c = fixture("case5.json");
        let p = balanced(c.n_buses(), &raw);
        let f = compute_ptdf(&c, c.default_reference()).unwrap().flows(&p);
        let mut net = vec![0.0; c.n_buses()];
        for (l, line) in c.lines.iter().enumerate() {
            net[line.from] += f[l];
            net[line.to] -= f[l];
        }
        for (n, q) in net.iter().zip(&p) {
            prop_assert!((n - q).abs() <= 1e-9);
        }
    }
}

#[test]
fn document_roundtrip_keeps_the_network() {
    let c = fixture("case5.json");
    let text = serde_json::to_string(&c.to_document()).unwrap();
    let back = parse_case(&text).unwrap();
    assert_eq!(back.bus_ids, c.bus_ids);
    assert_eq!(back.lines.len(), c.lines.len());
    for (a, b) in back.lines.iter().zip(&c.lines) {
        assert_abs_diff_eq!(a.x, b.x);
        assert_abs_diff_eq!(a.c_max, b.c_max);
    }
}
