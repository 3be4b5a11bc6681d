//! Fuzz target bodies. Also replayed over the checked-in corpus by the
//! core crate's tests.

use dswp_core::bench::parse_params;
use dswp_core::ir::{parse_program, validate, Program};
use dswp_core::partition::{plan_dswp_slice, PipelinePlan, PlanConfig};
use dswp_core::slicer::slice_function;

/// Anything that parses pretty-prints to text that parses to the same
/// thing. Valid programs also go through slicing and planning.
pub fn program_text(data: &[u8]) {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let Ok(p) = parse_program(s) else { return };
    let text = p.pretty();
    let q = parse_program(&text).unwrap_or_else(|e| panic!("pretty output does not parse: {e}\n{text}"));
    assert_eq!(q.pretty(), text);
    if validate(&p).is_empty() {
        for f in &p.functions {
            let _ = slice_function(&p, f);
        }
        let _ = plan_dswp_slice(&p, &PlanConfig::default());
    }
}

/// Decoded programs validate without panicking; valid ones round-trip
/// through the text form.
pub fn program_json(data: &[u8]) {
    let Ok(p) = serde_json::from_slice::<Program>(data) else { return };
    if validate(&p).is_empty() {
        let text = p.pretty();
        let q = parse_program(&text).unwrap_or_else(|e| panic!("pretty output does not parse: {e}\n{text}"));
        assert_eq!(q.pretty(), text);
    }
}

/// Decoded plans re-encode and decode again.
pub fn plan_json(data: &[u8]) {
    let Ok(plan) = serde_json::from_slice::<PipelinePlan>(data) else { return };
    let bytes = serde_json::to_vec(&plan).expect("plans encode");
    serde_json::from_slice::<PipelinePlan>(&bytes).expect("encoded plans decode");
}

/// Accepted parameter lists rebuild to the same map.
pub fn params(data: &[u8]) {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let Ok(m) = parse_params(s) else { return };
    let again: Vec<String> = m.iter().map(|(k, v)| format!("{k}={v}")).collect();
    assert_eq!(parse_params(&again.join(",")).expect("rebuilt params parse"), m);
}
