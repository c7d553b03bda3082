#![allow(dead_code)]

pub mod gradients;
pub mod pipeline;
pub mod symmetry;
pub mod text_laws;

/// One property evaluated on one random instance.
#[derive(Clone, Debug)]
pub struct Check {
    pub property: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn within(property: &'static str, deviation: f64, tolerance: f64) -> Check {
    Check {
        property,
        passed: deviation <= tolerance,
        detail: format!("max deviation {deviation:.3e} (tolerance {tolerance:.0e})"),
    }
}

pub fn exact(property: &'static str, equal: bool) -> Check {
    Check {
        property,
        passed: equal,
        detail: if equal {
            "bit-identical".into()
        } else {
            "differs".into()
        },
    }
}
