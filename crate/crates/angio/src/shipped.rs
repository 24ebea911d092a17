//! Scenarios compiled into the binary; `angio run <name>` accepts these names.

pub const SHIPPED: &[(&str, &str)] = &[
    ("zero", include_str!("../scenarios/zero.toml")),
    ("pure-gaussian", include_str!("../scenarios/pure-gaussian.toml")),
    ("coupled-ramp", include_str!("../scenarios/coupled-ramp.toml")),
    ("smoke-2x2", include_str!("../scenarios/smoke-2x2.toml")),
];

pub fn find(name: &str) -> Option<&'static str> {
    SHIPPED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
