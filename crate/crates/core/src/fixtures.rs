//! Bundled sample programs.
//!
//! Templates contain uppercase placeholders (`LEN`, `SPACES`) that the
//! constructors below fill in.

/// Buffer size of the token-trimming program.
pub const TRIM_CAPACITY: u32 = 1024;
const TRIM_SPACES: u32 = 3;

const TRIM: &str = include_str!("../fixtures/trim.uc");
const USER: &str = include_str!("../fixtures/user.uc");

pub const LIST_UC: &str = include_str!("../fixtures/list.uc");
pub const OK_MSWAT: &str = include_str!("../fixtures/ok.mswat");
pub const UAF_MSWAT: &str = include_str!("../fixtures/uaf.mswat");
pub const OVERFLOW_MSWAT: &str = include_str!("../fixtures/overflow.mswat");
pub const SLACK_MSWAT: &str = include_str!("../fixtures/slack.mswat");
pub const STRAY_MSWAT: &str = include_str!("../fixtures/stray.mswat");
pub const FORGE_MSWAT: &str = include_str!("../fixtures/forge.mswat");

/// Cells of the user record's name field.
pub const USER_NAME_CELLS: u32 = 32;
/// Value the user program stores in `id` before filling the name.
pub const USER_ID: i32 = 1000;

/// The token-trimming program on a token of `len` non-space characters
/// after three leading spaces. Tokens longer than [`TRIM_CAPACITY`]
/// overflow the output buffer.
pub fn trim_uc(len: u32) -> String {
    TRIM.replace("SPACES", &TRIM_SPACES.to_string())
        .replace("LEN", &len.to_string())
}

/// The user-record program writing `len` cells into the 32-cell name.
pub fn user_uc(len: u32) -> String {
    USER.replace("LEN", &len.to_string())
}

/// Programs whose source semantics commit one memory error each.
pub const UNSAFE_UC: &[(&str, &str)] = &[
    ("array_overflow", include_str!("../fixtures/unsafe/array_overflow.uc")),
    ("array_underflow", include_str!("../fixtures/unsafe/array_underflow.uc")),
    ("uaf_read", include_str!("../fixtures/unsafe/uaf_read.uc")),
    ("uaf_write", include_str!("../fixtures/unsafe/uaf_write.uc")),
    ("double_free", include_str!("../fixtures/unsafe/double_free.uc")),
    ("forged_read", include_str!("../fixtures/unsafe/forged_read.uc")),
    ("forged_write", include_str!("../fixtures/unsafe/forged_write.uc")),
    ("forged_free", include_str!("../fixtures/unsafe/forged_free.uc")),
    ("field_overflow", include_str!("../fixtures/unsafe/field_overflow.uc")),
    ("dangling_realloc", include_str!("../fixtures/unsafe/dangling_realloc.uc")),
    ("negative_offset", include_str!("../fixtures/unsafe/negative_offset.uc")),
    ("zero_length", include_str!("../fixtures/unsafe/zero_length.uc")),
    ("stale_slice", include_str!("../fixtures/unsafe/stale_slice.uc")),
    ("uninit_deref", include_str!("../fixtures/unsafe/uninit_deref.uc")),
    ("interior_free", include_str!("../fixtures/unsafe/interior_free.uc")),
];

/// Safe source programs.
pub fn safe_uc() -> Vec<(String, String)> {
    vec![
        ("list".into(), LIST_UC.into()),
        ("trim_1024".into(), trim_uc(TRIM_CAPACITY)),
        ("user_32".into(), user_uc(USER_NAME_CELLS)),
    ]
}

/// Every bytecode sample by name.
pub const MSWAT: &[(&str, &str)] = &[
    ("ok", OK_MSWAT),
    ("uaf", UAF_MSWAT),
    ("overflow", OVERFLOW_MSWAT),
    ("slack", SLACK_MSWAT),
    ("stray", STRAY_MSWAT),
    ("forge", FORGE_MSWAT),
];

/// Every source sample by name, including the overflowing variants of the
/// templates.
pub fn all_uc() -> Vec<(String, String)> {
    let mut v = safe_uc();
    v.push(("trim_1025".into(), trim_uc(TRIM_CAPACITY + 1)));
    v.push(("user_33".into(), user_uc(USER_NAME_CELLS + 1)));
    v.extend(UNSAFE_UC.iter().map(|(n, s)| (n.to_string(), s.to_string())));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::parse_module;
    use crate::minic::load_src;
    use crate::typecheck::typecheck_module;

    #[test]
    fn every_sample_loads() {
        for (name, src) in all_uc() {
            load_src(&src).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        for (name, src) in MSWAT {
            let m = parse_module(src).unwrap_or_else(|e| panic!("{name}: {e}"));
            typecheck_module(&m).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}
