//! Identifier validation for users, groups, buckets and object keys.

use crate::error::ApiError;

pub const MAX_NAME_LEN: usize = 128;

fn allowed(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '@')
}

/// Names are 1..=128 characters from `[A-Za-z0-9._@-]` and never `.` or `..`.
pub fn is_valid(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= MAX_NAME_LEN
        && name != "."
        && name != ".."
        && !name.starts_with(".tmp-")
        && name.chars().all(allowed)
}

pub fn validate<'a>(kind: &str, name: &'a str) -> Result<&'a str, ApiError> {
    if is_valid(name) {
        Ok(name)
    } else {
        Err(ApiError::bad_request(format!("invalid {kind} name")))
    }
}
