use crate::error::{Error, Result};
use crate::schema::PendingRowId;

/// `$<id>@<HEX>`: decimal pending-row id, uppercase hex payload.
pub fn encode_encrypted_line(id: PendingRowId, ciphertext: &[u8]) -> String {
    assert!(
        !ciphertext.is_empty(),
        "encrypted record payload must not be empty"
    );
    let mut out = String::with_capacity(22 + 2 * ciphertext.len());
    out.push('$');
    out.push_str(&id.0.to_string());
    out.push('@');
    out.push_str(&hex::encode_upper(ciphertext));
    out
}

/// Parses only the `$<id>@` header.
pub fn encrypted_line_id(line: &str) -> Result<PendingRowId> {
    let Some(body) = line.strip_prefix('$') else {
        return Err(Error::parse(1, "encrypted line must start with '$'"));
    };
    let Some(at) = body.find('@') else {
        return Err(Error::parse(
            line.len() + 1,
            "missing '@' after record header",
        ));
    };
    let digits = &body[..at];
    // canonical decimal: non-empty, no sign, no leading zeros
    if digits.is_empty()
        || !digits.bytes().all(|b| b.is_ascii_digit())
        || (digits.len() > 1 && digits.starts_with('0'))
    {
        return Err(Error::parse(2, "record header id must be a decimal number"));
    }
    digits
        .parse::<u64>()
        .map(PendingRowId)
        .map_err(|_| Error::parse(2, "record header id out of range"))
}

pub fn decode_encrypted_line(line: &str) -> Result<(PendingRowId, Vec<u8>)> {
    let id = encrypted_line_id(line)?;
    let at = line.find('@').expect("header parsed");
    let payload = &line[at + 1..];
    let payload_col = at + 2;
    if payload.is_empty() {
        return Err(Error::parse(payload_col, "empty encrypted payload"));
    }
    if !payload.len().is_multiple_of(2) {
        return Err(Error::parse(payload_col, "odd-length hex payload"));
    }
    if let Some(bad) = payload
        .bytes()
        .position(|b| !matches!(b, b'0'..=b'9' | b'A'..=b'F'))
    {
        return Err(Error::parse(
            payload_col + bad,
            "payload is not uppercase hex",
        ));
    }
    let bytes = hex::decode(payload).expect("validated uppercase hex");
    Ok((id, bytes))
}
